//! Forward recursions: finite-sum predict/update, the single-possibility filter and the
//! known-transition particle filter.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{kalman_update, predict_possibility, GaussianObservationFactor};
use crate::linalg::condition_number;
use crate::model::{sample_prior, ConditionalPossibility, MarkovKernel, ObservationMap, ObservedInfo, Scenario, TransitionSpec};
use crate::outer_measure::{Atom, FiniteOuterMeasure, MeasurableMap};
use crate::possibility::{
    Fallback, GaussianPossibility, Grid, GridPossibility, IndicatorPossibility, MaxMixture, PossibilityFunction,
    ScaledFunction, State, Support,
};

pub const DEFAULT_MAX_ATOMS: usize = 64;
pub const DEFAULT_MIN_WEIGHT: f64 = 1e-8;

/// Potential totals at or below this are treated as incompatible by the particle filter.
pub const PARTICLE_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug)]
pub struct FilterState {
    pub t: usize,
    pub posterior: FiniteOuterMeasure,
    /// Fusion denominator of the last update (1 before any update).
    pub compatibility: f64,
    /// Atom count after the last update, before pruning.
    pub atom_count: usize,
    /// Set once any step used a grid fallback.
    pub approximate: bool,
}

impl FilterState {
    pub fn new(prior: FiniteOuterMeasure) -> Self {
        let atom_count = prior.len();
        FilterState { t: 0, posterior: prior, compatibility: 1.0, atom_count, approximate: false }
    }

    /// Mode of the heaviest atom (lowest index on ties).
    pub fn map_estimate(&self) -> State {
        self.posterior.atoms()[self.posterior.heaviest()].function.mode()
    }

    /// The posterior's only possibility function, if it has a single atom.
    pub fn single(&self) -> Option<&PossibilityFunction> {
        match self.posterior.atoms() {
            [a] => Some(&a.function),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterOptions {
    pub max_atoms: usize,
    pub min_weight: f64,
    pub fallback: Fallback,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions { max_atoms: DEFAULT_MAX_ATOMS, min_weight: DEFAULT_MIN_WEIGHT, fallback: Fallback::NONE }
    }
}

impl FilterOptions {
    /// No pruning at all.
    pub fn exact() -> Self {
        FilterOptions { max_atoms: usize::MAX, min_weight: 0.0, fallback: Fallback::NONE }
    }
}

/// `x ↦ sup_{x'} f(x') g(x', x)` for the closed family/transition pairs.
pub fn predict_function(f: &PossibilityFunction, g: &ConditionalPossibility) -> Result<PossibilityFunction> {
    use ConditionalPossibility as C;
    use PossibilityFunction as P;
    let unsupported = || Error::unsupported(format!("prediction of a {} possibility through this transition", f.family()));
    match (f, g) {
        (P::Gaussian(p), C::Gaussian(tr)) => Ok(predict_possibility(p, tr)?.into()),
        (P::MaxMixture(m), C::Gaussian(tr)) => {
            let comps = m
                .components()
                .iter()
                .map(|(w, c)| Ok((*w, predict_possibility(c, tr)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(MaxMixture::new(comps)?.into())
        }
        (P::Grid(_), C::Grid(k)) | (P::Indicator(_), C::Grid(k)) if is_finite(f) || covers(f, k.from_grid()) => {
            let prior = values_on(f, k.from_grid())?;
            let matrix = k.matrix();
            // max-product matvec, row-wise over the source points
            let mut out = vec![0.0f64; matrix.ncols()];
            for (i, fi) in prior.iter().enumerate() {
                if *fi == 0.0 {
                    continue;
                }
                for (o, g) in out.iter_mut().zip(matrix.row(i).iter()) {
                    let v = fi * g;
                    if v > *o {
                        *o = v;
                    }
                }
            }
            GridPossibility::new(k.to_grid().clone(), out)
                .map(Into::into)
                .map_err(|_| Error::invalid("predicted possibility lost its supremum: prior mass outside the kernel's grid"))
        }
        (P::Grid(_) | P::Indicator(_), C::SetValued(map)) if is_finite(f) || covers(f, map.from_grid()) => {
            let prior = values_on(f, map.from_grid())?;
            dilate_sets(map.sets(), &prior)
        }
        (P::Indicator(i), C::Dilation { lo, hi }) => match i.support() {
            Support::Box { lo: a, hi: b } => Ok(IndicatorPossibility::boxed(a + lo, b + hi)?.into()),
            Support::Points(p) if p.len() == 1 => Ok(IndicatorPossibility::boxed(&p[0] + lo, &p[0] + hi)?.into()),
            Support::Points(_) => Err(unsupported()),
        },
        _ => Err(unsupported()),
    }
}

fn is_finite(f: &PossibilityFunction) -> bool {
    match f {
        PossibilityFunction::Grid(_) => true,
        PossibilityFunction::Indicator(i) => matches!(i.support(), Support::Points(_)),
        _ => false,
    }
}

/// An indicator box whose restriction to the grid still reaches one.
fn covers(f: &PossibilityFunction, grid: &Grid) -> bool {
    grid.points().iter().any(|p| f.evaluate(p).map_or(false, |v| v == 1.0))
}

fn values_on(f: &PossibilityFunction, grid: &Grid) -> Result<Vec<f64>> {
    grid.points().iter().map(|p| f.evaluate(p)).collect()
}

/// `x ↦ max_{x'} f(x') 1_{G_{x'}}(x)`: the union of reachable sets, weighted by `f`.
fn dilate_sets(sets: &[IndicatorPossibility], prior: &[f64]) -> Result<PossibilityFunction> {
    let active: Vec<(f64, &IndicatorPossibility)> = prior.iter().zip(sets).filter(|(v, _)| **v > 0.0).map(|(v, s)| (*v, s)).collect();
    if active.is_empty() {
        return Err(Error::invalid("no reachable set: prior support misses the transition's domain"));
    }
    let all_points = active.iter().all(|(_, s)| matches!(s.support(), Support::Points(_)));
    if all_points {
        let mut points: Vec<State> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        for (v, s) in &active {
            let Support::Points(pts) = s.support() else { unreachable!() };
            for p in pts {
                match points.iter().position(|q| q == p) {
                    Some(j) => values[j] = values[j].max(*v),
                    None => {
                        points.push(p.clone());
                        values.push(*v);
                    }
                }
            }
        }
        if values.iter().all(|v| *v == 1.0) {
            return Ok(IndicatorPossibility::points(points)?.into());
        }
        return Ok(GridPossibility::new(Arc::new(Grid::new(points)?), values)?.into());
    }
    let first = active[0].1;
    if active.iter().all(|(v, s)| *v == 1.0 && *s == first) {
        return Ok(first.clone().into());
    }
    Err(Error::unsupported("union of distinct boxes is not a box"))
}

/// `f · (h ∘ O)` as a daggered function plus its scale; `None` when the product vanishes.
pub fn update_function(f: &PossibilityFunction, h: &PossibilityFunction, map: &ObservationMap, fallback: Fallback) -> Result<Option<ScaledFunction>> {
    use PossibilityFunction as P;
    check_dim(map.input_dim(), f.dim())?;
    check_dim(map.output_dim(), h.dim())?;
    if h.is_vacuous() {
        return Ok(Some(ScaledFunction { base: f.clone(), scale: 1.0, approximate: false }));
    }
    if let ObservationMap::Identity(_) = map {
        return f.product(h, fallback);
    }
    if is_finite(f) {
        let points: Vec<State> = match f {
            P::Grid(g) => g.grid().points().to_vec(),
            P::Indicator(i) => match i.support() {
                Support::Points(p) => p.clone(),
                Support::Box { .. } => unreachable!(),
            },
            _ => unreachable!(),
        };
        let raw = points
            .iter()
            .map(|p| Ok(f.evaluate(p)? * h.evaluate(&map.apply(p)?)?))
            .collect::<Result<Vec<_>>>()?;
        let grid = match f {
            P::Grid(g) => g.grid().clone(),
            _ => Arc::new(Grid::new(points)?),
        };
        return GridPossibility::from_raw(grid, raw);
    }
    let ObservationMap::Linear(o) = map else {
        return Err(Error::unsupported(format!("{} possibility through a finite observation map", f.family())));
    };
    match (f, h) {
        (P::Gaussian(g), P::Gaussian(obs)) => {
            let factor = GaussianObservationFactor::new(o.clone(), obs.spread().clone(), obs.mean().clone())?;
            let (m, p, scale) = kalman_update(g.mean(), g.spread(), &factor)?;
            if !(scale > 0.0) {
                return Ok(None);
            }
            Ok(Some(ScaledFunction { base: GaussianPossibility::new(m, p)?.into(), scale, approximate: false }))
        }
        (P::MaxMixture(m), P::Gaussian(obs)) => {
            let factor = GaussianObservationFactor::new(o.clone(), obs.spread().clone(), obs.mean().clone())?;
            let comps = m
                .components()
                .iter()
                .map(|(w, c)| {
                    let (mean, p, scale) = kalman_update(c.mean(), c.spread(), &factor)?;
                    Ok((w * scale, GaussianPossibility::new(mean, p)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MaxMixture::from_scaled(comps).map(|(m, s)| ScaledFunction { base: m.into(), scale: s, approximate: false }))
        }
        _ => {
            let pulled = pull_linear(h, o)?;
            f.product(&pulled, fallback)
        }
    }
}

/// `h ∘ O` for box indicators under coordinate-selecting maps and for invertible square maps.
fn pull_linear(h: &PossibilityFunction, o: &DMatrix<f64>) -> Result<PossibilityFunction> {
    let map = if o.is_square() && condition_number(o) < crate::linalg::MAX_CONDITION {
        MeasurableMap::bijective(o.clone(), nalgebra::DVector::zeros(o.nrows()))?
    } else {
        MeasurableMap::projection(o.clone())?
    };
    let pulled = FiniteOuterMeasure::single(h.clone()).pullback(&map)?;
    Ok(pulled.atoms()[0].function.clone())
}

pub fn predict(state: &FilterState, transition: &TransitionSpec) -> Result<FilterState> {
    let step = state.t + 1;
    let TransitionSpec::Possibility(g) = transition else {
        return Err(Error::unsupported("possibilistic prediction needs a single-possibility transition").at_step(step));
    };
    let atoms = state
        .posterior
        .atoms()
        .iter()
        .map(|a| Ok(Atom { weight: a.weight, function: predict_function(&a.function, g)? }))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_step(step))?;
    Ok(FilterState {
        t: step,
        posterior: FiniteOuterMeasure::new(atoms)?,
        compatibility: state.compatibility,
        atom_count: state.posterior.len(),
        approximate: state.approximate,
    })
}

/// `P_{t|t} = P_{t|t−1} ⋆ (O^* R)`.
pub fn update(state: &FilterState, obs: &ObservedInfo, fallback: Fallback) -> Result<FilterState> {
    let t = state.t;
    let mut weighted = Vec::with_capacity(state.posterior.len() * obs.atoms().len());
    let mut approximate = state.approximate;
    for a in state.posterior.atoms() {
        for h in obs.atoms().atoms() {
            if let Some(s) = update_function(&a.function, &h.function, obs.map(), fallback).map_err(|e| e.at_step(t))? {
                approximate |= s.approximate;
                weighted.push((a.weight * h.weight * s.scale, s.base));
            }
        }
    }
    let (posterior, compatibility) = FiniteOuterMeasure::from_products(weighted).map_err(|e| e.at_step(t))?;
    Ok(FilterState { t, atom_count: posterior.len(), posterior, compatibility, approximate })
}

/// One predict/update step on a single possibility function.
pub fn filter_single(
    f_prev: &PossibilityFunction,
    g: &ConditionalPossibility,
    h: &PossibilityFunction,
    map: &ObservationMap,
    fallback: Fallback,
) -> Result<PossibilityFunction> {
    let predicted = predict_function(f_prev, g)?;
    match update_function(&predicted, h, map, fallback)? {
        Some(s) => Ok(s.base),
        None => Err(Error::Incompatible { step: None, compatibility: 0.0 }),
    }
}

/// Drops atoms below `min_weight`, keeps the `max_atoms` heaviest and renormalizes.
/// The heaviest atom always survives; ties keep input order.
pub fn prune(state: &FilterState, max_atoms: usize, min_weight: f64) -> FilterState {
    let atoms = state.posterior.atoms();
    let mut order: Vec<usize> = (0..atoms.len()).collect();
    order.sort_by(|&i, &j| atoms[j].weight.total_cmp(&atoms[i].weight).then(i.cmp(&j)));
    let mut keep: Vec<usize> = order
        .iter()
        .enumerate()
        .filter(|(rank, &i)| *rank == 0 || atoms[i].weight >= min_weight)
        .map(|(_, &i)| i)
        .take(max_atoms.max(1))
        .collect();
    if keep.len() == atoms.len() {
        return state.clone();
    }
    keep.sort_unstable();
    let kept: Vec<(f64, PossibilityFunction)> = keep.iter().map(|&i| (atoms[i].weight, atoms[i].function.clone())).collect();
    let posterior = FiniteOuterMeasure::from_weighted(kept).expect("the heaviest atom has positive weight");
    FilterState { posterior, ..state.clone() }
}

/// Runs update at time 0, then predict/update/prune for every later step.
pub fn run_filter(scenario: &Scenario, options: FilterOptions) -> Result<Vec<FilterState>> {
    scenario.validate()?;
    let mut states = Vec::with_capacity(scenario.horizon + 1);
    let mut state = update(&FilterState::new(scenario.prior.clone()), &scenario.observations[0], options.fallback)?;
    state = prune(&state, options.max_atoms, options.min_weight);
    states.push(state.clone());
    for t in 1..=scenario.horizon {
        let predicted = predict(&state, &scenario.transitions[t - 1])?;
        state = update(&predicted, &scenario.observations[t], options.fallback)?;
        state = prune(&state, options.max_atoms, options.min_weight);
        states.push(state.clone());
    }
    Ok(states)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleState {
    pub particles: Vec<State>,
    pub weights: Vec<f64>,
    /// Weighted mean potential of the last reweighting (1 before any).
    pub evidence: f64,
}

impl ParticleState {
    pub fn new(particles: Vec<State>, weights: Vec<f64>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::invalid("need at least one particle"));
        }
        check_dim(particles.len(), weights.len())?;
        let total: f64 = weights.iter().sum();
        // summation error grows with the particle count
        let tol = 1e-12f64.max(4.0 * weights.len() as f64 * f64::EPSILON);
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > tol {
            return Err(Error::invalid("particle weights must be nonnegative and sum to 1"));
        }
        Ok(ParticleState { particles, weights, evidence: 1.0 })
    }

    pub fn uniform(particles: Vec<State>) -> Result<Self> {
        let n = particles.len();
        ParticleState::new(particles, vec![1.0 / n as f64; n])
    }

    /// `n` equally weighted draws from the prior read as a probability (see [`sample_prior`]).
    pub fn from_prior<R: Rng + ?Sized>(prior: &FiniteOuterMeasure, n: usize, rng: &mut R) -> Result<Self> {
        let particles = (0..n).map(|_| sample_prior(prior, rng)).collect::<Result<Vec<_>>>()?;
        ParticleState::uniform(particles)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn mean(&self) -> State {
        let mut m = State::zeros(self.particles[0].len());
        for (p, w) in self.particles.iter().zip(&self.weights) {
            m += p * *w;
        }
        m
    }

    /// Weighted mass on each grid point (particles off the grid are ignored).
    pub fn probabilities(&self, grid: &Grid) -> Vec<f64> {
        let mut out = vec![0.0; grid.len()];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            if let Some(i) = grid.index_of(p) {
                out[i] += w;
            }
        }
        out
    }

    /// Multiplies weights by the potential `Σ_l v_l h_l(O x)` and renormalizes.
    pub fn reweight(&mut self, obs: &ObservedInfo) -> Result<()> {
        if obs.is_vacuous() {
            self.evidence = 1.0;
            return Ok(());
        }
        for (p, w) in self.particles.iter().zip(self.weights.iter_mut()) {
            *w *= obs.potential(p)?;
        }
        let total: f64 = self.weights.iter().sum();
        if !(total > PARTICLE_FLOOR) {
            return Err(Error::Incompatible { step: None, compatibility: total });
        }
        self.weights.iter_mut().for_each(|w| *w /= total);
        self.evidence = total;
        Ok(())
    }

    /// Systematic resampling when the effective sample size drops below `N/2`.
    pub fn maybe_resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.len();
        if self.effective_sample_size() >= n as f64 / 2.0 {
            return;
        }
        let u0: f64 = rng.random::<f64>() / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut cumulative = self.weights[0];
        let mut i = 0;
        for k in 0..n {
            let u = u0 + k as f64 / n as f64;
            while u > cumulative && i + 1 < n {
                i += 1;
                cumulative += self.weights[i];
            }
            out.push(self.particles[i].clone());
        }
        self.particles = out;
        self.weights = vec![1.0 / n as f64; n];
    }
}

/// Propagates through the kernel, reweights by the potential and resamples if degenerate.
pub fn particle_step<R: Rng + ?Sized>(state: &ParticleState, kernel: &MarkovKernel, obs: &ObservedInfo, rng: &mut R) -> Result<ParticleState> {
    let sampler = kernel.sampler()?;
    let particles = state.particles.iter().map(|x| sampler.sample(x, rng)).collect::<Result<Vec<_>>>()?;
    let mut next = ParticleState { particles, weights: state.weights.clone(), evidence: 1.0 };
    next.reweight(obs)?;
    next.maybe_resample(rng);
    Ok(next)
}

/// Particle filter over a scenario whose transitions are Markov kernels.
pub fn run_particle_filter<R: Rng + ?Sized>(scenario: &Scenario, n: usize, rng: &mut R) -> Result<Vec<ParticleState>> {
    scenario.validate()?;
    let mut state = ParticleState::from_prior(&scenario.prior, n, rng)?;
    state.reweight(&scenario.observations[0]).map_err(|e| e.at_step(0))?;
    state.maybe_resample(rng);
    let mut out = vec![state.clone()];
    for t in 1..=scenario.horizon {
        let TransitionSpec::Markov(kernel) = &scenario.transitions[t - 1] else {
            return Err(Error::unsupported("particle filtering needs Markov kernel transitions").at_step(t));
        };
        state = particle_step(&state, kernel, &scenario.observations[t], rng).map_err(|e| e.at_step(t))?;
        out.push(state.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GridKernel, SetValuedMap};
    use crate::possibility::state;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_points() -> Arc<Grid> {
        Arc::new(Grid::indexed(2))
    }

    #[test]
    fn grid_predict_example() {
        let g = two_points();
        let f: PossibilityFunction = GridPossibility::new(g.clone(), vec![1.0, 0.5]).unwrap().into();
        let k = GridKernel::new(g.clone(), g.clone(), DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0])).unwrap();
        let out = predict_function(&f, &ConditionalPossibility::Grid(k)).unwrap();
        assert_eq!(out, GridPossibility::new(g, vec![1.0, 0.5]).unwrap().into());
    }

    #[test]
    fn set_valued_predict_is_union() {
        let g = Arc::new(Grid::indexed(3));
        let sets = vec![
            IndicatorPossibility::points(vec![state(&[0.0])]).unwrap(),
            IndicatorPossibility::points(vec![state(&[1.0]), state(&[2.0])]).unwrap(),
            IndicatorPossibility::points(vec![state(&[0.0])]).unwrap(),
        ];
        let map = SetValuedMap::new(g, sets).unwrap();
        let f: PossibilityFunction = IndicatorPossibility::points(vec![state(&[1.0]), state(&[2.0])]).unwrap().into();
        let out = predict_function(&f, &ConditionalPossibility::SetValued(map)).unwrap();
        assert_eq!(out, IndicatorPossibility::points(vec![state(&[1.0]), state(&[2.0]), state(&[0.0])]).unwrap().into());
    }

    #[test]
    fn box_dilation() {
        let f: PossibilityFunction = IndicatorPossibility::interval(0.0, 1.0).unwrap().into();
        let g = ConditionalPossibility::Dilation { lo: state(&[-0.5]), hi: state(&[2.0]) };
        assert_eq!(predict_function(&f, &g).unwrap(), IndicatorPossibility::interval(-0.5, 3.0).unwrap().into());
    }

    #[test]
    fn gaussian_predict_example() {
        let f: PossibilityFunction = GaussianPossibility::scalar(1.0, 2.0).unwrap().into();
        let g = ConditionalPossibility::Gaussian(crate::gaussian::GaussianTransition::scalar(3.0, 4.0).unwrap());
        assert_eq!(predict_function(&f, &g).unwrap(), GaussianPossibility::scalar(3.0, 22.0).unwrap().into());
    }

    #[test]
    fn interval_update() {
        let state0 = FilterState::new(FiniteOuterMeasure::single(IndicatorPossibility::interval(0.0, 2.0).unwrap()));
        let obs = ObservedInfo::from_box(state(&[1.0]), state(&[3.0]), ObservationMap::Identity(1)).unwrap();
        let out = update(&state0, &obs, Fallback::NONE).unwrap();
        assert_eq!(out.posterior, FiniteOuterMeasure::single(IndicatorPossibility::interval(1.0, 2.0).unwrap()));
        assert_eq!(out.compatibility, 1.0);
    }

    #[test]
    fn gaussian_update_via_linear_map() {
        let state0 = FilterState::new(FiniteOuterMeasure::single(GaussianPossibility::scalar(0.0, 1.0).unwrap()));
        let obs = ObservedInfo::from_measurement(state(&[2.0]), DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let out = update(&state0, &obs, Fallback::NONE).unwrap();
        let expected: PossibilityFunction = GaussianPossibility::scalar(1.0, 0.5).unwrap().into();
        assert!(out.posterior.atoms()[0].function.approx_eq(&expected, 1e-15));
        assert!((out.compatibility - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn vacuous_observation_keeps_prediction() {
        let f: PossibilityFunction = GaussianPossibility::scalar(1.0, 2.0).unwrap().into();
        let g = ConditionalPossibility::Gaussian(crate::gaussian::GaussianTransition::scalar(3.0, 4.0).unwrap());
        let out = filter_single(&f, &g, &PossibilityFunction::vacuous(1), &ObservationMap::Identity(1), Fallback::NONE).unwrap();
        assert_eq!(out, predict_function(&f, &g).unwrap());
    }

    #[test]
    fn prune_keeps_heaviest() {
        let f = PossibilityFunction::vacuous(1);
        let g: PossibilityFunction = IndicatorPossibility::interval(0.0, 1.0).unwrap().into();
        let h: PossibilityFunction = IndicatorPossibility::interval(2.0, 3.0).unwrap().into();
        let p = FiniteOuterMeasure::new(vec![
            Atom { weight: 0.7, function: f },
            Atom { weight: 0.2, function: g },
            Atom { weight: 0.1, function: h },
        ])
        .unwrap();
        let s = FilterState::new(p.clone());
        let out = prune(&s, 2, 0.0);
        let w: Vec<f64> = out.posterior.atoms().iter().map(|a| a.weight).collect();
        assert!((w[0] - 0.7 / 0.9).abs() < 1e-15 && (w[1] - 0.2 / 0.9).abs() < 1e-15);
        assert_eq!(prune(&s, 5, 0.01).posterior, p);
    }

    #[test]
    fn particle_flat_potential_and_point_mass_kernel() {
        let g = Arc::new(Grid::indexed(3));
        let shift = MarkovKernel::stochastic(g.clone(), g.clone(), DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., 1., 0., 0.])).unwrap();
        let s = ParticleState::new(g.points().to_vec(), vec![0.5, 0.3, 0.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = particle_step(&s, &shift, &ObservedInfo::vacuous(1), &mut rng).unwrap();
        assert_eq!(out.weights, s.weights);
        assert_eq!(out.particles, vec![state(&[1.0]), state(&[2.0]), state(&[0.0])]);

        let h = GridPossibility::new(g.clone(), vec![1.0, 0.5, 0.25]).unwrap();
        let obs = ObservedInfo::new(ObservationMap::Identity(1), FiniteOuterMeasure::single(h)).unwrap();
        let out = particle_step(&s, &shift, &obs, &mut rng).unwrap();
        let raw = [0.5 * 0.5, 0.3 * 0.25, 0.2 * 1.0];
        let total: f64 = raw.iter().sum();
        for (w, r) in out.weights.iter().zip(raw) {
            assert!((w - r / total).abs() < 1e-15);
        }
    }
}
