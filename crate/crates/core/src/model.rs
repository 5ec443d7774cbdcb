//! Scenario containers and the generative simulator.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::gaussian::GaussianTransition;
use crate::linalg::{psd_sqrt, symmetrize};
use crate::outer_measure::{Atom, FiniteMap, FiniteOuterMeasure};
use crate::possibility::{GaussianPossibility, Grid, IndicatorPossibility, PossibilityFunction, State, Support};

/// Tolerance on the row sums of a stochastic matrix.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// A conditional possibility `g(x', x)` tabulated on finite grids; every row has maximum one.
#[derive(Clone, Debug, PartialEq)]
pub struct GridKernel {
    from: Arc<Grid>,
    to: Arc<Grid>,
    matrix: DMatrix<f64>,
}

impl GridKernel {
    pub fn new(from: Arc<Grid>, to: Arc<Grid>, matrix: DMatrix<f64>) -> Result<Self> {
        check_dim(from.len(), matrix.nrows())?;
        check_dim(to.len(), matrix.ncols())?;
        for (i, row) in matrix.row_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("kernel row {i} has values outside [0, 1]")));
            }
            if row.max() != 1.0 {
                return Err(Error::invalid(format!("kernel row {i} has maximum {} instead of 1", row.max())));
            }
        }
        Ok(GridKernel { from, to, matrix })
    }

    pub fn from_grid(&self) -> &Arc<Grid> {
        &self.from
    }

    pub fn to_grid(&self) -> &Arc<Grid> {
        &self.to
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// `x' ↦ G_{x'}` for the points `x'` of a finite grid; the empty set elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct SetValuedMap {
    from: Arc<Grid>,
    sets: Vec<IndicatorPossibility>,
}

impl SetValuedMap {
    pub fn new(from: Arc<Grid>, sets: Vec<IndicatorPossibility>) -> Result<Self> {
        check_dim(from.len(), sets.len())?;
        let dim = sets[0].dim();
        for s in &sets {
            check_dim(dim, s.dim())?;
        }
        Ok(SetValuedMap { from, sets })
    }

    pub fn from_grid(&self) -> &Arc<Grid> {
        &self.from
    }

    pub fn sets(&self) -> &[IndicatorPossibility] {
        &self.sets
    }

    pub fn set_at(&self, x: &State) -> Option<&IndicatorPossibility> {
        self.from.index_of(x).map(|i| &self.sets[i])
    }
}

/// A single-possibility transition `Q_t(x', ·) = δ_{g(x', ·)}`.
#[derive(Clone, Debug, PartialEq)]
pub enum ConditionalPossibility {
    Gaussian(GaussianTransition),
    Grid(GridKernel),
    SetValued(SetValuedMap),
    /// `G_{x'} = x' + [lo, hi]`.
    Dilation { lo: State, hi: State },
}

impl ConditionalPossibility {
    pub fn evaluate(&self, from: &State, to: &State) -> Result<f64> {
        match self {
            ConditionalPossibility::Gaussian(g) => g.evaluate(from, to),
            ConditionalPossibility::Grid(k) => match (k.from.index_of(from), k.to.index_of(to)) {
                (Some(i), Some(j)) => Ok(k.matrix[(i, j)]),
                _ => Ok(0.0),
            },
            ConditionalPossibility::SetValued(m) => Ok(match m.set_at(from) {
                Some(s) if s.contains(to) => 1.0,
                _ => 0.0,
            }),
            ConditionalPossibility::Dilation { lo, hi } => {
                check_dim(lo.len(), from.len())?;
                let d = to - from;
                Ok(if d.iter().zip(lo.iter().zip(hi.iter())).all(|(v, (l, h))| l <= v && v <= h) { 1.0 } else { 0.0 })
            }
        }
    }
}

/// A classical Markov kernel `q_t(x', dx)`.
#[derive(Clone, Debug, PartialEq)]
pub enum MarkovKernel {
    Stochastic { from: Arc<Grid>, to: Arc<Grid>, matrix: DMatrix<f64> },
    /// `x = F x' + v` with `v ~ N(0, Q)`; `Q` may be singular.
    LinearGaussian { f: DMatrix<f64>, q: DMatrix<f64> },
}

impl MarkovKernel {
    pub fn stochastic(from: Arc<Grid>, to: Arc<Grid>, matrix: DMatrix<f64>) -> Result<Self> {
        check_dim(from.len(), matrix.nrows())?;
        check_dim(to.len(), matrix.ncols())?;
        for (i, row) in matrix.row_iter().enumerate() {
            if row.iter().any(|v| !(*v >= 0.0)) || (row.sum() - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::invalid(format!("row {i} of the stochastic matrix is not a distribution")));
            }
        }
        Ok(MarkovKernel::Stochastic { from, to, matrix })
    }

    pub fn linear_gaussian(f: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        if !f.is_square() {
            return Err(Error::invalid("transition matrix must be square"));
        }
        check_dim(f.nrows(), q.nrows())?;
        psd_sqrt(&q)?;
        Ok(MarkovKernel::LinearGaussian { f, q: symmetrize(&q) })
    }

    /// Reusable sampler for this kernel.
    pub fn sampler(&self) -> Result<KernelSampler<'_>> {
        Ok(match self {
            MarkovKernel::Stochastic { from, to, matrix } => {
                let rows = matrix
                    .row_iter()
                    .map(|r| WeightedIndex::new(r.iter().copied()).map_err(|e| Error::invalid(e.to_string())))
                    .collect::<Result<Vec<_>>>()?;
                KernelSampler::Stochastic { from, to, rows }
            }
            MarkovKernel::LinearGaussian { f, q } => KernelSampler::LinearGaussian { f, root: psd_sqrt(q)? },
        })
    }
}

pub enum KernelSampler<'a> {
    Stochastic { from: &'a Grid, to: &'a Grid, rows: Vec<WeightedIndex<f64>> },
    LinearGaussian { f: &'a DMatrix<f64>, root: DMatrix<f64> },
}

impl KernelSampler<'_> {
    pub fn sample<R: Rng + ?Sized>(&self, x: &State, rng: &mut R) -> Result<State> {
        match self {
            KernelSampler::Stochastic { from, to, rows } => {
                let i = from.index_of(x).ok_or_else(|| Error::invalid("particle outside the kernel's grid"))?;
                Ok(to.point(rows[i].sample(rng)).clone())
            }
            KernelSampler::LinearGaussian { f, root } => Ok(*f * x + gaussian_noise(root, rng)),
        }
    }

    /// Index-level sampling for grid kernels.
    pub fn sample_index<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Option<usize> {
        match self {
            KernelSampler::Stochastic { rows, .. } => Some(rows[i].sample(rng)),
            KernelSampler::LinearGaussian { .. } => None,
        }
    }
}

fn gaussian_noise<R: Rng + ?Sized>(root: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(root.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    root * z
}

#[derive(Clone, Debug, PartialEq)]
pub enum TransitionSpec {
    Possibility(ConditionalPossibility),
    Markov(MarkovKernel),
}

impl From<ConditionalPossibility> for TransitionSpec {
    fn from(c: ConditionalPossibility) -> Self {
        TransitionSpec::Possibility(c)
    }
}

impl From<MarkovKernel> for TransitionSpec {
    fn from(k: MarkovKernel) -> Self {
        TransitionSpec::Markov(k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObservationMap {
    Identity(usize),
    Linear(DMatrix<f64>),
    Finite(FiniteMap),
}

impl ObservationMap {
    pub fn input_dim(&self) -> usize {
        match self {
            ObservationMap::Identity(d) => *d,
            ObservationMap::Linear(o) => o.ncols(),
            ObservationMap::Finite(m) => m.domain().dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ObservationMap::Identity(d) => *d,
            ObservationMap::Linear(o) => o.nrows(),
            ObservationMap::Finite(m) => m.codomain().dim(),
        }
    }

    pub fn apply(&self, x: &State) -> Result<State> {
        check_dim(self.input_dim(), x.len())?;
        match self {
            ObservationMap::Identity(_) => Ok(x.clone()),
            ObservationMap::Linear(o) => Ok(o * x),
            ObservationMap::Finite(m) => m.apply(x),
        }
    }
}

/// Observed information `O_t^* R_t`: an observation map and weighted possibilities on its codomain.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedInfo {
    map: ObservationMap,
    atoms: FiniteOuterMeasure,
}

impl ObservedInfo {
    pub fn new(map: ObservationMap, atoms: FiniteOuterMeasure) -> Result<Self> {
        check_dim(map.output_dim(), atoms.dim())?;
        Ok(ObservedInfo { map, atoms })
    }

    /// No information: a single vacuous atom.
    pub fn vacuous(state_dim: usize) -> Self {
        ObservedInfo {
            map: ObservationMap::Identity(state_dim),
            atoms: FiniteOuterMeasure::single(PossibilityFunction::vacuous(state_dim)),
        }
    }

    /// A standard measurement `y` with spread `R` through the linear map `O`.
    pub fn from_measurement(y: DVector<f64>, r: DMatrix<f64>, o: DMatrix<f64>) -> Result<Self> {
        check_dim(o.nrows(), y.len())?;
        let h = GaussianPossibility::new(y, r)?;
        ObservedInfo::new(ObservationMap::Linear(o), FiniteOuterMeasure::single(h))
    }

    /// The event `O x ∈ [lo, hi]`.
    pub fn from_box(lo: State, hi: State, map: ObservationMap) -> Result<Self> {
        ObservedInfo::new(map, FiniteOuterMeasure::single(IndicatorPossibility::boxed(lo, hi)?))
    }

    pub fn map(&self) -> &ObservationMap {
        &self.map
    }

    pub fn atoms(&self) -> &FiniteOuterMeasure {
        &self.atoms
    }

    pub fn state_dim(&self) -> usize {
        self.map.input_dim()
    }

    pub fn is_vacuous(&self) -> bool {
        self.atoms.atoms().iter().all(|a| a.function.is_vacuous())
    }

    /// `Σ_l v_l h_l(O x)`.
    pub fn potential(&self, x: &State) -> Result<f64> {
        self.atoms.point_value(&self.map.apply(x)?)
    }

    /// Per atom, its weight and `h_l(O x)` at every point of `grid`.
    pub fn values_on(&self, grid: &Grid) -> Result<Vec<(f64, Vec<f64>)>> {
        let images = grid.points().iter().map(|p| self.map.apply(p)).collect::<Result<Vec<_>>>()?;
        self.atoms
            .atoms()
            .iter()
            .map(|Atom { weight, function }| {
                let v = images.iter().map(|y| function.evaluate(y)).collect::<Result<Vec<_>>>()?;
                Ok((*weight, v))
            })
            .collect()
    }
}

/// Linear-Gaussian ground truth used to manufacture test data.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianDynamics {
    pub x0: State,
    pub f: DMatrix<f64>,
    /// Process noise covariance (positive semi-definite).
    pub q: DMatrix<f64>,
    pub o: DMatrix<f64>,
    /// Optional observation noise covariance.
    pub r: Option<DMatrix<f64>>,
}

impl LinearGaussianDynamics {
    pub fn validate(&self) -> Result<()> {
        let d = self.x0.len();
        check_dim(d, self.f.nrows())?;
        check_dim(d, self.f.ncols())?;
        check_dim(d, self.q.nrows())?;
        check_dim(d, self.o.ncols())?;
        psd_sqrt(&self.q)?;
        if let Some(r) = &self.r {
            check_dim(self.o.nrows(), r.nrows())?;
            psd_sqrt(r)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub observations: Vec<DVector<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub horizon: usize,
    pub prior: FiniteOuterMeasure,
    pub transitions: Vec<TransitionSpec>,
    pub observations: Vec<ObservedInfo>,
    pub seed: u64,
    pub truth: Option<LinearGaussianDynamics>,
}

impl Scenario {
    pub fn new(prior: FiniteOuterMeasure, transitions: Vec<TransitionSpec>, observations: Vec<ObservedInfo>, seed: u64) -> Result<Self> {
        let s = Scenario { horizon: transitions.len(), prior, transitions, observations, seed, truth: None };
        s.validate()?;
        Ok(s)
    }

    /// Time-homogeneous shorthand: the same transition at every step.
    pub fn homogeneous(prior: FiniteOuterMeasure, transition: TransitionSpec, observations: Vec<ObservedInfo>, seed: u64) -> Result<Self> {
        let horizon = observations.len().checked_sub(1).ok_or_else(|| Error::invalid("need at least one observation entry"))?;
        Scenario::new(prior, vec![transition; horizon], observations, seed)
    }

    pub fn with_truth(mut self, truth: LinearGaussianDynamics) -> Result<Self> {
        truth.validate()?;
        check_dim(self.prior.dim(), truth.x0.len())?;
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.horizon, self.transitions.len())?;
        check_dim(self.horizon + 1, self.observations.len())?;
        let d = self.dim();
        for (t, obs) in self.observations.iter().enumerate() {
            check_dim(d, obs.state_dim()).map_err(|e| e.at_step(t))?;
        }
        for (t, tr) in self.transitions.iter().enumerate() {
            let ok = match tr {
                TransitionSpec::Possibility(ConditionalPossibility::Gaussian(g)) => g.dim() == d,
                TransitionSpec::Possibility(ConditionalPossibility::Grid(k)) => k.from.dim() == d && k.to.dim() == d,
                TransitionSpec::Possibility(ConditionalPossibility::SetValued(m)) => m.from.dim() == d && m.sets[0].dim() == d,
                TransitionSpec::Possibility(ConditionalPossibility::Dilation { lo, hi }) => lo.len() == d && hi.len() == d,
                TransitionSpec::Markov(MarkovKernel::Stochastic { from, to, .. }) => from.dim() == d && to.dim() == d,
                TransitionSpec::Markov(MarkovKernel::LinearGaussian { f, .. }) => f.nrows() == d,
            };
            if !ok {
                return Err(Error::invalid(format!("transition {} does not act on dimension {d}", t + 1)).at_step(t + 1));
            }
        }
        Ok(())
    }
}

/// Draws a trajectory of length `horizon + 1` from `dynamics`, seeded by `scenario.seed`.
pub fn simulate(scenario: &Scenario, dynamics: &LinearGaussianDynamics) -> Result<Trajectory> {
    dynamics.validate()?;
    check_dim(scenario.dim(), dynamics.x0.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let q_root = psd_sqrt(&dynamics.q)?;
    let r_root = dynamics.r.as_ref().map(psd_sqrt).transpose()?;
    let mut states = Vec::with_capacity(scenario.horizon + 1);
    let mut observations = Vec::with_capacity(scenario.horizon + 1);
    let mut x = dynamics.x0.clone();
    for t in 0..=scenario.horizon {
        if t > 0 {
            x = &dynamics.f * &x + gaussian_noise(&q_root, &mut rng);
        }
        let mut y = &dynamics.o * &x;
        if let Some(root) = &r_root {
            y += gaussian_noise(root, &mut rng);
        }
        states.push(x.clone());
        observations.push(y);
    }
    Ok(Trajectory { states, observations })
}

/// A probability over states read off an outer measure whose atoms are Gaussian or point sets:
/// pick an atom by weight, then a uniform support point or a Gaussian draw with the spread as covariance.
pub fn sample_prior<R: Rng + ?Sized>(prior: &FiniteOuterMeasure, rng: &mut R) -> Result<State> {
    let weights = WeightedIndex::new(prior.atoms().iter().map(|a| a.weight)).map_err(|e| Error::invalid(e.to_string()))?;
    let atom = &prior.atoms()[weights.sample(rng)];
    match &atom.function {
        PossibilityFunction::Indicator(i) => match i.support() {
            Support::Points(p) => Ok(p[rng.random_range(0..p.len())].clone()),
            Support::Box { .. } => Err(Error::unsupported("sampling from a box indicator")),
        },
        PossibilityFunction::Gaussian(g) => Ok(g.mean() + gaussian_noise(&g.spd().factor(), rng)),
        PossibilityFunction::Grid(g) => {
            let w = WeightedIndex::new(g.values().iter().copied()).map_err(|e| Error::invalid(e.to_string()))?;
            Ok(g.grid().point(w.sample(rng)).clone())
        }
        PossibilityFunction::MaxMixture(_) => Err(Error::unsupported("sampling from a max-mixture")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::possibility::state;

    fn scalar_scenario(horizon: usize, seed: u64) -> Scenario {
        let prior = FiniteOuterMeasure::single(GaussianPossibility::scalar(0.0, 1.0).unwrap());
        let tr = TransitionSpec::Possibility(ConditionalPossibility::Gaussian(GaussianTransition::scalar(1.0, 1.0).unwrap()));
        Scenario::homogeneous(prior, tr, vec![ObservedInfo::vacuous(1); horizon + 1], seed).unwrap()
    }

    #[test]
    fn zero_noise_stays_put() {
        let s = scalar_scenario(5, 1);
        let dynamics = LinearGaussianDynamics {
            x0: state(&[0.0]),
            f: DMatrix::identity(1, 1),
            q: DMatrix::zeros(1, 1),
            o: DMatrix::identity(1, 1),
            r: None,
        };
        let tr = simulate(&s, &dynamics).unwrap();
        assert_eq!(tr.states.len(), 6);
        assert!(tr.states.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn simulation_is_reproducible() {
        let s = scalar_scenario(20, 42);
        let dynamics = LinearGaussianDynamics {
            x0: state(&[1.0]),
            f: DMatrix::from_element(1, 1, 0.9),
            q: DMatrix::from_element(1, 1, 0.5),
            o: DMatrix::identity(1, 1),
            r: Some(DMatrix::from_element(1, 1, 0.1)),
        };
        assert_eq!(simulate(&s, &dynamics).unwrap(), simulate(&s, &dynamics).unwrap());
    }

    #[test]
    fn noise_covariance_matches() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let kernel = MarkovKernel::linear_gaussian(DMatrix::zeros(2, 2), q.clone()).unwrap();
        let sampler = kernel.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut acc = DMatrix::zeros(2, 2);
        let zero = state(&[0.0, 0.0]);
        for _ in 0..n {
            let v = sampler.sample(&zero, &mut rng).unwrap();
            acc += &v * v.transpose();
        }
        acc /= n as f64;
        for (a, b) in acc.iter().zip(q.iter()) {
            assert!((a - b).abs() <= 0.03 * q.amax(), "{acc} vs {q}");
        }
    }

    #[test]
    fn measurement_constructor() {
        let info = ObservedInfo::from_measurement(state(&[0.0]), DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        assert_eq!(info.atoms().len(), 1);
        assert_eq!(info.atoms().atoms()[0].function, GaussianPossibility::scalar(0.0, 1.0).unwrap().into());
        assert_eq!(info.potential(&state(&[2.0])).unwrap(), (-2.0f64).exp());
    }

    #[test]
    fn kernel_rows_are_checked() {
        let g = Arc::new(Grid::indexed(2));
        assert!(GridKernel::new(g.clone(), g.clone(), DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 0.9])).is_err());
        assert!(MarkovKernel::stochastic(g.clone(), g, DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.3, 0.6])).is_err());
    }
}
