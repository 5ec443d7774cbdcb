//! Smoothing over a full horizon: exhaustive joint construction on grids and the backward
//! recursion on single possibility functions (grid or Gaussian).

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::filter::FilterState;
use crate::gaussian::{gaussian_product, AffineGaussianConditional};
use crate::grid_oracle::{GridChain, JointTable};
use crate::linalg::{symmetrize, Spd};
use crate::model::{ConditionalPossibility, Scenario, TransitionSpec};
use crate::outer_measure::{FiniteOuterMeasure, COMPATIBILITY_THRESHOLD};
use crate::possibility::{GaussianPossibility, Grid, GridPossibility, PossibilityFunction};

/// Default bound on the number of joint entries (summed over joint atoms).
pub const JOINT_CAP: usize = 10_000_000;

#[derive(Clone, Debug)]
pub struct SmoothingResult {
    /// One outer measure per time step.
    pub marginals: Vec<FiniteOuterMeasure>,
    /// Grid mode only: the daggered joint atoms with their weights.
    pub joint: Vec<(f64, JointTable)>,
    /// Total weight of the unnormalized joint, `Σ w ‖u‖`.
    pub normalizer: f64,
}

impl SmoothingResult {
    /// The marginal at `t` when it has a single atom.
    pub fn marginal_function(&self, t: usize) -> Option<&PossibilityFunction> {
        match self.marginals.get(t)?.atoms() {
            [a] => Some(&a.function),
            _ => None,
        }
    }
}

/// `f'(x_t | x_{t+1})` for one time step.
#[derive(Clone, Debug)]
pub enum BackwardConditional {
    /// Row `j` holds `x_t ↦ f'(x_t | x_{t+1} = j)`.
    Grid { next: Arc<Grid>, current: Arc<Grid>, matrix: DMatrix<f64> },
    Gaussian(AffineGaussianConditional),
}

/// Builds `u_{0:T} = f_0 Π g_t Π h_t∘O_t` on the product grid and sup-marginalizes it.
///
/// Multi-atom priors and observations give one joint atom per combination, weighted by the
/// input weights times `‖u‖`.
pub fn joint_smooth_grid(scenario: &Scenario, cap: usize) -> Result<SmoothingResult> {
    let chain = GridChain::from_scenario(scenario)?;
    let horizon = chain.horizon();
    let size = chain.grids.iter().try_fold(1usize, |acc, g| acc.checked_mul(g.len()));
    let combos = chain.observations.iter().try_fold(chain.prior.len(), |acc, o| acc.checked_mul(o.len()));
    let work = size.zip(combos).and_then(|(s, c)| s.checked_mul(c));
    match work {
        Some(w) if w <= cap => {}
        _ => return Err(Error::SizeCap { size: work.unwrap_or(usize::MAX), cap }),
    }

    let mut weighted: Vec<(f64, Vec<f64>)> = Vec::new();
    for (w0, f0) in &chain.prior {
        // forward accumulation: one partial table per observation-atom prefix
        let mut partial: Vec<(f64, Vec<f64>)> =
            chain.observations[0].iter().map(|(v, h)| (w0 * v, f0.iter().zip(h).map(|(a, b)| a * b).collect())).collect();
        for t in 1..=horizon {
            let g = &chain.kernels[t - 1];
            let (n_prev, n_next) = (g.nrows(), g.ncols());
            let mut next = Vec::with_capacity(partial.len() * chain.observations[t].len());
            for (w, table) in &partial {
                for (v, h) in &chain.observations[t] {
                    let mut grown = Vec::with_capacity(table.len() * n_next);
                    for (flat, u) in table.iter().enumerate() {
                        let prev = flat % n_prev;
                        for j in 0..n_next {
                            grown.push(u * g[(prev, j)] * h[j]);
                        }
                    }
                    next.push((w * v, grown));
                }
            }
            partial = next;
        }
        weighted.extend(partial);
    }

    let mut normalizer = 0.0;
    let mut joint = Vec::with_capacity(weighted.len());
    for (w, table) in weighted {
        let norm = table.iter().cloned().fold(0.0, f64::max);
        if norm > 0.0 && w > 0.0 {
            normalizer += w * norm;
            let data = table.into_iter().map(|u| u / norm).collect();
            joint.push((w * norm, JointTable::new(chain.grids.clone(), data)?));
        }
    }
    if !(normalizer > COMPATIBILITY_THRESHOLD) {
        return Err(Error::Incompatible { step: None, compatibility: normalizer });
    }
    for (w, _) in &mut joint {
        *w /= normalizer;
    }
    let marginals = (0..=horizon)
        .map(|t| {
            let atoms = joint
                .iter()
                .map(|(w, table)| Ok((*w, marginal(table, t)?.into())))
                .collect::<Result<Vec<(f64, PossibilityFunction)>>>()?;
            Ok(FiniteOuterMeasure::from_weighted(atoms)?.deduplicated())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SmoothingResult { marginals, joint, normalizer })
}

fn marginal(table: &JointTable, t: usize) -> Result<GridPossibility> {
    let shape = table.shape();
    let inner: usize = shape[t + 1..].iter().product();
    let outer: usize = shape[..t].iter().product();
    let n = shape[t];
    let values = table.values();
    let mut out = vec![0.0f64; n];
    for o in 0..outer {
        for (i, slot) in out.iter_mut().enumerate() {
            let start = (o * n + i) * inner;
            for v in &values[start..start + inner] {
                if *v > *slot {
                    *slot = *v;
                }
            }
        }
    }
    GridPossibility::new(table.grids()[t].clone(), out)
}

/// `f'(x_t | x_{t+1}) = g(x_t, x_{t+1}) f_{t|t}(x_t) / sup_x g(x, x_{t+1}) f_{t|t}(x)`, with 0/0 read as 1.
pub fn backward_conditional(filtered: &PossibilityFunction, transition: &TransitionSpec) -> Result<BackwardConditional> {
    match (filtered, transition) {
        (PossibilityFunction::Gaussian(f), TransitionSpec::Possibility(ConditionalPossibility::Gaussian(g))) => {
            Ok(BackwardConditional::Gaussian(gaussian_product(g, f)?.1))
        }
        (_, TransitionSpec::Possibility(ConditionalPossibility::Grid(k))) => {
            let f: Vec<f64> = k.from_grid().points().iter().map(|p| filtered.evaluate(p)).collect::<Result<_>>()?;
            let g = k.matrix();
            let mut matrix = DMatrix::zeros(g.ncols(), g.nrows());
            for j in 0..g.ncols() {
                let denom = (0..g.nrows()).map(|i| g[(i, j)] * f[i]).fold(0.0, f64::max);
                for i in 0..g.nrows() {
                    matrix[(j, i)] = if denom > 0.0 { g[(i, j)] * f[i] / denom } else { 1.0 };
                }
            }
            Ok(BackwardConditional::Grid { next: k.to_grid().clone(), current: k.from_grid().clone(), matrix })
        }
        _ => Err(Error::unsupported(format!("backward smoothing of a {} possibility through this transition", filtered.family()))),
    }
}

/// Backward recursion `f_{t|T}(x_t) = sup_{x_{t+1}} f'(x_t | x_{t+1}) f_{t+1|T}(x_{t+1})` from `f_{T|T}`.
///
/// Needs single-atom filtered states. On grids the marginals are grid possibilities on the
/// kernels' grids; on Gaussian carriers the recursion is carried out in closed form.
pub fn backward_smooth(filtered: &[FilterState], transitions: &[TransitionSpec]) -> Result<SmoothingResult> {
    let horizon = filtered.len().checked_sub(1).ok_or_else(|| Error::invalid("no filtered states"))?;
    if transitions.len() != horizon {
        return Err(Error::DimensionMismatch { expected: horizon, found: transitions.len() });
    }
    let fns = filtered
        .iter()
        .enumerate()
        .map(|(t, s)| s.single().ok_or_else(|| Error::unsupported("backward smoothing needs single-atom filtered states").at_step(t)))
        .collect::<Result<Vec<_>>>()?;
    let normalizer = filtered.iter().map(|s| s.compatibility).product();
    let mut out: Vec<PossibilityFunction> = vec![fns[horizon].clone(); horizon + 1];
    if horizon > 0 {
        if let TransitionSpec::Possibility(ConditionalPossibility::Grid(k)) = &transitions[horizon - 1] {
            out[horizon] = on_grid(fns[horizon], k.to_grid())?.into();
        }
    }
    for t in (0..horizon).rev() {
        let cond = backward_conditional(fns[t], &transitions[t]).map_err(|e| e.at_step(t))?;
        out[t] = match (&cond, &out[t + 1]) {
            (BackwardConditional::Gaussian(c), PossibilityFunction::Gaussian(next)) => {
                let mean = &c.offset + &c.gain * next.mean();
                let spread = symmetrize(&(c.spread.matrix() + &c.gain * next.spread() * c.gain.transpose()));
                GaussianPossibility::with_spd(mean, Spd::new(spread).map_err(|e| e.at_step(t))?)?.into()
            }
            (BackwardConditional::Grid { next: next_grid, current, matrix }, next) => {
                let s_next: Vec<f64> = next_grid.points().iter().map(|p| next.evaluate(p)).collect::<Result<_>>()?;
                let raw: Vec<f64> = (0..current.len())
                    .map(|i| (0..next_grid.len()).map(|j| matrix[(j, i)] * s_next[j]).fold(0.0, f64::max))
                    .collect();
                GridPossibility::from_raw(current.clone(), raw)?
                    .ok_or(Error::Incompatible { step: Some(t), compatibility: 0.0 })?
                    .base
            }
            _ => return Err(Error::unsupported("mixed Gaussian and grid carriers").at_step(t)),
        };
    }
    Ok(SmoothingResult { marginals: out.into_iter().map(FiniteOuterMeasure::single).collect(), joint: Vec::new(), normalizer })
}

fn on_grid(f: &PossibilityFunction, grid: &Arc<Grid>) -> Result<GridPossibility> {
    if let PossibilityFunction::Grid(g) = f {
        if crate::possibility::same_grid(g.grid(), grid) {
            return Ok(g.clone());
        }
    }
    let raw = grid.points().iter().map(|p| f.evaluate(p)).collect::<Result<Vec<_>>>()?;
    match GridPossibility::from_raw(grid.clone(), raw)? {
        Some(s) if (s.scale - 1.0).abs() < 1e-12 => match s.base {
            PossibilityFunction::Grid(g) => Ok(g),
            _ => unreachable!(),
        },
        _ => Err(Error::invalid("filtered possibility does not reach one on the kernel's grid")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{run_filter, FilterOptions};
    use crate::gaussian::GaussianTransition;
    use crate::model::{GridKernel, ObservationMap, ObservedInfo};
    use crate::possibility::state;

    fn grid_scenario(observe: bool) -> Scenario {
        let g = Arc::new(Grid::indexed(3));
        let k = GridKernel::new(g.clone(), g.clone(), DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.1, 0.3, 1.0, 0.5, 0.2, 0.6, 1.0])).unwrap();
        let prior = FiniteOuterMeasure::single(GridPossibility::new(g.clone(), vec![0.5, 1.0, 0.2]).unwrap());
        let obs = |v: Vec<f64>| {
            if observe {
                ObservedInfo::new(ObservationMap::Identity(1), FiniteOuterMeasure::single(GridPossibility::new(g.clone(), v).unwrap())).unwrap()
            } else {
                ObservedInfo::vacuous(1)
            }
        };
        let observations = vec![obs(vec![1.0, 0.3, 0.3]), obs(vec![0.2, 1.0, 0.4]), obs(vec![0.1, 0.5, 1.0])];
        Scenario::homogeneous(prior, TransitionSpec::Possibility(ConditionalPossibility::Grid(k)), observations, 0).unwrap()
    }

    fn values(f: &PossibilityFunction, n: usize) -> Vec<f64> {
        (0..n).map(|i| f.evaluate(&state(&[i as f64])).unwrap()).collect()
    }

    #[test]
    fn backward_matches_joint() {
        let s = grid_scenario(true);
        let filtered = run_filter(&s, FilterOptions::exact()).unwrap();
        let joint = joint_smooth_grid(&s, JOINT_CAP).unwrap();
        let back = backward_smooth(&filtered, &s.transitions).unwrap();
        for t in 0..=2 {
            let a = values(joint.marginal_function(t).unwrap(), 3);
            let b = values(back.marginal_function(t).unwrap(), 3);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12, "t={t}: {a:?} vs {b:?}");
            }
        }
        let f_t = values(filtered[2].single().unwrap(), 3);
        assert_eq!(f_t, values(back.marginal_function(2).unwrap(), 3));
    }

    #[test]
    fn vacuous_observations_give_predict_chain() {
        let s = grid_scenario(false);
        let joint = joint_smooth_grid(&s, JOINT_CAP).unwrap();
        let filtered = run_filter(&s, FilterOptions::exact()).unwrap();
        for t in 0..=2 {
            assert_eq!(values(joint.marginal_function(t).unwrap(), 3), values(filtered[t].single().unwrap(), 3));
        }
    }

    #[test]
    fn cap_is_enforced() {
        let s = grid_scenario(true);
        assert!(matches!(joint_smooth_grid(&s, 10), Err(Error::SizeCap { .. })));
    }

    #[test]
    fn gaussian_backward_terminal_and_shrinkage() {
        let prior = FiniteOuterMeasure::single(GaussianPossibility::scalar(0.0, 1.0).unwrap());
        let tr = TransitionSpec::Possibility(ConditionalPossibility::Gaussian(GaussianTransition::scalar(0.9, 0.5).unwrap()));
        let obs: Vec<ObservedInfo> = [0.3, -0.2, 1.1]
            .iter()
            .map(|y| ObservedInfo::from_measurement(state(&[*y]), DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap())
            .collect();
        let s = Scenario::homogeneous(prior, tr, obs, 0).unwrap();
        let filtered = run_filter(&s, FilterOptions::exact()).unwrap();
        let back = backward_smooth(&filtered, &s.transitions).unwrap();
        assert_eq!(back.marginal_function(2), filtered[2].single());
        for t in 0..2 {
            let (PossibilityFunction::Gaussian(a), PossibilityFunction::Gaussian(b)) = (back.marginal_function(t).unwrap(), filtered[t].single().unwrap()) else {
                panic!()
            };
            assert!(a.spread()[(0, 0)] <= b.spread()[(0, 0)] + 1e-9);
        }
    }
}
