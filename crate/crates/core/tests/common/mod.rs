//! Random scenario builders shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use possfilter::model::{ConditionalPossibility, GridKernel, ObservationMap, ObservedInfo, Scenario};
use possfilter::outer_measure::FiniteOuterMeasure;
use possfilter::possibility::{GaussianPossibility, Grid, GridPossibility, PossibilityFunction};
use rand::Rng;

/// Values in `[0, 1]` with maximum exactly one; entries below `zero_below` are set to zero.
pub fn normalized<R: Rng>(rng: &mut R, n: usize, zero_below: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).map(|x| if x < zero_below { 0.0 } else { x }).collect();
    let top = rng.random_range(0..n);
    v[top] = 1.0;
    v
}

pub fn grid_fn(grid: &Arc<Grid>, values: Vec<f64>) -> PossibilityFunction {
    GridPossibility::new(grid.clone(), values).unwrap().into()
}

pub fn weights<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| 0.1 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

pub fn grid_measure<R: Rng>(rng: &mut R, grid: &Arc<Grid>, atoms: usize, zero_below: f64) -> FiniteOuterMeasure {
    let ws = weights(rng, atoms);
    FiniteOuterMeasure::from_weighted(ws.into_iter().map(|w| (w, grid_fn(grid, normalized(rng, grid.len(), zero_below)))).collect())
        .unwrap()
}

pub fn grid_kernel<R: Rng>(rng: &mut R, from: &Arc<Grid>, to: &Arc<Grid>, zero_below: f64) -> GridKernel {
    let rows: Vec<Vec<f64>> = (0..from.len()).map(|_| normalized(rng, to.len(), zero_below)).collect();
    GridKernel::new(from.clone(), to.clone(), DMatrix::from_fn(from.len(), to.len(), |i, j| rows[i][j])).unwrap()
}

/// Grid scenario with `n` states, grid kernels and grid-valued prior/observation atoms.
/// Observation values stay positive so every step is compatible.
pub fn grid_scenario<R: Rng>(rng: &mut R, n: usize, horizon: usize, prior_atoms: usize, obs_atoms: usize) -> Scenario {
    let grid = Arc::new(Grid::indexed(n));
    let prior = grid_measure(rng, &grid, prior_atoms, 0.2);
    let transitions = (0..horizon).map(|_| ConditionalPossibility::Grid(grid_kernel(rng, &grid, &grid, 0.3)).into()).collect();
    let observations = (0..=horizon)
        .map(|_| {
            let k = rng.random_range(1..=obs_atoms);
            ObservedInfo::new(ObservationMap::Identity(1), grid_measure(rng, &grid, k, 0.0)).unwrap()
        })
        .collect();
    Scenario::new(prior, transitions, observations, rng.random()).unwrap()
}

/// Random stable linear-Gaussian system: `F` with spectral norm below one, PD `Q`, `R`, `P_0`.
pub struct LinearSystem {
    pub f: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub o: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

pub fn spd<R: Rng>(rng: &mut R, d: usize, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * floor
}

pub fn linear_system<R: Rng>(rng: &mut R, d: usize, k: usize) -> LinearSystem {
    let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let norm: f64 = raw.singular_values().max();
    let f = raw * (0.95 / norm.max(1e-9));
    LinearSystem {
        f,
        q: spd(rng, d, 0.1),
        o: DMatrix::from_fn(k, d, |_, _| rng.random_range(-1.0..1.0)),
        r: spd(rng, k, 0.2),
        m0: DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
        p0: spd(rng, d, 0.5),
    }
}

pub fn gaussian(m: &DVector<f64>, p: &DMatrix<f64>) -> PossibilityFunction {
    GaussianPossibility::new(m.clone(), p.clone()).unwrap().into()
}
