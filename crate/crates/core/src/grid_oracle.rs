//! Brute-force reference computations on finite spaces.
//!
//! Every entry of a joint table is computed by a direct product over the trajectory,
//! without any recursion, so agreement with the recursive modules is independent evidence.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::outer_measure::FiniteOuterMeasure;
use crate::model::{ConditionalPossibility, GridKernel, MarkovKernel, Scenario, TransitionSpec};
use crate::possibility::{Grid, GridPossibility};

/// Largest joint the oracle will enumerate.
pub const ORACLE_CAP: usize = 1_000_000;

/// A dense function on `X_0 × ⋯ × X_T`, row-major (the last index varies fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    grids: Vec<Arc<Grid>>,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl JointTable {
    pub fn new(grids: Vec<Arc<Grid>>, data: Vec<f64>) -> Result<Self> {
        let shape: Vec<usize> = grids.iter().map(|g| g.len()).collect();
        check_dim(shape.iter().product(), data.len())?;
        if data.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("joint table entries must be nonnegative"));
        }
        Ok(JointTable { grids, shape, data })
    }

    pub fn from_fn(grids: Vec<Arc<Grid>>, f: impl Fn(&[usize]) -> f64) -> Result<Self> {
        let shape: Vec<usize> = grids.iter().map(|g| g.len()).collect();
        let size = checked_size(&shape, usize::MAX)?;
        let mut index = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(size);
        for flat in 0..size {
            unravel(flat, &shape, &mut index);
            data.push(f(&index));
        }
        JointTable::new(grids, data)
    }

    pub fn grids(&self) -> &[Arc<Grid>] {
        &self.grids
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(0.0, f64::max)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let mut flat = 0;
        for (i, n) in index.iter().zip(&self.shape) {
            flat = flat * n + i;
        }
        self.data[flat]
    }
}

pub(crate) fn checked_size(shape: &[usize], cap: usize) -> Result<usize> {
    let mut size = 1usize;
    for n in shape {
        size = size.checked_mul(*n).filter(|s| *s <= cap).ok_or(Error::SizeCap { size: usize::MAX, cap })?;
    }
    Ok(size)
}

fn unravel(mut flat: usize, shape: &[usize], out: &mut [usize]) {
    for k in (0..shape.len()).rev() {
        out[k] = flat % shape[k];
        flat /= shape[k];
    }
}

/// A scenario restricted to grid carriers, with every factor tabulated.
#[derive(Clone, Debug)]
pub struct GridChain {
    pub grids: Vec<Arc<Grid>>,
    /// `g_t(x_{t−1}, x_t)` for `t = 1..=T`.
    pub kernels: Vec<DMatrix<f64>>,
    /// Prior atoms: weight and values on `X_0`.
    pub prior: Vec<(f64, Vec<f64>)>,
    /// Observation atoms per time: weight and `h(O x)` on `X_t`.
    pub observations: Vec<Vec<(f64, Vec<f64>)>>,
}

impl GridChain {
    /// Tabulates a scenario whose transitions are grid kernels and whose atoms are evaluable on the grids.
    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let kernels: Vec<&GridKernel> = scenario
            .transitions
            .iter()
            .enumerate()
            .map(|(t, tr)| match tr {
                TransitionSpec::Possibility(ConditionalPossibility::Grid(k)) => Ok(k),
                _ => Err(Error::unsupported("grid computations need grid-kernel transitions").at_step(t + 1)),
            })
            .collect::<Result<_>>()?;
        let mut grids = Vec::with_capacity(scenario.horizon + 1);
        match kernels.first() {
            Some(k) => grids.push(k.from_grid().clone()),
            None => grids.push(prior_grid(scenario)?),
        }
        for (t, k) in kernels.iter().enumerate() {
            if t > 0 && !crate::possibility::same_grid(k.from_grid(), &grids[t]) {
                return Err(Error::invalid("consecutive kernels do not share a grid").at_step(t + 1));
            }
            grids.push(k.to_grid().clone());
        }
        let prior = scenario
            .prior
            .atoms()
            .iter()
            .map(|a| {
                let v = grids[0].points().iter().map(|p| a.function.evaluate(p)).collect::<Result<Vec<_>>>()?;
                Ok((a.weight, v))
            })
            .collect::<Result<Vec<_>>>()?;
        let observations = scenario
            .observations
            .iter()
            .zip(&grids)
            .enumerate()
            .map(|(t, (o, g))| o.values_on(g).map_err(|e| e.at_step(t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(GridChain { grids, kernels: kernels.iter().map(|k| k.matrix().clone()).collect(), prior, observations })
    }

    pub fn horizon(&self) -> usize {
        self.kernels.len()
    }
}

fn prior_grid(scenario: &Scenario) -> Result<Arc<Grid>> {
    use crate::possibility::{PossibilityFunction, Support};
    for a in scenario.prior.atoms() {
        match &a.function {
            PossibilityFunction::Grid(g) => return Ok(g.grid().clone()),
            PossibilityFunction::Indicator(i) => {
                if let Support::Points(p) = i.support() {
                    return Ok(Arc::new(Grid::new(p.clone())?));
                }
            }
            _ => {}
        }
    }
    Err(Error::unsupported("prior has no finite carrier"))
}

/// `u(x_0..x_T) = f_0(x_0) Π g_t(x_{t−1}, x_t) Π h_t(x_t)` for one choice of prior and observation atoms.
fn table_for(chain: &GridChain, upto: usize, prior: &[f64], obs: &[&[f64]]) -> Result<JointTable> {
    let grids = chain.grids[..=upto].to_vec();
    let shape: Vec<usize> = grids.iter().map(|g| g.len()).collect();
    let size = checked_size(&shape, ORACLE_CAP)?;
    let mut data = Vec::with_capacity(size);
    let mut x = vec![0usize; shape.len()];
    for flat in 0..size {
        unravel(flat, &shape, &mut x);
        let mut u = prior[x[0]] * obs[0][x[0]];
        for t in 1..=upto {
            u *= chain.kernels[t - 1][(x[t - 1], x[t])] * obs[t][x[t]];
        }
        data.push(u);
    }
    JointTable::new(grids, data)
}

/// The joint of a single-atom scenario over the full horizon.
pub fn brute_joint(scenario: &Scenario) -> Result<JointTable> {
    let chain = GridChain::from_scenario(scenario)?;
    if chain.prior.len() != 1 || chain.observations.iter().any(|o| o.len() != 1) {
        return Err(Error::unsupported("brute_joint needs single-atom inputs; use brute_joint_atoms"));
    }
    let obs: Vec<&[f64]> = chain.observations.iter().map(|o| o[0].1.as_slice()).collect();
    table_for(&chain, chain.horizon(), &chain.prior[0].1, &obs)
}

/// One joint table per combination of prior atom and observation atoms at times `0..=upto`,
/// with the product of the input weights. Tables are unnormalized.
pub fn brute_joint_atoms(chain: &GridChain, upto: usize) -> Result<Vec<(f64, JointTable)>> {
    if upto > chain.horizon() {
        return Err(Error::invalid(format!("time {upto} beyond the horizon")));
    }
    let mut out = Vec::new();
    let counts: Vec<usize> = chain.observations[..=upto].iter().map(|o| o.len()).collect();
    let combos = checked_size(&counts, ORACLE_CAP)?;
    let mut choice = vec![0usize; counts.len()];
    for (w0, f0) in &chain.prior {
        for c in 0..combos {
            unravel(c, &counts, &mut choice);
            let mut w = *w0;
            let obs: Vec<&[f64]> = choice
                .iter()
                .enumerate()
                .map(|(t, &l)| {
                    w *= chain.observations[t][l].0;
                    chain.observations[t][l].1.as_slice()
                })
                .collect();
            out.push((w, table_for(chain, upto, f0, &obs)?));
        }
    }
    Ok(out)
}

/// `x_t ↦ sup` of the table over all other indices, rescaled to supremum one; also returns the scale.
pub fn sup_marginal(table: &JointTable, t: usize) -> Result<(GridPossibility, f64)> {
    let shape = table.shape();
    if t >= shape.len() {
        return Err(Error::invalid(format!("time {t} outside the table")));
    }
    let inner: usize = shape[t + 1..].iter().product();
    let mut raw = vec![0.0f64; shape[t]];
    for (flat, v) in table.values().iter().enumerate() {
        let i = (flat / inner) % shape[t];
        raw[i] = raw[i].max(*v);
    }
    let scaled = GridPossibility::from_raw(table.grids()[t].clone(), raw)?
        .ok_or(Error::Incompatible { step: Some(t), compatibility: 0.0 })?;
    match scaled.base {
        crate::possibility::PossibilityFunction::Grid(g) => Ok((g, scaled.scale)),
        _ => unreachable!("rescaled grid values stay on the grid"),
    }
}

/// Weighted grid atoms: weight and values on one grid.
pub type GridAtoms = Vec<(f64, Vec<f64>)>;

/// Filtered outer measure at time `t` read off the joint atoms on `0..=t`: each table's
/// sup-marginal, weighted by its input weight times the table maximum, then normalized.
/// Atoms that agree within `tol` are merged.
pub fn oracle_filtered(chain: &GridChain, t: usize, tol: f64) -> Result<GridAtoms> {
    oracle_marginal(chain, t, t, tol)
}

/// Marginal at `t` of the joint outer measure built from observations up to `upto`.
/// With `upto = T` this is the smoothed marginal.
pub fn oracle_marginal(chain: &GridChain, upto: usize, t: usize, tol: f64) -> Result<GridAtoms> {
    if t > upto {
        return Err(Error::invalid(format!("time {t} after {upto}")));
    }
    let mut raw = Vec::new();
    for (w, table) in brute_joint_atoms(chain, upto)? {
        let peak = table.max();
        if w * peak > 0.0 {
            let (m, _) = sup_marginal(&table, t)?;
            raw.push((w * peak, m.values().to_vec()));
        }
    }
    let total: f64 = raw.iter().map(|(w, _)| w).sum();
    if !(total > 0.0) {
        return Err(Error::Incompatible { step: Some(upto), compatibility: 0.0 });
    }
    raw.iter_mut().for_each(|(w, _)| *w /= total);
    Ok(merge_atoms(raw, tol))
}

/// Evaluates every atom of `measure` on `grid`, merging atoms that agree within `tol`.
pub fn tabulate(measure: &FiniteOuterMeasure, grid: &Grid, tol: f64) -> Result<GridAtoms> {
    let atoms = measure
        .atoms()
        .iter()
        .map(|a| Ok((a.weight, grid.points().iter().map(|p| a.function.evaluate(p)).collect::<Result<Vec<_>>>()?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_atoms(atoms, tol))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn merge_atoms(atoms: GridAtoms, tol: f64) -> GridAtoms {
    let mut out: GridAtoms = Vec::new();
    for (w, v) in atoms {
        match out.iter_mut().find(|(_, u)| max_diff(u, &v) <= tol) {
            Some(slot) => slot.0 += w,
            None => out.push((w, v)),
        }
    }
    out
}

/// Largest weight or value discrepancy under a greedy one-to-one matching of atoms;
/// infinite when the atom counts differ.
pub fn atom_distance(a: &GridAtoms, b: &GridAtoms) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for (w, v) in a {
        let best = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, (w2, v2))| (j, max_diff(v, v2).max((w - w2).abs())))
            .min_by(|x, y| x.1.total_cmp(&y.1));
        match best {
            Some((j, d)) => {
                used[j] = true;
                worst = worst.max(d);
            }
            None => return f64::INFINITY,
        }
    }
    worst
}

/// Exact discrete filter (sum-product) for stochastic kernels and pointwise potentials.
/// Returns the normalized filtering distribution at every time.
pub fn discrete_filter(initial: &[f64], kernels: &[&DMatrix<f64>], potentials: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_dim(kernels.len() + 1, potentials.len())?;
    let mut p: Vec<f64> = initial.to_vec();
    let mut out = Vec::with_capacity(potentials.len());
    for (t, pot) in potentials.iter().enumerate() {
        if t > 0 {
            let k = kernels[t - 1];
            check_dim(p.len(), k.nrows())?;
            p = (0..k.ncols()).map(|j| (0..k.nrows()).map(|i| p[i] * k[(i, j)]).sum()).collect();
        }
        check_dim(p.len(), pot.len())?;
        let unnorm: Vec<f64> = p.iter().zip(pot).map(|(a, b)| a * b).collect();
        let total: f64 = unnorm.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Incompatible { step: Some(t), compatibility: total });
        }
        p = unnorm.into_iter().map(|v| v / total).collect();
        out.push(p.clone());
    }
    Ok(out)
}

/// Matrices of a chain of stochastic kernels.
pub fn stochastic_matrices(scenario: &Scenario) -> Result<Vec<&DMatrix<f64>>> {
    scenario
        .transitions
        .iter()
        .map(|tr| match tr {
            TransitionSpec::Markov(MarkovKernel::Stochastic { matrix, .. }) => Ok(matrix),
            _ => Err(Error::unsupported("discrete filter needs stochastic kernels")),
        })
        .collect()
}
