//! Finite weighted collections of possibility functions and the outer measure they induce,
//! `P̄(φ) = Σ_i w_i · sup_x φ(x) f_i(x)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::grid_oracle::JointTable;
use crate::linalg::{condition_number, symmetrize, Spd, MAX_CONDITION};
use crate::possibility::{
    same_grid, Fallback, GaussianPossibility, Grid, GridPossibility, IndicatorPossibility, MaxMixture,
    PossibilityFunction, Region, State, Support,
};

/// Below this fusion denominator the two sources are declared incompatible.
pub const COMPATIBILITY_THRESHOLD: f64 = 1e-12;

/// Tolerance on the sum of atom weights.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

/// Tolerance used when merging atoms with identical parameters.
pub const DEDUP_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub function: PossibilityFunction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteOuterMeasure {
    atoms: Vec<Atom>,
}

/// Test functions accepted by [`FiniteOuterMeasure::outer_eval`].
#[derive(Clone, Debug, PartialEq)]
pub enum TestFunction {
    One,
    Box { lo: State, hi: State },
    /// Indicator of a finite set of states.
    Points(Vec<State>),
    /// Nonnegative values on finitely many states, zero elsewhere.
    Grid { points: Vec<State>, values: Vec<f64> },
}

/// Output of [`FiniteOuterMeasure::fuse`].
#[derive(Clone, Debug)]
pub struct Fusion {
    pub measure: FiniteOuterMeasure,
    /// The pre-normalization weight total, in (0, 1].
    pub compatibility: f64,
    /// Set when any pairwise product used the grid fallback.
    pub approximate: bool,
}

impl FiniteOuterMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let dim = atoms.first().ok_or_else(|| Error::invalid("outer measure needs at least one atom"))?.function.dim();
        let mut total = 0.0;
        for a in &atoms {
            check_dim(dim, a.function.dim())?;
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                return Err(Error::invalid(format!("atom weight {} must be positive", a.weight)));
            }
            total += a.weight;
        }
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::invalid(format!("atom weights sum to {total}, not 1")));
        }
        Ok(FiniteOuterMeasure { atoms })
    }

    /// Drops zero weights and normalizes the rest.
    pub fn from_weighted(weighted: Vec<(f64, PossibilityFunction)>) -> Result<Self> {
        let total: f64 = weighted.iter().map(|(w, _)| *w).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::invalid("weights must have a positive finite total"));
        }
        let atoms = weighted
            .into_iter()
            .filter(|(w, _)| *w > 0.0)
            .map(|(w, f)| Atom { weight: w / total, function: f })
            .collect();
        FiniteOuterMeasure::new(atoms)
    }

    /// The point mass `δ_f`.
    pub fn single(function: impl Into<PossibilityFunction>) -> Self {
        FiniteOuterMeasure { atoms: vec![Atom { weight: 1.0, function: function.into() }] }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].function.dim()
    }

    /// Index of the heaviest atom (lowest index on ties).
    pub fn heaviest(&self) -> usize {
        let mut best = 0;
        for (i, a) in self.atoms.iter().enumerate() {
            if a.weight > self.atoms[best].weight {
                best = i;
            }
        }
        best
    }

    pub fn outer_eval(&self, phi: &TestFunction, fallback: Fallback) -> Result<f64> {
        let mut total = 0.0;
        for a in &self.atoms {
            total += a.weight * sup_product(&a.function, phi, fallback)?;
        }
        Ok(total)
    }

    /// Σ_i w_i f_i(x): the outer measure of the singleton `{x}`.
    pub fn point_value(&self, x: &State) -> Result<f64> {
        let mut total = 0.0;
        for a in &self.atoms {
            total += a.weight * a.function.evaluate(x)?;
        }
        Ok(total)
    }

    /// Image of the measure under `f ↦ (x ↦ sup_{ξ⁻¹[x]} f)`.
    pub fn pushforward(&self, map: &MeasurableMap) -> Result<Self> {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Ok(Atom { weight: a.weight, function: map.push(&a.function)? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(FiniteOuterMeasure { atoms })
    }

    /// Image of the measure under `f ↦ f ∘ ξ`.
    pub fn pullback(&self, map: &MeasurableMap) -> Result<Self> {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Ok(Atom { weight: a.weight, function: map.pull(&a.function)? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(FiniteOuterMeasure { atoms })
    }

    /// Fusion of two strongly independent sources.
    ///
    /// Atoms are the rescaled pairwise products, ordered by (self index, other index), with
    /// weights proportional to `w_i v_l ‖f_i·f'_l‖∞`. Atoms with identical parameters are merged.
    pub fn fuse(&self, other: &FiniteOuterMeasure, fallback: Fallback) -> Result<Fusion> {
        check_dim(self.dim(), other.dim())?;
        let mut weighted = Vec::with_capacity(self.len() * other.len());
        let mut approximate = false;
        for a in &self.atoms {
            for b in &other.atoms {
                if let Some(s) = a.function.product(&b.function, fallback)? {
                    approximate |= s.approximate;
                    weighted.push((a.weight * b.weight * s.scale, s.base));
                }
            }
        }
        FiniteOuterMeasure::from_products(weighted).map(|(measure, compatibility)| Fusion { measure, compatibility, approximate })
    }

    /// Normalizes unnormalized (weight, function) pairs into a measure, returning the total.
    pub(crate) fn from_products(weighted: Vec<(f64, PossibilityFunction)>) -> Result<(Self, f64)> {
        let compatibility: f64 = weighted.iter().map(|(w, _)| *w).sum();
        if !(compatibility > COMPATIBILITY_THRESHOLD) {
            return Err(Error::Incompatible { step: None, compatibility });
        }
        let atoms: Vec<Atom> = weighted
            .into_iter()
            .filter(|(w, _)| *w > 0.0)
            .map(|(w, f)| Atom { weight: w / compatibility, function: f })
            .collect();
        Ok((FiniteOuterMeasure { atoms }.deduplicated(), compatibility))
    }

    /// Merges atoms whose parameters agree within [`DEDUP_TOLERANCE`], keeping first positions.
    pub fn deduplicated(self) -> Self {
        let mut out: Vec<Atom> = Vec::with_capacity(self.atoms.len());
        for a in self.atoms {
            match out.iter_mut().find(|b| b.function.approx_eq(&a.function, DEDUP_TOLERANCE)) {
                Some(b) => b.weight += a.weight,
                None => out.push(a),
            }
        }
        FiniteOuterMeasure { atoms: out }
    }
}

fn sup_product(f: &PossibilityFunction, phi: &TestFunction, fallback: Fallback) -> Result<f64> {
    let sup = match phi {
        TestFunction::One => return Ok(1.0),
        TestFunction::Box { lo, hi } => f.sup_over(&Region::Box { lo: lo.clone(), hi: hi.clone() }, fallback)?,
        TestFunction::Points(points) => f.sup_over(&Region::Points(points.clone()), fallback)?,
        TestFunction::Grid { points, values } => {
            check_dim(points.len(), values.len())?;
            let mut best = 0.0f64;
            for (p, v) in points.iter().zip(values) {
                if *v != 0.0 {
                    best = best.max(v * f.evaluate(p)?);
                }
            }
            return Ok(best);
        }
    };
    if !sup.exact && fallback.resolution().is_none() {
        return Err(Error::unsupported("approximate supremum without fallback"));
    }
    Ok(sup.value)
}

/// A table mapping every point of a finite domain to a point of a finite codomain.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMap {
    domain: Arc<Grid>,
    codomain: Arc<Grid>,
    table: Vec<usize>,
}

impl FiniteMap {
    pub fn new(domain: Arc<Grid>, codomain: Arc<Grid>, table: Vec<usize>) -> Result<Self> {
        check_dim(domain.len(), table.len())?;
        if let Some(bad) = table.iter().find(|&&j| j >= codomain.len()) {
            return Err(Error::invalid(format!("map target index {bad} outside codomain")));
        }
        Ok(FiniteMap { domain, codomain, table })
    }

    /// Tabulates `f` on `domain`; the codomain lists distinct images in order of first appearance.
    pub fn from_fn(domain: Arc<Grid>, f: impl Fn(&State) -> State) -> Result<Self> {
        let mut images: Vec<State> = Vec::new();
        let mut table = Vec::with_capacity(domain.len());
        for p in domain.points() {
            let y = f(p);
            let j = match images.iter().position(|q| *q == y) {
                Some(j) => j,
                None => {
                    images.push(y);
                    images.len() - 1
                }
            };
            table.push(j);
        }
        FiniteMap::new(domain, Arc::new(Grid::new(images)?), table)
    }

    pub fn domain(&self) -> &Arc<Grid> {
        &self.domain
    }

    pub fn codomain(&self) -> &Arc<Grid> {
        &self.codomain
    }

    pub fn table(&self) -> &[usize] {
        &self.table
    }

    pub fn apply(&self, x: &State) -> Result<State> {
        let i = self
            .domain
            .index_of(x)
            .ok_or_else(|| Error::invalid(format!("state {:?} outside the map's domain", x.as_slice())))?;
        Ok(self.codomain.point(self.table[i]).clone())
    }

    /// Domain indices mapped into the given codomain indices.
    pub fn preimage(&self, targets: &[usize]) -> Vec<usize> {
        (0..self.table.len()).filter(|i| targets.contains(&self.table[*i])).collect()
    }

    /// Codomain indices reached from the given domain indices.
    pub fn image(&self, sources: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = sources.iter().map(|&i| self.table[i]).collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MeasurableMap {
    /// `x ↦ A x + b` with invertible `A`.
    Bijective { matrix: DMatrix<f64>, offset: DVector<f64>, inverse: DMatrix<f64> },
    /// `x ↦ M x` with full row rank `M` (fewer rows than columns).
    Projection { matrix: DMatrix<f64> },
    Finite(FiniteMap),
}

impl MeasurableMap {
    pub fn bijective(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::invalid("bijective linear map needs a square matrix"));
        }
        check_dim(matrix.nrows(), offset.len())?;
        let cond = condition_number(&matrix);
        if !(cond < MAX_CONDITION) {
            return Err(Error::invalid(format!("linear map condition estimate {cond:e} too large")));
        }
        let inverse = matrix.clone().try_inverse().ok_or_else(|| Error::invalid("singular linear map"))?;
        Ok(MeasurableMap::Bijective { matrix, offset, inverse })
    }

    pub fn identity(dim: usize) -> Self {
        MeasurableMap::bijective(DMatrix::identity(dim, dim), DVector::zeros(dim)).expect("identity is invertible")
    }

    pub fn projection(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.nrows() >= matrix.ncols() {
            return Err(Error::invalid("projection needs fewer rows than columns"));
        }
        let cond = condition_number(&(&matrix * matrix.transpose()));
        if !(cond < MAX_CONDITION) {
            return Err(Error::invalid("projection matrix must have full row rank"));
        }
        Ok(MeasurableMap::Projection { matrix })
    }

    /// Keeps the listed coordinates of an `input_dim`-dimensional state.
    pub fn coordinates(input_dim: usize, keep: &[usize]) -> Result<Self> {
        let mut m = DMatrix::zeros(keep.len(), input_dim);
        for (r, &c) in keep.iter().enumerate() {
            if c >= input_dim {
                return Err(Error::invalid(format!("coordinate {c} out of range")));
            }
            m[(r, c)] = 1.0;
        }
        MeasurableMap::projection(m)
    }

    pub fn input_dim(&self) -> usize {
        match self {
            MeasurableMap::Bijective { matrix, .. } | MeasurableMap::Projection { matrix } => matrix.ncols(),
            MeasurableMap::Finite(m) => m.domain.dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            MeasurableMap::Bijective { matrix, .. } | MeasurableMap::Projection { matrix } => matrix.nrows(),
            MeasurableMap::Finite(m) => m.codomain.dim(),
        }
    }

    pub fn apply(&self, x: &State) -> Result<State> {
        check_dim(self.input_dim(), x.len())?;
        match self {
            MeasurableMap::Bijective { matrix, offset, .. } => Ok(matrix * x + offset),
            MeasurableMap::Projection { matrix } => Ok(matrix * x),
            MeasurableMap::Finite(m) => m.apply(x),
        }
    }

    fn push(&self, f: &PossibilityFunction) -> Result<PossibilityFunction> {
        use PossibilityFunction as P;
        check_dim(self.input_dim(), f.dim())?;
        let unsupported = || Error::unsupported(format!("push-forward of a {} possibility by this map", f.family()));
        match (self, f) {
            (MeasurableMap::Finite(m), P::Grid(g)) => {
                let mut values = vec![0.0f64; m.codomain.len()];
                for (p, v) in g.grid().points().iter().zip(g.values()) {
                    let i = m.domain.index_of(p).ok_or_else(|| Error::invalid("grid point outside the map's domain"))?;
                    let j = m.table[i];
                    values[j] = values[j].max(*v);
                }
                Ok(GridPossibility::new(m.codomain.clone(), values)?.into())
            }
            (MeasurableMap::Finite(m), P::Indicator(_)) => match indicator_points(f) {
                Some(points) => {
                    let images = points.iter().map(|p| m.apply(p)).collect::<Result<Vec<_>>>()?;
                    Ok(IndicatorPossibility::points(images)?.into())
                }
                None => Err(unsupported()),
            },
            (MeasurableMap::Finite(_), _) => Err(unsupported()),
            (MeasurableMap::Bijective { matrix, offset, .. }, _) => push_linear(f, matrix, offset).ok_or_else(unsupported)?,
            (MeasurableMap::Projection { matrix }, _) => {
                push_linear(f, matrix, &DVector::zeros(matrix.nrows())).ok_or_else(unsupported)?
            }
        }
    }

    fn pull(&self, f: &PossibilityFunction) -> Result<PossibilityFunction> {
        use PossibilityFunction as P;
        check_dim(self.output_dim(), f.dim())?;
        let unrepresentable = || Error::unsupported(format!("pullback of a {} possibility by this map is not representable", f.family()));
        match self {
            MeasurableMap::Bijective { inverse, offset, .. } => {
                // f ∘ ξ = push-forward by ξ⁻¹ : y ↦ A⁻¹ y − A⁻¹ b
                let back_offset = -(inverse * offset);
                push_linear(f, inverse, &back_offset).ok_or_else(unrepresentable)?
            }
            MeasurableMap::Projection { matrix } => match f {
                P::Indicator(i) if matches!(i.support(), Support::Box { .. }) => {
                    let Support::Box { lo, hi } = i.support() else { unreachable!() };
                    let sel = selector(matrix).ok_or_else(unrepresentable)?;
                    let d = matrix.ncols();
                    let mut new_lo = DVector::from_element(d, f64::NEG_INFINITY);
                    let mut new_hi = DVector::from_element(d, f64::INFINITY);
                    for (r, (c, a)) in sel.iter().enumerate() {
                        let (l, h) = scale_interval(lo[r] / a, hi[r] / a);
                        new_lo[*c] = l;
                        new_hi[*c] = h;
                    }
                    Ok(IndicatorPossibility::boxed(new_lo, new_hi)?.into())
                }
                _ => Err(unrepresentable()),
            },
            MeasurableMap::Finite(m) => {
                let values = m
                    .table
                    .iter()
                    .map(|&j| f.evaluate(m.codomain.point(j)))
                    .collect::<Result<Vec<_>>>()?;
                if values.iter().cloned().fold(0.0, f64::max) != 1.0 {
                    return Err(Error::unsupported("pullback loses the supremum: the map misses every maximizer"));
                }
                if matches!(f, P::Indicator(_)) {
                    let pts = m.domain.points().iter().zip(&values).filter(|(_, v)| **v == 1.0).map(|(p, _)| p.clone()).collect();
                    return Ok(IndicatorPossibility::points(pts)?.into());
                }
                Ok(GridPossibility::new(m.domain.clone(), values)?.into())
            }
        }
    }
}

fn indicator_points(f: &PossibilityFunction) -> Option<&Vec<State>> {
    match f {
        PossibilityFunction::Indicator(i) => match i.support() {
            Support::Points(p) => Some(p),
            Support::Box { .. } => None,
        },
        _ => None,
    }
}

fn scale_interval(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// For a matrix with exactly one nonzero per row in distinct columns, the (column, entry) per row.
fn selector(matrix: &DMatrix<f64>) -> Option<Vec<(usize, f64)>> {
    let mut used = vec![false; matrix.ncols()];
    let mut out = Vec::with_capacity(matrix.nrows());
    for r in 0..matrix.nrows() {
        let nz: Vec<usize> = (0..matrix.ncols()).filter(|&c| matrix[(r, c)] != 0.0).collect();
        if nz.len() != 1 || used[nz[0]] {
            return None;
        }
        used[nz[0]] = true;
        out.push((nz[0], matrix[(r, nz[0])]));
    }
    Some(out)
}

/// Sup-image of `f` under `x ↦ A x + b` (bijective or full row rank); `None` when not closed.
fn push_linear(f: &PossibilityFunction, a: &DMatrix<f64>, b: &DVector<f64>) -> Option<Result<PossibilityFunction>> {
    use PossibilityFunction as P;
    let gauss = |g: &GaussianPossibility| -> Result<GaussianPossibility> {
        let spread = Spd::new(symmetrize(&(a * g.spread() * a.transpose())))?;
        GaussianPossibility::with_spd(a * g.mean() + b, spread)
    };
    let map_point = |x: &State| -> State { a * x + b };
    Some(match f {
        P::Gaussian(g) => gauss(g).map(Into::into),
        P::MaxMixture(m) => m
            .components()
            .iter()
            .map(|(w, c)| gauss(c).map(|g| (*w, g)))
            .collect::<Result<Vec<_>>>()
            .and_then(MaxMixture::new)
            .map(Into::into),
        P::Indicator(i) => match i.support() {
            Support::Points(pts) => IndicatorPossibility::points(pts.iter().map(map_point).collect()).map(Into::into),
            Support::Box { lo, hi } => {
                let sel = selector(a)?;
                let mut new_lo = DVector::zeros(a.nrows());
                let mut new_hi = DVector::zeros(a.nrows());
                for (r, (c, k)) in sel.iter().enumerate() {
                    let (l, h) = scale_interval(k * lo[*c], k * hi[*c]);
                    new_lo[r] = l + b[r];
                    new_hi[r] = h + b[r];
                }
                IndicatorPossibility::boxed(new_lo, new_hi).map(Into::into)
            }
        },
        P::Grid(g) => {
            // sup over fibers: merge grid points with equal images
            let mut points: Vec<State> = Vec::new();
            let mut values: Vec<f64> = Vec::new();
            for (p, v) in g.grid().points().iter().zip(g.values()) {
                let y = map_point(p);
                match points.iter().position(|q| *q == y) {
                    Some(j) => values[j] = values[j].max(*v),
                    None => {
                        points.push(y);
                        values.push(*v);
                    }
                }
            }
            Grid::new(points).and_then(|grid| GridPossibility::new(Arc::new(grid), values)).map(Into::into)
        }
    })
}

/// A conditional family `P_t(· | x_{t−1})` on finite grids: one outer measure per source point.
#[derive(Clone, Debug)]
pub struct GridConditional {
    from: Arc<Grid>,
    to: Arc<Grid>,
    rows: Vec<FiniteOuterMeasure>,
}

impl GridConditional {
    pub fn new(from: Arc<Grid>, to: Arc<Grid>, rows: Vec<FiniteOuterMeasure>) -> Result<Self> {
        check_dim(from.len(), rows.len())?;
        for r in &rows {
            check_dim(to.dim(), r.dim())?;
            for a in r.atoms() {
                if !is_finite_carrier(&a.function) {
                    return Err(Error::unsupported("conditional composition needs grid or point-set atoms"));
                }
            }
        }
        Ok(GridConditional { from, to, rows })
    }

    /// A conditional that ignores the conditioning state.
    pub fn constant(from: Arc<Grid>, to: Arc<Grid>, measure: FiniteOuterMeasure) -> Result<Self> {
        let rows = vec![measure; from.len()];
        GridConditional::new(from, to, rows)
    }

    pub fn from_grid(&self) -> &Arc<Grid> {
        &self.from
    }

    pub fn to_grid(&self) -> &Arc<Grid> {
        &self.to
    }

    pub fn row(&self, i: usize) -> &FiniteOuterMeasure {
        &self.rows[i]
    }
}

fn is_finite_carrier(f: &PossibilityFunction) -> bool {
    matches!(f, PossibilityFunction::Grid(_)) || indicator_points(f).is_some()
}

fn atom_values(measure: &FiniteOuterMeasure, grid: &Grid) -> Result<Vec<(f64, Vec<f64>)>> {
    measure
        .atoms()
        .iter()
        .map(|a| {
            if !is_finite_carrier(&a.function) {
                return Err(Error::unsupported("conditional composition needs grid or point-set atoms"));
            }
            let vals = grid.points().iter().map(|p| a.function.evaluate(p)).collect::<Result<Vec<_>>>()?;
            Ok((a.weight, vals))
        })
        .collect()
}

fn check_chain(kernels: &[GridConditional], grids: &[Arc<Grid>], reverse: bool) -> Result<()> {
    check_dim(kernels.len() + 1, grids.len())?;
    for (t, k) in kernels.iter().enumerate() {
        let (from, to) = if reverse { (&grids[t + 1], &grids[t]) } else { (&grids[t], &grids[t + 1]) };
        if !same_grid(&k.from, from) || !same_grid(&k.to, to) {
            return Err(Error::invalid(format!("conditional {t} does not match the grids of the test function")));
        }
    }
    Ok(())
}

/// Evaluates the nested composition `P̄_0 P̄_1 ⋯ P̄_T (φ)`, where `kernels[t]` conditions the state
/// at time `t + 1` on the state at time `t`; the last time index is collapsed first.
pub fn compose_conditional(initial: &FiniteOuterMeasure, kernels: &[GridConditional], phi: &JointTable) -> Result<f64> {
    let grids = phi.grids();
    check_chain(kernels, grids, false)?;
    let mut values = phi.values().to_vec();
    let shape = phi.shape();
    for (t, kernel) in kernels.iter().enumerate().rev() {
        let n_prev = shape[t];
        let n_last = shape[t + 1];
        let rows: Vec<Vec<(f64, Vec<f64>)>> =
            (0..n_prev).map(|i| atom_values(kernel.row(i), &kernel.to)).collect::<Result<_>>()?;
        let next = values
            .chunks(n_last)
            .enumerate()
            .map(|(block, slice)| rows[block % n_prev].iter().map(|(w, f)| w * sup_dot(f, slice)).sum())
            .collect();
        values = next;
    }
    let atoms = atom_values(initial, &grids[0])?;
    Ok(atoms.iter().map(|(w, f)| w * sup_dot(f, &values)).sum())
}

/// Evaluates the reversed nesting `P̄'_T P̄'_{T−1} ⋯ P̄'_0 (φ)`, where `kernels[t]` conditions
/// the state at time `t` on the state at time `t + 1`; the first time index is collapsed first.
pub fn compose_conditional_reverse(last: &FiniteOuterMeasure, kernels: &[GridConditional], phi: &JointTable) -> Result<f64> {
    let grids = phi.grids();
    check_chain(kernels, grids, true)?;
    let mut values = phi.values().to_vec();
    let mut shape = phi.shape().to_vec();
    for kernel in kernels {
        let n_first = shape[0];
        let n_next = shape[1];
        let rows: Vec<Vec<(f64, Vec<f64>)>> =
            (0..n_next).map(|i| atom_values(kernel.row(i), &kernel.to)).collect::<Result<_>>()?;
        let inner = values.len() / n_first;
        let stride_next = inner / n_next;
        let mut column = vec![0.0; n_first];
        let next = (0..inner)
            .map(|rest| {
                for (x0, c) in column.iter_mut().enumerate() {
                    *c = values[x0 * inner + rest];
                }
                rows[rest / stride_next].iter().map(|(w, f)| w * sup_dot(f, &column)).sum()
            })
            .collect();
        values = next;
        shape.remove(0);
    }
    let atoms = atom_values(last, &grids[grids.len() - 1])?;
    Ok(atoms.iter().map(|(w, f)| w * sup_dot(f, &values)).sum())
}

/// Two-step composition example on two-point spaces, with the kernels needed for both nestings.
#[derive(Clone, Debug)]
pub struct CompositionFixture {
    pub initial: FiniteOuterMeasure,
    pub kernel: GridConditional,
    pub last: FiniteOuterMeasure,
    pub reverse_kernel: GridConditional,
    pub phi: JointTable,
}

impl CompositionFixture {
    /// `x_1` depends on `x_0`: from 0 it may go anywhere (weights ½, ½), from 1 it stays.
    /// The reverse kernel is the mirror image. With `φ = 1{(0, 1)}` the two nestings give ½ and 0.
    pub fn dependent() -> Self {
        let g = Arc::new(Grid::indexed(2));
        let point = |i: usize| -> PossibilityFunction { IndicatorPossibility::points(vec![g.point(i).clone()]).expect("one point").into() };
        let vacuous = FiniteOuterMeasure::single(IndicatorPossibility::points(g.points().to_vec()).expect("two points"));
        let split = FiniteOuterMeasure::new(vec![Atom { weight: 0.5, function: point(0) }, Atom { weight: 0.5, function: point(1) }])
            .expect("weights sum to one");
        let rows = vec![split, FiniteOuterMeasure::single(point(1))];
        let kernel = GridConditional::new(g.clone(), g.clone(), rows.clone()).expect("matching grids");
        let reverse_kernel = GridConditional::new(g.clone(), g.clone(), rows).expect("matching grids");
        let phi = JointTable::from_fn(vec![g.clone(), g.clone()], |x| if x == [0, 1] { 1.0 } else { 0.0 }).expect("small table");
        CompositionFixture { initial: vacuous.clone(), kernel, last: vacuous, reverse_kernel, phi }
    }

    /// Independent marginals (constant kernels) and a product test function `a(x_0) b(x_1)`.
    pub fn separable() -> Self {
        let g = Arc::new(Grid::indexed(2));
        let grid_fn = |v: Vec<f64>| -> PossibilityFunction { GridPossibility::new(g.clone(), v).expect("max one").into() };
        let p0 = FiniteOuterMeasure::new(vec![
            Atom { weight: 0.75, function: grid_fn(vec![1.0, 0.5]) },
            Atom { weight: 0.25, function: grid_fn(vec![0.25, 1.0]) },
        ])
        .expect("weights sum to one");
        let p1 = FiniteOuterMeasure::new(vec![
            Atom { weight: 0.5, function: grid_fn(vec![0.5, 1.0]) },
            Atom { weight: 0.5, function: grid_fn(vec![1.0, 0.125]) },
        ])
        .expect("weights sum to one");
        let a = [1.0, 0.5];
        let b = [0.25, 1.0];
        let phi = JointTable::from_fn(vec![g.clone(), g.clone()], |x| a[x[0]] * b[x[1]]).expect("small table");
        CompositionFixture {
            kernel: GridConditional::constant(g.clone(), g.clone(), p1.clone()).expect("matching grids"),
            reverse_kernel: GridConditional::constant(g.clone(), g.clone(), p0.clone()).expect("matching grids"),
            initial: p0,
            last: p1,
            phi,
        }
    }

    /// `P̄_0 P̄_1 (φ)`.
    pub fn forward(&self) -> Result<f64> {
        compose_conditional(&self.initial, std::slice::from_ref(&self.kernel), &self.phi)
    }

    /// `P̄'_1 P̄'_0 (φ)`.
    pub fn reverse(&self) -> Result<f64> {
        compose_conditional_reverse(&self.last, std::slice::from_ref(&self.reverse_kernel), &self.phi)
    }
}

fn sup_dot(f: &[f64], phi: &[f64]) -> f64 {
    f.iter().zip(phi).map(|(a, b)| a * b).fold(0.0, f64::max)
}
