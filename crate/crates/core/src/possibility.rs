//! Possibility functions: positive functions with supremum one.
//!
//! Four closed families are supported: Gaussian possibilities, indicators of boxes or
//! finite point sets, tabulated functions on a finite grid, and max-mixtures of
//! Gaussian possibilities. Pointwise products are resolved through a fixed closure
//! table; combinations without a closed form fall back to a user-sized grid and are
//! flagged as approximate.
//!
//! | product            | result                                   | exact |
//! |--------------------|------------------------------------------|-------|
//! | vacuous × f        | f                                        | yes   |
//! | indicator × indicator | indicator of the intersection         | yes   |
//! | grid × f           | grid on the same points                  | yes   |
//! | point set × f      | grid on the point set                    | yes   |
//! | Gaussian × Gaussian | Gaussian (completed square)             | yes   |
//! | max-mixture × Gaussian/max-mixture | max-mixture              | yes   |
//! | Gaussian/max-mixture × box | grid over the box (fallback)     | no    |

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{symmetrize, Spd};

pub type State = DVector<f64>;

/// Builds a state vector from a slice.
pub fn state(values: &[f64]) -> State {
    DVector::from_column_slice(values)
}

/// Upper bound on the number of points of a fallback grid.
pub const MAX_FALLBACK_POINTS: usize = 1_000_000;

/// Correlated Gaussians up to this dimension get exact box suprema.
pub const MAX_FACE_DIM: usize = 8;

fn key(x: &State) -> Vec<u64> {
    // -0.0 and 0.0 denote the same state
    x.iter().map(|v| if *v == 0.0 { 0u64 } else { v.to_bits() }).collect()
}

/// A finite, ordered list of states carrying a grid possibility or a finite map.
#[derive(Clone)]
pub struct Grid {
    dim: usize,
    points: Vec<State>,
    lookup: HashMap<Vec<u64>, usize>,
}

impl Grid {
    pub fn new(points: Vec<State>) -> Result<Self> {
        let dim = points.first().ok_or_else(|| Error::invalid("grid needs at least one point"))?.len();
        let mut lookup = HashMap::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            check_dim(dim, p.len())?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("grid point with non-finite coordinate"));
            }
            if lookup.insert(key(p), i).is_some() {
                return Err(Error::invalid(format!("duplicate grid point {:?}", p.as_slice())));
            }
        }
        Ok(Grid { dim, points, lookup })
    }

    /// One-dimensional grid from scalar coordinates.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Grid::new(values.iter().map(|&v| state(&[v])).collect())
    }

    /// The states `0, 1, …, n−1` on the real line.
    pub fn indexed(n: usize) -> Self {
        Grid::scalar(&(0..n).map(|i| i as f64).collect::<Vec<_>>()).expect("n > 0")
    }

    /// Cartesian product; the last factor varies fastest.
    pub fn product(factors: &[&Grid]) -> Result<Self> {
        let mut points = vec![Vec::<f64>::new()];
        for g in factors {
            let mut next = Vec::with_capacity(points.len() * g.len());
            for p in &points {
                for q in g.points() {
                    let mut r = p.clone();
                    r.extend(q.iter());
                    next.push(r);
                }
            }
            points = next;
        }
        Grid::new(points.into_iter().map(DVector::from_vec).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[State] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &State {
        &self.points[i]
    }

    pub fn index_of(&self, x: &State) -> Option<usize> {
        if x.len() != self.dim {
            return None;
        }
        self.lookup.get(&key(x)).copied()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("dim", &self.dim).field("len", &self.points.len()).finish()
    }
}

pub(crate) fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// Grid resolution used when a product or supremum has no closed form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Fallback {
    resolution: Option<usize>,
}

impl Fallback {
    pub const NONE: Fallback = Fallback { resolution: None };

    /// Enables the fallback with `resolution` points per coordinate.
    pub fn grid(resolution: usize) -> Self {
        Fallback { resolution: Some(resolution.max(2)) }
    }

    pub fn resolution(&self) -> Option<usize> {
        self.resolution
    }

    fn box_points(&self, lo: &State, hi: &State, what: &str) -> Result<Vec<State>> {
        let res = self
            .resolution
            .ok_or_else(|| Error::unsupported(format!("{what} needs the grid fallback")))?;
        if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::unsupported(format!("{what}: grid fallback needs a bounded box")));
        }
        let d = lo.len();
        let total = (res as f64).powi(d as i32);
        if total > MAX_FALLBACK_POINTS as f64 {
            return Err(Error::SizeCap { size: total as usize, cap: MAX_FALLBACK_POINTS });
        }
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|k| {
                if lo[k] == hi[k] {
                    vec![lo[k]]
                } else {
                    (0..res).map(|i| lo[k] + (hi[k] - lo[k]) * i as f64 / (res - 1) as f64).collect()
                }
            })
            .collect();
        let mut points = vec![Vec::new()];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p: Vec<f64>| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        Ok(points.into_iter().map(DVector::from_vec).collect())
    }
}

/// Result of a supremum query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sup {
    pub value: f64,
    /// `false` when the value came from the grid fallback.
    pub exact: bool,
}

impl Sup {
    fn exact(value: f64) -> Self {
        Sup { value, exact: true }
    }
}

/// Region for supremum queries.
#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    Whole,
    Box { lo: State, hi: State },
    Points(Vec<State>),
}

fn in_box(x: &State, lo: &State, hi: &State) -> bool {
    x.iter().zip(lo.iter().zip(hi.iter())).all(|(v, (l, h))| *l <= *v && *v <= *h)
}

fn clamp_to_box(x: &State, lo: &State, hi: &State) -> State {
    DVector::from_iterator(x.len(), x.iter().zip(lo.iter().zip(hi.iter())).map(|(v, (l, h))| v.clamp(*l, *h)))
}

/// `N̄(x; m, P) = exp(−½ (x−m)ᵀ P⁻¹ (x−m))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPossibility {
    mean: State,
    spread: Spd,
}

impl GaussianPossibility {
    pub fn new(mean: State, spread: DMatrix<f64>) -> Result<Self> {
        GaussianPossibility::with_spd(mean, Spd::new(spread)?)
    }

    pub fn with_spd(mean: State, spread: Spd) -> Result<Self> {
        check_dim(spread.dim(), mean.len())?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Gaussian mean must be finite"));
        }
        Ok(GaussianPossibility { mean, spread })
    }

    pub fn scalar(mean: f64, spread: f64) -> Result<Self> {
        GaussianPossibility::with_spd(state(&[mean]), Spd::scalar(spread)?)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &State {
        &self.mean
    }

    pub fn spread(&self) -> &DMatrix<f64> {
        self.spread.matrix()
    }

    pub fn spd(&self) -> &Spd {
        &self.spread
    }

    pub fn log_evaluate(&self, x: &State) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(-0.5 * self.spread.inv_quad_form(&(x - &self.mean)))
    }

    pub fn evaluate(&self, x: &State) -> Result<f64> {
        Ok(self.log_evaluate(x)?.exp())
    }

    /// Product of two Gaussian possibilities: the base is Gaussian and the scale is
    /// `exp(−½ dᵀ (P₁+P₂)⁻¹ d)` with `d = m₁ − m₂`.
    pub fn product(&self, other: &GaussianPossibility) -> Result<(GaussianPossibility, f64)> {
        check_dim(self.dim(), other.dim())?;
        let sum = Spd::new(self.spread() + other.spread())?;
        let diff = &other.mean - &self.mean;
        let log_scale = -0.5 * sum.inv_quad_form(&diff);
        let gain = self.spread() * sum.inverse();
        let mean = &self.mean + &gain * diff;
        let spread = symmetrize(&(&gain * other.spread()));
        Ok((GaussianPossibility::new(mean, spread)?, log_scale.exp()))
    }

    fn sup_over_box(&self, lo: &State, hi: &State, fallback: Fallback) -> Result<Sup> {
        if in_box(&self.mean, lo, hi) {
            return Ok(Sup::exact(1.0));
        }
        if self.spread.is_diagonal() {
            let x = clamp_to_box(&self.mean, lo, hi);
            return Ok(Sup::exact(self.evaluate(&x)?));
        }
        if self.dim() <= MAX_FACE_DIM {
            return Ok(Sup::exact(self.face_search(lo, hi)?));
        }
        let points = fallback.box_points(lo, hi, "box supremum of a correlated Gaussian")?;
        let mut best = 0.0f64;
        for p in &points {
            best = best.max(self.evaluate(p)?);
        }
        Ok(Sup { value: best, exact: false })
    }

    /// Box supremum of a correlated Gaussian: the minimizer of the quadratic form over the box is
    /// the unconstrained minimizer of some face, so every face (each coordinate free, at its lower
    /// or at its upper bound) is tried and the best feasible candidate kept.
    fn face_search(&self, lo: &State, hi: &State) -> Result<f64> {
        let d = self.dim();
        let precision = self.spread.inverse();
        let mut best = 0.0f64;
        let mut code = vec![0u8; d];
        'faces: for face in 0..3usize.pow(d as u32) {
            let mut f = face;
            for c in code.iter_mut() {
                *c = (f % 3) as u8;
                f /= 3;
            }
            let mut x = self.mean.clone();
            let mut free = Vec::with_capacity(d);
            for (k, c) in code.iter().enumerate() {
                match c {
                    0 => free.push(k),
                    1 if lo[k].is_finite() => x[k] = lo[k],
                    2 if hi[k].is_finite() => x[k] = hi[k],
                    _ => continue 'faces,
                }
            }
            if free.len() < d {
                let fixed: Vec<usize> = (0..d).filter(|k| !free.contains(k)).collect();
                if !free.is_empty() {
                    let a = precision.select_rows(&free).select_columns(&free);
                    let b = precision.select_rows(&free).select_columns(&fixed);
                    let shift = DVector::from_iterator(fixed.len(), fixed.iter().map(|&k| x[k] - self.mean[k]));
                    let Some(chol) = a.cholesky() else { continue };
                    let step = chol.solve(&(b * shift));
                    for (i, &k) in free.iter().enumerate() {
                        x[k] = self.mean[k] - step[i];
                    }
                }
            }
            let slack = 1e-12 * (1.0 + x.amax());
            if free.iter().any(|&k| x[k] < lo[k] - slack || x[k] > hi[k] + slack) {
                continue;
            }
            best = best.max(self.evaluate(&clamp_to_box(&x, lo, hi))?);
        }
        Ok(best)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Support {
    Box { lo: State, hi: State },
    Points(Vec<State>),
}

/// Indicator of an axis-aligned box or of a finite point set.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorPossibility {
    dim: usize,
    support: Support,
}

impl IndicatorPossibility {
    pub fn boxed(lo: State, hi: State) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(Error::invalid("box of dimension zero"));
        }
        for (l, h) in lo.iter().zip(hi.iter()) {
            if l.is_nan() || h.is_nan() || l > h || *l == f64::INFINITY || *h == f64::NEG_INFINITY {
                return Err(Error::invalid(format!("empty box side [{l}, {h}]")));
            }
        }
        Ok(IndicatorPossibility { dim: lo.len(), support: Support::Box { lo, hi } })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        IndicatorPossibility::boxed(state(&[lo]), state(&[hi]))
    }

    /// The vacuous possibility: indicator of the whole space.
    pub fn whole(dim: usize) -> Self {
        IndicatorPossibility::boxed(
            DVector::from_element(dim, f64::NEG_INFINITY),
            DVector::from_element(dim, f64::INFINITY),
        )
        .expect("whole space is a valid box")
    }

    pub fn points(points: Vec<State>) -> Result<Self> {
        let dim = points.first().ok_or_else(|| Error::invalid("indicator of an empty point set"))?.len();
        let mut seen = std::collections::HashSet::new();
        let mut unique = Vec::with_capacity(points.len());
        for p in points {
            check_dim(dim, p.len())?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite support point"));
            }
            if seen.insert(key(&p)) {
                unique.push(p);
            }
        }
        Ok(IndicatorPossibility { dim, support: Support::Points(unique) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn is_whole(&self) -> bool {
        match &self.support {
            Support::Box { lo, hi } => {
                lo.iter().all(|v| *v == f64::NEG_INFINITY) && hi.iter().all(|v| *v == f64::INFINITY)
            }
            Support::Points(_) => false,
        }
    }

    pub fn contains(&self, x: &State) -> bool {
        match &self.support {
            Support::Box { lo, hi } => in_box(x, lo, hi),
            Support::Points(pts) => pts.iter().any(|p| p == x),
        }
    }

    fn intersect(&self, other: &IndicatorPossibility) -> Option<IndicatorPossibility> {
        let support = match (&self.support, &other.support) {
            (Support::Box { lo: a, hi: b }, Support::Box { lo: c, hi: d }) => {
                let lo = a.zip_map(c, f64::max);
                let hi = b.zip_map(d, f64::min);
                if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
                    return None;
                }
                Support::Box { lo, hi }
            }
            (Support::Points(pts), _) => {
                Support::Points(pts.iter().filter(|p| other.contains(p)).cloned().collect())
            }
            (Support::Box { .. }, Support::Points(pts)) => {
                Support::Points(pts.iter().filter(|p| self.contains(p)).cloned().collect())
            }
        };
        match &support {
            Support::Points(p) if p.is_empty() => None,
            _ => Some(IndicatorPossibility { dim: self.dim, support }),
        }
    }
}

/// A tabulated possibility on a finite grid; zero off the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPossibility {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl GridPossibility {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        check_dim(grid.len(), values.len())?;
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("grid possibility values must lie in [0, 1]"));
        }
        if values.iter().cloned().fold(0.0, f64::max) != 1.0 {
            return Err(Error::invalid("grid possibility must attain the value 1"));
        }
        Ok(GridPossibility { grid, values })
    }

    /// Rescales nonnegative values by their maximum; `None` when all vanish.
    pub fn from_raw(grid: Arc<Grid>, raw: Vec<f64>) -> Result<Option<ScaledFunction>> {
        check_dim(grid.len(), raw.len())?;
        if raw.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("unnormalized grid values must be finite and nonnegative"));
        }
        let scale = raw.iter().cloned().fold(0.0, f64::max);
        if scale == 0.0 {
            return Ok(None);
        }
        let values = raw.iter().map(|v| v / scale).collect();
        Ok(Some(ScaledFunction {
            base: PossibilityFunction::Grid(GridPossibility { grid, values }),
            scale,
            approximate: false,
        }))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn evaluate(&self, x: &State) -> f64 {
        self.grid.index_of(x).map_or(0.0, |i| self.values[i])
    }

    /// Index of the first maximizer.
    pub fn argmax(&self) -> usize {
        self.values.iter().position(|v| *v == 1.0).unwrap_or(0)
    }
}

/// `x ↦ max_i w_i · N̄(x; m_i, P_i)` with `max_i w_i = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxMixture {
    components: Vec<(f64, GaussianPossibility)>,
}

impl MaxMixture {
    pub fn new(components: Vec<(f64, GaussianPossibility)>) -> Result<Self> {
        let dim = components.first().ok_or_else(|| Error::invalid("max-mixture needs a component"))?.1.dim();
        for (w, c) in &components {
            check_dim(dim, c.dim())?;
            if !(*w > 0.0 && *w <= 1.0) {
                return Err(Error::invalid(format!("max-mixture weight {w} outside (0, 1]")));
            }
        }
        let top = components.iter().map(|c| c.0).fold(0.0, f64::max);
        if (top - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("largest max-mixture weight must be 1"));
        }
        let components = components.into_iter().map(|(w, c)| ((w / top).min(1.0), c)).collect();
        Ok(MaxMixture { components })
    }

    /// Renormalizes positive weights so that the largest is one; returns the removed scale.
    pub fn from_scaled(components: Vec<(f64, GaussianPossibility)>) -> Option<(MaxMixture, f64)> {
        let components: Vec<_> = components.into_iter().filter(|(w, _)| *w > 0.0).collect();
        let top = components.iter().map(|c| c.0).fold(0.0, f64::max);
        if components.is_empty() || top == 0.0 {
            return None;
        }
        let components = components.into_iter().map(|(w, c)| (w / top, c)).collect();
        Some((MaxMixture { components }, top))
    }

    pub fn components(&self) -> &[(f64, GaussianPossibility)] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].1.dim()
    }

    pub fn evaluate(&self, x: &State) -> Result<f64> {
        let mut best = 0.0f64;
        for (w, c) in &self.components {
            best = best.max(w * c.evaluate(x)?);
        }
        Ok(best)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Gaussian,
    Indicator,
    Grid,
    MaxMixture,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Gaussian => "gaussian",
            Family::Indicator => "indicator",
            Family::Grid => "grid",
            Family::MaxMixture => "max-mixture",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PossibilityFunction {
    Gaussian(GaussianPossibility),
    Indicator(IndicatorPossibility),
    Grid(GridPossibility),
    MaxMixture(MaxMixture),
}

impl From<GaussianPossibility> for PossibilityFunction {
    fn from(g: GaussianPossibility) -> Self {
        PossibilityFunction::Gaussian(g)
    }
}

impl From<IndicatorPossibility> for PossibilityFunction {
    fn from(i: IndicatorPossibility) -> Self {
        PossibilityFunction::Indicator(i)
    }
}

impl From<GridPossibility> for PossibilityFunction {
    fn from(g: GridPossibility) -> Self {
        PossibilityFunction::Grid(g)
    }
}

impl From<MaxMixture> for PossibilityFunction {
    fn from(m: MaxMixture) -> Self {
        PossibilityFunction::MaxMixture(m)
    }
}

/// An unnormalized product recorded as `scale · base` with `base` of supremum one.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledFunction {
    pub base: PossibilityFunction,
    pub scale: f64,
    pub approximate: bool,
}

impl ScaledFunction {
    fn exact(base: PossibilityFunction, scale: f64) -> Option<Self> {
        (scale > 0.0).then_some(ScaledFunction { base, scale, approximate: false })
    }

    pub fn evaluate(&self, x: &State) -> Result<f64> {
        Ok(self.scale * self.base.evaluate(x)?)
    }
}

impl PossibilityFunction {
    pub fn vacuous(dim: usize) -> Self {
        IndicatorPossibility::whole(dim).into()
    }

    pub fn dim(&self) -> usize {
        match self {
            PossibilityFunction::Gaussian(g) => g.dim(),
            PossibilityFunction::Indicator(i) => i.dim(),
            PossibilityFunction::Grid(g) => g.dim(),
            PossibilityFunction::MaxMixture(m) => m.dim(),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            PossibilityFunction::Gaussian(_) => Family::Gaussian,
            PossibilityFunction::Indicator(_) => Family::Indicator,
            PossibilityFunction::Grid(_) => Family::Grid,
            PossibilityFunction::MaxMixture(_) => Family::MaxMixture,
        }
    }

    pub fn is_vacuous(&self) -> bool {
        matches!(self, PossibilityFunction::Indicator(i) if i.is_whole())
    }

    pub fn evaluate(&self, x: &State) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        match self {
            PossibilityFunction::Gaussian(g) => g.evaluate(x),
            PossibilityFunction::Indicator(i) => Ok(if i.contains(x) { 1.0 } else { 0.0 }),
            PossibilityFunction::Grid(g) => Ok(g.evaluate(x)),
            PossibilityFunction::MaxMixture(m) => m.evaluate(x),
        }
    }

    /// A maximizer; the lowest-index one for tabulated and mixture families.
    pub fn mode(&self) -> State {
        match self {
            PossibilityFunction::Gaussian(g) => g.mean().clone(),
            PossibilityFunction::Indicator(i) => match i.support() {
                Support::Box { lo, hi } => lo.zip_map(hi, |l, h| match (l.is_finite(), h.is_finite()) {
                    (true, true) => 0.5 * (l + h),
                    (true, false) => l.max(0.0),
                    (false, true) => h.min(0.0),
                    (false, false) => 0.0,
                }),
                Support::Points(p) => p[0].clone(),
            },
            PossibilityFunction::Grid(g) => g.grid.point(g.argmax()).clone(),
            PossibilityFunction::MaxMixture(m) => {
                m.components.iter().find(|(w, _)| *w == 1.0).unwrap_or(&m.components[0]).1.mean().clone()
            }
        }
    }

    /// `sup_{x ∈ region} f(x)`.
    pub fn sup_over(&self, region: &Region, fallback: Fallback) -> Result<Sup> {
        match region {
            Region::Whole => Ok(Sup::exact(1.0)),
            Region::Points(points) => {
                let mut best = 0.0f64;
                for p in points {
                    best = best.max(self.evaluate(p)?);
                }
                Ok(Sup::exact(best))
            }
            Region::Box { lo, hi } => {
                check_dim(self.dim(), lo.len())?;
                check_dim(self.dim(), hi.len())?;
                if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
                    return Ok(Sup::exact(0.0));
                }
                match self {
                    PossibilityFunction::Gaussian(g) => g.sup_over_box(lo, hi, fallback),
                    PossibilityFunction::Indicator(i) => {
                        let probe = IndicatorPossibility { dim: i.dim, support: Support::Box { lo: lo.clone(), hi: hi.clone() } };
                        Ok(Sup::exact(if i.intersect(&probe).is_some() { 1.0 } else { 0.0 }))
                    }
                    PossibilityFunction::Grid(g) => {
                        let best = g
                            .grid
                            .points()
                            .iter()
                            .zip(&g.values)
                            .filter(|(p, _)| in_box(p, lo, hi))
                            .map(|(_, v)| *v)
                            .fold(0.0, f64::max);
                        Ok(Sup::exact(best))
                    }
                    PossibilityFunction::MaxMixture(m) => {
                        let mut out = Sup::exact(0.0);
                        for (w, c) in &m.components {
                            let s = c.sup_over_box(lo, hi, fallback)?;
                            out.value = out.value.max(w * s.value);
                            out.exact &= s.exact;
                        }
                        Ok(out)
                    }
                }
            }
        }
    }

    /// Pointwise product, returned as `scale · base`; `None` when the supports do not meet.
    pub fn product(&self, other: &PossibilityFunction, fallback: Fallback) -> Result<Option<ScaledFunction>> {
        use PossibilityFunction as P;
        check_dim(self.dim(), other.dim())?;
        if other.is_vacuous() {
            return Ok(ScaledFunction::exact(self.clone(), 1.0));
        }
        if self.is_vacuous() {
            return Ok(ScaledFunction::exact(other.clone(), 1.0));
        }
        match (self, other) {
            (P::Indicator(a), P::Indicator(b)) => Ok(a.intersect(b).and_then(|i| ScaledFunction::exact(i.into(), 1.0))),
            (P::Grid(g), _) => pointwise_on_grid(g, other),
            (_, P::Grid(g)) => pointwise_on_grid(g, self),
            (P::Indicator(IndicatorPossibility { support: Support::Points(pts), .. }), _) => pointwise_on_points(pts, other),
            (_, P::Indicator(IndicatorPossibility { support: Support::Points(pts), .. })) => pointwise_on_points(pts, self),
            (P::Gaussian(a), P::Gaussian(b)) => {
                let (base, scale) = a.product(b)?;
                Ok(ScaledFunction::exact(base.into(), scale))
            }
            (P::MaxMixture(m), P::Gaussian(g)) => mixture_product(m.components.iter().map(|(w, c)| (*w, c)), |c| c.product(g)),
            (P::Gaussian(g), P::MaxMixture(m)) => mixture_product(m.components.iter().map(|(w, c)| (*w, c)), |c| g.product(c)),
            (P::MaxMixture(a), P::MaxMixture(b)) => {
                let mut comps = Vec::with_capacity(a.components.len() * b.components.len());
                for (wa, ca) in &a.components {
                    for (wb, cb) in &b.components {
                        let (base, s) = ca.product(cb)?;
                        comps.push((wa * wb * s, base));
                    }
                }
                Ok(MaxMixture::from_scaled(comps).and_then(|(m, s)| ScaledFunction::exact(m.into(), s)))
            }
            (P::Indicator(IndicatorPossibility { support: Support::Box { lo, hi }, .. }), smooth)
            | (smooth, P::Indicator(IndicatorPossibility { support: Support::Box { lo, hi }, .. })) => {
                box_fallback(smooth, lo, hi, fallback)
            }
        }
    }

    /// Parameter-wise comparison within `tol` (same family required).
    pub fn approx_eq(&self, other: &PossibilityFunction, tol: f64) -> bool {
        use PossibilityFunction as P;
        fn close(a: f64, b: f64, tol: f64) -> bool {
            a == b || (a - b).abs() <= tol
        }
        fn vec_close<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>, tol: f64) -> bool {
            let a: Vec<_> = a.into_iter().collect();
            let b: Vec<_> = b.into_iter().collect();
            a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| close(**x, **y, tol))
        }
        fn gauss_close(a: &GaussianPossibility, b: &GaussianPossibility, tol: f64) -> bool {
            vec_close(a.mean.iter(), b.mean.iter(), tol) && vec_close(a.spread().iter(), b.spread().iter(), tol)
        }
        match (self, other) {
            (P::Gaussian(a), P::Gaussian(b)) => gauss_close(a, b, tol),
            (P::Indicator(a), P::Indicator(b)) => match (&a.support, &b.support) {
                (Support::Box { lo: l1, hi: h1 }, Support::Box { lo: l2, hi: h2 }) => {
                    vec_close(l1.iter(), l2.iter(), tol) && vec_close(h1.iter(), h2.iter(), tol)
                }
                (Support::Points(p), Support::Points(q)) => {
                    p.len() == q.len() && p.iter().zip(q).all(|(x, y)| vec_close(x.iter(), y.iter(), tol))
                }
                _ => false,
            },
            (P::Grid(a), P::Grid(b)) => same_grid(&a.grid, &b.grid) && vec_close(&a.values, &b.values, tol),
            (P::MaxMixture(a), P::MaxMixture(b)) => {
                a.components.len() == b.components.len()
                    && a.components.iter().zip(&b.components).all(|((wa, ca), (wb, cb))| close(*wa, *wb, tol) && gauss_close(ca, cb, tol))
            }
            _ => false,
        }
    }
}

fn pointwise_on_grid(g: &GridPossibility, other: &PossibilityFunction) -> Result<Option<ScaledFunction>> {
    let raw = match other {
        PossibilityFunction::Grid(h) if same_grid(&g.grid, &h.grid) => {
            g.values.iter().zip(&h.values).map(|(a, b)| a * b).collect()
        }
        _ => g
            .grid
            .points()
            .iter()
            .zip(&g.values)
            .map(|(p, v)| Ok(if *v == 0.0 { 0.0 } else { v * other.evaluate(p)? }))
            .collect::<Result<Vec<_>>>()?,
    };
    GridPossibility::from_raw(g.grid.clone(), raw)
}

fn pointwise_on_points(points: &[State], other: &PossibilityFunction) -> Result<Option<ScaledFunction>> {
    let raw = points.iter().map(|p| other.evaluate(p)).collect::<Result<Vec<_>>>()?;
    GridPossibility::from_raw(Arc::new(Grid::new(points.to_vec())?), raw)
}

fn mixture_product<'a>(
    comps: impl Iterator<Item = (f64, &'a GaussianPossibility)>,
    mul: impl Fn(&GaussianPossibility) -> Result<(GaussianPossibility, f64)>,
) -> Result<Option<ScaledFunction>> {
    let scaled = comps
        .map(|(w, c)| mul(c).map(|(base, s)| (w * s, base)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MaxMixture::from_scaled(scaled).and_then(|(m, s)| ScaledFunction::exact(m.into(), s)))
}

fn box_fallback(smooth: &PossibilityFunction, lo: &State, hi: &State, fallback: Fallback) -> Result<Option<ScaledFunction>> {
    let mut points = fallback.box_points(lo, hi, &format!("{} × box indicator", smooth.family()))?;
    // keep the exact box maximizer on the grid when it is known in closed form
    if let PossibilityFunction::Gaussian(g) = smooth {
        if g.spd().is_diagonal() || in_box(g.mean(), lo, hi) {
            let x = clamp_to_box(g.mean(), lo, hi);
            if !points.contains(&x) {
                points.push(x);
            }
        }
    }
    let raw = points.iter().map(|p| smooth.evaluate(p)).collect::<Result<Vec<_>>>()?;
    let out = GridPossibility::from_raw(Arc::new(Grid::new(points)?), raw)?;
    Ok(out.map(|s| ScaledFunction { approximate: true, ..s }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(m: f64, p: f64) -> PossibilityFunction {
        GaussianPossibility::scalar(m, p).unwrap().into()
    }

    #[test]
    fn gaussian_evaluate() {
        let f = gauss(0.0, 1.0);
        assert_eq!(f.evaluate(&state(&[0.0])).unwrap(), 1.0);
        assert!((f.evaluate(&state(&[2.0])).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        assert!(matches!(f.evaluate(&state(&[0.0, 1.0])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn indicator_evaluate() {
        let f: PossibilityFunction = IndicatorPossibility::interval(0.0, 1.0).unwrap().into();
        assert_eq!(f.evaluate(&state(&[2.0])).unwrap(), 0.0);
        assert_eq!(f.evaluate(&state(&[1.0])).unwrap(), 1.0);
        assert!(IndicatorPossibility::interval(1.0, 0.0).is_err());
        assert!(IndicatorPossibility::points(vec![]).is_err());
    }

    #[test]
    fn gaussian_product_completes_square() {
        let s = gauss(0.0, 1.0).product(&gauss(2.0, 1.0), Fallback::NONE).unwrap().unwrap();
        assert!(!s.approximate);
        assert!((s.scale - (-1.0f64).exp()).abs() < 1e-15);
        match &s.base {
            PossibilityFunction::Gaussian(g) => {
                assert!((g.mean()[0] - 1.0).abs() < 1e-15);
                assert!((g.spread()[(0, 0)] - 0.5).abs() < 1e-15);
            }
            other => panic!("unexpected family {other:?}"),
        }
    }

    #[test]
    fn gaussian_product_matches_dense_grid_maximization() {
        // oracle: maximize exp(-x²/2 - (x-2)²/2) over a fine grid
        let (mut best, mut arg) = (0.0f64, 0.0);
        for i in 0..=400_000 {
            let x = -2.0 + 6.0 * i as f64 / 400_000.0;
            let v = (-0.5 * x * x - 0.5 * (x - 2.0) * (x - 2.0)).exp();
            if v > best {
                best = v;
                arg = x;
            }
        }
        let s = gauss(0.0, 1.0).product(&gauss(2.0, 1.0), Fallback::NONE).unwrap().unwrap();
        assert!((s.scale - best).abs() < 1e-9);
        assert!((s.base.mode()[0] - arg).abs() < 1e-4);
    }

    #[test]
    fn interval_products() {
        let a: PossibilityFunction = IndicatorPossibility::interval(0.0, 2.0).unwrap().into();
        let b: PossibilityFunction = IndicatorPossibility::interval(1.0, 3.0).unwrap().into();
        let s = a.product(&b, Fallback::NONE).unwrap().unwrap();
        assert_eq!(s.scale, 1.0);
        assert_eq!(s.base, IndicatorPossibility::interval(1.0, 2.0).unwrap().into());

        let c: PossibilityFunction = IndicatorPossibility::interval(0.0, 1.0).unwrap().into();
        let d: PossibilityFunction = IndicatorPossibility::interval(2.0, 3.0).unwrap().into();
        assert!(c.product(&d, Fallback::NONE).unwrap().is_none());
    }

    #[test]
    fn vacuous_is_neutral() {
        let f = gauss(0.3, 2.0);
        let s = f.product(&PossibilityFunction::vacuous(1), Fallback::NONE).unwrap().unwrap();
        assert_eq!(s.scale, 1.0);
        assert_eq!(s.base, f);
    }

    #[test]
    fn box_sup_clamps_diagonal_gaussian() {
        let f = gauss(0.0, 1.0);
        let r = Region::Box { lo: state(&[2.0]), hi: state(&[3.0]) };
        let s = f.sup_over(&r, Fallback::NONE).unwrap();
        assert!(s.exact);
        assert!((s.value - (-2.0f64).exp()).abs() < 1e-15);
        // dense grid confirmation
        let grid_max = (0..=10_000).map(|i| (-0.5 * (2.0 + i as f64 / 10_000.0).powi(2)).exp()).fold(0.0, f64::max);
        assert!((s.value - grid_max).abs() < 1e-15);
        assert_eq!(f.sup_over(&Region::Whole, Fallback::NONE).unwrap().value, 1.0);
    }

    #[test]
    fn correlated_box_sup_matches_dense_search() {
        let g = GaussianPossibility::new(state(&[0.0, 0.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0])).unwrap();
        let f: PossibilityFunction = g.clone().into();
        let (lo, hi) = (state(&[1.0, -1.0]), state(&[2.0, -0.5]));
        let s = f.sup_over(&Region::Box { lo: lo.clone(), hi: hi.clone() }, Fallback::NONE).unwrap();
        assert!(s.exact);
        let n = 801;
        let mut dense = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let x = state(&[
                    lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64,
                ]);
                dense = dense.max(g.evaluate(&x).unwrap());
            }
        }
        assert!(s.value >= dense - 1e-15);
        assert!(s.value - dense < 1e-5, "{} vs {dense}", s.value);
    }

    #[test]
    fn grid_sup_and_product() {
        let grid = Arc::new(Grid::indexed(3));
        let f: PossibilityFunction = GridPossibility::new(grid.clone(), vec![0.3, 1.0, 0.5]).unwrap().into();
        let all = Region::Points(grid.points().to_vec());
        assert_eq!(f.sup_over(&all, Fallback::NONE).unwrap().value, 1.0);
        assert_eq!(f.sup_over(&Region::Points(vec![]), Fallback::NONE).unwrap().value, 0.0);
        let g: PossibilityFunction = GridPossibility::new(grid, vec![1.0, 0.2, 0.5]).unwrap().into();
        let s = f.product(&g, Fallback::NONE).unwrap().unwrap();
        assert!((s.scale - 0.3).abs() < 1e-16);
        assert!(GridPossibility::new(Arc::new(Grid::indexed(2)), vec![0.5, 0.9]).is_err());
    }

    #[test]
    fn mixture_product_distributes() {
        let m = MaxMixture::new(vec![
            (1.0, GaussianPossibility::scalar(0.0, 1.0).unwrap()),
            (0.5, GaussianPossibility::scalar(4.0, 1.0).unwrap()),
        ])
        .unwrap();
        let f: PossibilityFunction = m.into();
        let g = gauss(4.0, 1.0);
        let s = f.product(&g, Fallback::NONE).unwrap().unwrap();
        for i in -40..80 {
            let x = state(&[i as f64 / 10.0]);
            let lhs = s.evaluate(&x).unwrap();
            let rhs = f.evaluate(&x).unwrap() * g.evaluate(&x).unwrap();
            assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        }
        assert_eq!(s.base.sup_over(&Region::Whole, Fallback::NONE).unwrap().value, 1.0);
    }

    #[test]
    fn gaussian_times_box_uses_fallback() {
        let f = gauss(0.0, 1.0);
        let b: PossibilityFunction = IndicatorPossibility::interval(1.0, 2.0).unwrap().into();
        assert!(f.product(&b, Fallback::NONE).is_err());
        let s = f.product(&b, Fallback::grid(101)).unwrap().unwrap();
        assert!(s.approximate);
        assert!((s.scale - (-0.5f64).exp()).abs() < 1e-15);
    }
}
