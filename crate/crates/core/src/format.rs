//! Text formats: possibility records, outer-measure files and TOML scenario files.
//!
//! A possibility record is a whitespace-separated line: family tag, dimension, then fields,
//! matrices row-major.
//!
//! ```text
//! gaussian <d> <mean: d> <spread: d*d>
//! box <d> <lo: d> <hi: d>                  (inf and -inf allowed)
//! points <d> <n> <coordinates: n*d>
//! grid <d> <n> (<coordinates: d> <value>)*n
//! maxmix <d> <k> (<weight> <mean: d> <spread: d*d>)*k
//! ```
//!
//! An outer-measure file starts with `outer_measure <dim> <count>` followed by one
//! `<weight> <record>` line per atom. Blank lines and text after `#` are ignored.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::gaussian::GaussianTransition;
use crate::model::{
    simulate, ConditionalPossibility, GridKernel, LinearGaussianDynamics, MarkovKernel, ObservationMap, ObservedInfo, Scenario,
    SetValuedMap, TransitionSpec,
};
use crate::outer_measure::{Atom, FiniteMap, FiniteOuterMeasure};
use crate::possibility::{
    GaussianPossibility, Grid, GridPossibility, IndicatorPossibility, MaxMixture, PossibilityFunction, State, Support,
};

/// Shortest decimal form that parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn push_all(out: &mut Vec<String>, values: impl IntoIterator<Item = f64>) {
    out.extend(values.into_iter().map(num));
}

fn push_matrix(out: &mut Vec<String>, m: &DMatrix<f64>) {
    push_all(out, m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()));
}

/// Serializes a possibility function as a single-line record.
pub fn write_function(f: &PossibilityFunction) -> String {
    let d = f.dim();
    let mut out = Vec::new();
    match f {
        PossibilityFunction::Gaussian(g) => {
            out.push(format!("gaussian {d}"));
            push_all(&mut out, g.mean().iter().copied());
            push_matrix(&mut out, g.spread());
        }
        PossibilityFunction::Indicator(i) => match i.support() {
            Support::Box { lo, hi } => {
                out.push(format!("box {d}"));
                push_all(&mut out, lo.iter().chain(hi.iter()).copied());
            }
            Support::Points(p) => {
                out.push(format!("points {d} {}", p.len()));
                push_all(&mut out, p.iter().flat_map(|x| x.iter().copied().collect::<Vec<_>>()));
            }
        },
        PossibilityFunction::Grid(g) => {
            out.push(format!("grid {d} {}", g.values().len()));
            for (p, v) in g.grid().points().iter().zip(g.values()) {
                push_all(&mut out, p.iter().copied().chain([*v]));
            }
        }
        PossibilityFunction::MaxMixture(m) => {
            out.push(format!("maxmix {d} {}", m.components().len()));
            for (w, c) in m.components() {
                push_all(&mut out, std::iter::once(*w).chain(c.mean().iter().copied()));
                push_matrix(&mut out, c.spread());
            }
        }
    }
    out.join(" ")
}

struct Tokens<'a> {
    items: std::str::SplitWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    fn word(&mut self) -> std::result::Result<&'a str, String> {
        self.items.next().ok_or_else(|| "record ends early".to_string())
    }

    fn count(&mut self) -> std::result::Result<usize, String> {
        let w = self.word()?;
        w.parse().map_err(|_| format!("expected a count, found {w:?}"))
    }

    fn number(&mut self) -> std::result::Result<f64, String> {
        let w = self.word()?;
        w.parse().map_err(|_| format!("expected a number, found {w:?}"))
    }

    fn vector(&mut self, n: usize) -> std::result::Result<DVector<f64>, String> {
        (0..n).map(|_| self.number()).collect::<std::result::Result<Vec<_>, _>>().map(DVector::from_vec)
    }

    fn matrix(&mut self, r: usize, c: usize) -> std::result::Result<DMatrix<f64>, String> {
        let v = (0..r * c).map(|_| self.number()).collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(DMatrix::from_row_slice(r, c, &v))
    }

    fn finish(mut self) -> std::result::Result<(), String> {
        match self.items.next() {
            Some(extra) => Err(format!("unexpected trailing field {extra:?}")),
            None => Ok(()),
        }
    }
}

fn parse_record(tokens: &mut Tokens<'_>) -> std::result::Result<PossibilityFunction, String> {
    let tag = tokens.word()?;
    let d = tokens.count()?;
    let lib = |e: Error| e.to_string();
    Ok(match tag {
        "gaussian" => {
            let m = tokens.vector(d)?;
            let p = tokens.matrix(d, d)?;
            GaussianPossibility::new(m, p).map_err(lib)?.into()
        }
        "box" => {
            let lo = tokens.vector(d)?;
            let hi = tokens.vector(d)?;
            IndicatorPossibility::boxed(lo, hi).map_err(lib)?.into()
        }
        "points" => {
            let n = tokens.count()?;
            let pts = (0..n).map(|_| tokens.vector(d)).collect::<std::result::Result<Vec<_>, _>>()?;
            IndicatorPossibility::points(pts).map_err(lib)?.into()
        }
        "grid" => {
            let n = tokens.count()?;
            let mut pts = Vec::with_capacity(n);
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                pts.push(tokens.vector(d)?);
                vals.push(tokens.number()?);
            }
            GridPossibility::new(Arc::new(Grid::new(pts).map_err(lib)?), vals).map_err(lib)?.into()
        }
        "maxmix" => {
            let k = tokens.count()?;
            let mut comps = Vec::with_capacity(k);
            for _ in 0..k {
                let w = tokens.number()?;
                let m = tokens.vector(d)?;
                let p = tokens.matrix(d, d)?;
                comps.push((w, GaussianPossibility::new(m, p).map_err(lib)?));
            }
            MaxMixture::new(comps).map_err(lib)?.into()
        }
        other => return Err(format!("unknown family tag {other:?}")),
    })
}

/// Parses a single-line record produced by [`write_function`].
pub fn parse_function(record: &str) -> Result<PossibilityFunction> {
    let mut tokens = Tokens { items: record.split_whitespace() };
    let f = parse_record(&mut tokens).map_err(|message| Error::Parse { line: 1, message })?;
    tokens.finish().map_err(|message| Error::Parse { line: 1, message })?;
    Ok(f)
}

pub fn write_outer_measure(p: &FiniteOuterMeasure) -> String {
    let mut out = format!("outer_measure {} {}\n", p.dim(), p.len());
    for a in p.atoms() {
        out.push_str(&format!("{} {}\n", num(a.weight), write_function(&a.function)));
    }
    out
}

pub fn parse_outer_measure(text: &str) -> Result<FiniteOuterMeasure> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (header_line, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty outer-measure file".into() })?;
    let err = |line: usize, message: String| Error::Parse { line, message };
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (dim, count) = match fields.as_slice() {
        ["outer_measure", d, n] => (
            d.parse::<usize>().map_err(|_| err(header_line, format!("bad dimension {d:?}")))?,
            n.parse::<usize>().map_err(|_| err(header_line, format!("bad atom count {n:?}")))?,
        ),
        _ => return Err(err(header_line, "expected header `outer_measure <dim> <count>`".into())),
    };
    let mut atoms = Vec::with_capacity(count);
    let mut last_line = header_line;
    for (line, body) in lines {
        last_line = line;
        let mut tokens = Tokens { items: body.split_whitespace() };
        let weight = tokens.number().map_err(|m| err(line, m))?;
        let function = parse_record(&mut tokens).map_err(|m| err(line, m))?;
        tokens.finish().map_err(|m| err(line, m))?;
        if function.dim() != dim {
            return Err(err(line, format!("atom of dimension {} in a {dim}-dimensional file", function.dim())));
        }
        atoms.push(Atom { weight, function });
    }
    if atoms.len() != count {
        return Err(err(last_line, format!("header announces {count} atoms, found {}", atoms.len())));
    }
    FiniteOuterMeasure::new(atoms).map_err(|e| err(header_line, e.to_string()))
}

pub fn read_outer_measure(path: &Path) -> Result<FiniteOuterMeasure> {
    parse_outer_measure(&std::fs::read_to_string(path)?)
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Renders a header and rows as CSV; numbers use shortest round-trip decimal form.
pub fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

// ---------------------------------------------------------------- scenario files

/// Reads a TOML scenario file; see the crate README for the schema.
pub fn read_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario> {
    parse_scenario_seeded(&std::fs::read_to_string(path)?, seed)
}

struct Ctx<'a> {
    source: &'a str,
    section: String,
}

impl Ctx<'_> {
    fn err(&self, message: impl std::fmt::Display) -> Error {
        Error::Parse { line: section_line(self.source, &self.section), message: format!("[{}] {message}", self.section) }
    }

    fn child(&self, section: String) -> Self {
        Ctx { source: self.source, section }
    }
}

fn section_line(source: &str, section: &str) -> usize {
    let quoted = quoted_header(section);
    source
        .lines()
        .position(|l| {
            let l = l.trim();
            l == format!("[{section}]") || l == format!("[{quoted}]")
        })
        .map_or(1, |i| i + 1)
}

fn quoted_header(section: &str) -> String {
    match section.split_once('.') {
        Some((a, b)) => format!("{a}.\"{b}\""),
        None => section.to_string(),
    }
}

fn offset_line(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn field<'t>(ctx: &Ctx, t: &'t Table, key: &str) -> Result<&'t Value> {
    t.get(key).ok_or_else(|| ctx.err(format!("missing key `{key}`")))
}

fn number(ctx: &Ctx, t: &Table, key: &str) -> Result<f64> {
    as_f64(field(ctx, t, key)?).ok_or_else(|| ctx.err(format!("`{key}` must be a number")))
}

fn string<'t>(ctx: &Ctx, t: &'t Table, key: &str) -> Result<&'t str> {
    field(ctx, t, key)?.as_str().ok_or_else(|| ctx.err(format!("`{key}` must be a string")))
}

fn vector_value(ctx: &Ctx, v: &Value, key: &str) -> Result<DVector<f64>> {
    match v {
        Value::Array(a) => a
            .iter()
            .map(|x| as_f64(x).ok_or_else(|| ctx.err(format!("`{key}` must contain numbers"))))
            .collect::<Result<Vec<_>>>()
            .map(DVector::from_vec),
        other => as_f64(other).map(|x| DVector::from_element(1, x)).ok_or_else(|| ctx.err(format!("`{key}` must be a number array"))),
    }
}

fn vector(ctx: &Ctx, t: &Table, key: &str) -> Result<DVector<f64>> {
    vector_value(ctx, field(ctx, t, key)?, key)
}

/// Row-major matrix given as an array of rows; a bare number is a 1×1 matrix.
fn matrix(ctx: &Ctx, t: &Table, key: &str) -> Result<DMatrix<f64>> {
    match field(ctx, t, key)? {
        Value::Array(rows) if rows.iter().all(|r| r.is_array()) => {
            let rows = rows.iter().map(|r| vector_value(ctx, r, key)).collect::<Result<Vec<_>>>()?;
            let ncols = rows.first().map_or(0, |r| r.len());
            if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
                return Err(ctx.err(format!("`{key}` must be a non-empty rectangular array of rows")));
            }
            Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
        }
        other => as_f64(other)
            .map(|x| DMatrix::from_element(1, 1, x))
            .ok_or_else(|| ctx.err(format!("`{key}` must be an array of rows"))),
    }
}

/// A list of states: each entry a number (1-D) or an array of coordinates.
fn points(ctx: &Ctx, v: &Value, key: &str) -> Result<Vec<State>> {
    match v {
        Value::Array(a) => a.iter().map(|p| vector_value(ctx, p, key)).collect(),
        _ => Err(ctx.err(format!("`{key}` must be an array of points"))),
    }
}

fn lib<'c>(ctx: &'c Ctx<'_>) -> impl Fn(Error) -> Error + 'c {
    move |e| match e {
        Error::Parse { .. } => e,
        other => ctx.err(other),
    }
}

struct Grids(HashMap<String, Arc<Grid>>);

impl Grids {
    fn get(&self, ctx: &Ctx, t: &Table, key: &str) -> Result<Arc<Grid>> {
        let name = string(ctx, t, key)?;
        self.0.get(name).cloned().ok_or_else(|| ctx.err(format!("unknown grid {name:?}")))
    }
}

fn function(ctx: &Ctx, t: &Table, grids: &Grids) -> Result<PossibilityFunction> {
    let family = string(ctx, t, "family")?;
    let wrap = lib(ctx);
    Ok(match family {
        "gaussian" => GaussianPossibility::new(vector(ctx, t, "mean")?, matrix(ctx, t, "spread")?).map_err(&wrap)?.into(),
        "box" => IndicatorPossibility::boxed(vector(ctx, t, "lo")?, vector(ctx, t, "hi")?).map_err(&wrap)?.into(),
        "points" => IndicatorPossibility::points(points(ctx, field(ctx, t, "points")?, "points")?).map_err(&wrap)?.into(),
        "vacuous" => PossibilityFunction::vacuous(number(ctx, t, "dim")? as usize),
        "grid" => {
            let grid = grids.get(ctx, t, "grid")?;
            let values = vector(ctx, t, "values")?;
            GridPossibility::new(grid, values.iter().copied().collect()).map_err(&wrap)?.into()
        }
        "maxmix" => {
            let comps = field(ctx, t, "components")?
                .as_array()
                .ok_or_else(|| ctx.err("`components` must be an array of tables"))?
                .iter()
                .map(|c| {
                    let c = c.as_table().ok_or_else(|| ctx.err("`components` must be an array of tables"))?;
                    let g = GaussianPossibility::new(vector(ctx, c, "mean")?, matrix(ctx, c, "spread")?).map_err(&wrap)?;
                    Ok((number(ctx, c, "weight")?, g))
                })
                .collect::<Result<Vec<_>>>()?;
            MaxMixture::new(comps).map_err(&wrap)?.into()
        }
        other => return Err(ctx.err(format!("unknown family {other:?}"))),
    })
}

/// A single function (the table itself) or an `atoms` array of weighted functions.
fn measure(ctx: &Ctx, t: &Table, grids: &Grids) -> Result<FiniteOuterMeasure> {
    match t.get("atoms") {
        None => Ok(FiniteOuterMeasure::single(function(ctx, t, grids)?)),
        Some(Value::Array(items)) => {
            let atoms = items
                .iter()
                .map(|a| {
                    let a = a.as_table().ok_or_else(|| ctx.err("`atoms` must be an array of tables"))?;
                    Ok(Atom { weight: number(ctx, a, "weight")?, function: function(ctx, a, grids)? })
                })
                .collect::<Result<Vec<_>>>()?;
            FiniteOuterMeasure::new(atoms).map_err(lib(ctx))
        }
        Some(_) => Err(ctx.err("`atoms` must be an array of tables")),
    }
}

fn transition(ctx: &Ctx, t: &Table, grids: &Grids) -> Result<TransitionSpec> {
    let wrap = lib(ctx);
    let kind = string(ctx, t, "type")?;
    Ok(match kind {
        "gaussian" => {
            ConditionalPossibility::Gaussian(GaussianTransition::new(matrix(ctx, t, "F")?, matrix(ctx, t, "Q")?).map_err(&wrap)?).into()
        }
        "grid" => {
            let from = grids.get(ctx, t, "from")?;
            let to = if t.contains_key("to") { grids.get(ctx, t, "to")? } else { from.clone() };
            ConditionalPossibility::Grid(GridKernel::new(from, to, matrix(ctx, t, "matrix")?).map_err(&wrap)?).into()
        }
        "sets" => {
            let from = grids.get(ctx, t, "from")?;
            let sets = field(ctx, t, "sets")?
                .as_array()
                .ok_or_else(|| ctx.err("`sets` must be an array of tables"))?
                .iter()
                .map(|s| {
                    let s = s.as_table().ok_or_else(|| ctx.err("`sets` must be an array of tables"))?;
                    if s.contains_key("points") {
                        IndicatorPossibility::points(points(ctx, &s["points"], "points")?).map_err(&wrap)
                    } else {
                        IndicatorPossibility::boxed(vector(ctx, s, "lo")?, vector(ctx, s, "hi")?).map_err(&wrap)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            ConditionalPossibility::SetValued(SetValuedMap::new(from, sets).map_err(&wrap)?).into()
        }
        "dilation" => ConditionalPossibility::Dilation { lo: vector(ctx, t, "lo")?, hi: vector(ctx, t, "hi")? }.into(),
        "stochastic" => {
            let from = grids.get(ctx, t, "from")?;
            let to = if t.contains_key("to") { grids.get(ctx, t, "to")? } else { from.clone() };
            MarkovKernel::stochastic(from, to, matrix(ctx, t, "matrix")?).map_err(&wrap)?.into()
        }
        "linear_gaussian" => MarkovKernel::linear_gaussian(matrix(ctx, t, "F")?, matrix(ctx, t, "Q")?).map_err(&wrap)?.into(),
        other => return Err(ctx.err(format!("unknown transition type {other:?}"))),
    })
}

enum PendingObservation {
    Ready(ObservedInfo),
    /// A measurement whose value comes from simulating the ground truth.
    Simulated { o: DMatrix<f64>, r: DMatrix<f64> },
}

fn observation_map(ctx: &Ctx, t: &Table, dim: usize, grids: &Grids) -> Result<ObservationMap> {
    if t.contains_key("O") {
        return Ok(ObservationMap::Linear(matrix(ctx, t, "O")?));
    }
    if let Some(Value::Table(m)) = t.get("map") {
        let from = grids.get(ctx, m, "from")?;
        let to = grids.get(ctx, m, "to")?;
        let table = vector(ctx, m, "table")?.iter().map(|v| *v as usize).collect();
        return Ok(ObservationMap::Finite(FiniteMap::new(from, to, table).map_err(lib(ctx))?));
    }
    Ok(ObservationMap::Identity(dim))
}

fn observation(ctx: &Ctx, t: &Table, dim: usize, grids: &Grids) -> Result<PendingObservation> {
    let wrap = lib(ctx);
    let kind = string(ctx, t, "type")?;
    Ok(PendingObservation::Ready(match kind {
        "vacuous" => ObservedInfo::vacuous(dim),
        "measurement" => {
            let o = matrix(ctx, t, "O")?;
            let r = matrix(ctx, t, "R")?;
            if !t.contains_key("y") {
                return Ok(PendingObservation::Simulated { o, r });
            }
            ObservedInfo::from_measurement(vector(ctx, t, "y")?, r, o).map_err(&wrap)?
        }
        "box" => ObservedInfo::from_box(vector(ctx, t, "lo")?, vector(ctx, t, "hi")?, observation_map(ctx, t, dim, grids)?).map_err(&wrap)?,
        "atoms" => ObservedInfo::new(observation_map(ctx, t, dim, grids)?, measure(ctx, t, grids)?).map_err(&wrap)?,
        other => return Err(ctx.err(format!("unknown observation type {other:?}"))),
    }))
}

/// Per-step tables `[name.<t>]` with an optional shared `[name]` default holding the same keys.
fn per_step<'t>(ctx: &Ctx, root: &'t Table, name: &str, steps: std::ops::RangeInclusive<usize>) -> Result<Vec<(Option<&'t Table>, String)>> {
    let section = match root.get(name) {
        None => return Ok(steps.map(|_| (None, name.to_string())).collect()),
        Some(Value::Table(t)) => t,
        Some(_) => return Err(ctx.child(name.to_string()).err("must be a table")),
    };
    let default = section.contains_key("type").then_some(section);
    for key in section.keys() {
        if let Ok(step) = key.parse::<usize>() {
            if !steps.contains(&step) {
                return Err(ctx.child(format!("{name}.{key}")).err(format!("step {step} outside {steps:?}")));
            }
        }
    }
    steps
        .map(|s| match section.get(&s.to_string()) {
            Some(Value::Table(t)) => Ok((Some(t), format!("{name}.{s}"))),
            Some(_) => Err(ctx.child(format!("{name}.{s}")).err("must be a table")),
            None => Ok((default, name.to_string())),
        })
        .collect()
}

pub fn parse_scenario(source: &str) -> Result<Scenario> {
    parse_scenario_seeded(source, None)
}

/// Like [`parse_scenario`], with `seed` replacing the file's seed before any simulation.
pub fn parse_scenario_seeded(source: &str, seed: Option<u64>) -> Result<Scenario> {
    let root: Table = source.parse::<Table>().map_err(|e| Error::Parse {
        line: e.span().map_or(1, |s| offset_line(source, s.start)),
        message: e.message().to_string(),
    })?;
    let top = Ctx { source, section: "scenario".into() };
    let head = match root.get("scenario") {
        Some(Value::Table(t)) => t,
        _ => return Err(top.err("missing [scenario] section")),
    };
    let horizon = field(&top, head, "horizon")?.as_integer().filter(|h| *h >= 0).ok_or_else(|| top.err("`horizon` must be a nonnegative integer"))? as usize;
    let file_seed = match head.get("seed") {
        Some(v) => v.as_integer().ok_or_else(|| top.err("`seed` must be an integer"))? as u64,
        None => 0,
    };
    let seed = seed.unwrap_or(file_seed);

    let gctx = top.child("grids".into());
    let mut grids = HashMap::new();
    if let Some(Value::Table(g)) = root.get("grids") {
        for (name, v) in g {
            let grid = Grid::new(points(&gctx, v, name)?).map_err(lib(&gctx))?;
            grids.insert(name.clone(), Arc::new(grid));
        }
    }
    let grids = Grids(grids);

    let pctx = top.child("prior".into());
    let prior = match root.get("prior") {
        Some(Value::Table(t)) => measure(&pctx, t, &grids)?,
        _ => return Err(pctx.err("missing [prior] section")),
    };
    let dim = prior.dim();

    let transitions = per_step(&top, &root, "transition", 1..=horizon)?
        .into_iter()
        .take(horizon)
        .map(|(t, name)| {
            let ctx = top.child(name);
            transition(&ctx, t.ok_or_else(|| ctx.err("no transition given for this step"))?, &grids)
        })
        .collect::<Result<Vec<_>>>()?;
    let pending = per_step(&top, &root, "observation", 0..=horizon)?
        .into_iter()
        .map(|(t, name)| match t {
            Some(t) => observation(&top.child(name), t, dim, &grids),
            None => Ok(PendingObservation::Ready(ObservedInfo::vacuous(dim))),
        })
        .collect::<Result<Vec<_>>>()?;

    let tctx = top.child("truth".into());
    let truth = match root.get("truth") {
        Some(Value::Table(t)) => Some(LinearGaussianDynamics {
            x0: vector(&tctx, t, "x0")?,
            f: matrix(&tctx, t, "F")?,
            q: matrix(&tctx, t, "Q")?,
            o: matrix(&tctx, t, "O")?,
            r: if t.contains_key("R") { Some(matrix(&tctx, t, "R")?) } else { None },
        }),
        Some(_) => return Err(tctx.err("must be a table")),
        None => None,
    };

    let needs_truth = pending.iter().any(|p| matches!(p, PendingObservation::Simulated { .. }));
    let mut scenario = Scenario::new(prior, transitions, vec![ObservedInfo::vacuous(dim); horizon + 1], seed).map_err(lib(&top))?;
    if let Some(tr) = truth {
        scenario = scenario.with_truth(tr).map_err(lib(&tctx))?;
    }
    let simulated = match (&scenario.truth, needs_truth) {
        (Some(tr), true) => Some(simulate(&scenario, tr).map_err(lib(&tctx))?),
        (None, true) => return Err(top.child("observation".into()).err("a measurement without `y` needs a [truth] section")),
        _ => None,
    };
    scenario.observations = pending
        .into_iter()
        .enumerate()
        .map(|(t, p)| match p {
            PendingObservation::Ready(o) => Ok(o),
            PendingObservation::Simulated { o, r } => {
                let y = simulated.as_ref().expect("simulated when needed").observations[t].clone();
                ObservedInfo::from_measurement(y, r, o).map_err(lib(&top.child(format!("observation.{t}"))))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    scenario.validate().map_err(lib(&top))?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::possibility::state;

    #[test]
    fn records_round_trip() {
        let g = Arc::new(Grid::new(vec![state(&[0.1, 2.0]), state(&[1.0 / 3.0, -1.0])]).unwrap());
        let fs: Vec<PossibilityFunction> = vec![
            GaussianPossibility::new(state(&[0.1, -2.5]), DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0 / 7.0])).unwrap().into(),
            IndicatorPossibility::boxed(state(&[f64::NEG_INFINITY, 0.0]), state(&[1.0, f64::INFINITY])).unwrap().into(),
            IndicatorPossibility::points(vec![state(&[1.0, 2.0]), state(&[0.5, 0.25])]).unwrap().into(),
            GridPossibility::new(g, vec![1.0, 0.123456789012345]).unwrap().into(),
            MaxMixture::new(vec![
                (1.0, GaussianPossibility::new(state(&[0.0, 0.0]), DMatrix::identity(2, 2)).unwrap()),
                (0.25, GaussianPossibility::new(state(&[3.0, 1.0]), DMatrix::identity(2, 2) * 0.5).unwrap()),
            ])
            .unwrap()
            .into(),
        ];
        for f in fs {
            assert_eq!(parse_function(&write_function(&f)).unwrap(), f);
        }
    }

    #[test]
    fn outer_measure_file_errors_carry_lines() {
        let text = "# coin\nouter_measure 1 2\n0.75 points 1 1 0\n0.25 points 1 1 x\n";
        match parse_outer_measure(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let ok = parse_outer_measure("outer_measure 1 2\n0.75 points 1 1 0\n0.25 points 1 1 1\n").unwrap();
        assert_eq!(parse_outer_measure(&write_outer_measure(&ok)).unwrap(), ok);
    }

    #[test]
    fn scenario_with_simulated_measurements() {
        let text = r#"
[scenario]
horizon = 3
seed = 11

[prior]
family = "gaussian"
mean = [0.0]
spread = [[1.0]]

[transition]
type = "gaussian"
F = [[1.0]]
Q = [[0.5]]

[observation]
type = "measurement"
O = [[1.0]]
R = [[0.2]]

[truth]
x0 = [0.0]
F = [[1.0]]
Q = [[0.5]]
O = [[1.0]]
R = [[0.2]]
"#;
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.horizon, 3);
        assert_eq!(s.observations.len(), 4);
        assert_eq!(parse_scenario(text).unwrap(), s);
    }

    #[test]
    fn scenario_errors_carry_lines() {
        let text = "[scenario]\nhorizon = 1\n\n[prior]\nfamily = \"gaussian\"\nmean = [0.0]\nspread = [[1.0]]\n\n[transition.1]\ntype = \"gaussian\"\nF = [[1.0]]\nQ = [[-1.0]]\n";
        match parse_scenario(text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 9, "{message}");
            }
            other => panic!("{other:?}"),
        }
        match parse_scenario("[scenario]\nhorizon = = 1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
