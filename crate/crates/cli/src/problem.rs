//! JSON problem files: parsing with located errors, and serialization.

use std::path::Path;

use riccati_core::symlin::symmetrize;
use riccati_core::timepath::PathValue;
use riccati_core::{
    GenMatrix, GenPath, Interpolation, MatrixPath, RiccatiProblem, SymMatrix, SymPath, TimeGrid,
};
use serde_json::{json, Map, Value};
use thiserror::Error;

/// Largest `|Mᵢⱼ - Mⱼᵢ|` accepted for the weights.
pub const SYMMETRY_TOL: f64 = 1e-12;
pub const DEFAULT_GRID_POINTS: usize = 1000;

#[derive(Debug, Error)]
pub enum InputError {
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{location}: {message}")]
    Validation { location: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(location: impl Into<String>, message: impl Into<String>) -> InputError {
    InputError::Validation {
        location: location.into(),
        message: message.into(),
    }
}

/// Loads and validates a problem file. `grid_override` replaces the file's
/// `grid_points`.
pub fn parse_problem_file(
    path: &Path,
    grid_override: Option<usize>,
) -> Result<RiccatiProblem, InputError> {
    let text = std::fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_problem(&text, grid_override)
}

pub fn parse_problem(
    text: &str,
    grid_override: Option<usize>,
) -> Result<RiccatiProblem, InputError> {
    let root: Value = serde_json::from_str(text).map_err(|e| InputError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let top = object(
        &root,
        "$",
        &["dimension", "horizon", "grid_points", "system", "weights"],
    )?;

    let dim = positive_int(field(top, "$", "dimension")?, "dimension")?;
    let horizon = number(field(top, "$", "horizon")?, "horizon")?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(invalid("horizon", "must be positive and finite"));
    }
    let n_steps = match (grid_override, top.get("grid_points")) {
        (Some(n), _) => n,
        (None, Some(v)) => positive_int(v, "grid_points")?,
        (None, None) => DEFAULT_GRID_POINTS,
    };
    let grid =
        TimeGrid::new(horizon, n_steps).map_err(|e| invalid("grid_points", e.to_string()))?;

    let system = object(field(top, "$", "system")?, "system", &["A", "B", "C", "D"])?;
    let weights = object(field(top, "$", "weights")?, "weights", &["R", "Q", "G"])?;
    let ctx = Ctx { dim, grid };

    let [a, b, c, d] = ["A", "B", "C", "D"].map(|k| {
        field(system, "system", k).and_then(|v| ctx.general_path(v, &format!("system.{k}")))
    });
    let [r, q] = ["R", "Q"].map(|k| {
        field(weights, "weights", k).and_then(|v| ctx.symmetric_path(v, &format!("weights.{k}")))
    });
    let g_value = field(weights, "weights", "G")?;
    if g_value.is_object() {
        return Err(invalid(
            "weights.G",
            "terminal weight must be a constant matrix",
        ));
    }
    let g = ctx.symmetric(g_value, "weights.G")?;

    RiccatiProblem::new(a?, b?, c?, d?, r?, q?, g).map_err(|e| invalid("$", e.to_string()))
}

fn object<'a>(
    v: &'a Value,
    loc: &str,
    allowed: &[&str],
) -> Result<&'a Map<String, Value>, InputError> {
    let map = v
        .as_object()
        .ok_or_else(|| invalid(loc, "expected an object"))?;
    if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(invalid(join(loc, k), "unknown key"));
    }
    Ok(map)
}

fn join(loc: &str, key: &str) -> String {
    if loc == "$" {
        key.to_string()
    } else {
        format!("{loc}.{key}")
    }
}

fn field<'a>(map: &'a Map<String, Value>, loc: &str, key: &str) -> Result<&'a Value, InputError> {
    map.get(key)
        .ok_or_else(|| invalid(join(loc, key), "missing"))
}

fn number(v: &Value, loc: &str) -> Result<f64, InputError> {
    let x = v
        .as_f64()
        .ok_or_else(|| invalid(loc, "expected a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(invalid(loc, "must be finite"))
    }
}

fn positive_int(v: &Value, loc: &str) -> Result<usize, InputError> {
    match v.as_u64() {
        Some(n) if n > 0 => Ok(n as usize),
        _ => Err(invalid(loc, "expected a positive integer")),
    }
}

struct Ctx {
    dim: usize,
    grid: TimeGrid,
}

/// A matrix as written in the file: one constant or a time series.
struct Series {
    times: Vec<f64>,
    values: Vec<GenMatrix>,
    interpolation: Interpolation,
}

impl Series {
    /// Value at `t`: exact at sample times, constant outside the samples.
    fn eval(&self, t: f64) -> GenMatrix {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1].clone();
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        if self.times[i] == t || self.interpolation == Interpolation::ConstantLeft {
            return self.values[i].clone();
        }
        let w = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        &self.values[i] + &(&self.values[i + 1] - &self.values[i]).scale(w)
    }
}

impl Ctx {
    fn matrix(&self, v: &Value, loc: &str) -> Result<GenMatrix, InputError> {
        let rows = v
            .as_array()
            .ok_or_else(|| invalid(loc, "expected a nested array"))?;
        if rows.len() != self.dim {
            return Err(invalid(
                loc,
                format!("expected {} rows, found {}", self.dim, rows.len()),
            ));
        }
        let mut data = Vec::with_capacity(self.dim * self.dim);
        for (i, row) in rows.iter().enumerate() {
            let row_loc = format!("{loc}[{i}]");
            let row = row
                .as_array()
                .ok_or_else(|| invalid(&row_loc, "expected an array"))?;
            if row.len() != self.dim {
                return Err(invalid(
                    &row_loc,
                    format!("expected {} entries, found {}", self.dim, row.len()),
                ));
            }
            for (j, x) in row.iter().enumerate() {
                data.push(number(x, &format!("{row_loc}[{j}]"))?);
            }
        }
        GenMatrix::from_row_major(self.dim, self.dim, data).map_err(|e| invalid(loc, e.to_string()))
    }

    fn symmetric(&self, v: &Value, loc: &str) -> Result<SymMatrix, InputError> {
        let m = self.matrix(v, loc)?;
        check_symmetric(&m, loc)?;
        Ok(symmetrize(&m).expect("square"))
    }

    fn series(&self, v: &Value, loc: &str) -> Result<Series, InputError> {
        if !v.is_object() {
            return Ok(Series {
                times: vec![0.0],
                values: vec![self.matrix(v, loc)?],
                interpolation: Interpolation::Linear,
            });
        }
        let map = object(v, loc, &["times", "values", "interpolation"])?;
        let interpolation = match map.get("interpolation") {
            None => Interpolation::Linear,
            Some(Value::String(s)) if s == "linear" => Interpolation::Linear,
            Some(Value::String(s)) if s == "constant-left" => Interpolation::ConstantLeft,
            Some(_) => {
                return Err(invalid(
                    format!("{loc}.interpolation"),
                    "expected \"linear\" or \"constant-left\"",
                ))
            }
        };
        let times_loc = format!("{loc}.times");
        let times: Vec<f64> = field(map, loc, "times")?
            .as_array()
            .ok_or_else(|| invalid(&times_loc, "expected an array"))?
            .iter()
            .enumerate()
            .map(|(k, t)| number(t, &format!("{times_loc}[{k}]")))
            .collect::<Result<_, _>>()?;
        if times.is_empty() {
            return Err(invalid(&times_loc, "needs at least one sample"));
        }
        let horizon = self.grid.horizon();
        for (k, &t) in times.iter().enumerate() {
            if !(0.0..=horizon).contains(&t) {
                return Err(invalid(
                    format!("{times_loc}[{k}]"),
                    format!("time {t} outside [0, {horizon}]"),
                ));
            }
            if k > 0 && t <= times[k - 1] {
                return Err(invalid(
                    format!("{times_loc}[{k}]"),
                    "times must be strictly increasing",
                ));
            }
        }
        let values_loc = format!("{loc}.values");
        let raw = field(map, loc, "values")?
            .as_array()
            .ok_or_else(|| invalid(&values_loc, "expected an array of matrices"))?;
        if raw.len() != times.len() {
            return Err(invalid(
                &values_loc,
                format!("{} matrices for {} times", raw.len(), times.len()),
            ));
        }
        let values = raw
            .iter()
            .enumerate()
            .map(|(k, m)| self.matrix(m, &format!("{values_loc}[{k}]")))
            .collect::<Result<_, _>>()?;
        Ok(Series {
            times,
            values,
            interpolation,
        })
    }

    fn general_path(&self, v: &Value, loc: &str) -> Result<GenPath, InputError> {
        let s = self.series(v, loc)?;
        let samples = self.grid.nodes().map(|t| s.eval(t)).collect();
        MatrixPath::new(self.grid, samples, s.interpolation)
            .map_err(|e| invalid(loc, e.to_string()))
    }

    fn symmetric_path(&self, v: &Value, loc: &str) -> Result<SymPath, InputError> {
        let s = self.series(v, loc)?;
        let values_loc = if v.is_object() {
            format!("{loc}.values")
        } else {
            loc.to_string()
        };
        for (k, m) in s.values.iter().enumerate() {
            let at = if v.is_object() {
                format!("{values_loc}[{k}]")
            } else {
                values_loc.clone()
            };
            check_symmetric(m, &at)?;
        }
        let samples = self
            .grid
            .nodes()
            .map(|t| symmetrize(&s.eval(t)).expect("square"))
            .collect();
        MatrixPath::new(self.grid, samples, s.interpolation)
            .map_err(|e| invalid(loc, e.to_string()))
    }
}

fn check_symmetric(m: &GenMatrix, loc: &str) -> Result<(), InputError> {
    for i in 0..m.rows() {
        for j in (i + 1)..m.cols() {
            let gap = (m.get(i, j) - m.get(j, i)).abs();
            if gap > SYMMETRY_TOL {
                return Err(invalid(
                    format!("{loc}[{i}][{j}]"),
                    format!("not symmetric: differs from [{j}][{i}] by {gap:e}"),
                ));
            }
        }
    }
    Ok(())
}

fn interpolation_name(i: Interpolation) -> &'static str {
    match i {
        Interpolation::Linear => "linear",
        Interpolation::ConstantLeft => "constant-left",
    }
}

fn path_value<V: PathValue + PartialEq>(
    path: &MatrixPath<V>,
    rows: impl Fn(&V) -> Vec<Vec<f64>>,
) -> Value {
    let samples = path.samples();
    if samples.iter().all(|s| *s == samples[0]) {
        return json!(rows(&samples[0]));
    }
    let grid = path.grid();
    json!({
        "times": grid.nodes().collect::<Vec<_>>(),
        "values": samples.iter().map(&rows).collect::<Vec<_>>(),
        "interpolation": interpolation_name(path.interpolation()),
    })
}

/// The problem as a JSON document. Paths that vary in time are written as
/// series sampled at the grid nodes, so parsing the output reproduces the
/// problem exactly.
pub fn serialize_problem(prob: &RiccatiProblem) -> Value {
    let gen = |m: &GenMatrix| m.to_rows();
    let sym = |m: &SymMatrix| m.as_gen().to_rows();
    json!({
        "dimension": prob.dim(),
        "horizon": prob.grid().horizon(),
        "grid_points": prob.grid().n_steps(),
        "system": {
            "A": path_value(prob.a(), gen),
            "B": path_value(prob.b(), gen),
            "C": path_value(prob.c(), gen),
            "D": path_value(prob.d(), gen),
        },
        "weights": {
            "R": path_value(prob.r(), sym),
            "Q": path_value(prob.q(), sym),
            "G": sym(prob.g()),
        },
    })
}

pub fn problem_to_string(prob: &RiccatiProblem) -> String {
    serde_json::to_string_pretty(&serialize_problem(prob)).expect("JSON values serialize")
}
