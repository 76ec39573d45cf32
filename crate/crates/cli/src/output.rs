//! Trajectory and report writers.

use std::io::{self, Write};

use riccati_core::certify::Certificate;
use riccati_core::RiccatiSolution;
use serde_json::{json, Value};

/// Shortest decimal that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// One row per grid node: `t`, the entries of `P` row by row, then the gap.
pub fn write_solution_csv(w: &mut dyn Write, sol: &RiccatiSolution) -> io::Result<()> {
    let dim = sol.p.first().dim();
    let mut header = vec!["t".to_string()];
    for i in 1..=dim {
        for j in 1..=dim {
            header.push(format!("P_{i}_{j}"));
        }
    }
    header.push("gap".into());
    writeln!(w, "{}", header.join(","))?;

    let grid = sol.p.grid();
    for (k, (p, gap)) in sol.p.samples().iter().zip(sol.gap.samples()).enumerate() {
        let mut row = vec![num(grid.node(k))];
        row.extend(p.as_gen().as_slice().iter().map(|&x| num(x)));
        row.push(num(*gap));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn solution_json(sol: &RiccatiSolution) -> Value {
    let grid = sol.p.grid();
    json!({
        "t": grid.nodes().collect::<Vec<_>>(),
        "P": sol.p.samples().iter().map(|p| p.as_gen().to_rows()).collect::<Vec<_>>(),
        "gain": sol.gain.samples().iter().map(|k| k.to_rows()).collect::<Vec<_>>(),
        "gap": sol.gap.samples(),
        "diagnostics": diagnostics_json(sol),
    })
}

pub fn diagnostics_json(sol: &RiccatiSolution) -> Value {
    json!({
        "iterations": sol.iterations,
        "sup_residual": sol.sup_residual,
        "min_gap": sol.gap.min_value(),
        "conv_tol": sol.tolerances.conv_tol,
        "iterate_changes": sol.iterate_history_norms,
    })
}

pub fn write_diagnostics(w: &mut dyn Write, sol: &RiccatiSolution) -> io::Result<()> {
    writeln!(w, "status: converged")?;
    writeln!(w, "iterations: {}", sol.iterations)?;
    writeln!(w, "sup_residual: {}", num(sol.sup_residual))?;
    writeln!(w, "min_gap: {}", num(sol.gap.min_value()))?;
    writeln!(
        w,
        "P(0): {}",
        matrix_inline(&sol.p.first().as_gen().to_rows())
    )?;
    let changes: Vec<String> = sol.iterate_history_norms.iter().map(|&x| num(x)).collect();
    writeln!(w, "iterate_changes: {}", changes.join(" "))
}

pub fn matrix_inline(rows: &[Vec<f64>]) -> String {
    let rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "[{}]",
                r.iter().map(|&x| num(x)).collect::<Vec<_>>().join(",")
            )
        })
        .collect();
    format!("[{}]", rows.join(","))
}

/// A flat report: `key,value` lines in CSV form, one object in JSON form.
pub struct Report(pub Vec<(&'static str, Value)>);

impl Report {
    pub fn certificate(cert: &Certificate) -> Self {
        Self(vec![
            ("verdict", json!(cert.verdict.as_str())),
            ("alpha", json!(cert.alpha)),
            ("margin", finite_or_null(cert.margin)),
            (
                "phi0",
                cert.phi_path
                    .as_ref()
                    .map_or(Value::Null, |p| finite_or_null(*p.first())),
            ),
        ])
    }

    pub fn write_csv(&self, w: &mut dyn Write) -> io::Result<()> {
        writeln!(w, "key,value")?;
        for (k, v) in &self.0 {
            let v = match v {
                Value::Number(n) if n.is_f64() => num(n.as_f64().unwrap_or(f64::NAN)),
                Value::String(s) => s.clone(),
                Value::Null => String::new(),
                other => other.to_string(),
            };
            writeln!(w, "{k},{v}")?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        Value::Object(
            self.0
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        )
    }
}

/// JSON has no infinities; non-finite values become `null`.
pub fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}
