//! CSV and JSON artifacts.
//!
//! Floats are written in scientific notation with 17 significant digits so
//! that files reproduce bit-for-bit and round-trip exactly.

use std::fs;
use std::io;
use std::path::Path;

use serde_json::{json, Map, Value};
use slabrt_core::study::{RowConstants, StudyRow};
use slabrt_core::SolveTrace;

use crate::config::{Experiment, Variant};

pub const TABLE_FILE: &str = "table.csv";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn trace_file_name(j: usize, n: usize) -> String {
    format!("trace_{j}_{n}.csv")
}

/// `x` with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// A JSON number carrying 17 significant digits; `null` if not finite.
pub fn json_float(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    serde_json::from_str(&fmt_float(x)).expect("formatted float is valid JSON")
}

/// Rewrites every non-integer number of `v` with [`json_float`].
fn normalize_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => json_float(n.as_f64().expect("checked")),
        Value::Array(a) => Value::Array(a.into_iter().map(normalize_floats).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, x)| (k, normalize_floats(x))).collect()),
        other => other,
    }
}

fn csv_writer(path: &Path) -> io::Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(fs::File::create(path)?))
}

fn opt_float(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

fn opt_int(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// One line per successfully solved row, in ladder order.
pub fn write_table(path: &Path, rows: &[StudyRow], inexact: bool) -> io::Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["J", "N", "N_it", "err_L2", "rate_L2", "err_W2G", "rate_W2G", "rank_W", "rank_U"];
    if inexact {
        header.extend(["r_inexact", "r_naive"]);
    }
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        let Ok(res) = &row.result else { continue };
        let r = &res.row;
        let mut rec = vec![
            r.j.to_string(),
            r.n.to_string(),
            r.n_it.to_string(),
            opt_float(r.err_l2),
            opt_float(r.rate_l2),
            opt_float(r.err_w2g),
            opt_float(r.rate_w2g),
            r.rank_w.to_string(),
            r.rank_u.to_string(),
        ];
        if inexact {
            rec.push(opt_int(r.r_inexact));
            rec.push(opt_int(r.r_naive));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()
}

/// Iteration history: `k,rank,delta,eta,res_norm`.
pub fn write_trace(path: &Path, trace: &SolveTrace) -> io::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["k", "rank", "delta", "eta", "res_norm"]).map_err(csv_err)?;
    for r in &trace.records {
        w.write_record([
            r.k.to_string(),
            r.rank.to_string(),
            fmt_float(r.delta),
            fmt_float(r.eta),
            fmt_float(r.res_norm),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

fn constants_json(c: &RowConstants, trace: Option<&SolveTrace>) -> Value {
    let d = &c.derived;
    let mut m = Map::new();
    let mut put = |k: &str, v: Value| {
        m.insert(k.to_string(), v);
    };
    put("gamma1", json_float(c.gamma1));
    put("gamma2", json_float(c.gamma2));
    put("gamma1_used", json_float(c.gamma1_used));
    put("gamma1_eps", json_float(d.gamma1_eps));
    put("gamma2_eps", json_float(d.gamma2_eps));
    put("rho", json_float(d.rho));
    put("omega", json_float(d.omega));
    put("r_p", json!(c.r_p));
    put("i1", json!(c.i1));
    put("i2", json!(c.i2));
    put("lambda", json_float(c.lambda));
    put("Lambda", json_float(c.big_lambda));
    put("expsum_max_rel_error", json_float(c.expsum_max_error));
    put("tau1", json_float(c.tau1));
    put("tau2", json_float(c.tau2));
    put("B", json_float(c.b_const));
    put("C", json_float(c.c_const));
    put("eps_target", json_float(c.eps_target));
    put("max_iter", json!(c.max_iter));
    put("rhs_norm", json_float(c.f_norm));
    put("load_quadrature_drift", json_float(c.load_drift));
    put("load_quadrature_flagged", json!(c.load_flagged));
    if let Some(t) = trace {
        put("delta0_effective", json_float(t.delta0));
    }
    Value::Object(m)
}

/// Status label of a row: `converged`, `not_converged` or `failed`.
pub fn row_status(row: &StudyRow) -> &'static str {
    match &row.result {
        Ok(r) if r.trace.converged => "converged",
        Ok(_) => "not_converged",
        Err(_) => "failed",
    }
}

fn row_json(row: &StudyRow) -> Value {
    let mut m = Map::new();
    m.insert("J".into(), json!(row.j));
    m.insert("N".into(), json!(row.n));
    m.insert("status".into(), json!(row_status(row)));
    match &row.result {
        Ok(res) => {
            let t = &res.trace;
            m.insert("constants".into(), constants_json(&res.constants, Some(t)));
            m.insert(
                "result".into(),
                json!({
                    "N_it": t.iterations,
                    "residual_evaluations": t.residual_evaluations,
                    "final_rank": t.final_rank,
                    "final_residual": json_float(t.final_residual),
                    "max_rank": t.max_rank,
                    "max_apply_rank": t.max_apply_rank,
                    "max_accumulator_rank": t.max_accumulator_rank,
                    "rank_U": res.row.rank_u,
                    "err_L2": res.row.err_l2.map(json_float),
                    "err_W2G": res.row.err_w2g.map(json_float),
                }),
            );
        }
        Err(e) => {
            m.insert("error".into(), json!(e.to_string()));
        }
    }
    Value::Object(m)
}

/// Effective configuration, with every default filled in.
pub fn config_echo(exp: &Experiment) -> Value {
    normalize_floats(serde_json::to_value(&exp.config).expect("config serializes"))
}

pub fn summary(exp: &Experiment, rows: &[StudyRow]) -> Value {
    json!({
        "schema_version": crate::config::SCHEMA_VERSION,
        "config": config_echo(exp),
        "rows": rows.iter().map(row_json).collect::<Vec<_>>(),
    })
}

pub fn to_pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON serializes");
    s.push('\n');
    s
}

/// Writes `table.csv`, one trace per solved row and `summary.json`.
pub fn write_artifacts(dir: &Path, exp: &Experiment, rows: &[StudyRow]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_table(&dir.join(TABLE_FILE), rows, exp.config.variant == Variant::StInexact)?;
    for row in rows {
        if let Ok(res) = &row.result {
            write_trace(&dir.join(trace_file_name(row.j, row.n)), &res.trace)?;
        }
    }
    fs::write(dir.join(SUMMARY_FILE), to_pretty(&summary(exp, rows)))
}

/// Machine-readable error report.
pub fn error_report(kind: &str, exit_code: i32, message: &str, rows: Option<&[StudyRow]>) -> Value {
    let mut v = json!({ "error": kind, "exit_code": exit_code, "message": message });
    if let Some(rows) = rows {
        let bad: Vec<Value> = rows
            .iter()
            .filter(|r| !r.converged())
            .map(|r| {
                let mut m = json!({ "J": r.j, "N": r.n, "status": row_status(r) });
                match &r.result {
                    Err(e) => m["error"] = json!(e.to_string()),
                    Ok(res) => {
                        m["N_it"] = json!(res.trace.iterations);
                        m["final_residual"] = json_float(res.trace.final_residual);
                    }
                }
                m
            })
            .collect();
        v["rows"] = Value::Array(bad);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(json_float(0.1).to_string(), "1.0000000000000001e-1");
        assert_eq!(json_float(f64::NAN), Value::Null);
        let back: f64 = fmt_float(std::f64::consts::PI).parse().unwrap();
        assert_eq!(back, std::f64::consts::PI);
    }

    #[test]
    fn normalization_leaves_integers() {
        let v = normalize_floats(json!({"a": 3, "b": [0.5, 7]}));
        assert_eq!(v.to_string(), r#"{"a":3,"b":[5.0000000000000000e-1,7]}"#);
    }
}
