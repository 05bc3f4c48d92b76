//! Flattens earlier run directories into one long table of
//! `(source, command, table, key, metric, value)` rows.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use super::{write_csv, write_snapshot, CliError, CliResult, Common};

#[derive(Debug, Serialize, PartialEq)]
struct Row {
    source: String,
    command: String,
    table: String,
    key: String,
    metric: String,
    value: String,
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some(String::new()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

/// Rows from a CSV file: the first `keys` columns form the row key, every
/// other column becomes a metric.
fn csv_rows(dir: &Path, name: &str, keys: usize, emit: &mut dyn FnMut(String, String, String, String)) -> CliResult<()> {
    let path = dir.join(name);
    if !path.exists() {
        return Ok(());
    }
    let mut r = csv::Reader::from_path(&path).map_err(crate::Error::from)?;
    let header = r.headers().map_err(crate::Error::from)?.clone();
    for rec in r.records() {
        let rec = rec.map_err(crate::Error::from)?;
        let key: Vec<String> = (0..keys).map(|i| format!("{}={}", &header[i], &rec[i])).collect();
        for i in keys..rec.len() {
            emit(name.into(), key.join(";"), header[i].into(), rec[i].into());
        }
    }
    Ok(())
}

pub fn run(common: &Common, inputs: &[PathBuf]) -> CliResult<()> {
    write_snapshot(&common.out, "report", &inputs)?;
    let mut rows = Vec::new();
    for dir in inputs {
        let snap = read_json(&dir.join("resolved_config.json"))?;
        let command = snap
            .get("command")
            .and_then(Value::as_str)
            .ok_or_else(|| CliError::Input(format!("{}: snapshot lacks `command`", dir.display())))?
            .to_string();
        let source = dir.display().to_string();
        let mut emit = |table: String, key: String, metric: String, value: String| {
            rows.push(Row { source: source.clone(), command: command.clone(), table, key, metric, value });
        };
        match command.as_str() {
            "validate-theory" => {
                let s = read_json(&dir.join("theory_summary.json"))?;
                for c in s.get("checks").and_then(Value::as_array).into_iter().flatten() {
                    let name = c.get("name").and_then(scalar).unwrap_or_default();
                    let status = c.get("status").and_then(scalar).unwrap_or_default();
                    emit("theory_summary.json".into(), format!("invariant={name}"), "status".into(), status);
                }
            }
            "dynamics" => {
                let s = read_json(&dir.join("dynamics_summary.json"))?;
                for (k, v) in s.as_object().into_iter().flatten() {
                    if let Some(v) = scalar(v) {
                        emit("dynamics_summary.json".into(), String::new(), k.clone(), v);
                    }
                }
                csv_rows(dir, "rho_sweep.csv", 1, &mut emit)?;
            }
            "gas-landscape" => {
                csv_rows(dir, "kl_comparison.csv", 1, &mut emit)?;
                csv_rows(dir, "adversarial.csv", 3, &mut emit)?;
            }
            "bench" => {
                csv_rows(dir, "aggregates.csv", 2, &mut emit)?;
                let f = read_json(&dir.join("findings.json"))?;
                for x in f.as_array().into_iter().flatten() {
                    let name = x.get("name").and_then(scalar).unwrap_or_default();
                    for m in ["wins", "of", "holds"] {
                        if let Some(v) = x.get(m).and_then(scalar) {
                            emit("findings.json".into(), format!("finding={name}"), m.into(), v);
                        }
                    }
                }
            }
            "report" => {}
            other => return Err(CliError::Input(format!("{}: unknown command `{other}`", dir.display()))),
        }
    }
    write_csv(&common.out, "summary.csv", &rows)?;
    println!("{} rows from {} runs", rows.len(), inputs.len());
    Ok(())
}
