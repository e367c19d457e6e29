//! Result records: one JSON object per line, a plain-text summary table and
//! an optional CSV rendering.

use std::io::Write;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{OracleError, Result};

use super::config::ValidatedConfig;

/// Fields shared by every record of a run.
pub fn envelope(cfg: &ValidatedConfig, record: &str) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("schema".into(), Value::from(cfg.config.schema));
    m.insert("command".into(), Value::from(cfg.config.command.label()));
    m.insert("record".into(), Value::from(record));
    m.insert("config_hash".into(), Value::from(cfg.hash.clone()));
    m.insert("seed".into(), Value::from(cfg.config.seed));
    m.insert("theta".into(), Value::from(cfg.theta.values().to_vec()));
    m.insert("sigma".into(), Value::from(cfg.theta.sigma()));
    m.insert("problem".into(), Value::from(cfg.config.problem().label()));
    m.insert("ensemble_mode".into(), Value::Null);
    m.insert("bound_direction".into(), Value::from("point"));
    m.insert("config".into(), serde_json::to_value(&cfg.config).expect("config serializes"));
    m
}

/// Merge the fields of `payload` (an object) into `record`.
pub fn merge(record: &mut Map<String, Value>, payload: Value) {
    if let Value::Object(fields) = payload {
        record.extend(fields);
    }
}

pub fn to_jsonl(records: &[Value]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn cell(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => "-".into(),
        Some(Value::Number(x)) => match x.as_f64() {
            Some(f) if x.is_f64() => format!("{f:.6}"),
            _ => x.to_string(),
        },
        Some(Value::String(s)) => s.clone(),
        Some(Value::Object(o)) => o.get("mode").map(|m| cell(Some(m))).unwrap_or_else(|| "{..}".into()),
        Some(other) => other.to_string(),
    }
}

/// Fixed-width table with one row per record.
pub fn summary_table(records: &[Value]) -> String {
    let cols = ["record", "rule", "loss", "estimate", "std_error", "bound_direction", "ensemble_mode"];
    let rows: Vec<Vec<String>> = records.iter().map(|r| cols.iter().map(|c| cell(r.get(c))).collect()).collect();
    let widths: Vec<usize> = (0..cols.len())
        .map(|k| rows.iter().map(|row| row[k].len()).chain([cols[k].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| -> String {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
    };
    let mut out = line(cols.to_vec());
    out.push('\n');
    for row in &rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// Scalar fields of each record, with `side_channels` spread into
/// `side.<name>` and `side.<name>.se` columns.
pub fn write_csv(records: &[Value], path: &Path) -> Result<()> {
    let flat: Vec<Map<String, Value>> = records
        .iter()
        .map(|r| {
            let mut m = Map::new();
            if let Value::Object(o) = r {
                for (k, v) in o {
                    match (k.as_str(), v) {
                        ("side_channels", Value::Object(sides)) => {
                            for (name, s) in sides {
                                m.insert(format!("side.{name}"), s.get("estimate").cloned().unwrap_or(Value::Null));
                                m.insert(format!("side.{name}.se"), s.get("std_error").cloned().unwrap_or(Value::Null));
                            }
                        }
                        ("ensemble_mode", Value::Object(_)) => {
                            m.insert(k.clone(), Value::from(cell(Some(v))));
                        }
                        (_, Value::Object(_) | Value::Array(_)) => {}
                        _ => {
                            m.insert(k.clone(), v.clone());
                        }
                    }
                }
            }
            m
        })
        .collect();
    let mut header: Vec<String> = flat.iter().flat_map(|m| m.keys().cloned()).collect();
    header.sort();
    header.dedup();
    let io = |e: std::io::Error| OracleError::InvalidParameter(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record(&header).map_err(|e| io(e.into()))?;
    for m in &flat {
        let row: Vec<String> = header
            .iter()
            .map(|h| match m.get(h) {
                None | Some(Value::Null) => String::new(),
                Some(Value::String(s)) => s.clone(),
                Some(v) => v.to_string(),
            })
            .collect();
        w.write_record(&row).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| OracleError::InvalidParameter(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(text.as_bytes())
        .map_err(|e| OracleError::InvalidParameter(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn table_and_csv() {
        let records = vec![
            json!({"record": "risk", "rule": "bh", "estimate": 0.25, "std_error": 0.01,
                   "side_channels": {"fdr": {"estimate": 0.1, "std_error": 0.002}}, "theta": [1.0]}),
            json!({"record": "risk", "rule": "oracle_fdr", "estimate": 0.2, "ensemble_mode": {"mode": "exact"}}),
        ];
        let t = summary_table(&records);
        assert!(t.lines().count() == 3 && t.contains("oracle_fdr") && t.contains("0.250000"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        write_csv(&records, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let head = text.lines().next().unwrap();
        assert!(head.contains("side.fdr") && !head.contains("theta"));
        assert!(text.lines().any(|l| l.starts_with("exact,0.2,")), "{text}");
    }
}
