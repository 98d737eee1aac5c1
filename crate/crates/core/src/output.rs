//! CSV tables and JSON summaries.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{FkError, Result};

pub const SCHEMA_HEADER: &str = "# fkpath-schema v1";

/// Shortest round-trip representation, so equal values give equal bytes.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Renders a CSV table preceded by the schema header line.
pub fn csv_string(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(FkError::Io(format!("row has {} fields, header has {}", row.len(), header.len())));
        }
        w.write_record(row).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| FkError::Io(e.to_string()))?;
    let body = String::from_utf8(body).map_err(|e| FkError::Io(e.to_string()))?;
    Ok(format!("{SCHEMA_HEADER}\n{body}"))
}

fn csv_err(e: csv::Error) -> FkError {
    FkError::Io(e.to_string())
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    write_text(path, &csv_string(header, rows)?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| FkError::Io(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// `{experiment, params, estimates[], z_scores[], pass}`.
pub fn summary(experiment: &str, params: Value, estimates: Vec<Value>, z_scores: Vec<f64>, pass: bool) -> Value {
    json!({
        "experiment": experiment,
        "params": params,
        "estimates": estimates,
        "z_scores": z_scores,
        "pass": pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_schema_header() {
        let text = csv_string(
            &["replica_id".into(), "Z_weight".into()],
            &[vec!["0".into(), num(0.25)], vec!["1".into(), num(1.0)]],
        )
        .unwrap();
        assert_eq!(text, "# fkpath-schema v1\nreplica_id,Z_weight\n0,0.25\n1,1\n");
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(csv_string(&["a".into()], &[vec!["1".into(), "2".into()]]).is_err());
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn summary_layout() {
        let s = summary("oracle", json!({"t": 1.0}), vec![json!(0.5)], vec![0.1], true);
        let keys: Vec<&String> = s.as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 5);
        assert_eq!(s["pass"], json!(true));
    }
}
