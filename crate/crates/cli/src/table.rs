//! CSV output with a one-line JSON metadata comment on top.

use std::io::Write;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    /// Column names, units as suffixes.
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: Value,
}

impl ResultTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
            summary: Value::Null,
        }
    }

    pub fn push(&mut self, row: impl IntoIterator<Item = f64>) {
        self.rows.push(row.into_iter().map(num).collect());
    }
}

/// Shortest representation that parses back to the same f64.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn config_hash(config: &Value) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub fn write<W: Write>(table: &ResultTable, command: &str, seed: u64, config: &Value, mut w: W) -> Result<(), CliError> {
    let meta = json!({
        "artifact": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config_sha256": config_hash(config),
        "config": config,
        "columns": table.columns,
        "summary": table.summary,
    });
    writeln!(w, "# {}", serde_json::to_string(&meta).expect("metadata serializes"))?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(&table.columns)?;
    for r in &table.rows {
        csv.write_record(r)?;
    }
    csv.flush()?;
    Ok(())
}
