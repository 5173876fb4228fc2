//! Dropping features with excessive within-country missingness.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensing::FeatureTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub drop_threshold: f64,
    pub knn_k: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { drop_threshold: 0.8, knn_k: 5 }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.drop_threshold > 0.0 && self.drop_threshold <= 1.0) {
            return Err(Error::Config(format!("drop_threshold must be in (0, 1], got {}", self.drop_threshold)));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessEntry {
    pub feature: String,
    pub missing_fraction: f64,
    pub dropped: bool,
}

/// Drops every column whose missing fraction is ≥ `drop_threshold`. The report covers
/// every input column in order.
pub fn prune_features(table: &FeatureTable, cfg: &PreprocessConfig) -> Result<(FeatureTable, Vec<MissingnessEntry>)> {
    cfg.validate()?;
    if table.n_rows() == 0 {
        return Err(Error::Degenerate("cannot prune an empty table".into()));
    }
    let n = table.n_rows();
    let report: Vec<MissingnessEntry> = table
        .columns
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let missing = table.column(j).filter(|v| v.is_nan()).count();
            let missing_fraction = missing as f64 / n as f64;
            // compare counts to avoid rounding at the boundary (8/10 vs 0.8)
            let dropped = missing as f64 >= cfg.drop_threshold * n as f64 - 1e-9 * n as f64;
            MissingnessEntry { feature: name.clone(), missing_fraction, dropped }
        })
        .collect();
    let keep: Vec<usize> = report.iter().enumerate().filter(|(_, e)| !e.dropped).map(|(j, _)| j).collect();
    if keep.is_empty() {
        return Err(Error::Degenerate(format!("all {} features exceed the missingness threshold", table.n_cols())));
    }
    let columns = keep.iter().map(|&j| table.columns[j].clone()).collect();
    let rows = table
        .rows
        .iter()
        .map(|r| {
            let mut row = r.clone();
            row.values = keep.iter().map(|&j| r.values[j]).collect();
            row
        })
        .collect();
    Ok((FeatureTable::new(columns, rows)?, report))
}

pub fn write_missingness_csv<W: Write>(report: &[MissingnessEntry], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for e in report {
        wtr.serialize(e)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_missingness_csv<R: std::io::Read>(reader: R) -> Result<Vec<MissingnessEntry>> {
    csv::Reader::from_reader(reader).deserialize().map(|r| r.map_err(Error::from)).collect()
}
