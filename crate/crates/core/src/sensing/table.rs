//! Feature tables: one row per self-report, written as CSV with empty cells for missing values.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use rayon::prelude::*;

use super::events::SensorEvent;
use super::extract::{extract_window, WindowSpec};
use super::registry::{feature_names, Modality};
use crate::error::{Error, Result};

const KEY_COLUMNS: [&str; 4] = ["user_id", "start_time", "end_time", "label"];

/// A self-report at time `timestamp` with its raw label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub user_id: String,
    pub timestamp: i64,
    pub label: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub user_id: String,
    pub start_time: i64,
    pub end_time: i64,
    pub label: i64,
    /// One value per table column; NaN marks a missing cell.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn new(columns: Vec<String>, rows: Vec<FeatureRow>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.values.len() != columns.len()) {
            return Err(Error::Shape(format!(
                "row for {} has {} values, table has {} columns",
                r.user_id,
                r.values.len(),
                columns.len()
            )));
        }
        Ok(Self { columns, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r.values[j])
    }

    /// Row-major value matrix with NaN for missing cells.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.clone()).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let header: Vec<&str> = KEY_COLUMNS.iter().copied().chain(self.columns.iter().map(String::as_str)).collect();
        wtr.write_record(&header)?;
        for r in &self.rows {
            let mut rec =
                vec![r.user_id.clone(), r.start_time.to_string(), r.end_time.to_string(), r.label.to_string()];
            rec.extend(r.values.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if headers.len() < KEY_COLUMNS.len() || headers[..4] != KEY_COLUMNS {
            return Err(Error::Schema(format!("feature table must start with {KEY_COLUMNS:?}, got {headers:?}")));
        }
        let columns = headers[4..].to_vec();
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let int =
                |i: usize| -> Result<i64> {
                    rec.get(i).unwrap_or("").trim().parse().map_err(|_| {
                        Error::Schema(format!("row {}: column {} is not an integer", line + 1, headers[i]))
                    })
                };
            let values = (4..headers.len())
                .map(|i| {
                    let cell = rec.get(i).unwrap_or("").trim();
                    if cell.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        cell.parse::<f64>().map_err(|_| {
                            Error::Schema(format!("row {}: column {} holds {cell:?}", line + 1, headers[i]))
                        })
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(FeatureRow {
                user_id: rec.get(0).unwrap_or("").trim().to_string(),
                start_time: int(1)?,
                end_time: int(2)?,
                label: int(3)?,
                values,
            });
        }
        Self::new(columns, rows)
    }
}

pub fn read_reports_csv<R: Read>(reader: R) -> Result<Vec<Report>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |n: &str| {
        headers.iter().position(|h| h == n).ok_or_else(|| Error::Schema(format!("reports missing column {n:?}")))
    };
    let (u, t, l) = (col("user_id")?, col("timestamp_ms")?, col("label")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<i64> {
            let cell = rec.get(i).unwrap_or("").trim();
            cell.parse().map_err(|_| Error::Schema(format!("reports: bad integer {cell:?} in {}", headers[i])))
        };
        out.push(Report {
            user_id: rec.get(u).unwrap_or("").trim().to_string(),
            timestamp: parse(t)?,
            label: parse(l)?,
        });
    }
    Ok(out)
}

pub fn write_reports_csv<W: Write>(reports: &[Report], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["user_id", "timestamp_ms", "label"])?;
    for r in reports {
        wtr.write_record([r.user_id.clone(), r.timestamp.to_string(), r.label.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// One row per report over the full 59-feature registry, ordered by (user, report time).
/// A modality with no events in a report's window leaves its features missing.
pub fn build_feature_table(events: &[SensorEvent], reports: &[Report], half_width: i64) -> Result<FeatureTable> {
    WindowSpec::new(0, half_width)?;
    let mut seen = HashSet::new();
    for r in reports {
        if !seen.insert((r.user_id.as_str(), r.timestamp)) {
            return Err(Error::DuplicateReport { user: r.user_id.clone(), timestamp: r.timestamp });
        }
    }
    let mut by_user: BTreeMap<&str, Vec<SensorEvent>> = BTreeMap::new();
    for e in events {
        by_user.entry(e.user_id.as_str()).or_default().push(e.clone());
    }
    for evs in by_user.values_mut() {
        evs.sort_by_key(|e| e.timestamp);
    }
    let mut ordered: Vec<&Report> = reports.iter().collect();
    ordered.sort_by(|a, b| a.user_id.cmp(&b.user_id).then(a.timestamp.cmp(&b.timestamp)));
    let empty = Vec::new();
    let rows = ordered
        .par_iter()
        .map(|r| {
            let w = WindowSpec::new(r.timestamp, half_width)?;
            let evs = by_user.get(r.user_id.as_str()).unwrap_or(&empty);
            let mut values = Vec::with_capacity(super::FEATURE_COUNT);
            for m in Modality::ALL {
                values.extend(extract_window(evs, &w, m)?);
            }
            Ok(FeatureRow {
                user_id: r.user_id.clone(),
                start_time: w.start(),
                end_time: w.end(),
                label: r.label,
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureTable::new(feature_names().into_iter().map(String::from).collect(), rows)
}
