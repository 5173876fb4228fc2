//! Figure-data tables as CSV: per-country scores by method, the (E, R) sweep table and
//! method-vs-method comparison tables.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::report::MetricsReport;

/// Marker written for cells with no value.
pub const MISSING: &str = "NA";
/// Pseudo-country carrying the macro over countries.
pub const OVERALL: &str = "ALL";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |x| format!("{x}"))
}

fn parse_cell(s: &str) -> Result<Option<f64>> {
    if s == MISSING {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| Error::Schema(format!("bad numeric cell `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryScoreRow {
    pub country: String,
    pub method: String,
    pub macro_auroc: String,
    pub f1_weighted: f64,
    pub accuracy: f64,
}

/// One row per (country, report) plus an `ALL` row per report.
pub fn country_score_rows(reports: &[MetricsReport]) -> Vec<CountryScoreRow> {
    let mut rows = Vec::new();
    for r in reports {
        for c in &r.countries {
            rows.push(CountryScoreRow {
                country: c.country.clone(),
                method: r.label(),
                macro_auroc: cell(c.macro_auroc),
                f1_weighted: c.f1_weighted,
                accuracy: c.accuracy,
            });
        }
        rows.push(CountryScoreRow {
            country: OVERALL.into(),
            method: r.label(),
            macro_auroc: cell(r.overall.macro_auroc),
            f1_weighted: r.overall.f1_weighted,
            accuracy: r.overall.accuracy,
        });
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub local_epochs: usize,
    pub rounds: usize,
    pub macro_auroc: String,
    pub f1_weighted: f64,
    pub accuracy: f64,
}

pub fn sweep_rows(reports: &[MetricsReport]) -> Vec<SweepRow> {
    reports
        .iter()
        .map(|r| SweepRow {
            method: r.label(),
            local_epochs: r.local_epochs.unwrap_or(0),
            rounds: r.rounds.unwrap_or(0),
            macro_auroc: cell(r.overall.macro_auroc),
            f1_weighted: r.overall.f1_weighted,
            accuracy: r.overall.accuracy,
        })
        .collect()
}

pub fn write_rows<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(reader: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(reader).deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Per-country macro AUROC of each report side by side, with deltas against the first.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub methods: Vec<String>,
    /// `(country, one AUROC per method)`; `ALL` last.
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl ComparisonTable {
    pub fn build(reports: &[MetricsReport]) -> Result<Self> {
        if reports.len() < 2 {
            return Err(Error::Config(format!("comparison needs at least two reports, got {}", reports.len())));
        }
        if let Some(r) = reports.iter().find(|r| r.schema_version != reports[0].schema_version) {
            return Err(Error::Schema(format!(
                "report `{}` has schema version {}, first report has {}",
                r.label(),
                r.schema_version,
                reports[0].schema_version
            )));
        }
        let mut methods: Vec<String> = Vec::new();
        for r in reports {
            let base = r.label();
            let mut name = base.clone();
            let mut k = 2;
            while methods.contains(&name) {
                name = format!("{base}#{k}");
                k += 1;
            }
            methods.push(name);
        }
        let mut countries: Vec<String> =
            reports.iter().flat_map(|r| r.countries.iter().map(|c| c.country.clone())).collect();
        countries.sort();
        countries.dedup();
        let mut rows: Vec<(String, Vec<Option<f64>>)> = countries
            .into_iter()
            .map(|c| {
                let vals = reports.iter().map(|r| r.country(&c).and_then(|m| m.macro_auroc)).collect();
                (c, vals)
            })
            .collect();
        rows.push((OVERALL.into(), reports.iter().map(|r| r.overall.macro_auroc).collect()));
        Ok(Self { methods, rows })
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["country".to_string()];
        h.extend(self.methods.iter().map(|m| format!("auroc:{m}")));
        h.extend(self.methods[1..].iter().map(|m| format!("delta:{m}")));
        h
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.header())?;
        for (country, vals) in &self.rows {
            let mut rec = vec![country.clone()];
            rec.extend(vals.iter().map(|v| cell(*v)));
            rec.extend(vals[1..].iter().map(|v| cell(v.zip(vals[0]).map(|(a, b)| a - b))));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let methods: Vec<String> = header.iter().filter_map(|h| h.strip_prefix("auroc:")).map(String::from).collect();
        if header.first().map(String::as_str) != Some("country") || methods.len() < 2 {
            return Err(Error::Schema("not a comparison table".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = (1..=methods.len()).map(|i| parse_cell(&rec[i])).collect::<Result<_>>()?;
            rows.push((rec[0].to_string(), vals));
        }
        Ok(Self { methods, rows })
    }

    /// Delta of method `i` against the first method for `country`.
    pub fn delta(&self, country: &str, i: usize) -> Option<f64> {
        let (_, vals) = self.rows.iter().find(|(c, _)| c == country)?;
        Some(vals.get(i).copied()?? - vals[0]?)
    }
}
