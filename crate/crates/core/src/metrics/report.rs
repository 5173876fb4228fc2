//! Metrics reports: per-fold scores, per-country fold means and the macro over countries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::scores::{accuracy, argmax_rows, auroc_ovr, confusion_matrix, f1_from_confusion};
use crate::tensor::Tensor;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_test: usize,
    pub macro_auroc: Option<f64>,
    pub per_class_auroc: Vec<Option<f64>>,
    pub f1_weighted: f64,
    pub accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
}

impl FoldMetrics {
    pub fn compute(fold: usize, probs: &Tensor, labels: &[usize]) -> Result<Self> {
        let classes = probs.row_width();
        let auroc = auroc_ovr(probs, labels)?;
        let pred = argmax_rows(probs);
        let confusion = confusion_matrix(&pred, labels, classes)?;
        Ok(Self {
            fold,
            n_test: labels.len(),
            macro_auroc: auroc.macro_auroc,
            per_class_auroc: auroc.per_class,
            f1_weighted: f1_from_confusion(&confusion),
            accuracy: accuracy(&pred, labels)?,
            confusion,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryMetrics {
    pub country: String,
    /// Mean over folds with a defined value; `None` if no fold had one.
    pub macro_auroc: Option<f64>,
    pub f1_weighted: f64,
    pub accuracy: f64,
    pub per_class_auroc: Vec<Option<f64>>,
    /// Classes absent from the test labels of at least one fold.
    pub absent_classes: Vec<usize>,
    /// Summed over folds; row sums are the class supports.
    pub confusion: Vec<Vec<u64>>,
    pub folds: Vec<FoldMetrics>,
}

fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().fold(0.0, |a, b| a + b) / v.len() as f64)
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    v.iter().fold(0.0, |a, b| a + b) / v.len() as f64
}

impl CountryMetrics {
    pub fn from_folds(country: &str, mut folds: Vec<FoldMetrics>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::Degenerate(format!("no folds evaluated for `{country}`")));
        }
        folds.sort_by_key(|f| f.fold);
        let classes = folds[0].per_class_auroc.len();
        let mut confusion = vec![vec![0u64; classes]; classes];
        for f in &folds {
            for (row, frow) in confusion.iter_mut().zip(&f.confusion) {
                for (a, b) in row.iter_mut().zip(frow) {
                    *a += b;
                }
            }
        }
        let per_class_auroc = (0..classes).map(|c| mean_defined(folds.iter().map(|f| f.per_class_auroc[c]))).collect();
        let absent_classes = (0..classes).filter(|&c| folds.iter().any(|f| f.per_class_auroc[c].is_none())).collect();
        Ok(Self {
            country: country.to_string(),
            macro_auroc: mean_defined(folds.iter().map(|f| f.macro_auroc)),
            f1_weighted: mean(folds.iter().map(|f| f.f1_weighted)),
            accuracy: mean(folds.iter().map(|f| f.accuracy)),
            per_class_auroc,
            absent_classes,
            confusion,
            folds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub macro_auroc: Option<f64>,
    pub f1_weighted: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    /// Method label, e.g. `fedfap`, `fedper`, `pfedme`, `logreg`, `cnn1d`.
    pub method: String,
    pub variant: Option<String>,
    pub aggregator: Option<String>,
    pub seed: u64,
    pub local_epochs: Option<usize>,
    pub rounds: Option<usize>,
    /// Echo of the configuration that produced the report.
    pub config: serde_json::Value,
    pub countries: Vec<CountryMetrics>,
    /// Unweighted mean over countries.
    pub overall: OverallMetrics,
}

impl MetricsReport {
    pub fn assemble(header: ReportHeader, mut countries: Vec<CountryMetrics>) -> Result<Self> {
        if countries.is_empty() {
            return Err(Error::Degenerate("report without countries".into()));
        }
        countries.sort_by(|a, b| a.country.cmp(&b.country));
        let overall = OverallMetrics {
            macro_auroc: mean_defined(countries.iter().map(|c| c.macro_auroc)),
            f1_weighted: mean(countries.iter().map(|c| c.f1_weighted)),
            accuracy: mean(countries.iter().map(|c| c.accuracy)),
        };
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            method: header.method,
            variant: header.variant,
            aggregator: header.aggregator,
            seed: header.seed,
            local_epochs: header.local_epochs,
            rounds: header.rounds,
            config: header.config,
            countries,
            overall,
        })
    }

    pub fn country(&self, code: &str) -> Option<&CountryMetrics> {
        self.countries.iter().find(|c| c.country == code)
    }

    /// Label used in comparison tables, e.g. `fedfap/feedforward/fedavg`.
    pub fn label(&self) -> String {
        [Some(self.method.as_str()), self.variant.as_deref(), self.aggregator.as_deref()]
            .into_iter()
            .flatten()
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a report, rejecting other schema versions before field validation.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(REPORT_SCHEMA_VERSION) => Ok(serde_json::from_value(value)?),
            Some(v) => Err(Error::Schema(format!(
                "report schema version {v} is not supported (expected {REPORT_SCHEMA_VERSION})"
            ))),
            None => Err(Error::Schema("report has no schema_version".into())),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Descriptive fields shared by every report of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportHeader {
    pub method: String,
    pub variant: Option<String>,
    pub aggregator: Option<String>,
    pub seed: u64,
    pub local_epochs: Option<usize>,
    pub rounds: Option<usize>,
    pub config: serde_json::Value,
}
