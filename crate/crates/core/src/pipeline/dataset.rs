//! Model-ready per-country datasets.

use crate::error::{Error, Result};
use crate::sensing::registry::{feature_index, FEATURE_COUNT};
use crate::sensing::{FeatureRow, FeatureTable};
use crate::tensor::Tensor;

use super::impute::knn_impute;
use super::labels::{class_index, N_CLASSES};
use super::prune::{prune_features, MissingnessEntry, PreprocessConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub country_code: String,
    /// Row-major `[n × feature_names.len()]`.
    pub x: Vec<f64>,
    /// Class indices in `0..3` (1-based mood classes minus one).
    pub y: Vec<usize>,
    pub participant_ids: Vec<String>,
    pub feature_names: Vec<String>,
}

impl ClientDataset {
    pub fn new(
        country_code: impl Into<String>,
        x: Vec<f64>,
        y: Vec<usize>,
        participant_ids: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let d = Self { country_code: country_code.into(), x, y, participant_ids, feature_names };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.feature_names.len();
        if f == 0 || f > FEATURE_COUNT {
            return Err(Error::Shape(format!("{}: {f} features", self.country_code)));
        }
        if self.x.len() != self.y.len() * f || self.participant_ids.len() != self.y.len() {
            return Err(Error::Shape(format!("{}: inconsistent row counts", self.country_code)));
        }
        if let Some(&label) = self.y.iter().find(|&&c| c >= N_CLASSES) {
            return Err(Error::LabelOutOfRange { label, classes: N_CLASSES });
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} features", self.country_code)));
        }
        for name in &self.feature_names {
            feature_index(name)?;
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let f = self.n_features();
        &self.x[i * f..(i + 1) * f]
    }

    /// Binary availability over the 59-feature registry.
    pub fn availability_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; FEATURE_COUNT];
        for name in &self.feature_names {
            mask[feature_index(name).expect("validated")] = true;
        }
        mask
    }

    /// Rows `rows`, columns given by registry indices, as an `[rows × cols]` tensor.
    pub fn select(&self, rows: &[usize], registry_cols: &[usize]) -> Result<Tensor> {
        let positions: Vec<usize> = registry_cols
            .iter()
            .map(|&r| {
                self.feature_names
                    .iter()
                    .position(|n| feature_index(n).ok() == Some(r))
                    .ok_or_else(|| Error::Unknown { kind: "feature column", name: format!("registry index {r}") })
            })
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(rows.len() * positions.len());
        for &i in rows {
            let row = self.row(i);
            data.extend(positions.iter().map(|&p| row[p]));
        }
        Tensor::matrix(rows.len(), positions.len(), data)
    }

    pub fn labels(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&i| self.y[i]).collect()
    }

    /// Table form with 1-based classes in the label column.
    pub fn to_table(&self) -> FeatureTable {
        let rows = (0..self.n_rows())
            .map(|i| FeatureRow {
                user_id: self.participant_ids[i].clone(),
                start_time: 0,
                end_time: 0,
                label: self.y[i] as i64 + 1,
                values: self.row(i).to_vec(),
            })
            .collect();
        FeatureTable { columns: self.feature_names.clone(), rows }
    }

    /// Reads an imputed table whose label column holds classes 1–3.
    pub fn from_table(country_code: &str, table: &FeatureTable) -> Result<Self> {
        let y = table
            .rows
            .iter()
            .map(|r| match r.label {
                1..=3 => Ok(r.label as usize - 1),
                other => Err(Error::Schema(format!("imputed table label {other} outside 1..=3"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let x = table.rows.iter().flat_map(|r| r.values.iter().copied()).collect();
        let pids = table.rows.iter().map(|r| r.user_id.clone()).collect();
        Self::new(country_code, x, y, pids, table.columns.clone())
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub dataset: ClientDataset,
    pub missingness: Vec<MissingnessEntry>,
    /// Imputed table keeping window times, with 1-based classes as labels.
    pub imputed: FeatureTable,
}

/// Label mapping, pruning and KNN imputation of one country's raw feature table.
pub fn preprocess(country_code: &str, raw: &FeatureTable, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    let mut table = raw.clone();
    for row in &mut table.rows {
        row.label = class_index(row.label)? as i64 + 1;
    }
    let (mut pruned, missingness) = prune_features(&table, cfg)?;
    let imputed = knn_impute(&pruned.matrix(), cfg.knn_k)?;
    for (row, values) in pruned.rows.iter_mut().zip(imputed) {
        row.values = values;
    }
    let dataset = ClientDataset::from_table(country_code, &pruned)?;
    Ok(Preprocessed { dataset, missingness, imputed: pruned })
}
