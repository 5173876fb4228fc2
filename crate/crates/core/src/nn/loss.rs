//! Weighted softmax cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f64,
    /// Gradient w.r.t. the logits.
    pub grad: Tensor,
}

/// `(1/n) Σ_i w[y_i] · (−log softmax(z_i)[y_i])`, log-sum-exp stabilized.
pub fn cross_entropy(logits: &Tensor, labels: &[usize], class_weights: Option<&[f64]>) -> Result<CrossEntropy> {
    if logits.shape().len() != 2 || logits.rows() != labels.len() {
        return Err(Error::Shape(format!("logits {:?} for {} labels", logits.shape(), labels.len())));
    }
    let c = logits.row_width();
    if let Some(w) = class_weights {
        if w.len() != c {
            return Err(Error::Shape(format!("{} class weights for {c} classes", w.len())));
        }
    }
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.data().chunks_exact(c).zip(labels) {
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, classes: c });
        }
        let w = class_weights.map_or(1.0, |w| w[y]);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += w * (lse - row[y]);
        for (j, &z) in row.iter().enumerate() {
            let p = (z - lse).exp();
            grad.push(w / n * (p - if j == y { 1.0 } else { 0.0 }));
        }
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    Ok(CrossEntropy { loss, grad: Tensor::new(logits.shape().to_vec(), grad)? })
}
