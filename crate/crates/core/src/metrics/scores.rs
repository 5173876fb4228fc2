//! Classification scores: one-vs-rest AUROC, weighted F1, accuracy and the confusion matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocReport {
    /// Per-class AUROC; `None` when the class is absent from the labels.
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean over classes present in the labels; `None` when fewer than two
    /// classes are present (the ranking is undefined).
    pub macro_auroc: Option<f64>,
    pub absent_classes: Vec<usize>,
}

/// Mann–Whitney AUROC of `scores` for `positive` rows versus the rest, ties counted ½.
/// Computed from average ranks; `None` when either side is empty.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

pub fn auroc_ovr(scores: &Tensor, labels: &[usize]) -> Result<AurocReport> {
    let (n, c) = (scores.rows(), scores.row_width());
    if n == 0 || n != labels.len() {
        return Err(Error::Shape(format!("{n} score rows for {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::LabelOutOfRange { label: bad, classes: c });
    }
    let mut per_class = Vec::with_capacity(c);
    let mut absent = Vec::new();
    for k in 0..c {
        let column: Vec<f64> = (0..n).map(|r| scores.row(r)[k]).collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == k).collect();
        if !positive.contains(&true) {
            absent.push(k);
        }
        per_class.push(binary_auroc(&column, &positive));
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_auroc = if present.is_empty() { None } else { Some(present.iter().sum::<f64>() / present.len() as f64) };
    Ok(AurocReport { per_class, macro_auroc, absent_classes: absent })
}

/// `confusion[true][predicted]`.
pub fn confusion_matrix(pred: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    if pred.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", pred.len(), labels.len())));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &y) in pred.iter().zip(labels) {
        if p >= classes || y >= classes {
            return Err(Error::LabelOutOfRange { label: p.max(y), classes });
        }
        m[y][p] += 1;
    }
    Ok(m)
}

/// Support-weighted mean of per-class F1, with F1 = 0 when precision + recall = 0.
pub fn f1_weighted(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Shape("weighted F1 of an empty set".into()));
    }
    let classes = pred.iter().chain(labels).max().map_or(0, |&m| m + 1);
    let cm = confusion_matrix(pred, labels, classes)?;
    Ok(f1_from_confusion(&cm))
}

pub fn f1_from_confusion(cm: &[Vec<u64>]) -> f64 {
    let n: u64 = cm.iter().flatten().sum();
    let mut total = 0.0;
    for c in 0..cm.len() {
        let tp = cm[c][c] as f64;
        let support: u64 = cm[c].iter().sum();
        let predicted: u64 = cm.iter().map(|row| row[c]).sum();
        if support == 0 {
            continue;
        }
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / support as f64;
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        total += support as f64 / n as f64 * f1;
    }
    total
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() || pred.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", pred.len(), labels.len())));
    }
    Ok(pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64)
}

/// Row-wise argmax, first maximum wins.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    (0..scores.rows())
        .map(|r| {
            let row = scores.row(r);
            (1..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking() {
        let s = Tensor::from_rows(&[vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1], vec![0.1, 0.1, 0.8]]).unwrap();
        assert_eq!(auroc_ovr(&s, &[0, 1, 2]).unwrap().macro_auroc, Some(1.0));
    }

    #[test]
    fn all_ties_give_one_half() {
        let s = Tensor::filled(vec![4, 3], 1.0 / 3.0);
        let r = auroc_ovr(&s, &[0, 1, 2, 0]).unwrap();
        assert!(r.per_class.iter().all(|a| *a == Some(0.5)));
    }

    #[test]
    fn absent_class_is_skipped() {
        let s = Tensor::from_rows(&[vec![0.9, 0.1, 0.0], vec![0.2, 0.8, 0.0]]).unwrap();
        let r = auroc_ovr(&s, &[0, 1]).unwrap();
        assert_eq!(r.absent_classes, vec![2]);
        assert_eq!(r.per_class[2], None);
        assert_eq!(r.macro_auroc, Some(1.0));
    }

    #[test]
    fn single_class_is_undefined() {
        let s = Tensor::filled(vec![3, 3], 0.2);
        assert_eq!(auroc_ovr(&s, &[1, 1, 1]).unwrap().macro_auroc, None);
    }

    #[test]
    fn f1_edge_cases() {
        assert_eq!(f1_weighted(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(f1_weighted(&[1, 1], &[1, 1]).unwrap(), 1.0);
        assert!(f1_weighted(&[], &[]).is_err());
    }
}
