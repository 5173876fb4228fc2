//! Nan-aware k-nearest-neighbor imputation.
//!
//! Distance between rows `a` and `b` over their co-observed columns `S`:
//! `d² = (F / |S|) · Σ_{j∈S} (a_j − b_j)²` where `F` is the column count.
//! A missing cell `(i, j)` takes the mean of column `j` over the `k` nearest rows that
//! observe `j` and share at least one observed column with `i`; distance ties go to
//! the lower row index, and fewer than `k` donors are used when fewer exist. Without
//! any donor the cell takes the column mean. Distances always use the original values.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Squared nan-aware distance, or `None` when no column is co-observed.
pub fn nan_distance_sq(a: &[f64], b: &[f64]) -> Option<f64> {
    let (av, am) = split_observed(a);
    let (bv, bm) = split_observed(b);
    masked_distance_sq(&av, &am, &bv, &bm)
}

/// Values with NaN replaced by 0, and a 1/0 observation mask.
fn split_observed(row: &[f64]) -> (Vec<f64>, Vec<f64>) {
    row.iter().map(|&x| if x.is_nan() { (0.0, 0.0) } else { (x, 1.0) }).unzip()
}

/// Branch-free kernel over four accumulator lanes so the loop vectorizes.
fn masked_distance_sq(av: &[f64], am: &[f64], bv: &[f64], bm: &[f64]) -> Option<f64> {
    let mut sum = [0.0; 4];
    let mut shared = [0.0; 4];
    let n = av.len();
    let whole = n - n % 4;
    for base in (0..whole).step_by(4) {
        for l in 0..4 {
            let i = base + l;
            let m = am[i] * bm[i];
            let d = av[i] - bv[i];
            sum[l] += m * d * d;
            shared[l] += m;
        }
    }
    for i in whole..n {
        let m = am[i] * bm[i];
        let d = av[i] - bv[i];
        sum[0] += m * d * d;
        shared[0] += m;
    }
    let shared = (shared[0] + shared[1]) + (shared[2] + shared[3]);
    let sum = (sum[0] + sum[1]) + (sum[2] + sum[3]);
    (shared > 0.0).then(|| n as f64 / shared * sum)
}

/// Imputes NaN cells of the row-major `rows`. Observed cells are returned unchanged.
pub fn knn_impute(rows: &[Vec<f64>], k: usize) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::Config("knn k must be at least 1".into()));
    }
    let Some(width) = rows.first().map(Vec::len) else {
        return Ok(Vec::new());
    };
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Shape("ragged matrix".into()));
    }
    let mut means = Vec::with_capacity(width);
    for j in 0..width {
        let (sum, count) =
            rows.iter().map(|r| r[j]).filter(|v| !v.is_nan()).fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        if count == 0 {
            return Err(Error::Degenerate(format!("column {j} has no observed values")));
        }
        means.push(sum / count as f64);
    }
    let split: Vec<(Vec<f64>, Vec<f64>)> = rows.iter().map(|r| split_observed(r)).collect();
    let out = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let missing: Vec<usize> = (0..width).filter(|&j| row[j].is_nan()).collect();
            if missing.is_empty() {
                return row.clone();
            }
            let dists: Vec<Option<f64>> = split
                .iter()
                .enumerate()
                .map(|(r, (bv, bm))| if r == i { None } else { masked_distance_sq(&split[i].0, &split[i].1, bv, bm) })
                .collect();
            let mut filled = row.clone();
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for &j in &missing {
                best.clear();
                for (r, d) in dists.iter().enumerate() {
                    let Some(d) = *d else { continue };
                    if rows[r][j].is_nan() {
                        continue;
                    }
                    // rows arrive in index order, so strict comparison keeps the lower index on ties
                    if best.len() == k && d >= best[k - 1].0 {
                        continue;
                    }
                    let pos = best.partition_point(|&(bd, _)| bd <= d);
                    best.insert(pos, (d, r));
                    best.truncate(k);
                }
                filled[j] = if best.is_empty() {
                    means[j]
                } else {
                    best.iter().fold(0.0, |acc, &(_, r)| acc + rows[r][j]) / best.len() as f64
                };
            }
            filled
        })
        .collect();
    Ok(out)
}
