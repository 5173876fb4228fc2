//! Thin GEMM wrappers over row-major slices.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

fn view(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("slice length matches matrix extents")
}

fn view_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("slice length matches matrix extents")
}

/// `out[n×o] = x[n×i] · w[o×i]ᵀ + bias`.
pub(crate) fn affine(x: &[f64], n: usize, inputs: usize, w: &[f64], b: &[f64], outputs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * outputs);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    general_mat_mul(1.0, &view(x, n, inputs), &view(w, outputs, inputs).t(), 1.0, &mut view_mut(&mut out, n, outputs));
    out
}

/// `dw[o×i] += g[n×o]ᵀ · x[n×i]` and `db[o] += Σ_rows g`.
pub(crate) fn accumulate_affine_grads(
    g: &[f64],
    x: &[f64],
    n: usize,
    inputs: usize,
    outputs: usize,
    dw: &mut [f64],
    db: &mut [f64],
) {
    general_mat_mul(1.0, &view(g, n, outputs).t(), &view(x, n, inputs), 1.0, &mut view_mut(dw, outputs, inputs));
    for row in g.chunks_exact(outputs) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
}

/// `dx[n×i] = g[n×o] · w[o×i]`.
pub(crate) fn input_grad(g: &[f64], n: usize, outputs: usize, w: &[f64], inputs: usize) -> Vec<f64> {
    let mut dx = vec![0.0; n * inputs];
    general_mat_mul(1.0, &view(g, n, outputs), &view(w, outputs, inputs), 0.0, &mut view_mut(&mut dx, n, inputs));
    dx
}

/// `dx[n×i] += g[n×o] · w[o×i]`.
pub(crate) fn add_input_grad(g: &[f64], n: usize, outputs: usize, w: &[f64], inputs: usize, dx: &mut [f64]) {
    general_mat_mul(1.0, &view(g, n, outputs), &view(w, outputs, inputs), 1.0, &mut view_mut(dx, n, inputs));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_naive_loop() {
        let x = [1.0, 2.0, 3.0, -1.0, 0.5, 4.0];
        let w = [0.1, 0.2, 0.3, -0.4, 0.5, 0.6];
        let b = [1.0, -1.0];
        let out = affine(&x, 2, 3, &w, &b, 2);
        for r in 0..2 {
            for o in 0..2 {
                let expect: f64 = b[o] + (0..3).map(|i| x[r * 3 + i] * w[o * 3 + i]).sum::<f64>();
                assert!((out[r * 2 + o] - expect).abs() < 1e-15);
            }
        }
    }
}
