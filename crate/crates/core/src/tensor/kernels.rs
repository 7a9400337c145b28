//! Elementwise activations and the softmax cross-entropy head, each paired
//! with its analytic derivative.

use crate::error::{Error, Result};

use super::{DenseMatrix, SeededRng};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn relu_matrix(m: &DenseMatrix) -> DenseMatrix {
    m.map(relu)
}

/// Multiplies `grad` in place by the ReLU derivative evaluated at `pre`.
pub fn relu_backward(grad: &mut DenseMatrix, pre: &DenseMatrix) {
    assert_eq!(grad.shape(), pre.shape());
    for (g, &z) in grad.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Mean softmax cross-entropy over `nodes` and its gradient with respect to
/// the logits (zero on rows outside `nodes`).
pub fn softmax_cross_entropy(
    logits: &DenseMatrix,
    labels: &[usize],
    nodes: &[usize],
) -> Result<(f64, DenseMatrix)> {
    if nodes.is_empty() {
        return Err(Error::invalid("cross-entropy over an empty node set"));
    }
    let probs = softmax_rows(logits);
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    let scale = 1.0 / nodes.len() as f64;
    let mut loss = 0.0;
    for &i in nodes {
        let y = labels[i];
        if y >= logits.cols() {
            return Err(Error::invalid(format!(
                "label {y} of node {i} outside {} classes",
                logits.cols()
            )));
        }
        // log-sum-exp form keeps the loss finite for saturated rows
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        let g = grad.row_mut(i);
        g.copy_from_slice(probs.row(i));
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, grad))
}

/// Uniform Glorot initialisation in `±sqrt(6 / (rows + cols))`.
pub fn glorot_init(rows: usize, cols: usize, rng: &mut SeededRng) -> Result<DenseMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "glorot_init needs nonzero dimensions, got {rows}x{cols}"
        )));
    }
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Ok(DenseMatrix::from_fn(rows, cols, |_, _| {
        rng.uniform_range(-bound, bound)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn sigmoid_is_stable_and_symmetric() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn elementwise_derivatives_match_finite_differences() {
        let mut rng = SeededRng::new(3);
        for _ in 0..200 {
            let x = rng.uniform_range(-6.0, 6.0);
            if x.abs() < 1e-3 {
                continue;
            }
            let s = sigmoid(x);
            let fd = central(sigmoid, x);
            assert!((s * (1.0 - s) - fd).abs() / fd.abs().max(1.0) < 1e-6);
            let r = if x > 0.0 { 1.0 } else { 0.0 };
            assert!((r - central(relu, x)).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(9);
        let logits = DenseMatrix::from_fn(5, 3, |_, _| rng.uniform_range(-2.0, 2.0));
        let labels = [0, 2, 1, 1, 0];
        let nodes = [0, 1, 3];
        let (_, grad) = softmax_cross_entropy(&logits, &labels, &nodes).unwrap();
        let h = 1e-6;
        for i in 0..5 {
            for j in 0..3 {
                let mut p = logits.clone();
                p.set(i, j, logits.get(i, j) + h);
                let mut m = logits.clone();
                m.set(i, j, logits.get(i, j) - h);
                let fd = (softmax_cross_entropy(&p, &labels, &nodes).unwrap().0
                    - softmax_cross_entropy(&m, &labels, &nodes).unwrap().0)
                    / (2.0 * h);
                let err = (grad.get(i, j) - fd).abs() / fd.abs().max(1.0);
                assert!(err < 1e-6, "({i},{j}) err {err}");
            }
        }
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut rng = SeededRng::new(4);
        let logits = DenseMatrix::from_fn(20, 6, |_, _| rng.uniform_range(-50.0, 50.0));
        let p = softmax_rows(&logits);
        for i in 0..20 {
            assert!(p.row(i).iter().all(|&v| v >= 0.0));
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let w = glorot_init(1, 1, &mut SeededRng::new(0)).unwrap();
        assert!(w.get(0, 0).abs() <= 3f64.sqrt());
        let a = glorot_init(8, 5, &mut SeededRng::new(17)).unwrap();
        let b = glorot_init(8, 5, &mut SeededRng::new(17)).unwrap();
        assert_eq!(a, b);
        assert!(glorot_init(0, 3, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn glorot_variance_monte_carlo() {
        // Uniform(-b, b) has variance b²/3 = 2/(rows+cols).
        let mut rng = SeededRng::new(123);
        let mut values = Vec::new();
        while values.len() < 10_000 {
            values.extend_from_slice(glorot_init(64, 64, &mut rng).unwrap().as_slice());
        }
        values.truncate(10_000);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        let target = 2.0 / 128.0;
        assert!((var - target).abs() / target < 0.05, "var {var}");
    }
}
