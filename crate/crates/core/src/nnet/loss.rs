use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut p = logits.to_owned();
    for mut row in p.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

/// Mean per-frame cross-entropy and its gradient with respect to the logits.
pub fn softmax_xent(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (t, p) = logits.dim();
    if labels.len() != t {
        return Err(Error::LengthMismatch(format!(
            "{} labels for {t} frames",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= p) {
        return Err(Error::ShapeMismatch(format!("label {bad} >= {p} classes")));
    }
    if t == 0 {
        return Ok((0.0, Array2::zeros((0, p))));
    }
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (mut row, &l) in grad.axis_iter_mut(Axis(0)).zip(labels) {
        loss -= row[l].max(f64::MIN_POSITIVE).ln();
        row[l] -= 1.0;
    }
    grad /= t as f64;
    Ok((loss / t as f64, grad))
}

/// Mean squared error over every entry and its gradient.
pub fn mse_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mse: pred {:?}, target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len();
    if n == 0 {
        return Ok((0.0, Array2::zeros(pred.raw_dim())));
    }
    let diff = &pred - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
    Ok((loss, diff * (2.0 / n as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{grad_check, RngStream};

    #[test]
    fn uniform_logits_give_ln_p() {
        let (loss, _) = softmax_xent(Array2::zeros((3, 4)).view(), &[0, 1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_has_zero_mse() {
        let a = Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64);
        let (loss, g) = mse_loss(a.view(), a.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        assert!(softmax_xent(Array2::zeros((2, 3)).view(), &[0]).is_err());
        assert!(softmax_xent(Array2::zeros((1, 3)).view(), &[3]).is_err());
        assert!(mse_loss(Array2::zeros((1, 3)).view(), Array2::zeros((3, 1)).view()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for case in 0..3u64 {
            let mut rng = RngStream::new(300 + case);
            let (t, p) = (5, 4);
            let logits = Array2::from_shape_simple_fn((t, p), || rng.uniform(-2.0, 2.0));
            let labels: Vec<usize> = (0..t).map(|_| rng.below(p)).collect();
            let (_, g) = softmax_xent(logits.view(), &labels).unwrap();
            let err = grad_check(
                |f| {
                    softmax_xent(Array2::from_shape_vec((t, p), f.to_vec()).unwrap().view(), &labels)
                        .unwrap()
                        .0
                },
                logits.as_slice().unwrap(),
                g.as_slice().unwrap(),
                1e-5,
            );
            assert!(err <= 1e-6, "xent: {err}");

            let target = Array2::from_shape_simple_fn((t, p), || rng.uniform(-2.0, 2.0));
            let (_, g) = mse_loss(logits.view(), target.view()).unwrap();
            let err = grad_check(
                |f| {
                    mse_loss(Array2::from_shape_vec((t, p), f.to_vec()).unwrap().view(), target.view())
                        .unwrap()
                        .0
                },
                logits.as_slice().unwrap(),
                g.as_slice().unwrap(),
                1e-5,
            );
            assert!(err <= 1e-6, "mse: {err}");
        }
    }
}
