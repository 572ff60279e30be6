/// Denominator floor so that gradients near zero are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences of `f` at `params`.
pub fn numeric_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, params: &[f64], eps: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + eps;
            let up = f(&p);
            p[i] = orig - eps;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest relative error between `analytic` and central finite differences
/// of `f` over every coordinate of `params`.
pub fn grad_check<F: FnMut(&[f64]) -> f64>(f: F, params: &[f64], analytic: &[f64], eps: f64) -> f64 {
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    numeric_gradient(f, params, eps)
        .iter()
        .zip(analytic)
        .map(|(&n, &a)| relative_error(a, n))
        .fold(0.0, f64::max)
}
