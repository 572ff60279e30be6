use ndarray::{concatenate, Array2, ArrayView2, Axis};

use super::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};

/// Regression half-width used for Δ and ΔΔ of acoustic features.
pub const DELTA_RADIUS: usize = 2;

/// Regression deltas with edge replication:
/// `Δ_t = Σ_{n=1..N} n (c_{t+n} - c_{t-n}) / (2 Σ n²)`.
pub fn delta(c: ArrayView2<f64>, radius: usize) -> Array2<f64> {
    let t_len = c.nrows();
    let denom = 2.0 * (1..=radius).map(|n| (n * n) as f64).sum::<f64>();
    let clamp = |t: isize| t.clamp(0, t_len as isize - 1) as usize;
    let mut out = Array2::zeros(c.raw_dim());
    for t in 0..t_len {
        let mut row = out.row_mut(t);
        for n in 1..=radius {
            let fwd = c.row(clamp(t as isize + n as isize));
            let back = c.row(clamp(t as isize - n as isize));
            row.scaled_add(n as f64 / denom, &(&fwd - &back));
        }
    }
    out
}

/// `[static ; Δ ; ΔΔ]` per frame, tripling the column count.
pub fn dynamic_features(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if m.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let d1 = delta(m.data().view(), DELTA_RADIUS);
    let d2 = delta(d1.view(), DELTA_RADIUS);
    let data = concatenate(Axis(1), &[m.data().view(), d1.view(), d2.view()])
        .expect("equal row counts");
    let kind = match m.kind() {
        FeatureKind::Ppg | FeatureKind::Fap => FeatureKind::Generic,
        k => k,
    };
    FeatureMatrix::new(data, m.frame_shift_ms(), kind)
}
