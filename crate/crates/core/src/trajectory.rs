//! Trajectory generation from per-frame static + dynamic means.
//!
//! `mlpg` solves, independently per static dimension,
//! `(Wᵀ P W) c = Wᵀ P μ`, where `W` stacks the static, delta and accel
//! windows for every frame (taps outside the sequence are dropped) and `P`
//! holds the inverse global variances. The system matrix has semi-bandwidth
//! 2, so a banded Cholesky factorisation solves it in `O(T)`.

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Variances below this are clamped so the normal equations stay positive
/// definite.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Default output window of the sliding-window smoother, in frames.
pub const SMOOTH_WINDOW: usize = 15;

/// Three radius-1 windows applied at offsets `-1, 0, +1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSet {
    pub windows: [[f64; 3]; 3],
}

impl Default for WindowSet {
    fn default() -> Self {
        Self {
            windows: [[0.0, 1.0, 0.0], [-0.5, 0.0, 0.5], [1.0, -2.0, 1.0]],
        }
    }
}

impl WindowSet {
    pub fn validate(&self) -> Result<()> {
        if self.windows[0] != [0.0, 1.0, 0.0] {
            return Err(Error::BadConfig("static window must be the identity".into()));
        }
        if self.windows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::BadConfig("window coefficients must be finite".into()));
        }
        Ok(())
    }

    /// `T x D` statics to `T x 3D` `[static; delta; accel]`, zero-padded at
    /// the ends. This is exactly `W c`, so `mlpg` inverts it.
    pub fn apply(&self, statics: ArrayView2<f64>) -> Array2<f64> {
        let (t_len, dims) = statics.dim();
        let mut out = Array2::zeros((t_len, 3 * dims));
        for (k, w) in self.windows.iter().enumerate() {
            let mut block = out.slice_mut(s![.., k * dims..(k + 1) * dims]);
            for t in 0..t_len {
                let mut row = block.row_mut(t);
                for (j, &coef) in w.iter().enumerate() {
                    let src = t as isize + j as isize - 1;
                    if coef == 0.0 || src < 0 || src >= t_len as isize {
                        continue;
                    }
                    row.scaled_add(coef, &statics.row(src as usize));
                }
            }
        }
        out
    }
}

/// Training targets for the regressor: statics with radius-1 dynamics.
pub fn dynamic_targets(statics: ArrayView2<f64>) -> Array2<f64> {
    WindowSet::default().apply(statics)
}

/// Per-column variances of `[static; delta; accel]` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalVariance {
    v: Vec<f64>,
}

impl GlobalVariance {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::BadConfig(
                "global variance entries must be positive and finite".into(),
            ));
        }
        Ok(Self { v })
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// Unbiased variance per column, pooled over every frame of every matrix.
pub fn global_variance<'a, I>(targets: I) -> Result<GlobalVariance>
where
    I: IntoIterator<Item = ArrayView2<'a, f64>>,
    I::IntoIter: Clone,
{
    let it = targets.into_iter();
    let mut dims = None;
    let mut n = 0usize;
    for m in it.clone() {
        match dims {
            None => dims = Some(m.ncols()),
            Some(d) if d != m.ncols() => {
                return Err(Error::DimMismatch {
                    expected: d,
                    found: m.ncols(),
                })
            }
            _ => {}
        }
        n += m.nrows();
    }
    if n < 2 {
        return Err(Error::TooFewFrames { need: 2, have: n });
    }
    let dims = dims.unwrap_or(0);
    let mut mean = vec![0.0; dims];
    for m in it.clone() {
        for row in m.rows() {
            mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
    }
    mean.iter_mut().for_each(|a| *a /= n as f64);
    let mut ss = vec![0.0; dims];
    for m in it {
        for row in m.rows() {
            for ((acc, v), mu) in ss.iter_mut().zip(row).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
    }
    let v = ss
        .into_iter()
        .map(|s| (s / (n - 1) as f64).max(VARIANCE_FLOOR))
        .collect();
    GlobalVariance::new(v)
}

/// Solves `A x = rhs` in place for symmetric positive definite `A` stored as
/// its lower band: `band[i][k] = A[i][i-k]`, `k = 0..=2`.
pub fn banded_cholesky_solve(band: &mut [[f64; 3]], rhs: &mut [f64]) -> Result<()> {
    let n = band.len();
    assert_eq!(n, rhs.len(), "band/rhs length mismatch");
    // Factorise in place: band becomes L with the same layout.
    for i in 0..n {
        for k in (0..=2.min(i)).rev() {
            let j = i - k;
            let mut sum = band[i][k];
            // Σ_m L[i][m] L[j][m] over m in [i-2, j).
            for m in i.saturating_sub(2)..j {
                sum -= band[i][i - m] * band[j][j - m];
            }
            if k == 0 {
                if !(sum > 0.0) {
                    return Err(Error::BadConfig(format!(
                        "normal equations not positive definite at row {i}"
                    )));
                }
                band[i][0] = sum.sqrt();
            } else {
                band[i][k] = sum / band[j][0];
            }
        }
    }
    for i in 0..n {
        let mut v = rhs[i];
        for k in 1..=2.min(i) {
            v -= band[i][k] * rhs[i - k];
        }
        rhs[i] = v / band[i][0];
    }
    for i in (0..n).rev() {
        let mut v = rhs[i];
        for k in 1..=2 {
            if i + k < n {
                v -= band[i + k][k] * rhs[i + k];
            }
        }
        rhs[i] = v / band[i][0];
    }
    Ok(())
}

/// Maximum-likelihood static trajectory from `T x 3D` means.
pub fn mlpg(means: ArrayView2<f64>, gv: &GlobalVariance, windows: &WindowSet) -> Result<Array2<f64>> {
    windows.validate()?;
    let (t_len, cols) = means.dim();
    if cols != gv.len() {
        return Err(Error::DimMismatch {
            expected: gv.len(),
            found: cols,
        });
    }
    if cols % 3 != 0 {
        return Err(Error::BadConfig(format!(
            "means width {cols} is not a multiple of 3"
        )));
    }
    if t_len == 0 {
        return Err(Error::EmptyInput);
    }
    let dims = cols / 3;
    let mut out = Array2::zeros((t_len, dims));
    let mut band = vec![[0.0; 3]; t_len];
    let mut rhs = vec![0.0; t_len];
    for d in 0..dims {
        band.iter_mut().for_each(|b| *b = [0.0; 3]);
        rhs.fill(0.0);
        for (k, w) in windows.windows.iter().enumerate() {
            let col = k * dims + d;
            let prec = 1.0 / gv.values()[col];
            for t in 0..t_len {
                let mu = means[[t, col]];
                for (ja, &ca) in w.iter().enumerate() {
                    let a = t as isize + ja as isize - 1;
                    if ca == 0.0 || a < 0 || a >= t_len as isize {
                        continue;
                    }
                    let a = a as usize;
                    rhs[a] += prec * ca * mu;
                    for (jb, &cb) in w.iter().enumerate().take(ja + 1) {
                        let b = t as isize + jb as isize - 1;
                        if cb == 0.0 || b < 0 {
                            continue;
                        }
                        band[a][a - b as usize] += prec * ca * cb;
                    }
                }
            }
        }
        banded_cholesky_solve(&mut band, &mut rhs)?;
        out.column_mut(d).assign(&ndarray::ArrayView1::from(&rhs[..]));
    }
    Ok(out)
}

/// Start frames of the windows the smoother evaluates: every full window, or
/// the whole sequence when it is shorter than one window.
pub fn window_starts(t_len: usize, window: usize) -> std::ops::Range<usize> {
    if t_len <= window {
        0..1
    } else {
        0..t_len - window + 1
    }
}

/// Number of windows covering each frame.
pub fn window_coverage(t_len: usize, window: usize) -> Vec<usize> {
    let mut cover = vec![0; t_len];
    for s in window_starts(t_len, window) {
        let end = (s + window).min(t_len);
        cover[s..end].iter_mut().for_each(|c| *c += 1);
    }
    cover
}

/// Runs `predict` on every window (stride 1) and averages the overlapping
/// outputs per frame.
pub fn sliding_window_smooth<F>(
    mut predict: F,
    input: ArrayView2<f64>,
    window: usize,
) -> Result<Array2<f64>>
where
    F: FnMut(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    let t_len = input.nrows();
    if t_len == 0 {
        return Err(Error::EmptyInput);
    }
    if window == 0 {
        return Err(Error::BadConfig("smoothing window must be positive".into()));
    }
    let mut acc: Option<Array2<f64>> = None;
    for s in window_starts(t_len, window) {
        let end = (s + window).min(t_len);
        let chunk = predict(input.slice(s![s..end, ..]))?;
        if chunk.nrows() != end - s {
            return Err(Error::LengthMismatch(format!(
                "predictor returned {} frames for a {}-frame window",
                chunk.nrows(),
                end - s
            )));
        }
        let acc = acc.get_or_insert_with(|| Array2::zeros((t_len, chunk.ncols())));
        if acc.ncols() != chunk.ncols() {
            return Err(Error::DimMismatch {
                expected: acc.ncols(),
                found: chunk.ncols(),
            });
        }
        let mut dst = acc.slice_mut(s![s..end, ..]);
        dst += &chunk;
    }
    let mut acc = acc.expect("at least one window");
    let cover = window_coverage(t_len, window);
    for (mut row, &c) in acc.axis_iter_mut(Axis(0)).zip(&cover) {
        row /= c as f64;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::RngStream;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn random(rng: &mut RngStream, t: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((t, d), || rng.uniform(-2.0, 2.0))
    }

    fn random_gv(rng: &mut RngStream, d: usize) -> GlobalVariance {
        GlobalVariance::new((0..d).map(|_| rng.uniform(0.05, 3.0)).collect()).unwrap()
    }

    /// Full `W` assembly and a dense solve of the normal equations.
    fn dense_mlpg(means: &Array2<f64>, gv: &GlobalVariance) -> Array2<f64> {
        let (t, cols) = means.dim();
        let dims = cols / 3;
        let ws = WindowSet::default();
        let mut out = Array2::zeros((t, dims));
        for d in 0..dims {
            let mut w = DMatrix::<f64>::zeros(3 * t, t);
            let mut prec = DVector::<f64>::zeros(3 * t);
            let mut mu = DVector::<f64>::zeros(3 * t);
            for (k, win) in ws.windows.iter().enumerate() {
                for f in 0..t {
                    let r = k * t + f;
                    prec[r] = 1.0 / gv.values()[k * dims + d];
                    mu[r] = means[[f, k * dims + d]];
                    for (j, c) in win.iter().enumerate() {
                        let src = f as isize + j as isize - 1;
                        if src >= 0 && (src as usize) < t {
                            w[(r, src as usize)] = *c;
                        }
                    }
                }
            }
            let p = DMatrix::from_diagonal(&prec);
            let a = w.transpose() * &p * &w;
            let b = w.transpose() * &p * &mu;
            let c = a.lu().solve(&b).unwrap();
            for f in 0..t {
                out[[f, d]] = c[f];
            }
        }
        out
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn banded_matches_dense_normal_equations() {
        let mut rng = RngStream::new(11);
        for t in 1..=12 {
            for _ in 0..8 {
                let means = random(&mut rng, t, 6);
                let gv = random_gv(&mut rng, 6);
                let ours = mlpg(means.view(), &gv, &WindowSet::default()).unwrap();
                assert!(max_abs_diff(&ours, &dense_mlpg(&means, &gv)) <= 1e-8, "T={t}");
            }
        }
    }

    #[test]
    fn huge_dynamic_variance_returns_statics() {
        let mut rng = RngStream::new(2);
        let means = random(&mut rng, 20, 9);
        let gv = GlobalVariance::new(vec![1.0, 0.5, 2.0, 1e12, 1e12, 1e12, 1e12, 1e12, 1e12])
            .unwrap();
        let out = mlpg(means.view(), &gv, &WindowSet::default()).unwrap();
        assert!(max_abs_diff(&out, &means.slice(s![.., ..3]).to_owned()) <= 1e-6);
    }

    #[test]
    fn constant_trajectory_is_a_fixed_point() {
        // With zero-padded windows a constant has nonzero dynamics at the two
        // ends; feeding those exact dynamics gives a zero-residual system.
        let mut rng = RngStream::new(3);
        for t in [1, 2, 5, 40] {
            let truth = Array2::from_shape_fn((t, 2), |(_, d)| [0.7, -3.0][d]);
            let means = dynamic_targets(truth.view());
            let gv = random_gv(&mut rng, 6);
            let out = mlpg(means.view(), &gv, &WindowSet::default()).unwrap();
            assert!(max_abs_diff(&out, &truth) <= 1e-9, "T={t}");
        }
        // Zero dynamics everywhere only pull the ends; the middle of a long
        // sequence stays at the constant.
        let mut means = Array2::zeros((200, 3));
        means.column_mut(0).fill(0.7);
        let gv = GlobalVariance::new(vec![0.1, 1.0, 1.0]).unwrap();
        let out = mlpg(means.view(), &gv, &WindowSet::default()).unwrap();
        assert!((out[[100, 0]] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn consistent_means_are_recovered_exactly() {
        let mut rng = RngStream::new(4);
        for t in 1..=30 {
            let truth = random(&mut rng, t, 4);
            let means = dynamic_targets(truth.view());
            let gv = random_gv(&mut rng, 12);
            let out = mlpg(means.view(), &gv, &WindowSet::default()).unwrap();
            assert!(max_abs_diff(&out, &truth) <= 1e-6, "T={t}");
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let gv = GlobalVariance::new(vec![1.0; 6]).unwrap();
        assert!(matches!(
            mlpg(Array2::zeros((3, 9)).view(), &gv, &WindowSet::default()),
            Err(Error::DimMismatch { .. })
        ));
        assert!(matches!(
            mlpg(Array2::zeros((0, 6)).view(), &gv, &WindowSet::default()),
            Err(Error::EmptyInput)
        ));
        assert!(GlobalVariance::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn global_variance_hand_cases() {
        let a = ndarray::array![[0.0], [2.0]];
        let gv = global_variance([a.view()]).unwrap();
        assert_eq!(gv.values(), &[2.0]);
        let c = Array2::from_elem((5, 3), 4.2);
        let gv = global_variance([c.view()]).unwrap();
        assert!(gv.values().iter().all(|&v| v == VARIANCE_FLOOR));
        let one = Array2::zeros((1, 3));
        assert!(matches!(
            global_variance([one.view()]),
            Err(Error::TooFewFrames { need: 2, have: 1 })
        ));
    }

    #[test]
    fn pooled_variance_equals_concatenated() {
        let mut rng = RngStream::new(5);
        let parts: Vec<_> = [3, 1, 7, 4].iter().map(|&t| random(&mut rng, t, 5)).collect();
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let pooled = global_variance(views.iter().cloned()).unwrap();
        let all = ndarray::concatenate(Axis(0), &views).unwrap();
        for (d, v) in pooled.values().iter().enumerate() {
            let col = all.column(d);
            let n = col.len() as f64;
            let m = col.sum() / n;
            let brute = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((v - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn coverage_matches_window_enumeration() {
        for t in 1..60 {
            let cover = window_coverage(t, 15);
            for (f, &c) in cover.iter().enumerate() {
                let count = window_starts(t, 15)
                    .filter(|&s| s <= f && f < (s + 15).min(t))
                    .count();
                assert_eq!(c, count);
                if t >= 29 {
                    assert_eq!(c, (f + 1).min(15).min(t - f));
                }
            }
        }
    }

    #[test]
    fn constant_predictor_gives_constant() {
        let x = Array2::<f64>::zeros((40, 3));
        let out = sliding_window_smooth(
            |chunk| Ok(Array2::from_elem((chunk.nrows(), 2), 1.25)),
            x.view(),
            SMOOTH_WINDOW,
        )
        .unwrap();
        assert!(out.iter().all(|&v| (v - 1.25).abs() < 1e-15));
        let short = Array2::<f64>::zeros((4, 3));
        let out = sliding_window_smooth(|c| Ok(c.to_owned()), short.view(), 15).unwrap();
        assert_eq!(out.dim(), (4, 3));
    }

    #[test]
    fn identity_predictor_is_identity() {
        let mut rng = RngStream::new(6);
        let x = random(&mut rng, 33, 4);
        let out = sliding_window_smooth(|c| Ok(c.to_owned()), x.view(), 15).unwrap();
        assert!(max_abs_diff(&out, &x) < 1e-12);
    }

    proptest! {
        #[test]
        fn permuting_dims_permutes_output(seed in any::<u64>(), t in 1usize..25) {
            let mut rng = RngStream::new(seed);
            let means = random(&mut rng, t, 9);
            let gv = random_gv(&mut rng, 9);
            let out = mlpg(means.view(), &gv, &WindowSet::default()).unwrap();
            let perm = [2usize, 0, 1];
            let mut pm = Array2::zeros((t, 9));
            let mut pv = vec![0.0; 9];
            for k in 0..3 {
                for (new, &old) in perm.iter().enumerate() {
                    pm.column_mut(k * 3 + new).assign(&means.column(k * 3 + old));
                    pv[k * 3 + new] = gv.values()[k * 3 + old];
                }
            }
            let pout = mlpg(pm.view(), &GlobalVariance::new(pv).unwrap(), &WindowSet::default()).unwrap();
            for (new, &old) in perm.iter().enumerate() {
                for f in 0..t {
                    prop_assert_eq!(pout[[f, new]].to_bits(), out[[f, old]].to_bits());
                }
            }
        }
    }

    #[test]
    fn mlpg_smooths_noisy_statics() {
        let mut rng = RngStream::new(8);
        for _ in 0..20 {
            let t = 30 + rng.below(100);
            let truth = Array2::from_shape_fn((t, 2), |(f, d)| ((f as f64) * 0.1 + d as f64).sin());
            let mut means = dynamic_targets(truth.view());
            means
                .slice_mut(s![.., ..2])
                .mapv_inplace(|v| v + rng.uniform(-0.3, 0.3));
            let gv = GlobalVariance::new(vec![0.3, 0.3, 0.01, 0.01, 0.01, 0.01]).unwrap();
            let out = mlpg(means.view(), &gv, &WindowSet::default()).unwrap();
            let rough = |m: ArrayView2<f64>| {
                let mut s = 0.0;
                for f in 1..m.nrows() {
                    for d in 0..m.ncols() {
                        s += (m[[f, d]] - m[[f - 1, d]]).abs();
                    }
                }
                s
            };
            assert!(rough(out.view()) <= rough(means.slice(s![.., ..2])));
        }
    }
}
