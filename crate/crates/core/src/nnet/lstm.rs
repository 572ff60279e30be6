//! LSTM with zoneout, batched over sequences.
//!
//! Gate order in every `4H` block is input, forget, cell candidate, output.
//! Zoneout mixes the fresh state with the previous one:
//! `c_t = k_c ⊙ c_{t-1} + (1 - k_c) ⊙ c̃_t` and likewise for `h`, where the
//! keep weights `k` are Bernoulli draws during training and the constant
//! zoneout rate at inference.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::{slice, slice_mut, Parameterized, RngStream};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_x: Array2<f64>,
    pub w_h: Array2<f64>,
    pub b: Array1<f64>,
    pub zoneout_c: f64,
    pub zoneout_h: f64,
}

/// Gradients share the parameter layout; zoneout rates are carried along
/// unused.
pub type LstmGrads = LstmParams;

impl LstmParams {
    pub fn zeros(inputs: usize, hidden: usize, zoneout_c: f64, zoneout_h: f64) -> Self {
        Self {
            w_x: Array2::zeros((4 * hidden, inputs)),
            w_h: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
            zoneout_c,
            zoneout_h,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.ncols()
    }

    pub fn inputs(&self) -> usize {
        self.w_x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        if self.w_x.nrows() != 4 * h || self.w_h.nrows() != 4 * h || self.b.len() != 4 * h {
            return Err(Error::ShapeMismatch(format!(
                "lstm: W_x {:?}, W_h {:?}, b {}",
                self.w_x.shape(),
                self.w_h.shape(),
                self.b.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.zoneout_c) || !(0.0..=1.0).contains(&self.zoneout_h) {
            return Err(Error::BadConfig(format!(
                "zoneout rates ({}, {}) outside [0, 1]",
                self.zoneout_c, self.zoneout_h
            )));
        }
        Ok(())
    }
}

impl Parameterized for LstmParams {
    fn params(&self) -> Vec<&[f64]> {
        vec![slice(&self.w_x), slice(&self.w_h), slice(&self.b)]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice_mut(&mut self.w_x),
            slice_mut(&mut self.w_h),
            slice_mut(&mut self.b),
        ]
    }
}

/// Per-step keep weights for one direction, shape `(T, B, H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneoutMasks {
    pub c: Array3<f64>,
    pub h: Array3<f64>,
}

impl ZoneoutMasks {
    /// Bernoulli keep masks for training.
    pub fn sample(rng: &mut RngStream, dims: (usize, usize, usize), rate_c: f64, rate_h: f64) -> Self {
        let c = Array3::from_shape_simple_fn(dims, || f64::from(u8::from(rng.bernoulli(rate_c))));
        let h = Array3::from_shape_simple_fn(dims, || f64::from(u8::from(rng.bernoulli(rate_h))));
        Self { c, h }
    }

    /// The deterministic expectation used at inference.
    pub fn expectation(dims: (usize, usize, usize), rate_c: f64, rate_h: f64) -> Self {
        Self {
            c: Array3::from_elem(dims, rate_c),
            h: Array3::from_elem(dims, rate_h),
        }
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self::expectation(dims, 0.0, 0.0)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activates gates in place and returns `(c̃, tanh c̃, h, c)`.
#[allow(clippy::type_complexity)]
fn cell(
    gates: &mut [f64],
    c_prev: &[f64],
    h_prev: &[f64],
    keep_c: &[f64],
    keep_h: &[f64],
    batch: usize,
    hidden: usize,
    c_tilde: &mut [f64],
    tanh_ct: &mut [f64],
    h_out: &mut [f64],
    c_out: &mut [f64],
) {
    for b in 0..batch {
        let g = &mut gates[b * 4 * hidden..(b + 1) * 4 * hidden];
        for u in 0..hidden {
            let k = b * hidden + u;
            let i = sigmoid(g[u]);
            let f = sigmoid(g[hidden + u]);
            let cand = g[2 * hidden + u].tanh();
            let o = sigmoid(g[3 * hidden + u]);
            g[u] = i;
            g[hidden + u] = f;
            g[2 * hidden + u] = cand;
            g[3 * hidden + u] = o;
            let ct = f * c_prev[k] + i * cand;
            let tc = ct.tanh();
            c_tilde[k] = ct;
            tanh_ct[k] = tc;
            c_out[k] = keep_c[k] * c_prev[k] + (1.0 - keep_c[k]) * ct;
            h_out[k] = keep_h[k] * h_prev[k] + (1.0 - keep_h[k]) * o * tc;
        }
    }
}

/// One step for a batch: `x_t: B x I`, states `B x H`. With `keep = None` the
/// inference blend at the parameters' zoneout rates is used.
pub fn lstm_step(
    p: &LstmParams,
    x_t: ArrayView2<f64>,
    h_prev: ArrayView2<f64>,
    c_prev: ArrayView2<f64>,
    keep: Option<(ArrayView2<f64>, ArrayView2<f64>)>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    p.validate()?;
    let (batch, hidden) = (x_t.nrows(), p.hidden());
    if x_t.ncols() != p.inputs()
        || h_prev.dim() != (batch, hidden)
        || c_prev.dim() != (batch, hidden)
        || keep.is_some_and(|(c, h)| c.dim() != (batch, hidden) || h.dim() != (batch, hidden))
    {
        return Err(Error::ShapeMismatch(format!(
            "lstm step: x {:?}, h {:?}, c {:?}",
            x_t.shape(),
            h_prev.shape(),
            c_prev.shape()
        )));
    }
    let (keep_c, keep_h) = match keep {
        Some((c, h)) => (c.as_standard_layout().into_owned(), h.as_standard_layout().into_owned()),
        None => (
            Array2::from_elem((batch, hidden), p.zoneout_c),
            Array2::from_elem((batch, hidden), p.zoneout_h),
        ),
    };
    let mut gates = x_t.dot(&p.w_x.t()) + h_prev.dot(&p.w_h.t());
    gates += &p.b;
    let (hp, cp) = (h_prev.as_standard_layout(), c_prev.as_standard_layout());
    let mut scratch = Array2::zeros((batch, hidden));
    let mut scratch2 = Array2::zeros((batch, hidden));
    let mut h = Array2::zeros((batch, hidden));
    let mut c = Array2::zeros((batch, hidden));
    cell(
        gates.as_slice_mut().unwrap(),
        cp.as_slice().unwrap(),
        hp.as_slice().unwrap(),
        keep_c.as_slice().unwrap(),
        keep_h.as_slice().unwrap(),
        batch,
        hidden,
        scratch.as_slice_mut().unwrap(),
        scratch2.as_slice_mut().unwrap(),
        h.as_slice_mut().unwrap(),
        c.as_slice_mut().unwrap(),
    );
    Ok((h, c))
}

/// Everything a backward pass over one direction needs, indexed by frame.
#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Array3<f64>,
    gates: Array3<f64>,
    tanh_ct: Array3<f64>,
    h_prev: Array3<f64>,
    c_prev: Array3<f64>,
    keep_c: Array3<f64>,
    keep_h: Array3<f64>,
    reverse: bool,
}

fn check_seq(p: &LstmParams, x: &ArrayView3<f64>, masks: Option<&ZoneoutMasks>) -> Result<()> {
    p.validate()?;
    let (t, b, i) = x.dim();
    if i != p.inputs() {
        return Err(Error::ShapeMismatch(format!(
            "lstm: input width {i}, expected {}",
            p.inputs()
        )));
    }
    if let Some(m) = masks {
        let want = (t, b, p.hidden());
        if m.c.dim() != want || m.h.dim() != want {
            return Err(Error::ShapeMismatch(format!(
                "zoneout masks {:?}, expected {want:?}",
                m.c.shape()
            )));
        }
    }
    Ok(())
}

/// Runs one direction over `x: (T, B, I)` from zero initial state. Output
/// `(T, B, H)` is indexed by frame regardless of direction.
pub fn lstm_forward_seq(
    p: &LstmParams,
    x: ArrayView3<f64>,
    reverse: bool,
    masks: Option<&ZoneoutMasks>,
) -> Result<(Array3<f64>, LstmCache)> {
    check_seq(p, &x, masks)?;
    let (t_len, batch, inputs) = x.dim();
    let hidden = p.hidden();
    let x = x.as_standard_layout().into_owned();
    let flat = x.view().into_shape_with_order((t_len * batch, inputs)).unwrap();
    let mut gates = flat.dot(&p.w_x.t());
    gates += &p.b;
    let mut gates = gates
        .into_shape_with_order((t_len, batch, 4 * hidden))
        .unwrap();
    let masks = match masks {
        Some(m) => m.clone(),
        None => ZoneoutMasks::expectation((t_len, batch, hidden), p.zoneout_c, p.zoneout_h),
    };
    let dims = (t_len, batch, hidden);
    let mut tanh_ct = Array3::zeros(dims);
    let mut h_prev = Array3::zeros(dims);
    let mut c_prev = Array3::zeros(dims);
    let mut out = Array3::zeros(dims);
    let mut c_seq = Array3::zeros(dims);
    let mut scratch = Array2::zeros((batch, hidden));
    let mut h = Array2::<f64>::zeros((batch, hidden));
    let mut c = Array2::<f64>::zeros((batch, hidden));
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        h_prev.index_axis_mut(Axis(0), t).assign(&h);
        c_prev.index_axis_mut(Axis(0), t).assign(&c);
        let mut g = gates.index_axis_mut(Axis(0), t);
        if step > 0 {
            ndarray::linalg::general_mat_mul(1.0, &h, &p.w_h.t(), 1.0, &mut g);
        }
        let mut tc = tanh_ct.index_axis_mut(Axis(0), t);
        let mut ho = out.index_axis_mut(Axis(0), t);
        let mut co = c_seq.index_axis_mut(Axis(0), t);
        cell(
            g.as_slice_mut().unwrap(),
            c.as_slice().unwrap(),
            h.as_slice().unwrap(),
            masks.c.index_axis(Axis(0), t).as_slice().unwrap(),
            masks.h.index_axis(Axis(0), t).as_slice().unwrap(),
            batch,
            hidden,
            scratch.as_slice_mut().unwrap(),
            tc.as_slice_mut().unwrap(),
            ho.as_slice_mut().unwrap(),
            co.as_slice_mut().unwrap(),
        );
        h.assign(&ho);
        c.assign(&co);
    }
    let cache = LstmCache {
        x,
        gates,
        tanh_ct,
        h_prev,
        c_prev,
        keep_c: masks.c,
        keep_h: masks.h,
        reverse,
    };
    Ok((out, cache))
}

/// Backpropagation through time for one direction. `dh_out` is the gradient
/// of the loss with respect to the forward output.
pub fn lstm_backward_seq(
    p: &LstmParams,
    cache: &LstmCache,
    dh_out: ArrayView3<f64>,
) -> Result<(LstmGrads, Array3<f64>)> {
    let (t_len, batch, inputs) = cache.x.dim();
    let hidden = p.hidden();
    if dh_out.dim() != (t_len, batch, hidden) {
        return Err(Error::ShapeMismatch(format!(
            "lstm backward: dh {:?}, expected ({t_len}, {batch}, {hidden})",
            dh_out.shape()
        )));
    }
    let mut da = Array3::<f64>::zeros((t_len, batch, 4 * hidden));
    let mut dh_next = Array2::<f64>::zeros((batch, hidden));
    let mut dc_next = Array2::<f64>::zeros((batch, hidden));
    for step in (0..t_len).rev() {
        let t = if cache.reverse { t_len - 1 - step } else { step };
        let g = cache.gates.index_axis(Axis(0), t);
        let g = g.as_slice().unwrap();
        let tc = cache.tanh_ct.index_axis(Axis(0), t);
        let tc = tc.as_slice().unwrap();
        let cp = cache.c_prev.index_axis(Axis(0), t);
        let cp = cp.as_slice().unwrap();
        let kc = cache.keep_c.index_axis(Axis(0), t);
        let kc = kc.as_slice().unwrap();
        let kh = cache.keep_h.index_axis(Axis(0), t);
        let kh = kh.as_slice().unwrap();
        let dho = dh_out.index_axis(Axis(0), t);
        let mut da_t = da.index_axis_mut(Axis(0), t);
        let da_s = da_t.as_slice_mut().unwrap();
        let dhn = dh_next.as_slice_mut().unwrap();
        let dcn = dc_next.as_slice_mut().unwrap();
        for b in 0..batch {
            let go = b * 4 * hidden;
            for u in 0..hidden {
                let k = b * hidden + u;
                let (i, f, cand, o) = (
                    g[go + u],
                    g[go + hidden + u],
                    g[go + 2 * hidden + u],
                    g[go + 3 * hidden + u],
                );
                let dh = dho[[b, u]] + dhn[k];
                let dc = dcn[k];
                let dh_fresh = (1.0 - kh[k]) * dh;
                let dc_fresh = (1.0 - kc[k]) * dc + dh_fresh * o * (1.0 - tc[k] * tc[k]);
                da_s[go + u] = dc_fresh * cand * i * (1.0 - i);
                da_s[go + hidden + u] = dc_fresh * cp[k] * f * (1.0 - f);
                da_s[go + 2 * hidden + u] = dc_fresh * i * (1.0 - cand * cand);
                da_s[go + 3 * hidden + u] = dh_fresh * tc[k] * o * (1.0 - o);
                dcn[k] = kc[k] * dc + dc_fresh * f;
                dhn[k] = kh[k] * dh;
            }
        }
        ndarray::linalg::general_mat_mul(1.0, &da_t, &p.w_h, 1.0, &mut dh_next);
    }
    let da_flat = da
        .view()
        .into_shape_with_order((t_len * batch, 4 * hidden))
        .unwrap();
    let x_flat = cache
        .x
        .view()
        .into_shape_with_order((t_len * batch, inputs))
        .unwrap();
    let hp_flat = cache
        .h_prev
        .view()
        .into_shape_with_order((t_len * batch, hidden))
        .unwrap();
    let grads = LstmParams {
        w_x: da_flat.t().dot(&x_flat),
        w_h: da_flat.t().dot(&hp_flat),
        b: da_flat.sum_axis(Axis(0)),
        zoneout_c: p.zoneout_c,
        zoneout_h: p.zoneout_h,
    };
    let dx = da_flat
        .dot(&p.w_x)
        .into_shape_with_order((t_len, batch, inputs))
        .unwrap();
    Ok((grads, dx))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlstmLayer {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BlstmLayer {
    pub fn zeros(inputs: usize, hidden: usize, zoneout: f64) -> Self {
        Self {
            fwd: LstmParams::zeros(inputs, hidden, zoneout, zoneout),
            bwd: LstmParams::zeros(inputs, hidden, zoneout, zoneout),
        }
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }
}

impl Parameterized for BlstmLayer {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = self.fwd.params();
        v.extend(self.bwd.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.fwd.params_mut();
        v.extend(self.bwd.params_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlstmMasks {
    pub fwd: ZoneoutMasks,
    pub bwd: ZoneoutMasks,
}

impl BlstmMasks {
    pub fn sample(rng: &mut RngStream, layer: &BlstmLayer, t_len: usize, batch: usize) -> Self {
        let dims = (t_len, batch, layer.hidden());
        Self {
            fwd: ZoneoutMasks::sample(rng, dims, layer.fwd.zoneout_c, layer.fwd.zoneout_h),
            bwd: ZoneoutMasks::sample(rng, dims, layer.bwd.zoneout_c, layer.bwd.zoneout_h),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
}

/// Output `(T, B, 2H)`: forward states in the first `H` columns, backward
/// states in the last `H`.
pub fn blstm_forward(
    fwd: &LstmParams,
    bwd: &LstmParams,
    x: ArrayView3<f64>,
    masks: Option<&BlstmMasks>,
) -> Result<(Array3<f64>, BlstmCache)> {
    if x.shape()[0] == 0 {
        return Err(Error::EmptyInput);
    }
    let (hf, cf) = lstm_forward_seq(fwd, x, false, masks.map(|m| &m.fwd))?;
    let (hb, cb) = lstm_forward_seq(bwd, x, true, masks.map(|m| &m.bwd))?;
    let out = ndarray::concatenate(Axis(2), &[hf.view(), hb.view()]).unwrap();
    Ok((out, BlstmCache { fwd: cf, bwd: cb }))
}

pub fn blstm_backward(
    fwd: &LstmParams,
    bwd: &LstmParams,
    cache: &BlstmCache,
    dy: ArrayView3<f64>,
) -> Result<(LstmGrads, LstmGrads, Array3<f64>)> {
    let h = fwd.hidden();
    if dy.shape()[2] != h + bwd.hidden() {
        return Err(Error::ShapeMismatch(format!(
            "blstm backward: dy width {}, expected {}",
            dy.shape()[2],
            h + bwd.hidden()
        )));
    }
    let (gf, mut dx) = lstm_backward_seq(fwd, &cache.fwd, dy.slice(s![.., .., ..h]))?;
    let (gb, dxb) = lstm_backward_seq(bwd, &cache.bwd, dy.slice(s![.., .., h..]))?;
    dx += &dxb;
    Ok((gf, gb, dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{grad_check, RngStream};

    fn random_params(rng: &mut RngStream, i: usize, h: usize, z: f64) -> LstmParams {
        let mut p = LstmParams::zeros(i, h, z, z);
        for s in p.params_mut() {
            s.iter_mut().for_each(|v| *v = rng.uniform(-0.8, 0.8));
        }
        p
    }

    fn random3(rng: &mut RngStream, d: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_simple_fn(d, || rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn zero_rate_inference_equals_plain_lstm() {
        let mut rng = RngStream::new(1);
        let p = random_params(&mut rng, 3, 4, 0.0);
        let x = Array2::from_shape_simple_fn((2, 3), || rng.uniform(-1.0, 1.0));
        let h0 = Array2::from_shape_simple_fn((2, 4), || rng.uniform(-1.0, 1.0));
        let c0 = Array2::from_shape_simple_fn((2, 4), || rng.uniform(-1.0, 1.0));
        let zeros = Array2::zeros((2, 4));
        let inf = lstm_step(&p, x.view(), h0.view(), c0.view(), None).unwrap();
        let masked =
            lstm_step(&p, x.view(), h0.view(), c0.view(), Some((zeros.view(), zeros.view())))
                .unwrap();
        assert_eq!(inf, masked);
        // Textbook LSTM, written out independently.
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for b in 0..2 {
            for u in 0..4 {
                let pre = |gate: usize| {
                    let r = gate * 4 + u;
                    p.b[r]
                        + (0..3).map(|j| p.w_x[[r, j]] * x[[b, j]]).sum::<f64>()
                        + (0..4).map(|j| p.w_h[[r, j]] * h0[[b, j]]).sum::<f64>()
                };
                let c = sig(pre(1)) * c0[[b, u]] + sig(pre(0)) * pre(2).tanh();
                let h = sig(pre(3)) * c.tanh();
                assert!((inf.1[[b, u]] - c).abs() < 1e-12);
                assert!((inf.0[[b, u]] - h).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_zoneout_freezes_state() {
        let mut rng = RngStream::new(2);
        let p = random_params(&mut rng, 3, 4, 1.0);
        let x = Array2::from_shape_simple_fn((2, 3), || rng.uniform(-5.0, 5.0));
        let h0 = Array2::from_shape_simple_fn((2, 4), || rng.uniform(-1.0, 1.0));
        let c0 = Array2::from_shape_simple_fn((2, 4), || rng.uniform(-1.0, 1.0));
        let (h, c) = lstm_step(&p, x.view(), h0.view(), c0.view(), None).unwrap();
        assert_eq!(h, h0);
        assert_eq!(c, c0);
        let ones = Array2::ones((2, 4));
        let (h, c) =
            lstm_step(&p, x.view(), h0.view(), c0.view(), Some((ones.view(), ones.view()))).unwrap();
        assert_eq!((h, c), (h0, c0));
    }

    #[test]
    fn step_rejects_bad_shapes() {
        let p = LstmParams::zeros(3, 4, 0.1, 0.1);
        let bad = Array2::zeros((1, 5));
        let s = Array2::zeros((1, 4));
        assert!(matches!(
            lstm_step(&p, bad.view(), s.view(), s.view(), None),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn sequence_forward_matches_repeated_steps() {
        let mut rng = RngStream::new(3);
        let p = random_params(&mut rng, 3, 5, 0.1);
        let x = random3(&mut rng, (6, 2, 3));
        let masks = ZoneoutMasks::sample(&mut rng, (6, 2, 5), 0.3, 0.3);
        for reverse in [false, true] {
            let (out, _) = lstm_forward_seq(&p, x.view(), reverse, Some(&masks)).unwrap();
            let mut h = Array2::zeros((2, 5));
            let mut c = Array2::zeros((2, 5));
            for step in 0..6 {
                let t = if reverse { 5 - step } else { step };
                let (hn, cn) = lstm_step(
                    &p,
                    x.index_axis(Axis(0), t),
                    h.view(),
                    c.view(),
                    Some((masks.c.index_axis(Axis(0), t), masks.h.index_axis(Axis(0), t))),
                )
                .unwrap();
                h = hn;
                c = cn;
                for (a, b) in out.index_axis(Axis(0), t).iter().zip(h.iter()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn bptt_matches_finite_differences_with_frozen_masks() {
        let (t, b, i, h) = (7, 1, 3, 5);
        for case in 0..3u64 {
            let mut rng = RngStream::new(40 + case);
            let p = random_params(&mut rng, i, h, 0.1);
            let x = random3(&mut rng, (t, b, i));
            let r = random3(&mut rng, (t, b, h));
            let masks = ZoneoutMasks::sample(&mut rng, (t, b, h), 0.3, 0.3);
            let reverse = case == 1;
            let loss = |p: &LstmParams, x: &Array3<f64>| {
                (lstm_forward_seq(p, x.view(), reverse, Some(&masks)).unwrap().0 * &r).sum()
            };
            let (_, cache) = lstm_forward_seq(&p, x.view(), reverse, Some(&masks)).unwrap();
            let (g, dx) = lstm_backward_seq(&p, &cache, r.view()).unwrap();
            let err = grad_check(
                |flat| {
                    let mut q = p.clone();
                    q.set_flat(flat);
                    loss(&q, &x)
                },
                &p.flat(),
                &g.flat(),
                1e-5,
            );
            assert!(err <= 1e-4, "params: {err}");
            let err = grad_check(
                |flat| loss(&p, &Array3::from_shape_vec((t, b, i), flat.to_vec()).unwrap()),
                x.as_slice().unwrap(),
                dx.as_slice().unwrap(),
                1e-5,
            );
            assert!(err <= 1e-4, "input: {err}");
        }
    }

    #[test]
    fn blstm_single_frame_and_time_reversal_symmetry() {
        let mut rng = RngStream::new(5);
        let p = random_params(&mut rng, 3, 4, 0.1);
        let x1 = random3(&mut rng, (1, 1, 3));
        let (y1, _) = blstm_forward(&p, &p, x1.view(), None).unwrap();
        assert_eq!(y1.shape(), &[1, 1, 8]);
        assert_eq!(y1.slice(s![.., .., ..4]), y1.slice(s![.., .., 4..]));

        let x = random3(&mut rng, (9, 2, 3));
        let mut xr = x.clone();
        xr.invert_axis(Axis(0));
        let (y, _) = blstm_forward(&p, &p, x.view(), None).unwrap();
        let (mut yr, _) = blstm_forward(&p, &p, xr.view(), None).unwrap();
        yr.invert_axis(Axis(0));
        assert_eq!(y.slice(s![.., .., ..4]), yr.slice(s![.., .., 4..]));
        assert_eq!(y.slice(s![.., .., 4..]), yr.slice(s![.., .., ..4]));
    }

    #[test]
    fn two_stacked_blstm_layers_gradient_check() {
        let (t, b, i, h) = (5, 2, 3, 4);
        let mut rng = RngStream::new(77);
        let l1 = BlstmLayer {
            fwd: random_params(&mut rng, i, h, 0.1),
            bwd: random_params(&mut rng, i, h, 0.1),
        };
        let l2 = BlstmLayer {
            fwd: random_params(&mut rng, 2 * h, h, 0.1),
            bwd: random_params(&mut rng, 2 * h, h, 0.1),
        };
        let x = random3(&mut rng, (t, b, i));
        let r = random3(&mut rng, (t, b, 2 * h));
        let m1 = BlstmMasks::sample(&mut rng, &l1, t, b);
        let m2 = BlstmMasks::sample(&mut rng, &l2, t, b);
        let run = |l1: &BlstmLayer, l2: &BlstmLayer, x: &Array3<f64>| {
            let (y1, c1) = blstm_forward(&l1.fwd, &l1.bwd, x.view(), Some(&m1)).unwrap();
            let (y2, c2) = blstm_forward(&l2.fwd, &l2.bwd, y1.view(), Some(&m2)).unwrap();
            ((&y2 * &r).sum(), c1, c2)
        };
        let (_, c1, c2) = run(&l1, &l2, &x);
        let (g2f, g2b, dy1) = blstm_backward(&l2.fwd, &l2.bwd, &c2, r.view()).unwrap();
        let (g1f, g1b, dx) = blstm_backward(&l1.fwd, &l1.bwd, &c1, dy1.view()).unwrap();
        let analytic = [g1f.flat(), g1b.flat(), g2f.flat(), g2b.flat()].concat();
        let params = [l1.flat(), l2.flat()].concat();
        let n1 = l1.num_params();
        let err = grad_check(
            |flat| {
                let (mut a, mut b) = (l1.clone(), l2.clone());
                a.set_flat(&flat[..n1]);
                b.set_flat(&flat[n1..]);
                run(&a, &b, &x).0
            },
            &params,
            &analytic,
            1e-5,
        );
        assert!(err <= 1e-4, "params: {err}");
        let err = grad_check(
            |flat| run(&l1, &l2, &Array3::from_shape_vec((t, b, i), flat.to_vec()).unwrap()).0,
            x.as_slice().unwrap(),
            dx.as_slice().unwrap(),
            1e-5,
        );
        assert!(err <= 1e-4, "input: {err}");
    }
}
