//! Hand-differentiated network kernels shared by the posteriorgram extractor
//! and the animation-parameter regressor.
//!
//! Matrices are `ndarray` arrays in f64. Sequences are `(T, B, D)` arrays:
//! time, batch, feature. Every parameter array is kept in standard layout so
//! optimizers can treat it as a flat slice.

mod adam;
pub mod checkpoint;
mod conv;
mod dense;
mod gradcheck;
mod init;
mod loss;
mod lstm;
mod rng;

pub use adam::{adam_step, clip_global_norm, Adam, AdamState};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use conv::{conv1d_backward, conv1d_forward, im2col, Conv1d, ConvGrads};
pub use dense::{dense_backward, dense_forward, Activation, Dense, DenseGrads};
pub use gradcheck::{grad_check, numeric_gradient, relative_error};
pub use init::{glorot_uniform, uniform_fill};
pub use loss::{mse_loss, softmax_rows, softmax_xent};
pub use lstm::{
    blstm_backward, blstm_forward, lstm_backward_seq, lstm_forward_seq, lstm_step, BlstmCache,
    BlstmLayer, BlstmMasks, LstmCache, LstmGrads, LstmParams, ZoneoutMasks,
};
pub use rng::{mix_seed, RngStream};

/// Anything whose trainable parameters can be visited as flat slices in a
/// fixed order. Gradients use the same type, so parameter `i` and gradient
/// `i` always line up.
pub trait Parameterized {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.params().concat()
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for p in self.params_mut() {
            p.copy_from_slice(&flat[off..off + p.len()]);
            off += p.len();
        }
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    fn zero(&mut self) {
        for p in self.params_mut() {
            p.fill(0.0);
        }
    }

    /// `self += other`, parameter-wise.
    fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

pub(crate) fn slice(a: &ndarray::ArrayBase<impl ndarray::Data<Elem = f64>, impl ndarray::Dimension>) -> &[f64] {
    a.as_slice().expect("parameter arrays are contiguous")
}

pub(crate) fn slice_mut(
    a: &mut ndarray::ArrayBase<impl ndarray::DataMut<Elem = f64>, impl ndarray::Dimension>,
) -> &mut [f64] {
    a.as_slice_mut().expect("parameter arrays are contiguous")
}

/// Quantize every parameter to f32 precision, matching what a checkpoint
/// round trip produces.
pub fn round_to_f32<P: Parameterized + ?Sized>(model: &mut P) {
    for p in model.params_mut() {
        p.iter_mut().for_each(|v| *v = f64::from(*v as f32));
    }
}
