use std::f64::consts::PI;

use ndarray::Array2;

use crate::dsp::{dynamic_features, log_mel, FeatureKind, FeatureMatrix, FrameConfig, Waveform};
use crate::error::{Error, Result};
use crate::fap_predictor::FapSequence;

/// Cepstra kept by the baseline front end.
pub const MFCC_CEPSTRA: usize = 13;
/// Cepstra with Δ and ΔΔ.
pub const MFCC_DIM: usize = 3 * MFCC_CEPSTRA;

fn same_shape(pred: &FapSequence, gt: &FapSequence) -> Result<()> {
    if pred.data().dim() != gt.data().dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.data().dim(),
            gt.data().dim()
        )));
    }
    Ok(())
}

/// Mean of squared differences over every frame and dimension.
pub fn mse(pred: &FapSequence, gt: &FapSequence) -> Result<f64> {
    same_shape(pred, gt)?;
    let n = pred.data().len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(sum_squared_error(pred, gt) / n as f64)
}

pub(crate) fn sum_squared_error(pred: &FapSequence, gt: &FapSequence) -> f64 {
    pred.data()
        .iter()
        .zip(gt.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Pearson correlation of each dimension over time. A dimension that is
/// constant in either sequence scores 1 if the two agree exactly, else 0.
pub fn pearson_per_dim(pred: &FapSequence, gt: &FapSequence) -> Result<Vec<f64>> {
    same_shape(pred, gt)?;
    let t = pred.frames();
    if t == 0 {
        return Err(Error::EmptyInput);
    }
    let (p, g) = (pred.data(), gt.data());
    Ok((0..p.ncols())
        .map(|d| {
            let (x, y) = (p.column(d), g.column(d));
            let mx = x.sum() / t as f64;
            let my = y.sum() / t as f64;
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for (a, b) in x.iter().zip(y.iter()) {
                sxy += (a - mx) * (b - my);
                sxx += (a - mx) * (a - mx);
                syy += (b - my) * (b - my);
            }
            if sxx == 0.0 || syy == 0.0 {
                f64::from(u8::from(x == y))
            } else {
                (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
            }
        })
        .collect())
}

pub fn pearson_mean(pred: &FapSequence, gt: &FapSequence) -> Result<f64> {
    let r = pearson_per_dim(pred, gt)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// First `n_out` coefficients of the orthonormal DCT-II.
pub fn dct_ii(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Baseline front end: 13 cepstra of the log-mel bins plus Δ and ΔΔ.
pub fn mfcc_baseline_features(wave: &Waveform, cfg: &FrameConfig) -> Result<FeatureMatrix> {
    mfcc_from_log_mel(&log_mel(wave, cfg)?)
}

pub fn mfcc_from_log_mel(mel: &FeatureMatrix) -> Result<FeatureMatrix> {
    if mel.cols() < MFCC_CEPSTRA {
        return Err(Error::DimMismatch {
            expected: MFCC_CEPSTRA,
            found: mel.cols(),
        });
    }
    let basis = Array2::from_shape_fn((mel.cols(), MFCC_CEPSTRA), |(i, k)| {
        let mut e = vec![0.0; mel.cols()];
        e[i] = 1.0;
        dct_ii(&e, k + 1)[k]
    });
    let c = mel.data().dot(&basis);
    let ceps = FeatureMatrix::new(c, mel.frame_shift_ms(), FeatureKind::Generic)?;
    dynamic_features(&ceps)
}
