use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{check_input, hamming, FeatureKind, FeatureMatrix, FrameConfig, Waveform};
use crate::error::Result;

/// Upper edge of the filterbank: Nyquist at 16 kHz.
const MEL_HIGH_HZ: f64 = 8000.0;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters (peak 1) on FFT bin frequencies, `n_mels x (n_fft/2+1)`,
/// with edges equally spaced on the mel scale over 0..8000 Hz.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let lo = hz_to_mel(0.0);
    let hi = hz_to_mel(MEL_HIGH_HZ);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    Array2::from_shape_fn((n_mels, n_bins), |(m, k)| {
        let f = k as f64 * sample_rate / n_fft as f64;
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        if f > left && f <= center {
            (f - left) / (center - left)
        } else if f > center && f < right {
            (right - f) / (right - center)
        } else {
            0.0
        }
    })
}

/// Reusable log-mel/energy extractor holding the FFT plan and filterbank.
pub struct MelExtractor {
    cfg: FrameConfig,
    window: Vec<f64>,
    filters: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(cfg: &FrameConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self {
            window: hamming(cfg.frame_len_samples()),
            filters: mel_filterbank(cfg.n_mels, cfg.n_fft, f64::from(super::SAMPLE_RATE_HZ)),
            fft,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &FrameConfig {
        &self.cfg
    }

    pub fn log_mel(&self, wave: &Waveform) -> Result<FeatureMatrix> {
        let cfg = &self.cfg;
        let t = check_input(wave, cfg)?;
        let x = wave.samples();
        let mut emph = Vec::with_capacity(x.len());
        emph.push(x[0]);
        emph.extend(x.windows(2).map(|w| w[1] - cfg.preemphasis * w[0]));

        let len = cfg.frame_len_samples();
        let shift = cfg.shift_samples();
        let n_bins = cfg.n_fft / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        let mut out = Array2::zeros((t, cfg.n_mels));
        for f in 0..t {
            let frame = &emph[f * shift..f * shift + len];
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < len {
                    Complex::new(frame[i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for m in 0..cfg.n_mels {
                let e: f64 = self
                    .filters
                    .row(m)
                    .iter()
                    .zip(&power)
                    .map(|(w, p)| w * p)
                    .sum();
                out[[f, m]] = e.max(cfg.mel_floor).ln();
            }
        }
        FeatureMatrix::new(out, cfg.frame_shift_ms, FeatureKind::LogMel)
    }

    pub fn frame_energy(&self, wave: &Waveform) -> Result<FeatureMatrix> {
        let cfg = &self.cfg;
        let t = check_input(wave, cfg)?;
        let x = wave.samples();
        let len = cfg.frame_len_samples();
        let shift = cfg.shift_samples();
        let out = Array2::from_shape_fn((t, 1), |(f, _)| {
            let e: f64 = x[f * shift..f * shift + len]
                .iter()
                .zip(&self.window)
                .map(|(s, w)| (s * w) * (s * w))
                .sum();
            e.max(cfg.mel_floor).ln()
        });
        FeatureMatrix::new(out, cfg.frame_shift_ms, FeatureKind::Energy)
    }
}

/// `T x n_mels` natural-log mel energies with pre-emphasis and a Hamming window.
pub fn log_mel(wave: &Waveform, cfg: &FrameConfig) -> Result<FeatureMatrix> {
    MelExtractor::new(cfg)?.log_mel(wave)
}

/// `T x 1` log energy of each Hamming-windowed frame, without pre-emphasis.
pub fn frame_energy(wave: &Waveform, cfg: &FrameConfig) -> Result<FeatureMatrix> {
    MelExtractor::new(cfg)?.frame_energy(wave)
}
