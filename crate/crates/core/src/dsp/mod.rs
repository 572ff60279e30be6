//! Waveform ingestion and frame-level acoustic features.
//!
//! Everything here is a pure function of its inputs. Framing is shared by
//! [`log_mel`] and [`frame_energy`] so that feature streams extracted from the
//! same waveform always have the same number of rows.

mod dynamic;
pub mod fmtx;
mod mel;
mod noise;
pub mod wav;

use crate::error::{Error, Result};

pub use dynamic::{delta, dynamic_features, DELTA_RADIUS};
pub use fmtx::{read_fmtx, write_fmtx, FeatureKind, FeatureMatrix};
pub use mel::{frame_energy, hz_to_mel, log_mel, mel_filterbank, mel_to_hz, MelExtractor};
pub use noise::{mix_noise, snr_grid, synth_noise, NoiseKind};

/// The only sample rate the pipeline accepts.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

/// Mono audio in `[-1, 1]` at 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::BadSampleRate(sample_rate_hz));
        }
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::BadSample { index, value });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Builds a waveform at 16 kHz, clipping out-of-range samples to `[-1, 1]`.
    /// Non-finite samples are still rejected.
    pub fn clipped(samples: Vec<f64>) -> Result<Self> {
        Self::new(
            samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect(),
            SAMPLE_RATE_HZ,
        )
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameConfig {
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub mel_floor: f64,
    pub preemphasis: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            n_fft: 512,
            n_mels: 40,
            mel_floor: 1e-10,
            preemphasis: 0.97,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadFrameConfig(msg));
        if !(self.frame_length_ms > 0.0 && self.frame_shift_ms > 0.0) {
            return bad("frame length and shift must be positive".into());
        }
        if self.frame_shift_ms > self.frame_length_ms {
            return bad(format!(
                "frame shift {} ms exceeds frame length {} ms",
                self.frame_shift_ms, self.frame_length_ms
            ));
        }
        if self.frame_len_samples() > self.n_fft {
            return bad(format!(
                "frame of {} samples does not fit n_fft={}",
                self.frame_len_samples(),
                self.n_fft
            ));
        }
        if self.n_mels == 0 || self.n_mels > self.n_fft / 2 + 1 {
            return bad(format!("n_mels={} out of range for n_fft={}", self.n_mels, self.n_fft));
        }
        if !(self.mel_floor > 0.0) {
            return bad("mel_floor must be positive".into());
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad(format!("preemphasis {} not in [0, 1)", self.preemphasis));
        }
        Ok(())
    }

    pub fn frame_len_samples(&self) -> usize {
        ms_to_samples(self.frame_length_ms)
    }

    pub fn shift_samples(&self) -> usize {
        ms_to_samples(self.frame_shift_ms)
    }

    /// Number of frames for a signal of `n_samples`; zero when the signal is
    /// shorter than one frame.
    pub fn num_frames(&self, n_samples: usize) -> usize {
        let len = self.frame_len_samples();
        if n_samples < len {
            0
        } else {
            (n_samples - len) / self.shift_samples() + 1
        }
    }

    /// Frame rate in frames per second.
    pub fn frame_rate(&self) -> f64 {
        1000.0 / self.frame_shift_ms
    }
}

fn ms_to_samples(ms: f64) -> usize {
    (ms * f64::from(SAMPLE_RATE_HZ) / 1000.0).round() as usize
}

/// Symmetric Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

fn check_input(wave: &Waveform, cfg: &FrameConfig) -> Result<usize> {
    if wave.sample_rate_hz() != SAMPLE_RATE_HZ {
        return Err(Error::BadSampleRate(wave.sample_rate_hz()));
    }
    cfg.validate()?;
    match cfg.num_frames(wave.len()) {
        0 => Err(Error::EmptyInput),
        t => Ok(t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_framing_is_400_by_160() {
        let cfg = FrameConfig::default();
        assert_eq!(cfg.frame_len_samples(), 400);
        assert_eq!(cfg.shift_samples(), 160);
        assert_eq!(cfg.num_frames(16_000), 98);
        assert_eq!(cfg.num_frames(399), 0);
        assert_eq!(cfg.num_frames(400), 1);
    }

    #[test]
    fn rejects_other_sample_rates() {
        assert!(matches!(
            Waveform::new(vec![0.0; 10], 44_100),
            Err(Error::BadSampleRate(44_100))
        ));
        assert!(matches!(
            Waveform::new(vec![0.0, 1.5], 16_000),
            Err(Error::BadSample { index: 1, .. })
        ));
        assert!(Waveform::new(vec![0.0, f64::NAN], 16_000).is_err());
    }

    #[test]
    fn config_invariants() {
        let mut cfg = FrameConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.frame_shift_ms = 30.0;
        assert!(cfg.validate().is_err());
        let cfg = FrameConfig {
            n_mels: 300,
            ..FrameConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
