use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{frame_energy, FrameConfig, Waveform, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    White,
    Pink,
    /// Mains hum (50 Hz harmonics) over a white floor.
    HumOffice,
    /// Six overlapping synthetic talkers.
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::White,
        NoiseKind::Pink,
        NoiseKind::HumOffice,
        NoiseKind::Babble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::HumOffice => "hum_office",
            NoiseKind::Babble => "babble",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown noise kind {s:?}"))
    }
}

/// The evaluation SNR sweep: 25 dB down to -15 dB in 5 dB steps.
pub fn snr_grid() -> Vec<f64> {
    (0..9).map(|i| 25.0 - 5.0 * i as f64).collect()
}

/// Deterministic unit-RMS noise. Returned samples may exceed `[-1, 1]`
/// before mixing, so they are a plain vector rather than a [`Waveform`].
pub fn synth_noise(kind: NoiseKind, length: usize, seed: u64) -> Vec<f64> {
    assert!(length > 0, "noise length must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut x = match kind {
        NoiseKind::White => gaussian(&mut rng, length),
        NoiseKind::Pink => pink(&mut rng, length),
        NoiseKind::HumOffice => {
            let mut x = gaussian(&mut rng, length);
            x.iter_mut().for_each(|v| *v *= 0.3);
            for h in 1..=10 {
                let phase = rng.gen_range(0.0..2.0 * PI);
                let amp = 1.0 / h as f64;
                let w = 2.0 * PI * 50.0 * h as f64 / f64::from(SAMPLE_RATE_HZ);
                for (i, v) in x.iter_mut().enumerate() {
                    *v += amp * (w * i as f64 + phase).sin();
                }
            }
            x
        }
        NoiseKind::Babble => {
            let mut x = vec![0.0; length];
            for _ in 0..6 {
                let talker = babble_talker(&mut rng, length);
                let shift = rng.gen_range(0..length);
                for (i, v) in x.iter_mut().enumerate() {
                    *v += talker[(i + shift) % length];
                }
            }
            x
        }
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / length as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// White noise shaped by `1/sqrt(f)` in the frequency domain.
fn pink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = gaussian(rng, n)
        .into_iter()
        .map(|v| Complex::new(v, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for k in 1..n {
        let bin = k.min(n - k) as f64;
        buf[k] /= bin.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

/// A crude talker: 80-250 ms segments of three formant-like sinusoids with
/// raised-cosine envelopes.
fn babble_talker(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let sr = f64::from(SAMPLE_RATE_HZ);
    let mut out = vec![0.0; n];
    let mut pos = 0;
    while pos < n {
        let seg = rng.gen_range(1280..4000).min(n - pos);
        let formants = [
            rng.gen_range(300.0..900.0),
            rng.gen_range(900.0..2500.0),
            rng.gen_range(2500.0..3500.0),
        ];
        let voiced = rng.gen_bool(0.8);
        for i in 0..seg {
            let env = 0.5 - 0.5 * (2.0 * PI * i as f64 / seg as f64).cos();
            let t = (pos + i) as f64 / sr;
            let s: f64 = formants
                .iter()
                .enumerate()
                .map(|(j, f)| (2.0 * PI * f * t).sin() / (j + 1) as f64)
                .sum();
            out[pos + i] = if voiced { env * s } else { 0.0 };
        }
        pos += seg;
    }
    out
}

/// Adds a randomly cropped, scaled noise segment so that the clean/noise
/// power ratio over active-speech frames equals `snr_db`.
///
/// Frames count as active when their clean log energy exceeds
/// `ln(mel_floor) + 2`. The result is clipped to `[-1, 1]`.
pub fn mix_noise(clean: &Waveform, noise: &[f64], snr_db: f64, seed: u64) -> Result<Waveform> {
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("snr {snr_db} is not finite")));
    }
    if noise.len() < clean.len() {
        return Err(Error::NoiseTooShort {
            clean: clean.len(),
            noise: noise.len(),
        });
    }
    let offset = ChaCha8Rng::seed_from_u64(seed).gen_range(0..=noise.len() - clean.len());
    let crop = &noise[offset..offset + clean.len()];
    let mask = active_sample_mask(clean)?;
    let p_clean = masked_power(clean.samples(), &mask);
    let p_noise = masked_power(crop, &mask);
    if p_noise <= 0.0 {
        return Err(Error::SilentNoise);
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    Waveform::clipped(
        clean
            .samples()
            .iter()
            .zip(crop)
            .map(|(c, n)| c + gain * n)
            .collect(),
    )
}

/// Samples covered by at least one active frame of `clean`.
pub fn active_sample_mask(clean: &Waveform) -> Result<Vec<bool>> {
    let cfg = FrameConfig::default();
    let energy = frame_energy(clean, &cfg)?;
    let threshold = cfg.mel_floor.ln() + 2.0;
    let (len, shift) = (cfg.frame_len_samples(), cfg.shift_samples());
    let mut mask = vec![false; clean.len()];
    let mut any = false;
    for (t, &e) in energy.data().column(0).iter().enumerate() {
        if e > threshold {
            any = true;
            mask[t * shift..t * shift + len].iter_mut().for_each(|m| *m = true);
        }
    }
    if !any {
        return Err(Error::SilentClean);
    }
    Ok(mask)
}

fn masked_power(x: &[f64], mask: &[bool]) -> f64 {
    let (sum, n) = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v * v, n + 1));
    sum / n as f64
}
