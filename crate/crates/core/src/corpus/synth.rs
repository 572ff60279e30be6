use rand_distr::{Distribution, StandardNormal};

use super::{CorpusModel, Segment, SpeakerDef};
use crate::dsp::{FrameConfig, Waveform, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::nnet::RngStream;

/// Length of the amplitude cross-fade at each phoneme boundary.
pub const CROSSFADE_MS: f64 = 5.0;
/// Standard deviation of the noise that fills silences.
pub const SIL_AMPLITUDE: f64 = 1e-4;
/// Per-occurrence relative jitter of each formant frequency.
const FORMANT_JITTER: f64 = 0.01;

/// Sample index of the boundary before frame `frame`: halfway between the
/// centres of frames `frame - 1` and `frame`.
fn boundary(cfg: &FrameConfig, frame: usize) -> usize {
    let (len, shift) = (cfg.frame_len_samples(), cfg.shift_samples());
    frame * shift + (len - shift) / 2
}

/// Renders phonemes as formant sinusoids, `sum(durations)` frames long under
/// the default framing.
pub fn synth_utterance(
    model: &CorpusModel,
    phones: &[Segment],
    speaker: &SpeakerDef,
    seed: u64,
) -> Result<Waveform> {
    let cfg = FrameConfig::default();
    let t_len: usize = phones.iter().map(|s| s.1).sum();
    if t_len == 0 || phones.iter().any(|s| s.1 == 0) {
        return Err(Error::BadConfig("phoneme durations must be at least one frame".into()));
    }
    let n = (t_len - 1) * cfg.shift_samples() + cfg.frame_len_samples();
    let fade = (CROSSFADE_MS * 1e-3 * f64::from(SAMPLE_RATE_HZ)).round() as usize;
    let half = fade / 2;
    let sr = f64::from(SAMPLE_RATE_HZ);
    let mut out = vec![0.0; n];
    let mut rng = RngStream::new(seed);
    let mut frame = 0;
    for (k, (unit, dur)) in phones.iter().enumerate() {
        let def = model.phoneme(unit)?;
        let start = if k == 0 { 0 } else { boundary(&cfg, frame) };
        frame += dur;
        let end = if k + 1 == phones.len() { n } else { boundary(&cfg, frame) };
        let lo = if k == 0 { 0 } else { start - half };
        let hi = if k + 1 == phones.len() { n } else { (end + half).min(n) };
        let ramp = |x: usize, edge: usize| {
            // Rises from 0 to 1 across [edge - half, edge + half).
            let pos = (x as f64 - (edge as f64 - half as f64) + 0.5) / fade as f64;
            (std::f64::consts::FRAC_PI_2 * pos.clamp(0.0, 1.0)).sin().powi(2)
        };
        let envelope = |x: usize| {
            let mut e = 1.0;
            if k > 0 {
                e *= ramp(x, start);
            }
            if k + 1 < phones.len() {
                e *= 1.0 - ramp(x, end);
            }
            e
        };
        if def.is_sil() {
            for (x, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
                let g: f64 = StandardNormal.sample(&mut rng);
                *o += envelope(x) * SIL_AMPLITUDE * g;
            }
            continue;
        }
        let norm: f64 = def.amplitudes.iter().sum();
        let mut tones: Vec<(f64, f64, f64)> = def
            .formants_hz
            .iter()
            .zip(&def.amplitudes)
            .map(|(&f, &a)| {
                let freq = f * speaker.formant_shift * (1.0 + rng.uniform(-FORMANT_JITTER, FORMANT_JITTER));
                let octaves = (freq / 1000.0).log2();
                let tilt = 10f64.powf(speaker.spectral_tilt_db_per_oct * octaves / 20.0);
                let phase = rng.uniform(0.0, std::f64::consts::TAU);
                (std::f64::consts::TAU * freq / sr, speaker.gain * a * tilt / norm, phase)
            })
            .collect();
        // A bright tilt on a loud speaker can push the sum past full scale.
        let total: f64 = tones.iter().map(|t| t.1).sum();
        if total > 1.0 {
            tones.iter_mut().for_each(|t| t.1 /= total);
        }
        for (x, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
            let s: f64 = tones
                .iter()
                .map(|(w, a, p)| a * (w * x as f64 + p).sin())
                .sum();
            *o += envelope(x) * s;
        }
    }
    Waveform::new(out, SAMPLE_RATE_HZ)
}
