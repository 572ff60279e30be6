//! 16-bit PCM mono 16 kHz RIFF/WAVE files. Every other layout is rejected.

use std::path::Path;

use super::{Waveform, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

const FULL_SCALE: f64 = 32768.0;

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::BadWav(format!(
            "{}: expected 16-bit PCM, found {:?} {}-bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::BadWav(format!(
            "{}: expected mono, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(Error::BadSampleRate(spec.sample_rate));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e))?;
    Waveform::new(samples, SAMPLE_RATE_HZ)
}

/// Quantizes to 16-bit PCM. Reading the file back yields the quantized
/// samples exactly.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE_HZ,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in wave.samples() {
        w.write_sample(quantize(s)).map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

pub fn quantize(s: f64) -> i16 {
    (s * FULL_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// The waveform as it will read back after a 16-bit round trip.
pub fn quantized(wave: &Waveform) -> Waveform {
    let samples = wave
        .samples()
        .iter()
        .map(|&s| f64::from(quantize(s)) / FULL_SCALE)
        .collect();
    Waveform::new(samples, SAMPLE_RATE_HZ).expect("quantized samples stay in range")
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::BadWav(format!("{}: {other}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = Waveform::new(
            (0..1000).map(|i| (i as f64 * 0.01).sin() * 0.7).collect(),
            SAMPLE_RATE_HZ,
        )
        .unwrap();
        write_wav(&p, &w).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back, quantized(&w));
        write_wav(&p, &back).unwrap();
        assert_eq!(read_wav(&p).unwrap(), back);
    }

    #[test]
    fn rejects_stereo_and_float_and_other_rates() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            (2, 16_000, 16, hound::SampleFormat::Int),
            (1, 8_000, 16, hound::SampleFormat::Int),
            (1, 16_000, 32, hound::SampleFormat::Float),
            (1, 16_000, 24, hound::SampleFormat::Int),
        ];
        for (i, (channels, rate, bits, fmt)) in cases.into_iter().enumerate() {
            let p = dir.path().join(format!("{i}.wav"));
            let spec = hound::WavSpec {
                channels,
                sample_rate: rate,
                bits_per_sample: bits,
                sample_format: fmt,
            };
            let mut w = hound::WavWriter::create(&p, spec).unwrap();
            for _ in 0..(4 * channels) {
                match fmt {
                    hound::SampleFormat::Float => w.write_sample(0.0f32).unwrap(),
                    hound::SampleFormat::Int if bits == 16 => w.write_sample(0i16).unwrap(),
                    hound::SampleFormat::Int => w.write_sample(0i32).unwrap(),
                }
            }
            w.finalize().unwrap();
            assert!(read_wav(&p).is_err(), "case {i} accepted");
        }
    }

    #[test]
    fn garbage_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        std::fs::write(&p, b"RIFFnotreallyawave").unwrap();
        assert!(read_wav(&p).is_err());
        assert!(matches!(
            read_wav(&dir.path().join("missing.wav")),
            Err(Error::Io { .. })
        ));
    }
}
