//! Synthetic multi-speaker, multi-language, multi-emotion corpus.
//!
//! Every phoneme is three sinusoids at fixed formant frequencies; speakers
//! warp the formants by a common factor, tilt the spectrum and scale the
//! level. Each phoneme also owns a 32-dim articulatory target, and the
//! ground-truth face track is those targets held for each phoneme's span and
//! smoothed with a 9-frame Hann kernel.
//!
//! Dimension layout of the face track:
//! 0–4 eyes/brows, 5–19 mouth (all zero = closed), 20–24 expressiveness,
//! 25–31 head pose. Emotion applies a gain and offset to 20–31.
//!
//! One silence unit, `sil`, is shared by every language and owned by the
//! first one. Its target is all zeros.

mod io;
mod oracle;
mod synth;

pub use io::{
    gen_corpus, read_manifest, write_manifest, Alignment, AlignmentSegment, CorpusManifest,
    ManifestRecord, SpeakerRole, Split,
};
pub use oracle::{articulatory_oracle, hann_kernel, mouth_closed, CLOSED_MOUTH_TOLERANCE, COARTICULATION_FRAMES};
pub use synth::{synth_utterance, CROSSFADE_MS, SIL_AMPLITUDE};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::fap_predictor::{EmotionLabel, FAP_DIM, MOUTH_DIMS};
use crate::nnet::{mix_seed, RngStream};
use crate::phoneme_space::{fnv1a64, PhonemeSpace, PhonemeUnit, SIL};

/// Formant-shift range covered by the speaker grid.
/// Smallest magnitude of any mouth dim in a non-silent target.
pub const MIN_MOUTH_OPENING: f64 = 0.3;
pub const SHIFT_RANGE: (f64, f64) = (0.8, 1.25);

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageDef {
    pub id: String,
    pub n_phonemes: usize,
    pub share_targets_with: Option<String>,
}

impl LanguageDef {
    pub fn new(id: &str, n_phonemes: usize, share_targets_with: Option<&str>) -> Self {
        Self {
            id: id.to_string(),
            n_phonemes,
            share_targets_with: share_targets_with.map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub languages: Vec<LanguageDef>,
    pub n_speakers: usize,
    pub n_heldout_speakers: usize,
    /// Utterances for each speaker other than the face speaker.
    pub utterances_per_speaker: usize,
    /// Utterances for the face speaker, whose face track trains the
    /// regressor.
    pub face_utterances: usize,
    /// Share of each training speaker's utterances tagged as test.
    pub test_fraction: f64,
    pub min_duration_ms: f64,
    pub max_duration_ms: f64,
    pub emotion_ratio: [f64; 4],
    pub master_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            languages: vec![
                LanguageDef::new("la", 8, None),
                LanguageDef::new("lb", 8, Some("la")),
            ],
            n_speakers: 6,
            n_heldout_speakers: 2,
            utterances_per_speaker: 20,
            face_utterances: 100,
            test_fraction: 0.25,
            min_duration_ms: 1000.0,
            max_duration_ms: 4000.0,
            emotion_ratio: [2.5, 1.0, 1.0, 1.0],
            master_seed: 20200,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.languages.is_empty() {
            return bad("at least one language is required".into());
        }
        for (i, lang) in self.languages.iter().enumerate() {
            if lang.n_phonemes == 0 {
                return bad(format!("language {} has no phonemes", lang.id));
            }
            if self.languages[..i].iter().any(|l| l.id == lang.id) {
                return bad(format!("language {} listed twice", lang.id));
            }
            if let Some(src) = &lang.share_targets_with {
                match self.languages[..i].iter().find(|l| &l.id == src) {
                    None => {
                        return bad(format!(
                            "{} shares targets with {src}, which must be listed before it",
                            lang.id
                        ))
                    }
                    Some(s) if s.n_phonemes < lang.n_phonemes => {
                        return bad(format!("{src} has fewer phonemes than {}", lang.id))
                    }
                    _ => {}
                }
            }
        }
        if self.n_heldout_speakers == 0 || self.n_heldout_speakers >= self.n_speakers {
            return bad("need at least one training and one held-out speaker".into());
        }
        if 2 * self.n_heldout_speakers + 1 > self.n_speakers {
            return bad(format!(
                "{} held-out speakers need at least {} speakers",
                self.n_heldout_speakers,
                2 * self.n_heldout_speakers + 1
            ));
        }
        if self.face_utterances == 0 {
            return bad("face speaker needs utterances".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must be in [0, 1)".into());
        }
        if !(self.min_duration_ms >= 200.0 && self.max_duration_ms >= self.min_duration_ms) {
            return bad("duration range must satisfy 200 <= min <= max".into());
        }
        if self.emotion_ratio.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("emotion ratios must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPhonemeDef {
    pub unit: PhonemeUnit,
    pub formants_hz: [f64; 3],
    /// Relative amplitude of each formant; zero for silence.
    pub amplitudes: [f64; 3],
    pub articulatory_target: [f64; FAP_DIM],
}

impl SyntheticPhonemeDef {
    pub fn is_sil(&self) -> bool {
        self.unit.symbol == SIL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerDef {
    pub id: String,
    pub formant_shift: f64,
    pub spectral_tilt_db_per_oct: f64,
    pub gain: f64,
    pub heldout: bool,
}

/// Everything derived from a config before any audio exists: the phoneme
/// space, phoneme definitions and speakers.
#[derive(Debug, Clone)]
pub struct CorpusModel {
    pub config: CorpusConfig,
    pub space: PhonemeSpace,
    pub phonemes: Vec<SyntheticPhonemeDef>,
    pub speakers: Vec<SpeakerDef>,
    /// Index of the face speaker in `speakers`.
    pub face_speaker: usize,
    index: HashMap<PhonemeUnit, usize>,
}

/// Phoneme symbols of a language, silence excluded.
pub fn phoneme_symbols(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("p{i}")).collect()
}

/// Shape parameters of a formant template: `ln F1`, `ln F2/F1`, `ln F3/F2`.
fn template_coords(f: &[f64; 3]) -> [f64; 3] {
    [f[0].ln(), (f[1] / f[0]).ln(), (f[2] / f[1]).ln()]
}

/// Distance that a common multiplicative warp of all formants (a speaker)
/// cannot close: ratio differences count fully, `ln F1` only beyond the
/// speaker range.
fn template_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (ca, cb) = (template_coords(a), template_coords(b));
    let warp = (SHIFT_RANGE.1 / SHIFT_RANGE.0).ln();
    let d1 = (ca[0] - cb[0]).abs() - warp;
    d1.max((ca[1] - cb[1]).abs()).max((ca[2] - cb[2]).abs())
}

const MIN_TEMPLATE_DISTANCE: f64 = 0.12;

fn draw_template(rng: &mut RngStream) -> ([f64; 3], [f64; 3]) {
    loop {
        let f1 = rng.uniform(250f64.ln(), 900f64.ln()).exp();
        let f2 = f1 * rng.uniform(1.4f64.ln(), 4.0f64.ln()).exp();
        let f3 = f2 * rng.uniform(1.3f64.ln(), 2.5f64.ln()).exp();
        if f3 <= 5600.0 {
            let amps = [1.0, rng.uniform(0.4, 0.9), rng.uniform(0.2, 0.6)];
            return ([f1, f2, f3], amps);
        }
    }
}

fn draw_target(rng: &mut RngStream) -> [f64; FAP_DIM] {
    let mut t = [0.0; FAP_DIM];
    for (d, v) in t.iter_mut().enumerate() {
        *v = if MOUTH_DIMS.contains(&d) {
            let mag = rng.uniform(MIN_MOUTH_OPENING, 1.0);
            if rng.bernoulli(0.5) {
                mag
            } else {
                -mag
            }
        } else if d < MOUTH_DIMS.start {
            rng.uniform(-0.25, 0.25)
        } else if d < 25 {
            rng.uniform(-0.3, 0.3)
        } else {
            rng.uniform(-0.1, 0.1)
        };
    }
    t
}

impl CorpusModel {
    pub fn new(config: &CorpusConfig) -> Result<Self> {
        config.validate()?;
        let mut inventories = Vec::new();
        let mut phonemes: Vec<SyntheticPhonemeDef> = Vec::new();
        for (li, lang) in config.languages.iter().enumerate() {
            let mut rng = RngStream::new(mix_seed(config.master_seed, fnv1a64(lang.id.as_bytes())));
            let mut symbols = Vec::new();
            if li == 0 {
                symbols.push(SIL.to_string());
                phonemes.push(SyntheticPhonemeDef {
                    unit: PhonemeUnit::new(&lang.id, SIL),
                    formants_hz: [500.0, 1500.0, 2500.0],
                    amplitudes: [0.0; 3],
                    articulatory_target: [0.0; FAP_DIM],
                });
            }
            for sym in phoneme_symbols(lang.n_phonemes) {
                let mut tries = 0;
                let (formants, amplitudes) = loop {
                    let cand = draw_template(&mut rng);
                    let clear = phonemes
                        .iter()
                        .filter(|p| !p.is_sil())
                        .all(|p| template_distance(&p.formants_hz, &cand.0) >= MIN_TEMPLATE_DISTANCE);
                    if clear {
                        break cand;
                    }
                    tries += 1;
                    if tries > 20_000 {
                        return Err(Error::BadConfig(format!(
                            "cannot place {} well-separated phoneme templates",
                            phonemes.len() + 1
                        )));
                    }
                };
                let own_target = draw_target(&mut rng);
                let target = match &lang.share_targets_with {
                    Some(src) => {
                        phonemes
                            .iter()
                            .find(|p| &p.unit.language_id == src && p.unit.symbol == sym)
                            .expect("validated: source language has this symbol")
                            .articulatory_target
                    }
                    None => own_target,
                };
                phonemes.push(SyntheticPhonemeDef {
                    unit: PhonemeUnit::new(&lang.id, &sym),
                    formants_hz: formants,
                    amplitudes,
                    articulatory_target: target,
                });
                symbols.push(sym);
            }
            inventories.push((lang.id.clone(), symbols));
        }
        let space = PhonemeSpace::build(&inventories)?;
        let speakers = speaker_grid(config);
        let face_speaker = speakers
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.heldout)
            .min_by(|a, b| {
                (a.1.formant_shift.ln().abs())
                    .partial_cmp(&b.1.formant_shift.ln().abs())
                    .unwrap()
            })
            .map(|(i, _)| i)
            .expect("validated: at least one training speaker");
        let index = phonemes
            .iter()
            .enumerate()
            .map(|(i, p)| (p.unit.clone(), i))
            .collect();
        Ok(Self {
            config: config.clone(),
            space,
            phonemes,
            speakers,
            face_speaker,
            index,
        })
    }

    pub fn phoneme(&self, unit: &PhonemeUnit) -> Result<&SyntheticPhonemeDef> {
        self.index
            .get(unit)
            .map(|&i| &self.phonemes[i])
            .ok_or_else(|| Error::UnknownUnit {
                language: unit.language_id.clone(),
                symbol: unit.symbol.clone(),
            })
    }

    pub fn sil(&self) -> PhonemeUnit {
        PhonemeUnit::new(&self.config.languages[0].id, SIL)
    }

    pub fn speaker(&self, id: &str) -> Option<&SpeakerDef> {
        self.speakers.iter().find(|s| s.id == id)
    }

    /// Speech units of one language, in space order.
    pub fn language_units(&self, language: &str) -> Vec<PhonemeUnit> {
        self.phonemes
            .iter()
            .filter(|p| p.unit.language_id == language && !p.is_sil())
            .map(|p| p.unit.clone())
            .collect()
    }
}

/// Speakers on a log-spaced formant-shift grid over [`SHIFT_RANGE`]. Held-out
/// speakers take the odd grid positions 1, 3, …, so each sits between two
/// training speakers.
pub fn speaker_grid(config: &CorpusConfig) -> Vec<SpeakerDef> {
    let n = config.n_speakers;
    let (lo, hi) = SHIFT_RANGE;
    (0..n)
        .map(|i| {
            let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
            // Tilt and gain follow a fixed scrambled order so they are not
            // collinear with the shift.
            let k = (i * 3 + 1) % n;
            let g = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.5 };
            SpeakerDef {
                id: format!("spk{i}"),
                formant_shift: lo * (hi / lo).powf(frac),
                spectral_tilt_db_per_oct: -4.0 + 8.0 * g,
                gain: 0.15 * (0.5f64 / 0.15).powf(((i * 5 + 2) % n) as f64 / (n.max(2) - 1) as f64),
                heldout: i % 2 == 1 && i / 2 < config.n_heldout_speakers && i + 1 < n,
            }
        })
        .collect()
}

/// Emotion drawn at the configured ratios from a per-utterance seed.
pub fn sample_emotion(ratio: &[f64; 4], seed: u64) -> EmotionLabel {
    let total: f64 = ratio.iter().sum();
    let mut u = RngStream::new(seed).uniform(0.0, total);
    for (e, r) in EmotionLabel::ALL.into_iter().zip(ratio) {
        if u < *r {
            return e;
        }
        u -= r;
    }
    EmotionLabel::Sad
}

/// Seed of a single utterance: independent of generation order.
pub fn utterance_seed(master_seed: u64, utterance_id: &str) -> u64 {
    mix_seed(master_seed, fnv1a64(utterance_id.as_bytes()))
}

/// Emotion labels a corpus of `n` utterances would receive.
pub fn emotion_plan(config: &CorpusConfig, n: usize) -> Vec<EmotionLabel> {
    (0..n)
        .map(|i| {
            let seed = utterance_seed(config.master_seed, &format!("plan{i:06}"));
            sample_emotion(&config.emotion_ratio, mix_seed(seed, 0xE))
        })
        .collect()
}

/// One phoneme held for `frames` frames.
pub type Segment = (PhonemeUnit, usize);

/// Content of one utterance, fixed before synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct UtterancePlan {
    pub id: String,
    pub speaker: usize,
    pub language: String,
    pub emotion: EmotionLabel,
    pub split: Split,
    pub segments: Vec<Segment>,
}

impl UtterancePlan {
    pub fn frames(&self) -> usize {
        self.segments.iter().map(|s| s.1).sum()
    }

    pub fn seed(&self, master_seed: u64) -> u64 {
        utterance_seed(master_seed, &self.id)
    }
}

/// Random phoneme sequence with leading, trailing and occasional internal
/// silences, close to `target_frames` long.
pub fn plan_segments(
    model: &CorpusModel,
    language: &str,
    target_frames: usize,
    rng: &mut RngStream,
) -> Vec<Segment> {
    let units = model.language_units(language);
    let sil = model.sil();
    let sil_len = |rng: &mut RngStream| 5 + rng.below(11);
    let mut segs = vec![(sil.clone(), sil_len(rng))];
    let tail = sil_len(rng);
    let mut total = segs[0].1 + tail;
    let mut prev = usize::MAX;
    while total < target_frames {
        let mut k = rng.below(units.len());
        if units.len() > 1 && k == prev {
            k = (k + 1 + rng.below(units.len() - 1)) % units.len();
        }
        prev = k;
        let d = 6 + rng.below(13);
        segs.push((units[k].clone(), d));
        total += d;
        if total + 20 < target_frames && rng.bernoulli(0.12) {
            let p = 10 + rng.below(15);
            segs.push((sil.clone(), p));
            total += p;
            prev = usize::MAX;
        }
    }
    segs.push((sil, tail));
    segs
}

/// The full list of utterances a config produces, in manifest order.
pub fn plan_corpus(model: &CorpusModel) -> Vec<UtterancePlan> {
    let cfg = &model.config;
    let mut plans = Vec::new();
    for (si, spk) in model.speakers.iter().enumerate() {
        let n = if si == model.face_speaker {
            cfg.face_utterances
        } else {
            cfg.utterances_per_speaker
        };
        for i in 0..n {
            let id = format!("{}_{i:04}", spk.id);
            let language = cfg.languages[i % cfg.languages.len()].id.clone();
            // Within each language, every k-th utterance is held out.
            let j = i / cfg.languages.len();
            let test = ((j + 1) as f64 * cfg.test_fraction).floor()
                > (j as f64 * cfg.test_fraction).floor();
            let split = if spk.heldout || test {
                Split::Test
            } else {
                Split::Train
            };
            let seed = utterance_seed(cfg.master_seed, &id);
            let emotion = sample_emotion(&cfg.emotion_ratio, mix_seed(seed, 0xE));
            let mut rng = RngStream::new(mix_seed(seed, 0x5E6));
            let ms = rng.uniform(cfg.min_duration_ms, cfg.max_duration_ms);
            let segments = plan_segments(model, &language, (ms / 10.0).round() as usize, &mut rng);
            plans.push(UtterancePlan {
                id,
                speaker: si,
                language,
                emotion,
                split,
                segments,
            });
        }
    }
    plans
}

/// Log-mel frame of a steady, jitter-free rendering of `unit` by `speaker`.
pub fn template_log_mel(
    model: &CorpusModel,
    unit: &PhonemeUnit,
    speaker: &SpeakerDef,
) -> Result<ndarray::Array1<f64>> {
    let wave = synth_utterance(model, &[(unit.clone(), 9)], speaker, 0)?;
    let m = crate::dsp::log_mel(&wave, &crate::dsp::FrameConfig::default())?;
    Ok(m.data().row(4).to_owned())
}

/// Share of interior frames (at least 2 frames from any phoneme change)
/// whose log-mel vector is nearest, in Euclidean distance, to the template of
/// the aligned unit among all units of the space, for the utterance's own
/// speaker. A Bayes-rate proxy: the best a frame classifier that knows the
/// speaker can do.
pub fn nearest_template_accuracy(
    model: &CorpusModel,
    items: &[(crate::dsp::Waveform, Alignment, usize)],
) -> Result<f64> {
    let mut templates: HashMap<usize, Vec<(PhonemeUnit, ndarray::Array1<f64>)>> = HashMap::new();
    let (mut hit, mut total) = (0usize, 0usize);
    for (wave, align, spk) in items {
        if !templates.contains_key(spk) {
            let t = model
                .phonemes
                .iter()
                .map(|p| Ok((p.unit.clone(), template_log_mel(model, &p.unit, &model.speakers[*spk])?)))
                .collect::<Result<Vec<_>>>()?;
            templates.insert(*spk, t);
        }
        let tpl = &templates[spk];
        let feats = crate::dsp::log_mel(wave, &crate::dsp::FrameConfig::default())?;
        let mask = align.interior_mask(2);
        for ((row, unit), keep) in feats.data().rows().into_iter().zip(align.frame_units()).zip(mask) {
            if !keep {
                continue;
            }
            let best = tpl
                .iter()
                .map(|(u, t)| (u, (&row - t).mapv(|v| v * v).sum()))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .map(|(u, _)| u)
                .expect("templates are non-empty");
            hit += usize::from(best == unit);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_separable_by_nearest_template() {
        let m = CorpusModel::new(&CorpusConfig::default()).unwrap();
        let items: Vec<_> = plan_corpus(&m)
            .iter()
            .step_by(5)
            .map(|p| {
                let w = synth_utterance(&m, &p.segments, &m.speakers[p.speaker], p.seed(m.config.master_seed))
                    .unwrap();
                (crate::dsp::wav::quantized(&w), Alignment::from_durations(&p.segments), p.speaker)
            })
            .collect();
        let acc = nearest_template_accuracy(&m, &items).unwrap();
        assert!(acc >= 0.97, "nearest-template accuracy {acc}");
    }

    #[test]
    fn default_model_shape() {
        let m = CorpusModel::new(&CorpusConfig::default()).unwrap();
        assert_eq!(m.space.len(), 17);
        assert_eq!(m.phonemes.len(), 17);
        assert_eq!(m.speakers.len(), 6);
        let held: Vec<_> = m.speakers.iter().filter(|s| s.heldout).map(|s| s.id.as_str()).collect();
        assert_eq!(held, ["spk1", "spk3"]);
        assert_eq!(m.speakers[m.face_speaker].id, "spk2");
        for s in &m.speakers {
            assert!((0.8 - 1e-12..=1.25 + 1e-12).contains(&s.formant_shift));
            for p in m.phonemes.iter().filter(|p| !p.is_sil()) {
                for f in p.formants_hz {
                    assert!((100.0..=7500.0).contains(&(f * s.formant_shift)));
                }
            }
        }
    }

    #[test]
    fn shared_targets_new_templates() {
        let m = CorpusModel::new(&CorpusConfig::default()).unwrap();
        for sym in phoneme_symbols(8) {
            let a = m.phoneme(&PhonemeUnit::new("la", &sym)).unwrap();
            let b = m.phoneme(&PhonemeUnit::new("lb", &sym)).unwrap();
            assert_eq!(a.articulatory_target, b.articulatory_target);
            assert!(template_distance(&a.formants_hz, &b.formants_hz) >= MIN_TEMPLATE_DISTANCE);
        }
    }

    #[test]
    fn appending_a_language_keeps_existing_definitions() {
        let base = CorpusConfig::default();
        let mut ext = base.clone();
        ext.languages.push(LanguageDef::new("lc", 8, Some("la")));
        let a = CorpusModel::new(&base).unwrap();
        let b = CorpusModel::new(&ext).unwrap();
        assert_eq!(&b.phonemes[..a.phonemes.len()], &a.phonemes[..]);
        assert_eq!(b.space.len(), 25);
    }

    #[test]
    fn config_validation() {
        let mut c = CorpusConfig::default();
        c.n_heldout_speakers = 0;
        assert!(c.validate().is_err());
        let mut c = CorpusConfig::default();
        c.languages[1].share_targets_with = Some("zz".into());
        assert!(c.validate().is_err());
        let mut c = CorpusConfig::default();
        c.emotion_ratio[2] = 0.0;
        assert!(c.validate().is_err());
        assert!(matches!(
            CorpusModel::new(&CorpusConfig::default())
                .unwrap()
                .phoneme(&PhonemeUnit::new("la", "zz")),
            Err(Error::UnknownUnit { .. })
        ));
    }

    #[test]
    fn emotion_ratio_over_2200_utterances() {
        let plan = emotion_plan(&CorpusConfig::default(), 2200);
        let p: f64 = 2.5 / 5.5;
        let sigma = (2200.0 * p * (1.0 - p)).sqrt();
        let neutral = plan.iter().filter(|e| **e == EmotionLabel::Neutral).count() as f64;
        assert!((neutral - 1000.0).abs() <= 3.0 * sigma, "neutral = {neutral}");
        let q: f64 = 1.0 / 5.5;
        let s_other = (2200.0 * q * (1.0 - q)).sqrt();
        for e in &EmotionLabel::ALL[1..] {
            let n = plan.iter().filter(|x| *x == e).count() as f64;
            assert!((n - 400.0).abs() <= 3.0 * s_other, "{e}: {n}");
        }
    }

    #[test]
    fn plans_are_deterministic_and_in_range() {
        let m = CorpusModel::new(&CorpusConfig::default()).unwrap();
        let a = plan_corpus(&m);
        assert_eq!(a, plan_corpus(&m));
        assert_eq!(a.len(), 200);
        for p in &a {
            let ms = p.frames() as f64 * 10.0;
            assert!((900.0..=4400.0).contains(&ms), "{}: {ms}", p.id);
            assert_eq!(p.segments.first().unwrap().0.symbol, SIL);
            assert_eq!(p.segments.last().unwrap().0.symbol, SIL);
            for (u, _) in &p.segments {
                assert!(u.symbol == SIL || u.language_id == p.language);
            }
        }
        let face_test = a
            .iter()
            .filter(|p| p.speaker == m.face_speaker && p.split == Split::Test)
            .count();
        assert_eq!(face_test, 24);
    }
}
