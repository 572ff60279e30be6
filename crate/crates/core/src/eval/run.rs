use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2};
use rayon::prelude::*;

use super::metrics::{mfcc_from_log_mel, pearson_mean, sum_squared_error};
use super::report::{EvalReport, EvalRow};
use crate::corpus::{mouth_closed, CorpusManifest, ManifestRecord, SpeakerRole, Split};
use crate::dsp::{
    dynamic_features, mix_noise, synth_noise, FeatureMatrix, FrameConfig, MelExtractor, NoiseKind,
    Waveform, SAMPLE_RATE_HZ,
};
use crate::error::{Error, Result};
use crate::fap_predictor::{
    assemble_input, assemble_mfcc_input, predict_fap_means, EmotionLabel, FapInputKind, FapModel,
    FapSequence, FAP_DIM,
};
use crate::nnet::{mix_seed, RngStream};
use crate::phoneme_space::{fnv1a64, Ppg, SIL};
use crate::ppg_extractor::{extract_ppg, PpgModel};
use crate::trajectory::{mlpg, sliding_window_smooth, WindowSet, SMOOTH_WINDOW};

/// Default number of utterances evaluated per split.
pub const DEFAULT_EVAL_SAMPLES: usize = 500;
/// Noisy copies per utterance and SNR, each with a randomly drawn noise kind.
pub const DEFAULT_NOISE_COPIES: usize = 4;

/// One evaluated system: a front end feeding a face-parameter model.
#[derive(Debug, Clone, Copy)]
pub struct EvalSystem<'a> {
    pub name: &'a str,
    pub ppg: Option<&'a PpgModel>,
    pub fap: &'a FapModel,
}

impl<'a> EvalSystem<'a> {
    /// Checks that the front end matches what the model consumes.
    pub fn new(name: &'a str, ppg: Option<&'a PpgModel>, fap: &'a FapModel) -> Result<Self> {
        match (fap.features.kind, ppg) {
            (FapInputKind::Ppg, Some(p)) => {
                if let Some(expected) = fap.features.space_checksum {
                    if expected != p.space.checksum() {
                        return Err(Error::SpaceMismatch {
                            expected,
                            found: p.space.checksum(),
                        });
                    }
                }
            }
            (FapInputKind::Ppg, None) => {
                return Err(Error::BadConfig(format!("system {name} needs a posteriorgram model")))
            }
            (FapInputKind::Mfcc, Some(_)) => {
                return Err(Error::BadConfig(format!("system {name} takes cepstra, not posteriorgrams")))
            }
            (FapInputKind::Mfcc, None) => {}
        }
        Ok(Self { name, ppg, fap })
    }
}

/// Per-utterance acoustic streams shared by all systems.
#[derive(Debug, Clone)]
pub struct UtteranceFeatures {
    pub log_mel: FeatureMatrix,
    pub energy: FeatureMatrix,
}

impl UtteranceFeatures {
    pub fn extract(wave: &Waveform) -> Result<Self> {
        let mel = MelExtractor::new(&FrameConfig::default())?;
        Ok(Self {
            log_mel: mel.log_mel(wave)?,
            energy: mel.frame_energy(wave)?,
        })
    }
}

pub fn system_ppg(system: &EvalSystem, feats: &UtteranceFeatures) -> Result<Option<Ppg>> {
    system
        .ppg
        .map(|p| extract_ppg(p, &dynamic_features(&feats.log_mel)?))
        .transpose()
}

/// Network input for one utterance.
pub fn system_input(
    system: &EvalSystem,
    feats: &UtteranceFeatures,
    ppg: Option<&Ppg>,
    emotion: EmotionLabel,
) -> Result<FeatureMatrix> {
    match system.fap.features.kind {
        FapInputKind::Ppg => {
            let owned;
            let ppg = match ppg {
                Some(p) => p,
                None => {
                    owned = system_ppg(system, feats)?.ok_or_else(|| {
                        Error::BadConfig(format!("system {} needs a posteriorgram model", system.name))
                    })?;
                    &owned
                }
            };
            assemble_input(system.fap, ppg, &feats.energy, emotion)
        }
        FapInputKind::Mfcc => assemble_mfcc_input(system.fap, &mfcc_from_log_mel(&feats.log_mel)?, &feats.energy, emotion),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothing {
    Mlpg,
    Window,
    None,
}

impl FromStr for Smoothing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlpg" => Ok(Smoothing::Mlpg),
            "window" => Ok(Smoothing::Window),
            "none" => Ok(Smoothing::None),
            _ => Err(Error::Config(format!("unknown smoothing {s:?}"))),
        }
    }
}

/// Means as they come back from an FMTX file (f32 precision), so that
/// smoothing in memory and smoothing a stored file agree bit for bit.
pub fn stored_precision(m: Array2<f64>) -> Array2<f64> {
    m.mapv(|v| f64::from(v as f32))
}

/// MLPG over `T x 96` means with the model's stored variance.
pub fn smooth_means(fap: &FapModel, means: &Array2<f64>) -> Result<FapSequence> {
    FapSequence::new(mlpg(means.view(), &fap.global_variance()?, &WindowSet::default())?)
}

/// End-to-end generation. `Smoothing::None` returns the raw `T x 96` means;
/// the other modes return `T x 32` statics.
pub fn generate(system: &EvalSystem, wave: &Waveform, emotion: EmotionLabel, smoothing: Smoothing) -> Result<Array2<f64>> {
    let feats = UtteranceFeatures::extract(wave)?;
    let input = system_input(system, &feats, None, emotion)?;
    match smoothing {
        Smoothing::None => Ok(stored_precision(predict_fap_means(system.fap, &input)?)),
        Smoothing::Mlpg => {
            let means = stored_precision(predict_fap_means(system.fap, &input)?);
            Ok(smooth_means(system.fap, &means)?.into_data())
        }
        Smoothing::Window => sliding_window_smooth(
                |win| {
                    let m = FeatureMatrix::new(win.to_owned(), 10.0, input.kind())?;
                    Ok(predict_fap_means(system.fap, &m)?.slice(s![.., ..FAP_DIM]).to_owned())
                },
                input.data().view(),
                SMOOTH_WINDOW,
            ),
    }
}

/// The MLPG output each system produces for one utterance.
pub fn predict_all(systems: &[EvalSystem], wave: &Waveform, emotion: EmotionLabel) -> Result<Vec<FapSequence>> {
    let feats = UtteranceFeatures::extract(wave)?;
    let mut cache: Vec<(*const PpgModel, Ppg)> = Vec::new();
    systems
        .iter()
        .map(|sys| {
            let ppg = match sys.ppg {
                Some(p) => {
                    let key = p as *const PpgModel;
                    if let Some((_, hit)) = cache.iter().find(|(k, _)| *k == key) {
                        Some(hit.clone())
                    } else {
                        let fresh = system_ppg(sys, &feats)?.expect("ppg front end");
                        cache.push((key, fresh.clone()));
                        Some(fresh)
                    }
                }
                None => None,
            };
            let input = system_input(sys, &feats, ppg.as_ref(), emotion)?;
            smooth_means(sys.fap, &predict_fap_means(sys.fap, &input)?)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalSplit {
    /// Face speaker, training language, held-out utterances.
    Normal,
    /// Held-out speakers, training language.
    UnseenSpeaker,
    /// Face speaker, other languages, held-out utterances.
    UnseenLanguage,
    /// Held-out speakers, other languages.
    Mixed,
}

impl EvalSplit {
    pub const ALL: [EvalSplit; 4] = [
        EvalSplit::Normal,
        EvalSplit::UnseenSpeaker,
        EvalSplit::UnseenLanguage,
        EvalSplit::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Normal => "normal",
            EvalSplit::UnseenSpeaker => "unseen_speaker",
            EvalSplit::UnseenLanguage => "unseen_language",
            EvalSplit::Mixed => "mixed",
        }
    }
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

/// Who and what counts as "seen" when carving splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub face_speaker: String,
    pub heldout_speakers: Vec<String>,
    /// Language the face-parameter models were trained on.
    pub train_language: String,
}

impl SplitSpec {
    /// Roles from the corpus' speaker table; the training language defaults
    /// to the first language of the phoneme space.
    pub fn from_manifest(manifest: &CorpusManifest, train_language: Option<&str>) -> Result<Self> {
        let roles = manifest.load_speaker_roles()?;
        let face = roles
            .iter()
            .find(|r| r.1 == SpeakerRole::Face)
            .ok_or_else(|| Error::format("speakers", "no face speaker"))?;
        let train_language = match train_language {
            Some(l) => l.to_string(),
            None => manifest
                .load_space()?
                .languages()
                .first()
                .ok_or_else(|| Error::format("phoneme space", "no languages"))?
                .to_string(),
        };
        Ok(Self {
            face_speaker: face.0.clone(),
            heldout_speakers: roles
                .iter()
                .filter(|r| r.1 == SpeakerRole::Heldout)
                .map(|r| r.0.clone())
                .collect(),
            train_language,
        })
    }

    pub fn contains(&self, split: EvalSplit, r: &ManifestRecord) -> bool {
        let heldout = self.heldout_speakers.contains(&r.speaker_id);
        let face = r.speaker_id == self.face_speaker;
        let seen_language = r.language_id == self.train_language;
        match split {
            EvalSplit::Normal => face && seen_language && r.split == Split::Test,
            EvalSplit::UnseenSpeaker => heldout && seen_language,
            EvalSplit::UnseenLanguage => face && !seen_language && r.split == Split::Test,
            EvalSplit::Mixed => heldout && !seen_language,
        }
    }

    /// Matching records in manifest order, truncated to `n_samples`.
    pub fn select<'m>(&self, manifest: &'m CorpusManifest, split: EvalSplit, n_samples: usize) -> Result<Vec<&'m ManifestRecord>> {
        let v: Vec<_> = manifest
            .records
            .iter()
            .filter(|r| self.contains(split, r))
            .take(n_samples)
            .collect();
        if v.is_empty() {
            return Err(Error::EmptySplit(split.name().into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    se: f64,
    entries: usize,
    pearson: f64,
    n: usize,
}

impl Acc {
    fn add(&mut self, pred: &FapSequence, gt: &FapSequence) -> Result<()> {
        if pred.data().dim() != gt.data().dim() {
            return Err(Error::ShapeMismatch(format!(
                "prediction {:?} vs ground truth {:?}",
                pred.data().dim(),
                gt.data().dim()
            )));
        }
        self.se += sum_squared_error(pred, gt);
        self.entries += gt.data().len();
        self.pearson += pearson_mean(pred, gt)?;
        self.n += 1;
        Ok(())
    }

    fn row(&self, system: &str, split: &str, snr_db: Option<f64>) -> EvalRow {
        EvalRow {
            system: system.to_string(),
            split: split.to_string(),
            snr_db,
            mse: self.se / self.entries as f64,
            pearson_mean: self.pearson / self.n as f64,
            n: self.n,
        }
    }
}

/// Runs `work` over records in parallel and folds the per-system outputs in
/// record order, so results do not depend on the thread count.
fn accumulate<F>(records: &[&ManifestRecord], n_systems: usize, work: F) -> Result<Vec<Acc>>
where
    F: Fn(usize, &ManifestRecord) -> Result<Vec<(FapSequence, FapSequence)>> + Sync,
{
    let per_record = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| work(i, r))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![Acc::default(); n_systems];
    for outputs in per_record {
        for (k, (pred, gt)) in outputs.iter().enumerate() {
            acc[k % n_systems].add(pred, gt)?;
        }
    }
    Ok(acc)
}

/// Clean-speech MSE of every system against the oracle face track on one
/// split; one row per system.
pub fn run_split_eval(
    systems: &[EvalSystem],
    manifest: &CorpusManifest,
    spec: &SplitSpec,
    split: EvalSplit,
    n_samples: usize,
) -> Result<EvalReport> {
    let records = spec.select(manifest, split, n_samples)?;
    let acc = accumulate(&records, systems.len(), |_, r| {
        let wave = manifest.load_wave(r)?;
        let gt = manifest.load_fap(r)?;
        Ok(predict_all(systems, &wave, r.emotion)?
            .into_iter()
            .map(|p| (p, gt.clone()))
            .collect())
    })?;
    Ok(EvalReport {
        rows: systems
            .iter()
            .zip(&acc)
            .map(|(s, a)| a.row(s.name, split.name(), None))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrSweepConfig {
    pub snrs_db: Vec<f64>,
    pub copies: usize,
    pub n_utterances: usize,
    pub seed: u64,
}

impl Default for SnrSweepConfig {
    fn default() -> Self {
        Self {
            snrs_db: crate::dsp::snr_grid(),
            copies: DEFAULT_NOISE_COPIES,
            n_utterances: DEFAULT_EVAL_SAMPLES,
            seed: 0,
        }
    }
}

/// Noise kind and realisation for one (utterance, copy). They are shared by
/// every SNR level so that the levels differ only in noise gain.
pub fn noise_for(seed: u64, utterance_id: &str, copy: usize, len: usize) -> (NoiseKind, Vec<f64>, u64) {
    let s = mix_seed(mix_seed(seed, fnv1a64(utterance_id.as_bytes())), copy as u64);
    let mut rng = RngStream::new(s);
    let kind = NoiseKind::ALL[rng.below(NoiseKind::ALL.len())];
    let noise = synth_noise(kind, len + SAMPLE_RATE_HZ as usize, mix_seed(s, 1));
    (kind, noise, mix_seed(s, 2))
}

/// Noisy-speech MSE over `split` for every (system, SNR).
pub fn run_snr_sweep(
    systems: &[EvalSystem],
    manifest: &CorpusManifest,
    spec: &SplitSpec,
    split: EvalSplit,
    cfg: &SnrSweepConfig,
) -> Result<EvalReport> {
    if cfg.copies == 0 || cfg.snrs_db.is_empty() {
        return Err(Error::Config("SNR sweep needs at least one level and one copy".into()));
    }
    let records = spec.select(manifest, split, cfg.n_utterances)?;
    let n_sys = systems.len();
    let n_snr = cfg.snrs_db.len();
    // `accumulate` folds output i into slot i % (n_snr * n_sys); laying
    // outputs out copy-major puts every copy of (snr, system) in one slot.
    let acc = accumulate(&records, n_sys * n_snr, |_, r| {
        let wave = manifest.load_wave(r)?;
        let gt = manifest.load_fap(r)?;
        let mut out = Vec::with_capacity(n_sys * n_snr * cfg.copies);
        for c in 0..cfg.copies {
            let (_, noise, offset_seed) = noise_for(cfg.seed, &r.utterance_id, c, wave.len());
            for &snr in &cfg.snrs_db {
                let noisy = mix_noise(&wave, &noise, snr, offset_seed)?;
                out.extend(predict_all(systems, &noisy, r.emotion)?.into_iter().map(|p| (p, gt.clone())));
            }
        }
        Ok(out)
    })?;
    let mut rows = Vec::new();
    for (j, s) in systems.iter().enumerate() {
        for (k, &snr) in cfg.snrs_db.iter().enumerate() {
            rows.push(acc[k * n_sys + j].row(s.name, split.name(), Some(snr)));
        }
    }
    Ok(EvalReport { rows })
}

/// Silent frames scored for mouth closure, and how many a system closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClosureCount {
    pub closed: usize,
    pub frames: usize,
}

impl ClosureCount {
    pub fn rate(&self) -> f64 {
        self.closed as f64 / self.frames.max(1) as f64
    }
}

/// Mouth closure during silence. Scored frames are those aligned to `sil`
/// whose ground-truth face is itself closed (coarticulation opens the mouth
/// early near speech); each system's MLPG output must be closed there too.
pub fn silence_closure(
    systems: &[EvalSystem],
    manifest: &CorpusManifest,
    records: &[&ManifestRecord],
) -> Result<Vec<ClosureCount>> {
    let per_utt = records
        .par_iter()
        .map(|r| -> Result<Vec<ClosureCount>> {
            let wave = manifest.load_wave(r)?;
            let gt = manifest.load_fap(r)?;
            let align = manifest.load_alignment(r)?;
            let preds = predict_all(systems, &wave, r.emotion)?;
            let silent: Vec<usize> = align
                .frame_units()
                .iter()
                .enumerate()
                .filter(|(t, u)| u.symbol == SIL && mouth_closed(gt.data().row(*t)))
                .map(|(t, _)| t)
                .collect();
            Ok(preds
                .iter()
                .map(|p| ClosureCount {
                    closed: silent.iter().filter(|&&t| mouth_closed(p.data().row(t))).count(),
                    frames: silent.len(),
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = vec![ClosureCount::default(); systems.len()];
    for counts in per_utt {
        for (acc, c) in total.iter_mut().zip(counts) {
            acc.closed += c.closed;
            acc.frames += c.frames;
        }
    }
    Ok(total)
}
