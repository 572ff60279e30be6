//! Dataset assembly from a corpus manifest: which utterances train which
//! model, noise augmentation for the posteriorgram extractor, and the
//! feature/target pairs for the face-parameter regressor.

use rayon::prelude::*;

use crate::corpus::{CorpusManifest, ManifestRecord, SpeakerRole, Split};
use crate::dsp::{dynamic_features, mix_noise, synth_noise, FeatureMatrix, NoiseKind, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::eval::{mfcc_from_log_mel, SplitSpec, UtteranceFeatures};
use crate::fap_predictor::{
    assemble_input, assemble_mfcc_input, build_fap_model, fit_input_statistics, train_fap, FapExample,
    FapFeatureSpec, FapInputKind, FapModel, FapPredictorConfig, FapTrainConfig, FapTrainReport,
};
use crate::nnet::{mix_seed, RngStream};
use crate::phoneme_space::{fnv1a64, PhonemeSpace};
use crate::ppg_extractor::{
    build_ppg_model, extend_ppg_model, extract_ppg, train_ppg, FrameLabels, PpgExample, PpgExtractorConfig,
    PpgModel, PpgTrainConfig, TrainReport,
};
use crate::trajectory::dynamic_targets;

/// Noisy renderings added next to each clean training utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    pub noisy_copies: usize,
    pub snr_range_db: (f64, f64),
    pub seed: u64,
}

/// Fine-tuning schedule for [`extend_ppg_on_corpus`]: only one layer
/// moves, so it tolerates a larger step than training from scratch.
pub fn extension_train_config() -> PpgTrainConfig {
    PpgTrainConfig {
        epochs: 8,
        learning_rate: 3e-3,
        lr_decay: 0.8,
        ..PpgTrainConfig::default()
    }
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            noisy_copies: 2,
            snr_range_db: (0.0, 30.0),
            seed: 0x5eed,
        }
    }
}

/// Audio-side training set: every training-split utterance of a speaker
/// that is not held out, in any language of `space`.
pub fn ppg_train_records<'m>(manifest: &'m CorpusManifest, space: &PhonemeSpace) -> Result<Vec<&'m ManifestRecord>> {
    let roles = manifest.load_speaker_roles()?;
    let heldout: Vec<&str> = roles
        .iter()
        .filter(|r| r.1 == SpeakerRole::Heldout)
        .map(|r| r.0.as_str())
        .collect();
    Ok(manifest
        .records
        .iter()
        .filter(|r| {
            r.split == Split::Train
                && !heldout.contains(&r.speaker_id.as_str())
                && space.has_language(&r.language_id)
        })
        .collect())
}

/// Every test-split utterance in a language of `space` (this includes all
/// of the held-out speakers).
pub fn ppg_heldout_records<'m>(manifest: &'m CorpusManifest, space: &PhonemeSpace) -> Vec<&'m ManifestRecord> {
    manifest
        .records
        .iter()
        .filter(|r| r.split == Split::Test && space.has_language(&r.language_id))
        .collect()
}

fn labels(manifest: &CorpusManifest, r: &ManifestRecord, space: &PhonemeSpace) -> Result<FrameLabels> {
    FrameLabels::new(manifest.load_alignment(r)?.frame_labels(space)?, space)
}

pub fn build_ppg_examples(
    manifest: &CorpusManifest,
    records: &[&ManifestRecord],
    space: &PhonemeSpace,
    aug: &Augmentation,
) -> Result<Vec<PpgExample>> {
    records
        .par_iter()
        .map(|r| {
            let wave = manifest.load_wave(r)?;
            let labels = labels(manifest, r, space)?;
            let mut variants = vec![dynamic_features(&UtteranceFeatures::extract(&wave)?.log_mel)?];
            let s = mix_seed(aug.seed, fnv1a64(r.utterance_id.as_bytes()));
            let mut rng = RngStream::new(s);
            for c in 0..aug.noisy_copies {
                let kind = NoiseKind::ALL[rng.below(NoiseKind::ALL.len())];
                let snr = rng.uniform(aug.snr_range_db.0, aug.snr_range_db.1);
                let noise = synth_noise(kind, wave.len() + SAMPLE_RATE_HZ as usize, mix_seed(s, 2 * c as u64 + 1));
                let noisy = mix_noise(&wave, &noise, snr, mix_seed(s, 2 * c as u64 + 2))?;
                variants.push(dynamic_features(&UtteranceFeatures::extract(&noisy)?.log_mel)?);
            }
            if variants[0].rows() != labels.labels.len() {
                return Err(Error::LengthMismatch(format!(
                    "{}: {} frames of audio, {} aligned frames",
                    r.utterance_id,
                    variants[0].rows(),
                    labels.labels.len()
                )));
            }
            Ok(PpgExample { variants, labels })
        })
        .collect()
}

/// Clean features, labels and (optionally) an interior-frame mask.
pub type PpgEvalItem = (FeatureMatrix, FrameLabels, Option<Vec<bool>>);

pub fn build_ppg_eval_set(
    manifest: &CorpusManifest,
    records: &[&ManifestRecord],
    space: &PhonemeSpace,
    margin: Option<usize>,
) -> Result<Vec<PpgEvalItem>> {
    records
        .par_iter()
        .map(|r| {
            let wave = manifest.load_wave(r)?;
            let align = manifest.load_alignment(r)?;
            let x = dynamic_features(&UtteranceFeatures::extract(&wave)?.log_mel)?;
            let y = FrameLabels::new(align.frame_labels(space)?, space)?;
            Ok((x, y, margin.map(|m| align.interior_mask(m))))
        })
        .collect()
}

/// Face-speaker utterances in the training language for one split.
pub fn fap_records<'m>(manifest: &'m CorpusManifest, spec: &SplitSpec, split: Split) -> Vec<&'m ManifestRecord> {
    manifest
        .records
        .iter()
        .filter(|r| r.speaker_id == spec.face_speaker && r.language_id == spec.train_language && r.split == split)
        .collect()
}

struct Raw {
    features: FeatureMatrix,
    energy: FeatureMatrix,
    ppg: Option<crate::phoneme_space::Ppg>,
    target: ndarray::Array2<f64>,
    emotion: crate::fap_predictor::EmotionLabel,
}

/// Model inputs and static+dynamic targets for `records`. With `fit`, the
/// model's energy (and cepstral) normalisation is first frozen from these
/// same utterances.
pub fn build_fap_examples(
    manifest: &CorpusManifest,
    records: &[&ManifestRecord],
    model: &mut FapModel,
    ppg: Option<&PpgModel>,
    fit: bool,
) -> Result<Vec<FapExample>> {
    let kind = model.features.kind;
    if kind == FapInputKind::Ppg && ppg.is_none() {
        return Err(Error::BadConfig("posteriorgram input needs a posteriorgram model".into()));
    }
    let raw = records
        .par_iter()
        .map(|r| -> Result<Raw> {
            let wave = manifest.load_wave(r)?;
            let feats = UtteranceFeatures::extract(&wave)?;
            let (features, ppg) = match (kind, ppg) {
                (FapInputKind::Ppg, Some(p)) => {
                    let g = extract_ppg(p, &dynamic_features(&feats.log_mel)?)?;
                    (FeatureMatrix::new(g.matrix().clone(), 10.0, crate::dsp::FeatureKind::Ppg)?, Some(g))
                }
                _ => (mfcc_from_log_mel(&feats.log_mel)?, None),
            };
            let fap = manifest.load_fap(r)?;
            Ok(Raw {
                features,
                energy: feats.energy,
                ppg,
                target: dynamic_targets(fap.data().view()),
                emotion: r.emotion,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if fit {
        let pairs: Vec<_> = raw.iter().map(|r| (&r.features, &r.energy)).collect();
        fit_input_statistics(model, &pairs)?;
    }
    raw.into_iter()
        .map(|r| {
            let input = match &r.ppg {
                Some(g) => assemble_input(model, g, &r.energy, r.emotion)?,
                None => assemble_mfcc_input(model, &r.features, &r.energy, r.emotion)?,
            };
            Ok(FapExample {
                input,
                target: r.target,
                emotion: r.emotion,
            })
        })
        .collect()
}

/// Trains a fresh extractor on the manifest's space: training-split audio of
/// the non-held-out speakers (plus noisy copies), scored each epoch on every
/// test-split utterance.
pub fn train_ppg_on_corpus(
    manifest: &CorpusManifest,
    cfg: &PpgExtractorConfig,
    hp: &PpgTrainConfig,
    aug: &Augmentation,
    init_seed: u64,
    seed: u64,
) -> Result<(PpgModel, TrainReport)> {
    let space = manifest.load_space()?;
    let mut model = build_ppg_model(cfg, &space, init_seed)?;
    let train = build_ppg_examples(manifest, &ppg_train_records(manifest, &space)?, &space, aug)?;
    let heldout = build_ppg_eval_set(manifest, &ppg_heldout_records(manifest, &space), &space, None)?;
    let report = train_ppg(&mut model, &train, &heldout, hp, seed)?;
    Ok((model, report))
}

/// Appends the units `manifest` adds to `base`'s space and fine-tunes only
/// their output rows. Everything `base` already knows, including its input
/// normalisation, stays fixed. Old-language utterances stay in the training
/// set: they never move the old rows, but without them nothing teaches the
/// new rows to stay quiet on old-language speech.
pub fn extend_ppg_on_corpus(
    base: &PpgModel,
    manifest: &CorpusManifest,
    hp: &PpgTrainConfig,
    aug: &Augmentation,
    init_seed: u64,
    seed: u64,
) -> Result<(PpgModel, TrainReport)> {
    let space = manifest.load_space()?;
    let mut model = extend_ppg_model(base, &space, init_seed)?;
    let hp = PpgTrainConfig {
        trainable_outputs: Some((base.space.len()..space.len()).collect()),
        fit_normalization: false,
        ..hp.clone()
    };
    let records = ppg_train_records(manifest, &space)?;
    if records.iter().all(|r| base.space.has_language(&r.language_id)) {
        return Err(Error::EmptySplit("training utterances in the new languages".into()));
    }
    let train = build_ppg_examples(manifest, &records, &space, aug)?;
    let heldout = build_ppg_eval_set(manifest, &ppg_heldout_records(manifest, &space), &space, None)?;
    let report = train_ppg(&mut model, &train, &heldout, &hp, seed)?;
    Ok((model, report))
}

/// Builds and trains a face-parameter model on the face speaker's
/// training-language utterances (test split held out for monitoring).
#[allow(clippy::too_many_arguments)]
pub fn train_fap_on_corpus(
    manifest: &CorpusManifest,
    spec: &SplitSpec,
    cfg: &FapPredictorConfig,
    features: &FapFeatureSpec,
    ppg: Option<&PpgModel>,
    hp: &FapTrainConfig,
    init_seed: u64,
    seed: u64,
) -> Result<(FapModel, FapTrainReport)> {
    let mut model = build_fap_model(cfg, features, init_seed)?;
    let train = build_fap_examples(manifest, &fap_records(manifest, spec, Split::Train), &mut model, ppg, true)?;
    if train.is_empty() {
        return Err(Error::EmptySplit("face-speaker training utterances".into()));
    }
    let heldout = build_fap_examples(manifest, &fap_records(manifest, spec, Split::Test), &mut model, ppg, false)?;
    let report = train_fap(&mut model, &train, &heldout, hp, seed)?;
    Ok((model, report))
}
