//! `key = value` run configuration, grouped in `[section]`s.
//!
//! Every key is optional and falls back to the default printed by
//! `ppgface config show`. Unknown sections or keys are rejected, and
//! relative paths are taken relative to the file that names them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ppgface::corpus::{CorpusConfig, LanguageDef};
use ppgface::eval::{SnrSweepConfig, DEFAULT_EVAL_SAMPLES};
use ppgface::fap_predictor::{FapInputKind, FapPredictorConfig, FapTrainConfig};
use ppgface::pipeline::{extension_train_config, Augmentation};
use ppgface::ppg_extractor::{PpgExtractorConfig, PpgTrainConfig};
use ppgface::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub ppg: PpgExtractorConfig,
    pub ppg_init_seed: u64,
    /// Existing extractor to extend to the manifest's space instead of
    /// training from scratch.
    pub ppg_base_model: Option<PathBuf>,
    pub ppg_train: PpgTrainConfig,
    /// Schedule used instead of `ppg_train` when extending `ppg_base_model`.
    pub ppg_extend: PpgTrainConfig,
    pub augmentation: Augmentation,
    pub ppg_train_seed: u64,
    pub fap: FapPredictorConfig,
    pub fap_input: FapInputKind,
    pub fap_init_seed: u64,
    /// Language whose face-speaker utterances train the regressor; the
    /// manifest's first language when unset.
    pub train_language: Option<String>,
    pub fap_train: FapTrainConfig,
    pub fap_train_seed: u64,
    pub eval_samples: usize,
    pub snr: SnrSweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            ppg: PpgExtractorConfig::default(),
            ppg_init_seed: 1,
            ppg_base_model: None,
            ppg_train: PpgTrainConfig::default(),
            ppg_extend: extension_train_config(),
            augmentation: Augmentation::default(),
            ppg_train_seed: 100,
            fap: FapPredictorConfig::default(),
            fap_input: FapInputKind::Ppg,
            fap_init_seed: 7,
            train_language: None,
            fap_train: FapTrainConfig::default(),
            fap_train_seed: 11,
            eval_samples: DEFAULT_EVAL_SAMPLES,
            snr: SnrSweepConfig::default(),
        }
    }
}

fn err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| err(line, format!("bad value {v:?} for {key}")))
}

fn parse_list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| parse(line, key, x.trim())).collect()
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(err(line, format!("bad value {v:?} for {key} (expected true/false)"))),
    }
}

/// `id:phonemes[:shares_targets_with]`, comma separated.
fn parse_languages(line: usize, v: &str) -> Result<Vec<LanguageDef>> {
    v.split(',')
        .map(|item| {
            let f: Vec<&str> = item.trim().split(':').collect();
            match f.as_slice() {
                [id, n] => Ok(LanguageDef::new(id, parse(line, "languages", n)?, None)),
                [id, n, share] => Ok(LanguageDef::new(id, parse(line, "languages", n)?, Some(share))),
                _ => Err(err(line, format!("bad language {item:?} (expected id:count[:shared])"))),
            }
        })
        .collect()
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c = Self::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            if let Some(name) = l.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !["corpus", "ppg", "ppg_train", "ppg_extend", "fap", "fap_train", "eval"].contains(&name) {
                    return Err(err(line, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected key = value, got {l:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| err(line, format!("key {k:?} outside any section")))?;
            c.set(sec, k, v, line, base)?;
        }
        Ok(c)
    }

    fn set(&mut self, sec: &str, k: &str, v: &str, line: usize, base: &Path) -> Result<()> {
        let key = format!("{sec}.{k}");
        let key = key.as_str();
        match (sec, k) {
            ("corpus", "languages") => self.corpus.languages = parse_languages(line, v)?,
            ("corpus", "speakers") => self.corpus.n_speakers = parse(line, key, v)?,
            ("corpus", "heldout_speakers") => self.corpus.n_heldout_speakers = parse(line, key, v)?,
            ("corpus", "utterances_per_speaker") => self.corpus.utterances_per_speaker = parse(line, key, v)?,
            ("corpus", "face_utterances") => self.corpus.face_utterances = parse(line, key, v)?,
            ("corpus", "test_fraction") => self.corpus.test_fraction = parse(line, key, v)?,
            ("corpus", "min_duration_ms") => self.corpus.min_duration_ms = parse(line, key, v)?,
            ("corpus", "max_duration_ms") => self.corpus.max_duration_ms = parse(line, key, v)?,
            ("corpus", "emotion_ratio") => {
                let r: Vec<f64> = parse_list(line, key, v)?;
                self.corpus.emotion_ratio = r
                    .try_into()
                    .map_err(|_| err(line, "emotion_ratio needs four weights"))?;
            }
            ("corpus", "seed") => self.corpus.master_seed = parse(line, key, v)?,

            ("ppg", "context") => self.ppg.context = parse(line, key, v)?,
            ("ppg", "conv_channels") => self.ppg.conv_channels = parse(line, key, v)?,
            ("ppg", "conv_kernel") => self.ppg.conv_kernel = parse(line, key, v)?,
            ("ppg", "dense_layers") => self.ppg.dense_layers = parse(line, key, v)?,
            ("ppg", "dense_units") => self.ppg.dense_units = parse(line, key, v)?,
            ("ppg", "init_seed") => self.ppg_init_seed = parse(line, key, v)?,
            ("ppg", "base_model") => {
                self.ppg_base_model = (!v.is_empty()).then(|| base.join(v));
            }

            ("ppg_train", "epochs") => self.ppg_train.epochs = parse(line, key, v)?,
            ("ppg_train", "learning_rate") => self.ppg_train.learning_rate = parse(line, key, v)?,
            ("ppg_train", "lr_decay") => self.ppg_train.lr_decay = parse(line, key, v)?,
            ("ppg_train", "batch_utterances") => self.ppg_train.batch_utterances = parse(line, key, v)?,
            ("ppg_train", "clip_norm") => self.ppg_train.clip_norm = parse(line, key, v)?,
            ("ppg_train", "clean_probability") => self.ppg_train.clean_probability = parse(line, key, v)?,
            ("ppg_train", "target_accuracy") => {
                self.ppg_train.target_accuracy = match v {
                    "" | "none" => None,
                    _ => Some(parse(line, key, v)?),
                }
            }
            ("ppg_train", "noisy_copies") => self.augmentation.noisy_copies = parse(line, key, v)?,
            ("ppg_train", "snr_min_db") => self.augmentation.snr_range_db.0 = parse(line, key, v)?,
            ("ppg_train", "snr_max_db") => self.augmentation.snr_range_db.1 = parse(line, key, v)?,
            ("ppg_train", "augment_seed") => self.augmentation.seed = parse(line, key, v)?,
            ("ppg_train", "seed") => self.ppg_train_seed = parse(line, key, v)?,

            ("ppg_extend", "epochs") => self.ppg_extend.epochs = parse(line, key, v)?,
            ("ppg_extend", "learning_rate") => self.ppg_extend.learning_rate = parse(line, key, v)?,
            ("ppg_extend", "lr_decay") => self.ppg_extend.lr_decay = parse(line, key, v)?,

            ("fap", "input") => {
                self.fap_input = v.parse().map_err(|_| err(line, format!("bad value {v:?} for {key}")))?
            }
            ("fap", "blstm_layers") => self.fap.blstm_layers = parse(line, key, v)?,
            ("fap", "blstm_units") => self.fap.blstm_units = parse(line, key, v)?,
            ("fap", "dense_layers") => self.fap.dense_layers = parse(line, key, v)?,
            ("fap", "dense_units") => self.fap.dense_units = parse(line, key, v)?,
            ("fap", "zoneout") => self.fap.zoneout = parse(line, key, v)?,
            ("fap", "use_energy") => self.fap.use_energy = parse_bool(line, key, v)?,
            ("fap", "init_seed") => self.fap_init_seed = parse(line, key, v)?,
            ("fap", "train_language") => self.train_language = (!v.is_empty()).then(|| v.to_string()),

            ("fap_train", "epochs") => self.fap_train.epochs = parse(line, key, v)?,
            ("fap_train", "learning_rate") => self.fap_train.learning_rate = parse(line, key, v)?,
            ("fap_train", "lr_decay") => self.fap_train.lr_decay = parse(line, key, v)?,
            ("fap_train", "chunk_frames") => self.fap_train.chunk_frames = parse(line, key, v)?,
            ("fap_train", "batch_chunks") => self.fap_train.batch_chunks = parse(line, key, v)?,
            ("fap_train", "clip_norm") => self.fap_train.clip_norm = parse(line, key, v)?,
            ("fap_train", "seed") => self.fap_train_seed = parse(line, key, v)?,

            ("eval", "samples") => {
                self.eval_samples = parse(line, key, v)?;
                self.snr.n_utterances = self.eval_samples;
            }
            ("eval", "snrs_db") => self.snr.snrs_db = parse_list(line, key, v)?,
            ("eval", "noise_copies") => self.snr.copies = parse(line, key, v)?,
            ("eval", "seed") => self.snr.seed = parse(line, key, v)?,
            _ => return Err(err(line, format!("unknown key {k:?} in [{sec}]"))),
        }
        Ok(())
    }

    /// The full effective configuration in the file format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.corpus;
        let langs: Vec<String> = c
            .languages
            .iter()
            .map(|l| match &l.share_targets_with {
                Some(o) => format!("{}:{}:{}", l.id, l.n_phonemes, o),
                None => format!("{}:{}", l.id, l.n_phonemes),
            })
            .collect();
        let _ = writeln!(s, "[corpus]");
        let _ = writeln!(s, "languages = {}", langs.join(", "));
        let _ = writeln!(s, "speakers = {}", c.n_speakers);
        let _ = writeln!(s, "heldout_speakers = {}", c.n_heldout_speakers);
        let _ = writeln!(s, "utterances_per_speaker = {}", c.utterances_per_speaker);
        let _ = writeln!(s, "face_utterances = {}", c.face_utterances);
        let _ = writeln!(s, "test_fraction = {}", c.test_fraction);
        let _ = writeln!(s, "min_duration_ms = {}", c.min_duration_ms);
        let _ = writeln!(s, "max_duration_ms = {}", c.max_duration_ms);
        let _ = writeln!(s, "emotion_ratio = {}", fmt_list(&c.emotion_ratio));
        let _ = writeln!(s, "seed = {}", c.master_seed);

        let p = &self.ppg;
        let _ = writeln!(s, "\n[ppg]");
        let _ = writeln!(s, "context = {}", p.context);
        let _ = writeln!(s, "conv_channels = {}", p.conv_channels);
        let _ = writeln!(s, "conv_kernel = {}", p.conv_kernel);
        let _ = writeln!(s, "dense_layers = {}", p.dense_layers);
        let _ = writeln!(s, "dense_units = {}", p.dense_units);
        let _ = writeln!(s, "init_seed = {}", self.ppg_init_seed);
        let _ = writeln!(
            s,
            "base_model = {}",
            self.ppg_base_model.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        );

        let t = &self.ppg_train;
        let a = &self.augmentation;
        let _ = writeln!(s, "\n[ppg_train]");
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "lr_decay = {}", t.lr_decay);
        let _ = writeln!(s, "batch_utterances = {}", t.batch_utterances);
        let _ = writeln!(s, "clip_norm = {}", t.clip_norm);
        let _ = writeln!(s, "clean_probability = {}", t.clean_probability);
        let _ = writeln!(
            s,
            "target_accuracy = {}",
            t.target_accuracy.map_or("none".to_string(), |v| v.to_string())
        );
        let _ = writeln!(s, "noisy_copies = {}", a.noisy_copies);
        let _ = writeln!(s, "snr_min_db = {}", a.snr_range_db.0);
        let _ = writeln!(s, "snr_max_db = {}", a.snr_range_db.1);
        let _ = writeln!(s, "augment_seed = {}", a.seed);
        let _ = writeln!(s, "seed = {}", self.ppg_train_seed);

        let _ = writeln!(s, "\n[ppg_extend]");
        let _ = writeln!(s, "epochs = {}", self.ppg_extend.epochs);
        let _ = writeln!(s, "learning_rate = {}", self.ppg_extend.learning_rate);
        let _ = writeln!(s, "lr_decay = {}", self.ppg_extend.lr_decay);

        let f = &self.fap;
        let _ = writeln!(s, "\n[fap]");
        let _ = writeln!(s, "input = {}", self.fap_input);
        let _ = writeln!(s, "blstm_layers = {}", f.blstm_layers);
        let _ = writeln!(s, "blstm_units = {}", f.blstm_units);
        let _ = writeln!(s, "dense_layers = {}", f.dense_layers);
        let _ = writeln!(s, "dense_units = {}", f.dense_units);
        let _ = writeln!(s, "zoneout = {}", f.zoneout);
        let _ = writeln!(s, "use_energy = {}", f.use_energy);
        let _ = writeln!(s, "init_seed = {}", self.fap_init_seed);
        let _ = writeln!(s, "train_language = {}", self.train_language.as_deref().unwrap_or(""));

        let t = &self.fap_train;
        let _ = writeln!(s, "\n[fap_train]");
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "lr_decay = {}", t.lr_decay);
        let _ = writeln!(s, "chunk_frames = {}", t.chunk_frames);
        let _ = writeln!(s, "batch_chunks = {}", t.batch_chunks);
        let _ = writeln!(s, "clip_norm = {}", t.clip_norm);
        let _ = writeln!(s, "seed = {}", self.fap_train_seed);

        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "samples = {}", self.eval_samples);
        let _ = writeln!(s, "snrs_db = {}", fmt_list(&self.snr.snrs_db));
        let _ = writeln!(s, "noise_copies = {}", self.snr.copies);
        let _ = writeln!(s, "seed = {}", self.snr.seed);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = RunConfig::parse("# nothing\n\n", Path::new("/x")).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.snr.snrs_db.len(), 9);
        assert_eq!(c.eval_samples, 500);
    }

    #[test]
    fn shown_config_parses_back_identically() {
        let mut c = RunConfig::default();
        c.corpus.languages.push(LanguageDef::new("lc", 6, None));
        c.ppg_train.target_accuracy = Some(0.95);
        c.ppg_base_model = Some(PathBuf::from("/abs/base.nnck"));
        c.fap_input = FapInputKind::Mfcc;
        c.ppg_extend.epochs = 3;
        c.fap.use_energy = false;
        c.train_language = Some("lb".into());
        c.snr.snrs_db = vec![-5.0, 12.5];
        let back = RunConfig::parse(&c.to_text(), Path::new("/elsewhere")).unwrap();
        assert_eq!(back, c);
        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.to_text(), Path::new(".")).unwrap(), d);
    }

    #[test]
    fn values_and_paths() {
        let text = "[corpus]\nlanguages = la:4, lb:4:la # comment\nseed=9\n\
                    [ppg]\nbase_model = models/base.nnck\n[eval]\nsamples = 12\n";
        let c = RunConfig::parse(text, Path::new("/runs/a")).unwrap();
        assert_eq!(c.corpus.languages[1].share_targets_with.as_deref(), Some("la"));
        assert_eq!(c.corpus.languages[0].n_phonemes, 4);
        assert_eq!(c.corpus.master_seed, 9);
        assert_eq!(c.ppg_base_model, Some(PathBuf::from("/runs/a/models/base.nnck")));
        assert_eq!((c.eval_samples, c.snr.n_utterances), (12, 12));
    }

    #[test]
    fn unknown_or_malformed_input_is_rejected() {
        for bad in [
            "[corpus]\nspeekers = 3\n",
            "[nope]\n",
            "seed = 1\n",
            "[fap]\nuse_energy = maybe\n",
            "[fap]\ninput = wav\n",
            "[corpus]\nemotion_ratio = 1, 2\n",
            "[corpus]\nlanguages = la\n",
            "[ppg]\ncontext\n",
            "[ppg_train]\nepochs = -3\n",
        ] {
            let e = RunConfig::parse(bad, Path::new(".")).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{bad:?}: {e}");
        }
        let e = RunConfig::parse("[corpus]\n\nbogus = 1\n", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }
}
