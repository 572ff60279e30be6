//! `ppgface` command line: corpus generation, feature extraction, training,
//! generation, smoothing and evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad data or config,
//! 3 internal invariant violation.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use config::RunConfig;
use ppgface::corpus::{gen_corpus, read_manifest, CorpusManifest};
use ppgface::dsp::wav::read_wav;
use ppgface::dsp::{read_fmtx, write_fmtx, FeatureKind, FeatureMatrix};
use ppgface::eval::{
    emit_csv, generate, mfcc_from_log_mel, run_snr_sweep, run_split_eval, smooth_means, EvalReport,
    EvalSplit, EvalSystem, Smoothing, SplitSpec, UtteranceFeatures, MFCC_DIM,
};
use ppgface::fap_predictor::{EmotionLabel, FapFeatureSpec, FapInputKind, FapModel, FAP_OUTPUT_DIM};
use ppgface::pipeline::{extend_ppg_on_corpus, train_fap_on_corpus, train_ppg_on_corpus};
use ppgface::ppg_extractor::{extract_ppg, ppg_features, ppg_to_fmtx, PpgModel};
use ppgface::Error;

#[derive(Parser)]
#[command(name = "ppgface", version, about = "Speech-driven facial animation parameters")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthetic corpus.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Per-utterance feature files.
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Posteriorgram extractor.
    #[command(subcommand)]
    Ppg(PpgCmd),
    /// Face-parameter regressor.
    #[command(subcommand)]
    Fap(FapCmd),
    /// Audio in, face parameters out.
    Generate(GenerateArgs),
    /// MLPG over stored `T x 96` means (as written by `generate --smooth none`).
    Smooth(SmoothArgs),
    /// Evaluation reports (CSV).
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Configuration.
    #[command(subcommand)]
    Config(ConfigCmd),
}

#[derive(Subcommand)]
enum CorpusCmd {
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `[corpus] seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureChoice {
    Logmel,
    Energy,
    Mfcc,
}

#[derive(Subcommand)]
enum FeaturesCmd {
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        kind: FeatureChoice,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PpgCmd {
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `[ppg_train] seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum FapCmd {
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Required when `[fap] input = ppg`.
        #[arg(long)]
        ppg_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `[fap_train] seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SmoothChoice {
    Mlpg,
    Window,
    None,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ppg_model: Option<PathBuf>,
    #[arg(long)]
    fap_model: PathBuf,
    #[arg(long)]
    audio: PathBuf,
    #[arg(long, default_value = "neutral", value_parser = ["neutral", "angry", "happy", "sad"])]
    emotion: String,
    #[arg(long, value_enum, default_value = "mlpg")]
    smooth: SmoothChoice,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SmoothArgs {
    #[arg(long)]
    fap_model: PathBuf,
    /// `T x 96` means.
    #[arg(long)]
    means: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SystemsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// `NAME=FAP_MODEL[,PPG_MODEL]`; repeat for each system.
    #[arg(long = "system", required = true)]
    systems: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// MSE and correlation per split.
    Split {
        #[command(flatten)]
        common: SystemsArgs,
        /// normal, unseen_speaker, unseen_language, mixed or all.
        #[arg(long, default_value = "all")]
        split: Vec<String>,
        /// Overrides `[eval] samples`.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// MSE over the SNR grid.
    Snr {
        #[command(flatten)]
        common: SystemsArgs,
        #[arg(long, default_value = "normal")]
        split: String,
        /// Overrides `[eval] seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum ConfigCmd {
    /// Print the effective configuration (defaults when no file is given).
    Show {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn manifest(path: &Path) -> CliResult<CorpusManifest> {
    Ok(read_manifest(path)?)
}

fn write_matrix(path: &Path, m: FeatureMatrix, meta: &[(String, String)]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    }
    Ok(write_fmtx(path, &m, meta)?)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Corpus(CorpusCmd::Gen { config, out, seed }) => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.corpus.master_seed = s;
            }
            let m = gen_corpus(&cfg.corpus, &out)?;
            log::info!("wrote {} utterances to {}", m.records.len(), out.display());
        }
        Cmd::Features(FeaturesCmd::Extract { manifest: mp, kind, out }) => {
            let m = manifest(&mp)?;
            std::fs::create_dir_all(&out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
            let tag = match kind {
                FeatureChoice::Logmel => "logmel",
                FeatureChoice::Energy => "energy",
                FeatureChoice::Mfcc => "mfcc",
            };
            m.records.par_iter().try_for_each(|r| -> CliResult<()> {
                let f = UtteranceFeatures::extract(&m.load_wave(r)?)?;
                let mat = match kind {
                    FeatureChoice::Logmel => f.log_mel,
                    FeatureChoice::Energy => f.energy,
                    FeatureChoice::Mfcc => mfcc_from_log_mel(&f.log_mel)?,
                };
                write_matrix(&out.join(format!("{}.{tag}.fmtx", r.utterance_id)), mat, &[])
            })?;
            log::info!("wrote {} {tag} files to {}", m.records.len(), out.display());
        }
        Cmd::Ppg(PpgCmd::Train { config, manifest: mp, out, seed }) => {
            let cfg = load_config(config.as_deref())?;
            let m = manifest(&mp)?;
            let seed = seed.unwrap_or(cfg.ppg_train_seed);
            let (model, report) = match &cfg.ppg_base_model {
                Some(base) => {
                    let base = PpgModel::load(base)?;
                    extend_ppg_on_corpus(&base, &m, &cfg.ppg_extend, &cfg.augmentation, cfg.ppg_init_seed, seed)?
                }
                None => train_ppg_on_corpus(&m, &cfg.ppg, &cfg.ppg_train, &cfg.augmentation, cfg.ppg_init_seed, seed)?,
            };
            if let Some(a) = report.final_heldout_accuracy() {
                log::info!("held-out frame accuracy {a:.4}");
            }
            model.save(&out)?;
        }
        Cmd::Ppg(PpgCmd::Extract { model, audio, out }) => {
            let model = PpgModel::load(&model)?;
            let ppg = extract_ppg(&model, &ppg_features(&read_wav(&audio)?)?)?;
            let (mat, meta) = ppg_to_fmtx(&ppg)?;
            write_matrix(&out, mat, &meta)?;
        }
        Cmd::Fap(FapCmd::Train { config, manifest: mp, ppg_model, out, seed }) => {
            let cfg = load_config(config.as_deref())?;
            let m = manifest(&mp)?;
            let spec = SplitSpec::from_manifest(&m, cfg.train_language.as_deref())?;
            let ppg = match (cfg.fap_input, &ppg_model) {
                (FapInputKind::Ppg, Some(p)) => Some(PpgModel::load(p)?),
                (FapInputKind::Ppg, None) => {
                    return Err(Failure::Usage("posteriorgram input needs --ppg-model".into()))
                }
                (FapInputKind::Mfcc, _) => None,
            };
            let features = match &ppg {
                Some(p) => FapFeatureSpec::ppg(&p.space),
                None => FapFeatureSpec::mfcc(MFCC_DIM),
            };
            let (model, report) = train_fap_on_corpus(
                &m,
                &spec,
                &cfg.fap,
                &features,
                ppg.as_ref(),
                &cfg.fap_train,
                cfg.fap_init_seed,
                seed.unwrap_or(cfg.fap_train_seed),
            )?;
            log::info!("held-out static MSE by emotion {:?}", report.heldout_mse);
            model.save(&out)?;
        }
        Cmd::Generate(a) => {
            let fap = FapModel::load(&a.fap_model)?;
            let ppg = a.ppg_model.as_deref().map(PpgModel::load).transpose()?;
            let system = EvalSystem::new("cli", ppg.as_ref(), &fap).map_err(|e| match e {
                Error::BadConfig(m) => Failure::Usage(m),
                e => e.into(),
            })?;
            let emotion: EmotionLabel = a.emotion.parse()?;
            let (smoothing, name) = match a.smooth {
                SmoothChoice::Mlpg => (Smoothing::Mlpg, "mlpg"),
                SmoothChoice::Window => (Smoothing::Window, "window"),
                SmoothChoice::None => (Smoothing::None, "none"),
            };
            let out = generate(&system, &read_wav(&a.audio)?, emotion, smoothing)?;
            let meta = vec![
                ("emotion".to_string(), emotion.to_string()),
                ("smoothing".to_string(), name.to_string()),
            ];
            write_matrix(&a.out, FeatureMatrix::new(out, 10.0, FeatureKind::Fap)?, &meta)?;
        }
        Cmd::Smooth(a) => {
            let fap = FapModel::load(&a.fap_model)?;
            let (means, mut meta) = read_fmtx(&a.means)?;
            if means.cols() != FAP_OUTPUT_DIM {
                return Err(Error::DimMismatch {
                    expected: FAP_OUTPUT_DIM,
                    found: means.cols(),
                }
                .into());
            }
            let statics = smooth_means(&fap, means.data())?;
            match meta.iter_mut().find(|(k, _)| k == "smoothing") {
                Some(kv) => kv.1 = "mlpg".into(),
                None => meta.push(("smoothing".into(), "mlpg".into())),
            }
            write_matrix(&a.out, FeatureMatrix::new(statics.into_data(), 10.0, FeatureKind::Fap)?, &meta)?;
        }
        Cmd::Eval(cmd) => eval(cmd)?,
        Cmd::Config(ConfigCmd::Show { config }) => print!("{}", load_config(config.as_deref())?.to_text()),
    }
    Ok(())
}

/// Parsed `NAME=FAP[,PPG]` entries with their models loaded.
struct LoadedSystems {
    names: Vec<String>,
    faps: Vec<FapModel>,
    ppgs: Vec<Option<PpgModel>>,
}

impl LoadedSystems {
    fn load(specs: &[String]) -> CliResult<Self> {
        let mut s = LoadedSystems {
            names: vec![],
            faps: vec![],
            ppgs: vec![],
        };
        for spec in specs {
            let (name, paths) = spec
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--system {spec:?}: expected NAME=FAP_MODEL[,PPG_MODEL]")))?;
            let mut paths = paths.split(',');
            let fap = FapModel::load(Path::new(paths.next().unwrap_or_default()))?;
            let ppg = paths.next().map(|p| PpgModel::load(Path::new(p))).transpose()?;
            if paths.next().is_some() {
                return Err(Failure::Usage(format!("--system {spec:?}: too many paths")));
            }
            s.names.push(name.to_string());
            s.faps.push(fap);
            s.ppgs.push(ppg);
        }
        Ok(s)
    }

    fn systems(&self) -> CliResult<Vec<EvalSystem<'_>>> {
        self.names
            .iter()
            .zip(&self.faps)
            .zip(&self.ppgs)
            .map(|((n, f), p)| {
                EvalSystem::new(n, p.as_ref(), f).map_err(|e| match e {
                    Error::BadConfig(m) => Failure::Usage(m),
                    e => e.into(),
                })
            })
            .collect()
    }
}

fn eval(cmd: EvalCmd) -> CliResult<()> {
    let common = match &cmd {
        EvalCmd::Split { common, .. } | EvalCmd::Snr { common, .. } => common,
    };
    let mut cfg = load_config(common.config.as_deref())?;
    let m = manifest(&common.manifest)?;
    let loaded = LoadedSystems::load(&common.systems)?;
    let systems = loaded.systems()?;
    let spec = SplitSpec::from_manifest(&m, cfg.train_language.as_deref())?;
    let parse_split = |s: &str| s.parse::<EvalSplit>().map_err(|e| Failure::Usage(e.to_string()));
    let report = match &cmd {
        EvalCmd::Split { split, samples, .. } => {
            let splits: Vec<EvalSplit> = if split.iter().any(|s| s == "all") {
                EvalSplit::ALL.to_vec()
            } else {
                split.iter().map(|s| parse_split(s)).collect::<CliResult<_>>()?
            };
            let n = samples.unwrap_or(cfg.eval_samples);
            let mut report = EvalReport::default();
            for s in splits {
                report.extend(run_split_eval(&systems, &m, &spec, s, n)?);
            }
            report
        }
        EvalCmd::Snr { split, seed, .. } => {
            if let Some(s) = seed {
                cfg.snr.seed = *s;
            }
            run_snr_sweep(&systems, &m, &spec, parse_split(split)?, &cfg.snr)?
        }
    };
    emit_csv(&report, &common.out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "warn" } else { "info" }))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::Usage(m))) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Ok(Err(Failure::Data(m))) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Ok(Err(Failure::Internal(m))) => {
            eprintln!("internal error: {m}");
            ExitCode::from(3)
        }
        Err(_) => ExitCode::from(3),
    }
}
