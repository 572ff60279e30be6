//! Objective evaluation: MSE and correlation against the oracle face track,
//! the cepstral baseline front end, speaker/language splits and SNR sweeps.

mod metrics;
mod report;
mod run;

pub use metrics::{
    dct_ii, mfcc_baseline_features, mfcc_from_log_mel, mse, pearson_mean, pearson_per_dim,
    MFCC_CEPSTRA, MFCC_DIM,
};
pub use report::{emit_csv, read_csv, EvalReport, EvalRow, CSV_HEADER};
pub use run::{
    generate, silence_closure, ClosureCount, noise_for, predict_all, run_snr_sweep, run_split_eval, smooth_means,
    stored_precision, system_input, system_ppg, EvalSplit, EvalSystem, Smoothing,
    SnrSweepConfig, SplitSpec, UtteranceFeatures, DEFAULT_EVAL_SAMPLES, DEFAULT_NOISE_COPIES,
};
