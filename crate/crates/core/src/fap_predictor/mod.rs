//! BLSTM regressor from per-frame posteriorgrams (or cepstra), frame energy
//! and an emotion label to face-parameter means with dynamics.

mod emotion;
mod model;

pub use emotion::{
    EmotionLabel, FapSequence, EMOTION_DIMS, EXPRESSIVE_DIMS, EYE_DIMS, FAP_DIM, HEAD_DIMS,
    MOUTH_DIMS,
};
pub use model::{
    assemble_input, assemble_mfcc_input, build_fap_model, fit_input_statistics,
    heldout_static_mse, predict_fap, predict_fap_means, train_fap, zero_fap_model, FapExample,
    FapFeatureSpec, FapInputKind, FapModel, FapNet, FapPredictorConfig, FapTrainConfig,
    FapTrainReport, EMOTION_INPUT_DIM, FAP_OUTPUT_DIM,
};
