//! Speech-driven facial animation from phonetic posteriorgrams.
//!
//! The pipeline: 16 kHz speech → log-mel features → a frame classifier over a
//! multilingual phoneme space (the posteriorgram, PPG) → a bidirectional LSTM
//! regressor conditioned on frame energy and an emotion label → maximum
//! likelihood parameter generation (MLPG) → 32-dim facial animation
//! parameters (FAP).

pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod fap_predictor;
pub mod nnet;
pub mod phoneme_space;
pub mod pipeline;
pub mod ppg_extractor;
pub mod trajectory;

pub use error::{Error, Result};
