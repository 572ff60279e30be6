use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Dimension of a face-parameter frame.
pub const FAP_DIM: usize = 32;
/// Eye and brow parameters.
pub const EYE_DIMS: std::ops::Range<usize> = 0..5;
/// Mouth group; zero is the closed mouth.
pub const MOUTH_DIMS: std::ops::Range<usize> = 5..20;
/// Expressiveness group, modulated by emotion.
pub const EXPRESSIVE_DIMS: std::ops::Range<usize> = 20..25;
/// Head pose, modulated by emotion.
pub const HEAD_DIMS: std::ops::Range<usize> = 25..32;
/// Every dimension emotion modulates.
pub const EMOTION_DIMS: std::ops::Range<usize> = 20..32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmotionLabel {
    Neutral,
    Angry,
    Happy,
    Sad,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 4] = [
        EmotionLabel::Neutral,
        EmotionLabel::Angry,
        EmotionLabel::Happy,
        EmotionLabel::Sad,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Angry => "angry",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Sad => "sad",
        }
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }

    /// `(gain, offset)` applied to the expressive group and to head pose.
    pub fn modulation(self) -> [(f64, f64); 2] {
        match self {
            EmotionLabel::Neutral => [(1.0, 0.0), (1.0, 0.0)],
            EmotionLabel::Angry => [(1.4, 0.35), (1.2, 0.25)],
            EmotionLabel::Happy => [(1.25, 0.5), (1.1, -0.2)],
            EmotionLabel::Sad => [(0.6, -0.45), (0.8, -0.35)],
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EmotionLabel::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                Error::BadConfig(format!(
                    "unknown emotion {s:?} (expected neutral, angry, happy or sad)"
                ))
            })
    }
}

/// `T x 32` face parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FapSequence {
    data: Array2<f64>,
}

impl FapSequence {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.ncols() != FAP_DIM {
            return Err(Error::DimMismatch {
                expected: FAP_DIM,
                found: data.ncols(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadConfig("face parameters must be finite".into()));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_and_nothing_else_parses() {
        for e in EmotionLabel::ALL {
            assert_eq!(e.name().parse::<EmotionLabel>().unwrap(), e);
            assert_eq!(e.one_hot().iter().sum::<f64>(), 1.0);
            assert_eq!(e.one_hot()[e.index()], 1.0);
        }
        for bad in ["Neutral", "surprised", "", "sad "] {
            assert!(bad.parse::<EmotionLabel>().is_err());
        }
        assert_eq!(EmotionLabel::Neutral.one_hot(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn groups_partition_the_frame() {
        assert_eq!(EYE_DIMS.len() + MOUTH_DIMS.len() + EXPRESSIVE_DIMS.len() + HEAD_DIMS.len(), FAP_DIM);
        assert_eq!(EYE_DIMS.len() + MOUTH_DIMS.len() + EXPRESSIVE_DIMS.len(), 25);
        assert_eq!(HEAD_DIMS.len(), 7);
    }

    #[test]
    fn fap_sequence_checks_width() {
        assert!(FapSequence::new(Array2::zeros((3, 32))).is_ok());
        assert!(matches!(
            FapSequence::new(Array2::zeros((3, 31))),
            Err(Error::DimMismatch { expected: 32, found: 31 })
        ));
    }
}
