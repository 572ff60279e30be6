use ndarray::{Array2, Axis};

use super::{CorpusModel, Segment, MIN_MOUTH_OPENING};
use crate::error::{Error, Result};
use crate::fap_predictor::{EmotionLabel, FapSequence, EXPRESSIVE_DIMS, FAP_DIM, HEAD_DIMS, MOUTH_DIMS};

/// Width of the coarticulation kernel, in frames.
pub const COARTICULATION_FRAMES: usize = 9;

/// Closed-mouth band: every mouth dim within this distance of the silence
/// target (0). Half the smallest opening any phoneme uses, so a frame in the
/// band is nearer to closed than to any articulated target.
pub const CLOSED_MOUTH_TOLERANCE: f64 = MIN_MOUTH_OPENING / 2.0;

/// True when all mouth dims of a 32-dim frame are inside the closed band.
pub fn mouth_closed(frame: ndarray::ArrayView1<f64>) -> bool {
    MOUTH_DIMS.into_iter().all(|d| frame[d].abs() <= CLOSED_MOUTH_TOLERANCE)
}

/// Hann window of `n` strictly positive taps, normalised to sum 1.
pub fn hann_kernel(n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n)
        .map(|i| {
            let x = std::f64::consts::PI * (i + 1) as f64 / (n + 1) as f64;
            x.sin().powi(2)
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Ground-truth face track: per-phoneme targets held over each span, smoothed
/// per dimension with the Hann kernel (ends replicated), then modulated by
/// emotion on dims 20–31.
pub fn articulatory_oracle(
    model: &CorpusModel,
    phones: &[Segment],
    emotion: EmotionLabel,
) -> Result<FapSequence> {
    let t_len: usize = phones.iter().map(|s| s.1).sum();
    if phones.iter().any(|s| s.1 == 0) {
        return Err(Error::BadConfig("phoneme durations must be at least one frame".into()));
    }
    let mut steps = Array2::zeros((t_len, FAP_DIM));
    let mut t = 0;
    for (unit, dur) in phones {
        // Silence carries the closed-mouth target by construction.
        let target = model.phoneme(unit)?.articulatory_target;
        for _ in 0..*dur {
            steps
                .row_mut(t)
                .assign(&ndarray::ArrayView1::from(&target[..]));
            t += 1;
        }
    }
    let kernel = hann_kernel(COARTICULATION_FRAMES);
    let r = COARTICULATION_FRAMES as isize / 2;
    let mut out = Array2::zeros((t_len, FAP_DIM));
    for (t, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        for (j, w) in kernel.iter().enumerate() {
            let src = (t as isize + j as isize - r).clamp(0, t_len as isize - 1) as usize;
            row.scaled_add(*w, &steps.row(src));
        }
    }
    let [(ge, oe), (gh, oh)] = emotion.modulation();
    for mut row in out.axis_iter_mut(Axis(0)) {
        for d in EXPRESSIVE_DIMS {
            row[d] = ge * row[d] + oe;
        }
        for d in HEAD_DIMS {
            row[d] = gh * row[d] + oh;
        }
    }
    FapSequence::new(out)
}
