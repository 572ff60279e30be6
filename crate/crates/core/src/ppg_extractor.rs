//! Frame classifier producing phonetic posteriorgrams.
//!
//! Input is 40 log-mel bins with Δ and ΔΔ (120 dims), z-normalised with
//! statistics frozen at training time. One 21-frame convolution (±10 frames
//! of context) feeds four ReLU dense layers and a linear softmax head over
//! the phoneme space.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::dsp::{
    dynamic_features, log_mel, FeatureKind, FeatureMatrix, FrameConfig, Waveform,
};
use crate::error::{Error, Result};
use crate::nnet::{
    clip_global_norm, conv1d_backward, dense_backward, glorot_uniform, round_to_f32,
    softmax_rows, softmax_xent, Activation, Adam, Checkpoint, Conv1d, Dense, Parameterized,
    RngStream,
};
use crate::phoneme_space::{PhonemeSpace, Ppg};

/// 40 mel bins, each with Δ and ΔΔ.
pub const PPG_INPUT_DIM: usize = 120;

/// Classifier input for a waveform: log-mel plus dynamics.
pub fn ppg_features(wave: &Waveform) -> Result<FeatureMatrix> {
    dynamic_features(&log_mel(wave, &FrameConfig::default())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpgExtractorConfig {
    pub context: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub dense_layers: usize,
    pub dense_units: usize,
}

impl Default for PpgExtractorConfig {
    fn default() -> Self {
        Self {
            context: 10,
            conv_channels: 512,
            conv_kernel: 21,
            dense_layers: 4,
            dense_units: 512,
        }
    }
}

impl PpgExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_kernel != 2 * self.context + 1 {
            return Err(Error::BadConfig(format!(
                "conv_kernel {} must equal 2 * context + 1 = {}",
                self.conv_kernel,
                2 * self.context + 1
            )));
        }
        if self.dense_layers == 0 || self.dense_units == 0 || self.conv_channels == 0 {
            return Err(Error::BadConfig(
                "need at least one dense layer and non-zero widths".into(),
            ));
        }
        Ok(())
    }

    /// Trainable parameter count for a space of `p` units.
    pub fn param_count(&self, p: usize) -> usize {
        let conv = self.conv_channels * PPG_INPUT_DIM * self.conv_kernel + self.conv_channels;
        let first = self.conv_channels * self.dense_units + self.dense_units;
        let rest = (self.dense_layers - 1) * (self.dense_units * self.dense_units + self.dense_units);
        conv + first + rest + self.dense_units * p + p
    }
}

/// Per-frame labels tied to the space they index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabels {
    pub labels: Vec<usize>,
    pub space_checksum: u64,
}

impl FrameLabels {
    pub fn new(labels: Vec<usize>, space: &PhonemeSpace) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= space.len()) {
            return Err(Error::BadConfig(format!(
                "label {bad} outside a {}-unit space",
                space.len()
            )));
        }
        Ok(Self {
            labels,
            space_checksum: space.checksum(),
        })
    }
}

/// One training utterance. `variants` are alternative renderings of the same
/// audio (clean first, then noisy copies); each epoch picks one.
#[derive(Debug, Clone)]
pub struct PpgExample {
    pub variants: Vec<FeatureMatrix>,
    pub labels: FrameLabels,
}

impl PpgExample {
    pub fn clean(features: FeatureMatrix, labels: FrameLabels) -> Self {
        Self {
            variants: vec![features],
            labels,
        }
    }
}

/// The trainable layers; also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgNet {
    pub conv: Conv1d,
    pub hidden: Vec<Dense>,
    pub out: Dense,
}

impl Parameterized for PpgNet {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = self.conv.params();
        for d in &self.hidden {
            v.extend(d.params());
        }
        v.extend(self.out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.conv.params_mut();
        for d in &mut self.hidden {
            v.extend(d.params_mut());
        }
        v.extend(self.out.params_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpgModel {
    pub config: PpgExtractorConfig,
    pub space: PhonemeSpace,
    pub net: PpgNet,
    pub input_mean: Array1<f64>,
    pub input_std: Array1<f64>,
    pub seed: u64,
}

/// Glorot-initialised model (identity input normalisation until trained).
pub fn build_ppg_model(cfg: &PpgExtractorConfig, space: &PhonemeSpace, seed: u64) -> Result<PpgModel> {
    let mut model = zero_ppg_model(cfg, space)?;
    let mut rng = RngStream::new(seed);
    let k = cfg.conv_kernel;
    glorot_uniform(
        model.net.conv.kernel.as_slice_mut().unwrap(),
        PPG_INPUT_DIM * k,
        cfg.conv_channels * k,
        &mut rng,
    );
    for d in model.net.hidden.iter_mut().chain(std::iter::once(&mut model.net.out)) {
        let (fan_out, fan_in) = d.w.dim();
        glorot_uniform(d.w.as_slice_mut().unwrap(), fan_in, fan_out, &mut rng);
    }
    model.seed = seed;
    Ok(model)
}

/// All weights and biases zero.
pub fn zero_ppg_model(cfg: &PpgExtractorConfig, space: &PhonemeSpace) -> Result<PpgModel> {
    cfg.validate()?;
    if space.is_empty() {
        return Err(Error::BadConfig("phoneme space is empty".into()));
    }
    let mut hidden = Vec::with_capacity(cfg.dense_layers);
    for i in 0..cfg.dense_layers {
        let inputs = if i == 0 { cfg.conv_channels } else { cfg.dense_units };
        hidden.push(Dense::zeros(inputs, cfg.dense_units, Activation::Relu));
    }
    Ok(PpgModel {
        config: cfg.clone(),
        space: space.clone(),
        net: PpgNet {
            conv: Conv1d::zeros(PPG_INPUT_DIM, cfg.conv_channels, cfg.conv_kernel),
            hidden,
            out: Dense::zeros(cfg.dense_units, space.len(), Activation::Linear),
        },
        input_mean: Array1::zeros(PPG_INPUT_DIM),
        input_std: Array1::ones(PPG_INPUT_DIM),
        seed: 0,
    })
}

struct Forward {
    x: Array2<f64>,
    conv_out: Array2<f64>,
    hidden: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

impl PpgModel {
    fn normalize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.input_mean) / &self.input_std
    }

    fn forward(&self, features: ArrayView2<f64>) -> Result<Forward> {
        let x = self.normalize(features);
        let mut conv_out = self.net.conv.forward(x.view())?;
        relu_inplace(&mut conv_out);
        let mut hidden = Vec::with_capacity(self.net.hidden.len());
        for d in &self.net.hidden {
            let input = hidden.last().unwrap_or(&conv_out);
            let h = d.forward(input.view())?;
            hidden.push(h);
        }
        let logits = self.net.out.forward(hidden.last().unwrap().view())?;
        Ok(Forward {
            x,
            conv_out,
            hidden,
            logits,
        })
    }

    /// Loss, correct-frame count and gradients for one utterance, with the
    /// loss scaled by `weight`.
    fn gradients(&self, features: ArrayView2<f64>, labels: &[usize], weight: f64) -> Result<(f64, usize, PpgNet)> {
        let f = self.forward(features)?;
        let (loss, mut dlogits) = softmax_xent(f.logits.view(), labels)?;
        dlogits *= weight;
        let correct = argmax_rows(f.logits.view())
            .iter()
            .zip(labels)
            .filter(|(a, b)| a == b)
            .count();
        let mut grads = self.net.clone();
        let last = f.hidden.last().unwrap();
        let g = dense_backward(self.net.out.w.view(), last.view(), f.logits.view(), dlogits.view(), Activation::Linear)?;
        grads.out.w = g.w;
        grads.out.b = g.b;
        let mut dy = g.x;
        for i in (0..self.net.hidden.len()).rev() {
            let input = if i == 0 { &f.conv_out } else { &f.hidden[i - 1] };
            let d = &self.net.hidden[i];
            let g = dense_backward(d.w.view(), input.view(), f.hidden[i].view(), dy.view(), Activation::Relu)?;
            grads.hidden[i].w = g.w;
            grads.hidden[i].b = g.b;
            dy = g.x;
        }
        dy.zip_mut_with(&f.conv_out, |d, &y| {
            if y <= 0.0 {
                *d = 0.0
            }
        });
        let g = conv1d_backward(self.net.conv.kernel.view(), f.x.view(), dy.view())?;
        grads.conv.kernel = g.kernel;
        grads.conv.bias = g.bias;
        Ok((loss * weight, correct, grads))
    }

    fn check_input(&self, features: &FeatureMatrix) -> Result<()> {
        if features.cols() != PPG_INPUT_DIM {
            return Err(Error::DimMismatch {
                expected: PPG_INPUT_DIM,
                found: features.cols(),
            });
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let c = &self.config;
        ck.set("model", "ppg");
        ck.set("context", c.context);
        ck.set("conv_channels", c.conv_channels);
        ck.set("conv_kernel", c.conv_kernel);
        ck.set("dense_layers", c.dense_layers);
        ck.set("dense_units", c.dense_units);
        ck.set("space_checksum", format!("{:016x}", self.space.checksum()));
        ck.set("space", hex::encode(self.space.to_text()));
        ck.set("seed", self.seed);
        ck.push("input_mean", &self.input_mean);
        ck.push("input_std", &self.input_std);
        ck.push("conv.kernel", &self.net.conv.kernel);
        ck.push("conv.bias", &self.net.conv.bias);
        for (i, d) in self.net.hidden.iter().enumerate() {
            ck.push(&format!("dense{i}.w"), &d.w);
            ck.push(&format!("dense{i}.b"), &d.b);
        }
        ck.push("out.w", &self.net.out.w);
        ck.push("out.b", &self.net.out.b);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.get("model")? != "ppg" {
            return Err(Error::format("NNCK", "not a posteriorgram model"));
        }
        let cfg = PpgExtractorConfig {
            context: ck.get_parsed("context")?,
            conv_channels: ck.get_parsed("conv_channels")?,
            conv_kernel: ck.get_parsed("conv_kernel")?,
            dense_layers: ck.get_parsed("dense_layers")?,
            dense_units: ck.get_parsed("dense_units")?,
        };
        let text = hex::decode(ck.get("space")?)
            .ok()
            .and_then(|b| String::from_utf8(b).ok())
            .ok_or_else(|| Error::format("NNCK", "bad space encoding"))?;
        let space = PhonemeSpace::from_text(&text)?;
        let stamped = u64::from_str_radix(ck.get("space_checksum")?, 16)
            .map_err(|_| Error::format("NNCK", "bad space_checksum"))?;
        if stamped != space.checksum() {
            return Err(Error::SpaceMismatch {
                expected: stamped,
                found: space.checksum(),
            });
        }
        let mut m = zero_ppg_model(&cfg, &space)?;
        m.seed = ck.get_parsed("seed")?;
        ck.load_into("input_mean", &[PPG_INPUT_DIM], m.input_mean.as_slice_mut().unwrap())?;
        ck.load_into("input_std", &[PPG_INPUT_DIM], m.input_std.as_slice_mut().unwrap())?;
        let shape = m.net.conv.kernel.shape().to_vec();
        ck.load_into("conv.kernel", &shape, m.net.conv.kernel.as_slice_mut().unwrap())?;
        ck.load_into("conv.bias", &[cfg.conv_channels], m.net.conv.bias.as_slice_mut().unwrap())?;
        for (i, d) in m.net.hidden.iter_mut().enumerate() {
            let shape = d.w.shape().to_vec();
            ck.load_into(&format!("dense{i}.w"), &shape, d.w.as_slice_mut().unwrap())?;
            ck.load_into(&format!("dense{i}.b"), &[d.b.len()], d.b.as_slice_mut().unwrap())?;
        }
        let shape = m.net.out.w.shape().to_vec();
        ck.load_into("out.w", &shape, m.net.out.w.as_slice_mut().unwrap())?;
        ck.load_into("out.b", &[space.len()], m.net.out.b.as_slice_mut().unwrap())?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn argmax_rows(m: ArrayView2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Posteriorgram for `features` (120 columns), stamped with the model's
/// space checksum.
pub fn extract_ppg(model: &PpgModel, features: &FeatureMatrix) -> Result<Ppg> {
    model.check_input(features)?;
    let f = model.forward(features.data().view())?;
    Ppg::for_space(softmax_rows(f.logits.view()), &model.space)
}

/// Share of frames whose argmax matches the label, over frames where
/// `mask` is true (all frames when `None`).
pub fn frame_accuracy(model: &PpgModel, data: &[(FeatureMatrix, FrameLabels, Option<Vec<bool>>)]) -> Result<f64> {
    let counts = data
        .par_iter()
        .map(|(x, y, mask)| -> Result<(usize, usize)> {
            let ppg = extract_ppg(model, x)?;
            let mut hit = 0;
            let mut n = 0;
            for (t, (p, l)) in ppg.argmax().into_iter().zip(&y.labels).enumerate() {
                if mask.as_ref().map_or(true, |m| m[t]) {
                    n += 1;
                    hit += usize::from(p == *l);
                }
            }
            Ok((hit, n))
        })
        .collect::<Result<Vec<_>>>()?;
    let (hit, n) = counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(hit as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpgTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub batch_utterances: usize,
    pub clip_norm: f64,
    /// Probability of training on the clean variant when noisy ones exist.
    pub clean_probability: f64,
    /// Stop once held-out accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    /// Train only these output units (rows of the softmax layer); every other
    /// parameter stays frozen. Used after extending the space.
    pub trainable_outputs: Option<Vec<usize>>,
    /// Recompute input normalisation from the training set.
    pub fit_normalization: bool,
}

impl Default for PpgTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            learning_rate: 1e-3,
            lr_decay: 0.85,
            batch_utterances: 4,
            clip_norm: 5.0,
            clean_probability: 0.5,
            target_accuracy: None,
            trainable_outputs: None,
            fit_normalization: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub heldout_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
}

impl TrainReport {
    pub fn final_heldout_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.heldout_accuracy)
    }
}

fn fit_normalization(model: &mut PpgModel, data: &[PpgExample]) {
    let mut n = 0usize;
    let mut sum = Array1::<f64>::zeros(PPG_INPUT_DIM);
    let mut sq = Array1::<f64>::zeros(PPG_INPUT_DIM);
    for ex in data {
        let x = ex.variants[0].data();
        n += x.nrows();
        sum += &x.sum_axis(Axis(0));
        sq += &x.mapv(|v| v * v).sum_axis(Axis(0));
    }
    let n = n.max(1) as f64;
    let mean = &sum / n;
    let var = &sq / n - &mean * &mean;
    model.input_mean = mean;
    model.input_std = var.mapv(|v| v.max(1e-8).sqrt());
}

/// Cross-entropy training with Adam. Deterministic given `seed`: variant
/// choice, utterance order and batching all come from one RNG stream, and
/// per-utterance gradients are summed in batch order.
pub fn train_ppg(
    model: &mut PpgModel,
    train: &[PpgExample],
    heldout: &[(FeatureMatrix, FrameLabels, Option<Vec<bool>>)],
    hp: &PpgTrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    let checksum = model.space.checksum();
    for ex in train {
        if ex.labels.space_checksum != checksum {
            return Err(Error::SpaceMismatch {
                expected: checksum,
                found: ex.labels.space_checksum,
            });
        }
        if ex.variants.is_empty() {
            return Err(Error::BadConfig("training example without features".into()));
        }
        for v in &ex.variants {
            model.check_input(v)?;
            if v.rows() != ex.labels.labels.len() {
                return Err(Error::LengthMismatch(format!(
                    "{} feature frames, {} labels",
                    v.rows(),
                    ex.labels.labels.len()
                )));
            }
        }
    }
    for (x, y, _) in heldout {
        if y.space_checksum != checksum {
            return Err(Error::SpaceMismatch {
                expected: checksum,
                found: y.space_checksum,
            });
        }
        if x.rows() != y.labels.len() {
            return Err(Error::LengthMismatch("held-out features vs labels".into()));
        }
    }
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    if hp.fit_normalization {
        fit_normalization(model, train);
    }
    let mask = hp.trainable_outputs.as_ref().map(|rows| {
        let mut m = model.net.clone();
        m.zero();
        for &r in rows {
            m.out.w.row_mut(r).fill(1.0);
            m.out.b[r] = 1.0;
        }
        m
    });
    let mut rng = RngStream::new(seed);
    let mut adam = Adam::new(hp.learning_rate);
    let mut report = TrainReport::default();
    let batch = hp.batch_utterances.max(1);
    for epoch in 0..hp.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        let picks: Vec<usize> = order
            .iter()
            .map(|&i| {
                let n = train[i].variants.len();
                if n == 1 || rng.bernoulli(hp.clean_probability) {
                    0
                } else {
                    1 + rng.below(n - 1)
                }
            })
            .collect();
        let (mut loss_sum, mut hit, mut frames) = (0.0, 0usize, 0usize);
        for (chunk, pick) in order.chunks(batch).zip(picks.chunks(batch)) {
            let total: usize = chunk.iter().map(|&i| train[i].labels.labels.len()).sum();
            let results = chunk
                .par_iter()
                .zip(pick)
                .map(|(&i, &v)| {
                    let ex = &train[i];
                    let w = ex.labels.labels.len() as f64 / total as f64;
                    model.gradients(ex.variants[v].data().view(), &ex.labels.labels, w)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut iter = results.into_iter();
            let (l0, c0, mut grads) = iter.next().expect("non-empty batch");
            loss_sum += l0 * total as f64;
            hit += c0;
            for (l, c, g) in iter {
                loss_sum += l * total as f64;
                hit += c;
                grads.accumulate(&g);
            }
            frames += total;
            if let Some(m) = &mask {
                for (g, k) in grads.params_mut().into_iter().zip(m.params()) {
                    g.iter_mut().zip(k).for_each(|(g, k)| *g *= k);
                }
            }
            clip_global_norm(&mut grads, hp.clip_norm);
            adam.step(&mut model.net, &grads);
        }
        let heldout_accuracy = if heldout.is_empty() {
            None
        } else {
            Some(frame_accuracy(model, heldout)?)
        };
        let e = EpochReport {
            epoch: epoch + 1,
            loss: loss_sum / frames as f64,
            train_accuracy: hit as f64 / frames as f64,
            heldout_accuracy,
        };
        log::info!(
            "ppg epoch {}: loss {:.4} train acc {:.4} held-out acc {}",
            e.epoch,
            e.loss,
            e.train_accuracy,
            e.heldout_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
        );
        report.epochs.push(e);
        adam.lr *= hp.lr_decay;
        if let (Some(target), Some(acc)) = (hp.target_accuracy, heldout_accuracy) {
            if acc >= target {
                break;
            }
        }
    }
    // Keep the in-memory model identical to what a checkpoint reload gives.
    round_to_f32(&mut model.net);
    model.input_mean.mapv_inplace(|v| f64::from(v as f32));
    model.input_std.mapv_inplace(|v| f64::from(v as f32));
    Ok(report)
}

/// Rebuilds the model over an extended space: existing output rows are
/// copied, rows for the new units are freshly initialised.
pub fn extend_ppg_model(model: &PpgModel, space: &PhonemeSpace, seed: u64) -> Result<PpgModel> {
    let old = model.space.len();
    if space.len() < old || space.units()[..old] != *model.space.units() {
        return Err(Error::SpaceMismatch {
            expected: model.space.checksum(),
            found: space.checksum(),
        });
    }
    let mut m = model.clone();
    m.space = space.clone();
    let units = model.config.dense_units;
    let mut w = Array2::zeros((space.len(), units));
    let mut b = Array1::zeros(space.len());
    w.slice_mut(ndarray::s![..old, ..]).assign(&model.net.out.w);
    b.slice_mut(ndarray::s![..old]).assign(&model.net.out.b);
    let mut rng = RngStream::new(seed);
    let mut fresh = Array2::<f64>::zeros((space.len() - old, units));
    glorot_uniform(fresh.as_slice_mut().unwrap(), units, space.len(), &mut rng);
    w.slice_mut(ndarray::s![old.., ..]).assign(&fresh);
    m.net.out = Dense {
        w,
        b,
        act: Activation::Linear,
    };
    Ok(m)
}

/// Wraps a posteriorgram as an FMTX matrix plus the checksum metadata.
pub fn ppg_to_fmtx(ppg: &Ppg) -> Result<(FeatureMatrix, Vec<(String, String)>)> {
    let m = FeatureMatrix::new(ppg.matrix().clone(), 10.0, FeatureKind::Ppg)?;
    Ok((m, vec![("space_checksum".into(), format!("{:016x}", ppg.space_checksum()))]))
}

/// Inverse of [`ppg_to_fmtx`].
pub fn ppg_from_fmtx(m: FeatureMatrix, meta: &[(String, String)]) -> Result<Ppg> {
    let checksum = meta
        .iter()
        .find(|(k, _)| k == "space_checksum")
        .and_then(|(_, v)| u64::from_str_radix(v, 16).ok())
        .ok_or_else(|| Error::InvalidPpg("missing space_checksum metadata".into()))?;
    Ppg::new(m.into_data(), checksum)
}
