use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};

use super::{EmotionLabel, FapSequence, FAP_DIM};
use crate::dsp::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};
use crate::nnet::{
    blstm_backward, blstm_forward, clip_global_norm, dense_backward, glorot_uniform, mse_loss,
    round_to_f32, Activation, Adam, BlstmLayer, BlstmMasks, Checkpoint, Dense, Parameterized,
    RngStream,
};
use crate::phoneme_space::{PhonemeSpace, Ppg};
use crate::trajectory::{global_variance, mlpg, GlobalVariance, WindowSet};

/// Static, Δ and ΔΔ for every face parameter.
pub const FAP_OUTPUT_DIM: usize = 3 * FAP_DIM;
/// Width of the emotion one-hot block.
pub const EMOTION_INPUT_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FapInputKind {
    Ppg,
    Mfcc,
}

impl fmt::Display for FapInputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FapInputKind::Ppg => "ppg",
            FapInputKind::Mfcc => "mfcc",
        })
    }
}

impl FromStr for FapInputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppg" => Ok(FapInputKind::Ppg),
            "mfcc" => Ok(FapInputKind::Mfcc),
            _ => Err(Error::BadConfig(format!("unknown input kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FapPredictorConfig {
    pub blstm_layers: usize,
    pub blstm_units: usize,
    pub dense_layers: usize,
    pub dense_units: usize,
    pub zoneout: f64,
    /// Append the normalised frame energy to every input frame.
    pub use_energy: bool,
}

impl Default for FapPredictorConfig {
    fn default() -> Self {
        Self {
            blstm_layers: 3,
            blstm_units: 128,
            dense_layers: 2,
            dense_units: 96,
            zoneout: 0.1,
            use_energy: true,
        }
    }
}

impl FapPredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blstm_layers == 0 || self.blstm_units == 0 {
            return Err(Error::BadConfig("need at least one BLSTM layer".into()));
        }
        if self.dense_layers > 0 && self.dense_units == 0 {
            return Err(Error::BadConfig("dense layers need non-zero width".into()));
        }
        if !(0.0..1.0).contains(&self.zoneout) {
            return Err(Error::BadConfig(format!("zoneout {} outside [0, 1)", self.zoneout)));
        }
        Ok(())
    }
}

/// What the per-frame feature block holds.
#[derive(Debug, Clone, PartialEq)]
pub struct FapFeatureSpec {
    pub kind: FapInputKind,
    pub dim: usize,
    /// Checksum of the phoneme space the PPG columns index.
    pub space_checksum: Option<u64>,
}

impl FapFeatureSpec {
    pub fn ppg(space: &PhonemeSpace) -> Self {
        Self {
            kind: FapInputKind::Ppg,
            dim: space.len(),
            space_checksum: Some(space.checksum()),
        }
    }

    pub fn mfcc(dim: usize) -> Self {
        Self {
            kind: FapInputKind::Mfcc,
            dim,
            space_checksum: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FapNet {
    pub blstm: Vec<BlstmLayer>,
    pub dense: Vec<Dense>,
    pub out: Dense,
}

impl Parameterized for FapNet {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        for l in &self.blstm {
            v.extend(l.params());
        }
        for d in &self.dense {
            v.extend(d.params());
        }
        v.extend(self.out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        for l in &mut self.blstm {
            v.extend(l.params_mut());
        }
        for d in &mut self.dense {
            v.extend(d.params_mut());
        }
        v.extend(self.out.params_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FapModel {
    pub config: FapPredictorConfig,
    pub features: FapFeatureSpec,
    pub net: FapNet,
    /// Feature normalisation (identity for posteriorgrams).
    pub feature_mean: Array1<f64>,
    pub feature_std: Array1<f64>,
    pub energy_mean: f64,
    pub energy_std: f64,
    /// The network predicts standardised targets; these undo it.
    pub target_mean: Array1<f64>,
    pub target_std: Array1<f64>,
    /// Per-column variance of the training targets, used by MLPG.
    pub gv: Array1<f64>,
    pub seed: u64,
}

impl FapModel {
    pub fn input_dim(&self) -> usize {
        self.features.dim + usize::from(self.config.use_energy) + EMOTION_INPUT_DIM
    }

    pub fn global_variance(&self) -> Result<GlobalVariance> {
        GlobalVariance::new(self.gv.to_vec())
    }
}

/// Zero-weight model with identity normalisation.
pub fn zero_fap_model(cfg: &FapPredictorConfig, features: &FapFeatureSpec) -> Result<FapModel> {
    cfg.validate()?;
    if features.dim == 0 {
        return Err(Error::BadConfig("feature block is empty".into()));
    }
    let input = features.dim + usize::from(cfg.use_energy) + EMOTION_INPUT_DIM;
    let h = cfg.blstm_units;
    let blstm = (0..cfg.blstm_layers)
        .map(|i| BlstmLayer::zeros(if i == 0 { input } else { 2 * h }, h, cfg.zoneout))
        .collect();
    let dense = (0..cfg.dense_layers)
        .map(|i| Dense::zeros(if i == 0 { 2 * h } else { cfg.dense_units }, cfg.dense_units, Activation::Tanh))
        .collect();
    let last = if cfg.dense_layers == 0 { 2 * h } else { cfg.dense_units };
    Ok(FapModel {
        config: cfg.clone(),
        features: features.clone(),
        net: FapNet {
            blstm,
            dense,
            out: Dense::zeros(last, FAP_OUTPUT_DIM, Activation::Linear),
        },
        feature_mean: Array1::zeros(features.dim),
        feature_std: Array1::ones(features.dim),
        energy_mean: 0.0,
        energy_std: 1.0,
        target_mean: Array1::zeros(FAP_OUTPUT_DIM),
        target_std: Array1::ones(FAP_OUTPUT_DIM),
        gv: Array1::ones(FAP_OUTPUT_DIM),
        seed: 0,
    })
}

/// Glorot-initialised model. Input weights of the first layer on the feature
/// block start at zero, so posteriorgram columns that never fire during
/// training contribute nothing at inference.
pub fn build_fap_model(cfg: &FapPredictorConfig, features: &FapFeatureSpec, seed: u64) -> Result<FapModel> {
    let mut m = zero_fap_model(cfg, features)?;
    let mut rng = RngStream::new(seed);
    let h = cfg.blstm_units;
    for layer in &mut m.net.blstm {
        for p in [&mut layer.fwd, &mut layer.bwd] {
            let inputs = p.w_x.ncols();
            glorot_uniform(p.w_x.as_slice_mut().unwrap(), inputs, 4 * h, &mut rng);
            glorot_uniform(p.w_h.as_slice_mut().unwrap(), h, 4 * h, &mut rng);
            // Forget-gate bias 1.
            p.b.slice_mut(s![h..2 * h]).fill(1.0);
        }
    }
    for layer in m.net.blstm.iter_mut().take(1) {
        layer.fwd.w_x.slice_mut(s![.., ..features.dim]).fill(0.0);
        layer.bwd.w_x.slice_mut(s![.., ..features.dim]).fill(0.0);
    }
    for d in m.net.dense.iter_mut().chain(std::iter::once(&mut m.net.out)) {
        let (o, i) = d.w.dim();
        glorot_uniform(d.w.as_slice_mut().unwrap(), i, o, &mut rng);
    }
    m.seed = seed;
    Ok(m)
}

/// Freezes corpus-level normalisation statistics: energy always, feature
/// z-scores only for cepstral input.
pub fn fit_input_statistics(model: &mut FapModel, data: &[(&FeatureMatrix, &FeatureMatrix)]) -> Result<()> {
    let mut n = 0usize;
    let (mut es, mut eq) = (0.0, 0.0);
    let d = model.features.dim;
    let mut fs = Array1::<f64>::zeros(d);
    let mut fq = Array1::<f64>::zeros(d);
    for (feat, energy) in data {
        if energy.cols() != 1 {
            return Err(Error::DimMismatch {
                expected: 1,
                found: energy.cols(),
            });
        }
        if feat.cols() != d {
            return Err(Error::DimMismatch {
                expected: d,
                found: feat.cols(),
            });
        }
        n += energy.rows();
        for &e in energy.data().iter() {
            es += e;
            eq += e * e;
        }
        fs += &feat.data().sum_axis(Axis(0));
        fq += &feat.data().mapv(|v| v * v).sum_axis(Axis(0));
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let nf = n as f64;
    model.energy_mean = f64::from((es / nf) as f32);
    model.energy_std = f64::from(((eq / nf - (es / nf).powi(2)).max(1e-8).sqrt()) as f32);
    if model.features.kind == FapInputKind::Mfcc {
        let mean = &fs / nf;
        let var = &fq / nf - &mean * &mean;
        model.feature_mean = mean.mapv(|v| f64::from(v as f32));
        model.feature_std = var.mapv(|v| f64::from(v.max(1e-8).sqrt() as f32));
    }
    Ok(())
}

fn assemble(model: &FapModel, feat: ArrayView2<f64>, energy: &FeatureMatrix, emotion: EmotionLabel) -> Result<FeatureMatrix> {
    let t = feat.nrows();
    if energy.cols() != 1 {
        return Err(Error::DimMismatch {
            expected: 1,
            found: energy.cols(),
        });
    }
    if energy.rows() != t {
        return Err(Error::LengthMismatch(format!(
            "{t} feature frames, {} energy frames",
            energy.rows()
        )));
    }
    let d = model.features.dim;
    let mut out = Array2::zeros((t, model.input_dim()));
    let z = (&feat - &model.feature_mean) / &model.feature_std;
    out.slice_mut(s![.., ..d]).assign(&z);
    let mut col = d;
    if model.config.use_energy {
        let e = energy.data().column(0).mapv(|e| (e - model.energy_mean) / model.energy_std);
        out.column_mut(col).assign(&e);
        col += 1;
    }
    let hot = emotion.one_hot();
    for (k, v) in hot.iter().enumerate() {
        out.column_mut(col + k).fill(*v);
    }
    FeatureMatrix::new(out, 10.0, FeatureKind::Generic)
}

/// `[ppg ; normalised energy ; emotion one-hot]` per frame. The energy
/// column is omitted when the model was configured without it.
pub fn assemble_input(model: &FapModel, ppg: &Ppg, energy: &FeatureMatrix, emotion: EmotionLabel) -> Result<FeatureMatrix> {
    match (model.features.kind, model.features.space_checksum) {
        (FapInputKind::Ppg, Some(expected)) if expected != ppg.space_checksum() => {
            Err(Error::SpaceMismatch {
                expected,
                found: ppg.space_checksum(),
            })
        }
        (FapInputKind::Ppg, _) => assemble(model, ppg.matrix().view(), energy, emotion),
        (FapInputKind::Mfcc, _) => Err(Error::BadConfig("model expects cepstral input".into())),
    }
}

/// Same layout with a cepstral feature block in place of the posteriorgram.
pub fn assemble_mfcc_input(model: &FapModel, mfcc: &FeatureMatrix, energy: &FeatureMatrix, emotion: EmotionLabel) -> Result<FeatureMatrix> {
    if model.features.kind != FapInputKind::Mfcc {
        return Err(Error::BadConfig("model expects posteriorgram input".into()));
    }
    if mfcc.cols() != model.features.dim {
        return Err(Error::DimMismatch {
            expected: model.features.dim,
            found: mfcc.cols(),
        });
    }
    assemble(model, mfcc.data().view(), energy, emotion)
}

struct Forward {
    caches: Vec<crate::nnet::BlstmCache>,
    dense_in: Vec<Array2<f64>>,
    dense_out: Vec<Array2<f64>>,
    out: Array2<f64>,
}

impl FapModel {
    /// `x: (T, B, D)` → standardised outputs `(T·B, 96)`, frame-major.
    fn forward(&self, x: Array3<f64>, masks: Option<&[BlstmMasks]>) -> Result<Forward> {
        let (t, b, _) = x.dim();
        let mut caches = Vec::with_capacity(self.net.blstm.len());
        let mut h = x;
        for (i, layer) in self.net.blstm.iter().enumerate() {
            let (y, cache) = blstm_forward(&layer.fwd, &layer.bwd, h.view(), masks.map(|m| &m[i]))?;
            caches.push(cache);
            h = y;
        }
        let width = h.shape()[2];
        let mut flat = h.as_standard_layout().into_owned().into_shape_with_order((t * b, width)).unwrap();
        let mut dense_in = Vec::new();
        let mut dense_out = Vec::new();
        for d in &self.net.dense {
            let y = d.forward(flat.view())?;
            dense_in.push(flat);
            dense_out.push(y.clone());
            flat = y;
        }
        let out = self.net.out.forward(flat.view())?;
        dense_in.push(flat);
        Ok(Forward {
            caches,
            dense_in,
            dense_out,
            out,
        })
    }

    fn backward(&self, f: &Forward, dout: ArrayView2<f64>, t: usize, b: usize) -> Result<FapNet> {
        let mut g = self.net.clone();
        let n = self.net.dense.len();
        let go = dense_backward(self.net.out.w.view(), f.dense_in[n].view(), f.out.view(), dout, Activation::Linear)?;
        g.out.w = go.w;
        g.out.b = go.b;
        let mut dy = go.x;
        for i in (0..n).rev() {
            let d = &self.net.dense[i];
            let gd = dense_backward(d.w.view(), f.dense_in[i].view(), f.dense_out[i].view(), dy.view(), Activation::Tanh)?;
            g.dense[i].w = gd.w;
            g.dense[i].b = gd.b;
            dy = gd.x;
        }
        let width = dy.ncols();
        let mut d3 = dy.into_shape_with_order((t, b, width)).unwrap();
        for i in (0..self.net.blstm.len()).rev() {
            let layer = &self.net.blstm[i];
            let (gf, gb, dx) = blstm_backward(&layer.fwd, &layer.bwd, &f.caches[i], d3.view())?;
            g.blstm[i].fwd.w_x = gf.w_x;
            g.blstm[i].fwd.w_h = gf.w_h;
            g.blstm[i].fwd.b = gf.b;
            g.blstm[i].bwd.w_x = gb.w_x;
            g.blstm[i].bwd.w_h = gb.w_h;
            g.blstm[i].bwd.b = gb.b;
            d3 = dx;
        }
        Ok(g)
    }

    fn check_input(&self, input: &FeatureMatrix) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                found: input.cols(),
            });
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let c = &self.config;
        ck.set("model", "fap");
        ck.set("input_kind", self.features.kind);
        ck.set("feature_dim", self.features.dim);
        ck.set(
            "space_checksum",
            self.features
                .space_checksum
                .map_or("none".to_string(), |c| format!("{c:016x}")),
        );
        ck.set("energy_mean", format!("{:e}", self.energy_mean));
        ck.set("energy_std", format!("{:e}", self.energy_std));
        ck.set(
            "emotion_set",
            EmotionLabel::ALL.map(|e| e.name()).join(","),
        );
        ck.set("use_energy", c.use_energy);
        ck.set("blstm_layers", c.blstm_layers);
        ck.set("blstm_units", c.blstm_units);
        ck.set("dense_layers", c.dense_layers);
        ck.set("dense_units", c.dense_units);
        ck.set("zoneout", c.zoneout);
        ck.set("seed", self.seed);
        ck.push("feature_mean", &self.feature_mean);
        ck.push("feature_std", &self.feature_std);
        ck.push("target_mean", &self.target_mean);
        ck.push("target_std", &self.target_std);
        ck.push("gv", &self.gv);
        for (i, l) in self.net.blstm.iter().enumerate() {
            for (dir, p) in [("fwd", &l.fwd), ("bwd", &l.bwd)] {
                ck.push(&format!("blstm{i}.{dir}.w_x"), &p.w_x);
                ck.push(&format!("blstm{i}.{dir}.w_h"), &p.w_h);
                ck.push(&format!("blstm{i}.{dir}.b"), &p.b);
            }
        }
        for (i, d) in self.net.dense.iter().enumerate() {
            ck.push(&format!("dense{i}.w"), &d.w);
            ck.push(&format!("dense{i}.b"), &d.b);
        }
        ck.push("out.w", &self.net.out.w);
        ck.push("out.b", &self.net.out.b);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.get("model")? != "fap" {
            return Err(Error::format("NNCK", "not a face-parameter model"));
        }
        let emotions = EmotionLabel::ALL.map(|e| e.name()).join(",");
        if ck.get("emotion_set")? != emotions {
            return Err(Error::format("NNCK", "unsupported emotion set"));
        }
        let cfg = FapPredictorConfig {
            blstm_layers: ck.get_parsed("blstm_layers")?,
            blstm_units: ck.get_parsed("blstm_units")?,
            dense_layers: ck.get_parsed("dense_layers")?,
            dense_units: ck.get_parsed("dense_units")?,
            zoneout: ck.get_parsed("zoneout")?,
            use_energy: ck.get_parsed("use_energy")?,
        };
        let kind: FapInputKind = ck.get("input_kind")?.parse()?;
        let checksum = match ck.get("space_checksum")? {
            "none" => None,
            v => Some(
                u64::from_str_radix(v, 16).map_err(|_| Error::format("NNCK", "bad space_checksum"))?,
            ),
        };
        let features = FapFeatureSpec {
            kind,
            dim: ck.get_parsed("feature_dim")?,
            space_checksum: checksum,
        };
        let mut m = zero_fap_model(&cfg, &features)?;
        m.seed = ck.get_parsed("seed")?;
        m.energy_mean = ck.get_parsed("energy_mean")?;
        m.energy_std = ck.get_parsed("energy_std")?;
        let d = features.dim;
        ck.load_into("feature_mean", &[d], m.feature_mean.as_slice_mut().unwrap())?;
        ck.load_into("feature_std", &[d], m.feature_std.as_slice_mut().unwrap())?;
        ck.load_into("target_mean", &[FAP_OUTPUT_DIM], m.target_mean.as_slice_mut().unwrap())?;
        ck.load_into("target_std", &[FAP_OUTPUT_DIM], m.target_std.as_slice_mut().unwrap())?;
        ck.load_into("gv", &[FAP_OUTPUT_DIM], m.gv.as_slice_mut().unwrap())?;
        for (i, l) in m.net.blstm.iter_mut().enumerate() {
            for (dir, p) in [("fwd", &mut l.fwd), ("bwd", &mut l.bwd)] {
                let sx = p.w_x.shape().to_vec();
                let sh = p.w_h.shape().to_vec();
                ck.load_into(&format!("blstm{i}.{dir}.w_x"), &sx, p.w_x.as_slice_mut().unwrap())?;
                ck.load_into(&format!("blstm{i}.{dir}.w_h"), &sh, p.w_h.as_slice_mut().unwrap())?;
                let nb = p.b.len();
                ck.load_into(&format!("blstm{i}.{dir}.b"), &[nb], p.b.as_slice_mut().unwrap())?;
            }
        }
        for (i, dl) in m.net.dense.iter_mut().enumerate() {
            let sw = dl.w.shape().to_vec();
            ck.load_into(&format!("dense{i}.w"), &sw, dl.w.as_slice_mut().unwrap())?;
            let nb = dl.b.len();
            ck.load_into(&format!("dense{i}.b"), &[nb], dl.b.as_slice_mut().unwrap())?;
        }
        let sw = m.net.out.w.shape().to_vec();
        ck.load_into("out.w", &sw, m.net.out.w.as_slice_mut().unwrap())?;
        ck.load_into("out.b", &[FAP_OUTPUT_DIM], m.net.out.b.as_slice_mut().unwrap())?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// `T x 96` static + dynamic means for an assembled input. Inference uses
/// the zoneout expectation, so it is deterministic.
pub fn predict_fap_means(model: &FapModel, input: &FeatureMatrix) -> Result<Array2<f64>> {
    model.check_input(input)?;
    let t = input.rows();
    if t == 0 {
        return Ok(Array2::zeros((0, FAP_OUTPUT_DIM)));
    }
    let x = input
        .data()
        .clone()
        .into_shape_with_order((t, 1, model.input_dim()))
        .unwrap();
    let f = model.forward(x, None)?;
    Ok(f.out * &model.target_std + &model.target_mean)
}

/// Means followed by MLPG with the model's stored variance.
pub fn predict_fap(model: &FapModel, input: &FeatureMatrix) -> Result<FapSequence> {
    let means = predict_fap_means(model, input)?;
    if means.nrows() == 0 {
        return FapSequence::new(Array2::zeros((0, FAP_DIM)));
    }
    FapSequence::new(mlpg(means.view(), &model.global_variance()?, &WindowSet::default())?)
}

/// One utterance of training data.
#[derive(Debug, Clone)]
pub struct FapExample {
    /// Assembled input, `T x input_dim`.
    pub input: FeatureMatrix,
    /// Static + dynamic targets, `T x 96`.
    pub target: Array2<f64>,
    pub emotion: EmotionLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FapTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    /// Frames per training chunk (capped by the shortest utterance).
    pub chunk_frames: usize,
    pub batch_chunks: usize,
    pub clip_norm: f64,
    /// Refit target standardisation and variance from the training set.
    pub fit_targets: bool,
}

impl Default for FapTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            chunk_frames: 96,
            batch_chunks: 16,
            clip_norm: 5.0,
            fit_targets: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FapTrainReport {
    /// Mean standardised training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Held-out static MSE (after MLPG) per emotion, in label order;
    /// `None` where the held-out set has no such utterance.
    pub heldout_mse: [Option<f64>; 4],
}

fn fit_targets(model: &mut FapModel, data: &[FapExample]) -> Result<()> {
    let gv = global_variance(data.iter().map(|e| e.target.view()))?;
    let mut n = 0usize;
    let mut sum = Array1::<f64>::zeros(FAP_OUTPUT_DIM);
    for e in data {
        n += e.target.nrows();
        sum += &e.target.sum_axis(Axis(0));
    }
    let mean = sum / n as f64;
    model.target_mean = mean.mapv(|v| f64::from(v as f32));
    model.target_std = Array1::from(gv.values().to_vec()).mapv(|v| f64::from(v.sqrt() as f32));
    model.gv = Array1::from(gv.values().to_vec()).mapv(|v| f64::from(v as f32));
    Ok(())
}

/// Static-part MSE after MLPG against the first 32 target columns.
pub fn heldout_static_mse(model: &FapModel, data: &[FapExample]) -> Result<[Option<f64>; 4]> {
    let mut acc = [(0.0, 0usize); 4];
    for e in data {
        let pred = predict_fap(model, &e.input)?;
        let gt = e.target.slice(s![.., ..FAP_DIM]);
        let se: f64 = pred.data().iter().zip(gt.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let k = e.emotion.index();
        acc[k].0 += se;
        acc[k].1 += gt.len();
    }
    Ok(acc.map(|(s, n)| (n > 0).then(|| s / n as f64)))
}

/// Chunked BPTT with Adam on standardised targets. Zoneout masks, chunk
/// positions and batching come from one RNG stream seeded by `seed`.
pub fn train_fap(
    model: &mut FapModel,
    train: &[FapExample],
    heldout: &[FapExample],
    hp: &FapTrainConfig,
    seed: u64,
) -> Result<FapTrainReport> {
    if train.is_empty() {
        return Err(Error::EmptyInput);
    }
    for e in train.iter().chain(heldout) {
        model.check_input(&e.input)?;
        if e.target.ncols() != FAP_OUTPUT_DIM {
            return Err(Error::DimMismatch {
                expected: FAP_OUTPUT_DIM,
                found: e.target.ncols(),
            });
        }
        if e.target.nrows() != e.input.rows() {
            return Err(Error::LengthMismatch(format!(
                "{} input frames, {} target frames",
                e.input.rows(),
                e.target.nrows()
            )));
        }
    }
    if hp.fit_targets {
        fit_targets(model, train)?;
    }
    let min_t = train.iter().map(|e| e.input.rows()).min().unwrap();
    if min_t == 0 {
        return Err(Error::EmptyInput);
    }
    let len = hp.chunk_frames.clamp(1, min_t);
    let d = model.input_dim();
    let std_targets: Vec<Array2<f64>> = train
        .iter()
        .map(|e| (&e.target - &model.target_mean) / &model.target_std)
        .collect();
    let mut rng = RngStream::new(seed);
    let mut adam = Adam::new(hp.learning_rate);
    let mut report = FapTrainReport::default();
    for epoch in 0..hp.epochs {
        let mut chunks = Vec::new();
        for (u, e) in train.iter().enumerate() {
            let t = e.input.rows();
            let n = ((t as f64 / len as f64).round() as usize).max(1);
            for _ in 0..n {
                chunks.push((u, rng.below(t - len + 1)));
            }
        }
        rng.shuffle(&mut chunks);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for batch in chunks.chunks(hp.batch_chunks.max(1)) {
            let b = batch.len();
            let mut x = Array3::zeros((len, b, d));
            let mut y = Array3::zeros((len, b, FAP_OUTPUT_DIM));
            for (j, &(u, start)) in batch.iter().enumerate() {
                x.slice_mut(s![.., j, ..])
                    .assign(&train[u].input.data().slice(s![start..start + len, ..]));
                y.slice_mut(s![.., j, ..])
                    .assign(&std_targets[u].slice(s![start..start + len, ..]));
            }
            let masks: Vec<BlstmMasks> = model
                .net
                .blstm
                .iter()
                .map(|l| BlstmMasks::sample(&mut rng, l, len, b))
                .collect();
            let f = model.forward(x, Some(&masks))?;
            let y = y.into_shape_with_order((len * b, FAP_OUTPUT_DIM)).unwrap();
            let (loss, dout) = mse_loss(f.out.view(), y.view())?;
            let mut grads = model.backward(&f, dout.view(), len, b)?;
            clip_global_norm(&mut grads, hp.clip_norm);
            adam.step(&mut model.net, &grads);
            loss_sum += loss;
            batches += 1;
        }
        let loss = loss_sum / batches as f64;
        log::info!("fap epoch {}: loss {loss:.5}", epoch + 1);
        report.epoch_loss.push(loss);
        adam.lr *= hp.lr_decay;
    }
    round_to_f32(&mut model.net);
    if !heldout.is_empty() {
        report.heldout_mse = heldout_static_mse(model, heldout)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::dynamic_targets;

    fn space(n: usize) -> PhonemeSpace {
        PhonemeSpace::build(&[("la".into(), (0..n).map(|i| format!("p{i}")).collect())]).unwrap()
    }

    fn tiny_cfg() -> FapPredictorConfig {
        FapPredictorConfig {
            blstm_layers: 1,
            blstm_units: 6,
            dense_layers: 1,
            dense_units: 8,
            zoneout: 0.1,
            use_energy: true,
        }
    }

    fn random_ppg(rng: &mut RngStream, sp: &PhonemeSpace, t: usize) -> Ppg {
        let mut m = Array2::from_shape_simple_fn((t, sp.len()), || rng.uniform(0.01, 1.0));
        for mut r in m.rows_mut() {
            let s = r.sum();
            r /= s;
        }
        Ppg::for_space(m, sp).unwrap()
    }

    fn energy(rng: &mut RngStream, t: usize) -> FeatureMatrix {
        FeatureMatrix::new(
            Array2::from_shape_simple_fn((t, 1), || rng.uniform(-10.0, 0.0)),
            10.0,
            FeatureKind::Energy,
        )
        .unwrap()
    }

    #[test]
    fn default_dimensions() {
        let sp = space(218);
        let m = build_fap_model(&FapPredictorConfig::default(), &FapFeatureSpec::ppg(&sp), 1).unwrap();
        assert_eq!(m.input_dim(), 223);
        assert_eq!(m.net.blstm.len(), 3);
        assert_eq!(m.net.blstm[0].fwd.w_x.shape(), &[512, 223]);
        assert_eq!(m.net.blstm[1].fwd.w_x.shape(), &[512, 256]);
        assert_eq!(m.net.dense.len(), 2);
        assert_eq!(m.net.dense[0].w.shape(), &[96, 256]);
        assert_eq!(m.net.out.w.shape(), &[FAP_OUTPUT_DIM, 96]);
        assert_eq!(FAP_OUTPUT_DIM, 96);
        let mut rng = RngStream::new(0);
        let x = assemble_input(&m, &random_ppg(&mut rng, &sp, 5), &energy(&mut rng, 5), EmotionLabel::Sad).unwrap();
        let out = predict_fap_means(&m, &x).unwrap();
        assert_eq!(out.dim(), (5, 96));
        let mfcc = build_fap_model(&FapPredictorConfig::default(), &FapFeatureSpec::mfcc(39), 1).unwrap();
        assert_eq!(mfcc.input_dim(), 44);
    }

    #[test]
    fn bad_configs() {
        let mut c = FapPredictorConfig::default();
        c.zoneout = 1.0;
        assert!(c.validate().is_err());
        c = FapPredictorConfig::default();
        c.blstm_layers = 0;
        assert!(matches!(
            build_fap_model(&c, &FapFeatureSpec::mfcc(3), 0),
            Err(Error::BadConfig(_))
        ));
    }

    #[test]
    fn assembled_layout() {
        let sp = space(6);
        let mut m = build_fap_model(&tiny_cfg(), &FapFeatureSpec::ppg(&sp), 1).unwrap();
        m.energy_mean = -5.0;
        m.energy_std = 2.0;
        let mut rng = RngStream::new(1);
        let ppg = random_ppg(&mut rng, &sp, 7);
        let e = energy(&mut rng, 7);
        let x = assemble_input(&m, &ppg, &e, EmotionLabel::Neutral).unwrap();
        assert_eq!(x.data().dim(), (7, 6 + 5));
        for t in 0..7 {
            assert_eq!(x.data().slice(s![t, ..6]), ppg.matrix().row(t));
            assert_eq!(x.data()[[t, 6]], (e.data()[[t, 0]] + 5.0) / 2.0);
            assert_eq!(x.data().slice(s![t, 7..]).to_vec(), vec![1.0, 0.0, 0.0, 0.0]);
        }
        // Silence: the energy column is the same constant, run after run.
        let silent = FeatureMatrix::new(Array2::from_elem((4, 1), 1e-10f64.ln()), 10.0, FeatureKind::Energy).unwrap();
        let a = assemble_input(&m, &random_ppg(&mut rng, &sp, 4), &silent, EmotionLabel::Happy).unwrap();
        let b = assemble_input(&m, &random_ppg(&mut rng, &sp, 4), &silent, EmotionLabel::Happy).unwrap();
        assert_eq!(a.data().column(6), b.data().column(6));
        assert!(a.data().column(6).iter().all(|&v| v == (1e-10f64.ln() + 5.0) / 2.0));

        let mut no_e = tiny_cfg();
        no_e.use_energy = false;
        let m2 = build_fap_model(&no_e, &FapFeatureSpec::ppg(&sp), 1).unwrap();
        assert_eq!(assemble_input(&m2, &ppg, &e, EmotionLabel::Sad).unwrap().cols(), 6 + 4);
    }

    #[test]
    fn assembly_errors() {
        let sp = space(6);
        let m = build_fap_model(&tiny_cfg(), &FapFeatureSpec::ppg(&sp), 1).unwrap();
        let mut rng = RngStream::new(2);
        let ppg = random_ppg(&mut rng, &sp, 7);
        assert!(matches!(
            assemble_input(&m, &ppg, &energy(&mut rng, 6), EmotionLabel::Neutral),
            Err(Error::LengthMismatch(_))
        ));
        let other = space(7);
        assert!(matches!(
            assemble_input(&m, &random_ppg(&mut rng, &other, 7), &energy(&mut rng, 7), EmotionLabel::Neutral),
            Err(Error::SpaceMismatch { .. })
        ));
        let x = FeatureMatrix::new(Array2::zeros((3, 5)), 10.0, FeatureKind::Generic).unwrap();
        assert!(matches!(predict_fap_means(&m, &x), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn empty_and_random_inputs() {
        let sp = space(4);
        let m = build_fap_model(&tiny_cfg(), &FapFeatureSpec::ppg(&sp), 3).unwrap();
        let empty = FeatureMatrix::new(Array2::zeros((0, m.input_dim())), 10.0, FeatureKind::Generic).unwrap();
        assert_eq!(predict_fap_means(&m, &empty).unwrap().dim(), (0, 96));
        let mut rng = RngStream::new(4);
        let x = FeatureMatrix::new(
            Array2::from_shape_simple_fn((20, m.input_dim()), || rng.uniform(-5.0, 5.0)),
            10.0,
            FeatureKind::Generic,
        )
        .unwrap();
        let a = predict_fap_means(&m, &x).unwrap();
        let b = predict_fap_means(&m, &x).unwrap();
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, b);
    }

    #[test]
    fn network_gradients_match_finite_differences() {
        let sp = space(3);
        let cfg = FapPredictorConfig {
            blstm_layers: 2,
            blstm_units: 3,
            dense_layers: 1,
            dense_units: 4,
            zoneout: 0.3,
            use_energy: true,
        };
        let mut m = build_fap_model(&cfg, &FapFeatureSpec::ppg(&sp), 5).unwrap();
        let mut rng = RngStream::new(6);
        for p in m.net.params_mut() {
            p.iter_mut().for_each(|v| *v += rng.uniform(-0.3, 0.3));
        }
        let (t, b) = (4, 2);
        let x = Array3::from_shape_simple_fn((t, b, m.input_dim()), || rng.uniform(-1.0, 1.0));
        let y = Array2::from_shape_simple_fn((t * b, FAP_OUTPUT_DIM), || rng.uniform(-1.0, 1.0));
        let masks: Vec<BlstmMasks> = m.net.blstm.iter().map(|l| BlstmMasks::sample(&mut rng, l, t, b)).collect();
        let f = m.forward(x.clone(), Some(&masks)).unwrap();
        let (_, dout) = mse_loss(f.out.view(), y.view()).unwrap();
        let g = m.backward(&f, dout.view(), t, b).unwrap();
        let err = crate::nnet::grad_check(
            |p| {
                let mut mm = m.clone();
                mm.net.set_flat(p);
                let f = mm.forward(x.clone(), Some(&masks)).unwrap();
                mse_loss(f.out.view(), y.view()).unwrap().0
            },
            &m.net.flat(),
            &g.flat(),
            1e-5,
        );
        assert!(err <= 1e-4, "relative error {err}");
    }

    fn toy_examples(rng: &mut RngStream, m: &FapModel, sp: &PhonemeSpace, n: usize, t: usize) -> Vec<FapExample> {
        (0..n)
            .map(|i| {
                let ppg = random_ppg(rng, sp, t);
                let statics = Array2::from_shape_fn((t, FAP_DIM), |(f, d)| {
                    ppg.matrix()[[f, d % sp.len()]] * if d % 2 == 0 { 1.0 } else { -1.0 }
                });
                let emotion = EmotionLabel::ALL[i % 4];
                FapExample {
                    input: assemble_input(m, &ppg, &energy(rng, t), emotion).unwrap(),
                    target: dynamic_targets(statics.view()),
                    emotion,
                }
            })
            .collect()
    }

    #[test]
    fn single_utterance_overfits() {
        let sp = space(4);
        let cfg = FapPredictorConfig {
            blstm_layers: 1,
            blstm_units: 16,
            dense_layers: 1,
            dense_units: 16,
            zoneout: 0.0,
            use_energy: true,
        };
        let mut m = build_fap_model(&cfg, &FapFeatureSpec::ppg(&sp), 7).unwrap();
        let mut rng = RngStream::new(8);
        let data = toy_examples(&mut rng, &m, &sp, 1, 12);
        let hp = FapTrainConfig {
            epochs: 500,
            learning_rate: 1e-2,
            lr_decay: 1.0,
            chunk_frames: 12,
            batch_chunks: 1,
            fit_targets: true,
            ..Default::default()
        };
        let r = train_fap(&mut m, &data, &[], &hp, 9).unwrap();
        let last = *r.epoch_loss.last().unwrap();
        assert!(last < 1e-3, "loss after 500 steps: {last}");
    }

    #[test]
    fn training_is_deterministic_and_checkpoints_round_trip() {
        let sp = space(4);
        let run = || {
            let mut m = build_fap_model(&tiny_cfg(), &FapFeatureSpec::ppg(&sp), 10).unwrap();
            let mut rng = RngStream::new(11);
            let data = toy_examples(&mut rng, &m, &sp, 6, 15);
            let hp = FapTrainConfig {
                epochs: 3,
                chunk_frames: 10,
                batch_chunks: 4,
                ..Default::default()
            };
            let r = train_fap(&mut m, &data[..4], &data[4..], &hp, 12).unwrap();
            (m, r)
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a.to_checkpoint().encode(), b.to_checkpoint().encode());
        assert_eq!(ra, rb);
        assert!(ra.heldout_mse[0].is_some() && ra.heldout_mse[1].is_some());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fap.nnck");
        a.save(&p).unwrap();
        let back = FapModel::load(&p).unwrap();
        assert_eq!(back, a);
        assert!(matches!(FapModel::load(&dir.path().join("nope")), Err(Error::MissingCheckpoint(_))));
    }

    #[test]
    fn mfcc_model_normalises_features() {
        let mut m = build_fap_model(&tiny_cfg(), &FapFeatureSpec::mfcc(2), 0).unwrap();
        let f = FeatureMatrix::new(ndarray::array![[1.0, 10.0], [3.0, 30.0]], 10.0, FeatureKind::Generic).unwrap();
        let e = FeatureMatrix::new(ndarray::array![[-2.0], [-4.0]], 10.0, FeatureKind::Energy).unwrap();
        fit_input_statistics(&mut m, &[(&f, &e)]).unwrap();
        assert_eq!(m.energy_mean, -3.0);
        assert_eq!(m.energy_std, 1.0);
        let x = assemble_mfcc_input(&m, &f, &e, EmotionLabel::Angry).unwrap();
        assert_eq!(x.data().row(0).to_vec(), vec![-1.0, -1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        let sp = space(2);
        let ppg = Ppg::for_space(ndarray::array![[0.5, 0.5], [0.5, 0.5]], &sp).unwrap();
        assert!(assemble_input(&m, &ppg, &e, EmotionLabel::Angry).is_err());
    }
}
