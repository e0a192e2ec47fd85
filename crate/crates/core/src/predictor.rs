//! The full predictor: encoder, disentangler and a shared regressor, plus
//! the ranking, redundancy and intervention losses and the training loop.
//!
//! Only the critical head is used at inference time.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archgraph::{ArchDag, OpVocab};
use crate::autodiff::{Bound, Tape, Var};
use crate::disentangler::{DisentangledVars, Disentangler, DisentanglerConfig, MaskScores};
use crate::encoder::{encode_var, EncoderConfig, Gcn, GraphBatch};
use crate::nn::Mlp;
use crate::params::{Adam, AdamConfig, CheckpointError, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

pub const MANIFEST_FORMAT: &str = "carl-model v1";
const PREDICT_CHUNK: usize = 16;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training diverged in epoch {epoch}: {source}")]
    Diverged { epoch: usize, source: TensorError },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("need at least 2 training architectures, got {0}")]
    TooFew(usize),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("vocabulary hash mismatch: model {model}, data {data}")]
    VocabMismatch { model: String, data: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub disentangler: DisentanglerConfig,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            disentangler: DisentanglerConfig::default(),
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> std::result::Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::Config(m.to_string()));
        if self.encoder.layers == 0 || self.encoder.hidden == 0 {
            return bad("encoder layers and hidden dim must be at least 1");
        }
        if self.disentangler.sub_layers == 0 || self.disentangler.d_z == 0 {
            return bad("substructure layers and d_z must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 0.5,
            margin: 0.05,
            lr: 1e-3,
            epochs: 300,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> std::result::Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::Config(m.to_string()));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be non-negative");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2");
        }
        Ok(())
    }
}

/// Mean loss components over the batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub l_c: f64,
    pub l_r: f64,
    pub l_i: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitHistory {
    pub y_bar: f64,
    pub epochs: Vec<EpochLoss>,
}

/// Manifest written next to the parameter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub vocab: Vec<String>,
    pub vocab_hash: String,
    pub train_ids: Vec<String>,
}

/// Tape handles for one forward pass over a batch.
#[derive(Debug, Clone, Copy)]
pub struct Heads {
    pub parts: DisentangledVars,
    pub y_c: Var,
}

/// Loss values of one batch and the handle of the weighted total.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub total: Var,
    pub l_c: f64,
    pub l_r: f64,
    pub l_i: f64,
}

#[derive(Debug, Clone)]
pub struct PredictorModel {
    config: ModelConfig,
    vocab: OpVocab,
    store: ParamStore,
    encoder: Gcn,
    disentangler: Disentangler,
    regressor: Mlp,
}

impl PredictorModel {
    pub fn new(config: ModelConfig, vocab: OpVocab) -> std::result::Result<Self, PredictorError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let f = vocab.len();
        let h = config.encoder.hidden;
        let encoder = Gcn::new(&mut store, "encoder", f, h, config.encoder.layers, &mut rng);
        let disentangler = Disentangler::new(&mut store, h, f, config.disentangler, &mut rng);
        let d_z = config.disentangler.d_z;
        let regressor = Mlp::new(&mut store, "regressor", &[d_z, (d_z / 2).max(1), 1], &mut rng);
        Ok(Self {
            config,
            vocab,
            store,
            encoder,
            disentangler,
            regressor,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &OpVocab {
        &self.vocab
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Encoder, disentangler and the critical head.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, batch: &GraphBatch) -> Result<Heads> {
        let enc = &self.config.encoder;
        let h = encode_var(tape, params, &self.encoder, enc, batch)?;
        let parts = self.disentangler.forward(tape, params, enc, h, batch)?;
        let y_c = self.regressor.forward(tape, params, parts.z_c)?;
        Ok(Heads { parts, y_c })
    }

    /// Weighted training loss of one batch. `offset` is the cyclic shift
    /// pairing critical row `i` with redundant row `(i + offset) % B`.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        params: &Bound,
        batch: &GraphBatch,
        y: &[f64],
        y_bar: f64,
        offset: usize,
        cfg: &TrainConfig,
    ) -> Result<BatchLoss> {
        let heads = self.forward(tape, params, batch)?;
        let l_c = hinge_rank_loss(tape, heads.y_c, y, cfg.margin)?;

        let y_r = self.regressor.forward(tape, params, heads.parts.z_r)?;
        let l_r = mse_to_constant(tape, y_r, y_bar)?;

        let rot = tape.constant(rotation(y.len(), offset));
        let z_r_shifted = tape.matmul(rot, heads.parts.z_r)?;
        let z_i = tape.add(heads.parts.z_c, z_r_shifted)?;
        let y_i = self.regressor.forward(tape, params, z_i)?;
        let l_i = hinge_rank_loss(tape, y_i, y, cfg.margin)?;

        let wr = tape.scale(l_r, cfg.lambda1)?;
        let wi = tape.scale(l_i, cfg.lambda2)?;
        let partial = tape.add(l_c, wr)?;
        let total = tape.add(partial, wi)?;
        Ok(BatchLoss {
            total,
            l_c: tape.value(l_c).item()?,
            l_r: tape.value(l_r).item()?,
            l_i: tape.value(l_i).item()?,
        })
    }

    /// Trains in place, continuing from the current parameters.
    pub fn fit(&mut self, train: &[(&ArchDag, f64)], cfg: &TrainConfig) -> std::result::Result<FitHistory, PredictorError> {
        cfg.validate()?;
        if train.len() < 2 {
            return Err(PredictorError::TooFew(train.len()));
        }
        let y_bar = train.iter().map(|(_, y)| y).sum::<f64>() / train.len() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut adam = Adam::new(AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        });
        self.store.zero_grad();
        self.store.reset_moments();

        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut sums = [0.0; 4];
            let batches = batch_bounds(order.len(), cfg.batch_size);
            for range in &batches {
                let idx = &order[range.clone()];
                let archs: Vec<&ArchDag> = idx.iter().map(|&i| train[i].0).collect();
                let y: Vec<f64> = idx.iter().map(|&i| train[i].1).collect();
                let offset = draw_offset(idx.len(), &mut rng)?;
                let batch = GraphBatch::new(&archs);

                let step = |model: &mut Self| -> Result<(BatchLoss, f64)> {
                    let mut tape = Tape::new();
                    let params = tape.bind(&model.store);
                    let loss = model.batch_loss(&mut tape, &params, &batch, &y, y_bar, offset, cfg)?;
                    let grads = tape.backward(loss.total)?;
                    model.store.accumulate(&grads)?;
                    Ok((loss, tape.value(loss.total).item()?))
                };
                let (loss, total) = step(self).map_err(|source| PredictorError::Diverged { epoch, source })?;
                adam.step(&mut self.store);
                if self.store.iter().any(|(_, p)| !p.value.all_finite()) {
                    return Err(PredictorError::Diverged {
                        epoch,
                        source: TensorError::NonFinite { op: "adam_step" },
                    });
                }
                sums[3] += total;
                sums[0] += loss.l_c;
                sums[1] += loss.l_r;
                sums[2] += loss.l_i;
            }
            let n = batches.len() as f64;
            history.push(EpochLoss {
                l_c: sums[0] / n,
                l_r: sums[1] / n,
                l_i: sums[2] / n,
                total: sums[3] / n,
            });
        }
        Ok(FitHistory { y_bar, epochs: history })
    }

    /// Critical-path predictions, one per architecture.
    pub fn predict(&self, archs: &[&ArchDag]) -> Result<Vec<f64>> {
        let chunks: Vec<Result<Vec<f64>>> = archs
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| {
                let batch = GraphBatch::new(chunk);
                let mut tape = Tape::new();
                let params = tape.bind(&self.store);
                let heads = self.forward(&mut tape, &params, &batch)?;
                Ok(tape.value(heads.y_c).data().to_vec())
            })
            .collect();
        let mut out = Vec::with_capacity(archs.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Pooled `(Z_C, Z_R)` rows, one per architecture.
    pub fn representations(&self, archs: &[&ArchDag]) -> Result<(Tensor, Tensor)> {
        let mut zc = Vec::new();
        let mut zr = Vec::new();
        for chunk in archs.chunks(PREDICT_CHUNK) {
            let batch = GraphBatch::new(chunk);
            let mut tape = Tape::new();
            let params = tape.bind(&self.store);
            let heads = self.forward(&mut tape, &params, &batch)?;
            zc.push(tape.value(heads.parts.z_c).clone());
            zr.push(tape.value(heads.parts.z_r).clone());
        }
        let zc: Vec<&Tensor> = zc.iter().collect();
        let zr: Vec<&Tensor> = zr.iter().collect();
        Ok((Tensor::concat_rows(&zc)?, Tensor::concat_rows(&zr)?))
    }

    /// Shared regressor applied to each row of `z`.
    pub fn regress(&self, z: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let params = tape.bind(&self.store);
        let z = tape.constant(z.clone());
        let y = self.regressor.forward(&mut tape, &params, z)?;
        Ok(tape.value(y).data().to_vec())
    }

    /// Measures how much the prediction of a combined representation
    /// `Z_C[i] + Z_R[j]` moves when the redundant source `j` varies, against
    /// how much it moves when the critical source varies. Each of `fixed`
    /// anchors is combined with `draws` random partners either way.
    pub fn inertness(&self, archs: &[&ArchDag], fixed: usize, draws: usize, seed: u64) -> Result<Inertness> {
        let n = archs.len();
        if n < 2 || fixed == 0 || draws < 2 {
            return Err(TensorError::Invalid("inertness needs at least 2 architectures, 1 anchor and 2 draws".into()));
        }
        let (z_c, z_r) = self.representations(archs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let combine = |c: usize, r: usize| -> Vec<f64> {
            z_c.row_slice(c).iter().zip(z_r.row_slice(r)).map(|(a, b)| a + b).collect()
        };
        let (mut red, mut crit) = (0.0, 0.0);
        for _ in 0..fixed {
            let anchor = rng.random_range(0..n);
            let vary_r: Vec<Vec<f64>> = (0..draws).map(|_| combine(anchor, rng.random_range(0..n))).collect();
            let vary_c: Vec<Vec<f64>> = (0..draws).map(|_| combine(rng.random_range(0..n), anchor)).collect();
            red += std_dev(&self.regress(&Tensor::from_rows(&vary_r))?);
            crit += std_dev(&self.regress(&Tensor::from_rows(&vary_c))?);
        }
        let (red, crit) = (red / fixed as f64, crit / fixed as f64);
        Ok(Inertness {
            std_redundant: red,
            std_critical: crit,
            ratio: red / crit,
        })
    }

    /// Node and edge `(α_C, α_R)` for one architecture.
    pub fn scores(&self, arch: &ArchDag) -> Result<MaskScores> {
        let batch = GraphBatch::new(&[arch]);
        let mut tape = Tape::new();
        let params = tape.bind(&self.store);
        let heads = self.forward(&mut tape, &params, &batch)?;
        Ok(MaskScores {
            node_alpha: tape.value(heads.parts.node_alpha).clone(),
            edge_alpha: tape.value(heads.parts.edge_alpha).clone(),
        })
    }

    pub fn check_vocab(&self, vocab: &OpVocab) -> std::result::Result<(), PredictorError> {
        let (model, data) = (self.vocab.hash(), vocab.hash());
        if model != data {
            return Err(PredictorError::VocabMismatch { model, data });
        }
        Ok(())
    }

    /// Writes `model.params` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path, train: Option<&TrainConfig>, train_ids: &[String]) -> std::result::Result<(), PredictorError> {
        fs::create_dir_all(dir).map_err(CheckpointError::Io)?;
        self.store.save(&dir.join("model.params")).map_err(CheckpointError::Io)?;
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            model: self.config,
            train: train.copied(),
            vocab: self.vocab.names().to_vec(),
            vocab_hash: self.vocab.hash(),
            train_ids: train_ids.to_vec(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| PredictorError::Manifest(e.to_string()))?;
        fs::write(dir.join("manifest.json"), text + "\n").map_err(CheckpointError::Io)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> std::result::Result<(Self, Manifest), PredictorError> {
        let text = fs::read_to_string(dir.join("manifest.json")).map_err(CheckpointError::Io)?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| PredictorError::Manifest(e.to_string()))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(PredictorError::Manifest(format!("unsupported format {:?}", manifest.format)));
        }
        let vocab = OpVocab::new(manifest.vocab.clone()).map_err(|e| PredictorError::Manifest(e.to_string()))?;
        if vocab.hash() != manifest.vocab_hash {
            return Err(PredictorError::Manifest("vocabulary hash does not match its names".into()));
        }
        let mut model = Self::new(manifest.model, vocab)?;
        let saved = ParamStore::load(&dir.join("model.params"))?;
        model.store.load_values_from(&saved)?;
        Ok((model, manifest))
    }
}

/// Result of [`PredictorModel::inertness`]. `ratio` below 1 means the
/// redundant representation moves predictions less than the critical one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inertness {
    pub std_redundant: f64,
    pub std_critical: f64,
    pub ratio: f64,
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Contiguous batch ranges over `n` shuffled items. A trailing batch of a
/// single item is merged into the previous one, since ranking needs pairs.
pub fn batch_bounds(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() < 2) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// Uniform cyclic offset in `1..b`, so no row is paired with itself.
pub fn draw_offset(b: usize, rng: &mut impl Rng) -> Result<usize> {
    if b < 2 {
        return Err(TensorError::Invalid(format!("intervention needs at least 2 rows, got {b}")));
    }
    Ok(rng.random_range(1..b))
}

/// `B x B` matrix whose product with `Z` moves row `(i + k) % B` to row `i`.
pub fn rotation(b: usize, k: usize) -> Tensor {
    let mut p = Tensor::zeros(b, b);
    for i in 0..b {
        p.set(i, (i + k) % b, 1.0);
    }
    p
}

/// `Z_I[i] = Z_C[i] + Z_R[π(i)]` for a random cyclic pairing `π`, returned
/// alongside the result.
pub fn intervene(z_c: &Tensor, z_r: &Tensor, rng: &mut impl Rng) -> Result<(Tensor, Vec<usize>)> {
    let b = z_c.rows();
    let k = draw_offset(b, rng)?;
    let shifted = rotation(b, k).matmul(z_r)?;
    let perm = (0..b).map(|i| (i + k) % b).collect();
    Ok((z_c.add(&shifted)?, perm))
}

/// Pairwise hinge ranking loss over `i < j` with distinct targets:
/// `Σ max(0, m − (p_i − p_j)·sign(y_i − y_j))`. `pred` is `N x 1`.
pub fn hinge_rank_loss(tape: &mut Tape, pred: Var, y: &[f64], margin: f64) -> Result<Var> {
    let n = y.len();
    if n < 2 || tape.value(pred).shape() != [n, 1] {
        return Err(TensorError::Invalid(format!(
            "ranking loss needs N >= 2 aligned predictions, got {:?} for {} targets",
            tape.value(pred).shape(),
            n
        )));
    }
    let mut sign = Tensor::zeros(n, n);
    let mut mask = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if y[i] != y[j] {
                sign.set(i, j, (y[i] - y[j]).signum());
                mask.set(i, j, margin);
            }
        }
    }
    let ones = tape.constant(Tensor::ones(1, n));
    let rows = tape.matmul(pred, ones)?;
    let cols = tape.transpose(rows)?;
    let diff = tape.sub(rows, cols)?;
    let sign = tape.constant(sign);
    let signed = tape.mul(diff, sign)?;
    let mask = tape.constant(mask);
    let slack = tape.sub(mask, signed)?;
    let hinge = tape.relu(slack)?;
    tape.sum(hinge)
}

/// `(1/N) Σ (p_i − c)²`.
pub fn mse_to_constant(tape: &mut Tape, pred: Var, c: f64) -> Result<Var> {
    let (r, k) = (tape.value(pred).rows(), tape.value(pred).cols());
    let target = tape.constant(Tensor::full(r, k, c));
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq)?;
    tape.scale(s, 1.0 / (r * k) as f64)
}

/// Critical ranking loss on plain values.
pub fn loss_c(pred: &[f64], y: &[f64], margin: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::column(pred));
    let l = hinge_rank_loss(&mut tape, p, y, margin)?;
    tape.value(l).item()
}

/// Interventional ranking loss; same form as [`loss_c`].
pub fn loss_i(pred: &[f64], y: &[f64], margin: f64) -> Result<f64> {
    loss_c(pred, y, margin)
}

pub fn loss_r(pred: &[f64], y_bar: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::column(pred));
    let l = mse_to_constant(&mut tape, p, y_bar)?;
    tape.value(l).item()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_examples() {
        assert_eq!(loss_c(&[0.9, 0.1], &[0.8, 0.2], 0.1).unwrap(), 0.0);
        assert!((loss_c(&[0.1, 0.9], &[0.8, 0.2], 0.1).unwrap() - 0.9).abs() < 1e-12);
        assert!((loss_c(&[0.4; 3], &[0.1, 0.5, 0.3], 0.05).unwrap() - 0.15).abs() < 1e-12);
    }

    #[test]
    fn ties_are_excluded() {
        assert_eq!(loss_c(&[0.4, 0.4], &[0.5, 0.5], 0.05).unwrap(), 0.0);
    }

    #[test]
    fn too_few_items() {
        assert!(loss_c(&[0.4], &[0.5], 0.05).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(loss_r(&[0.3, 0.3], 0.3).unwrap(), 0.0);
        assert!((loss_r(&[0.4, 0.4, 0.4], 0.3).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn mse_gradient() {
        let pred = [0.2, 0.7, 0.45];
        let y_bar = 0.4;
        let mut tape = Tape::new();
        let p = tape.variable(Tensor::column(&pred));
        let l = mse_to_constant(&mut tape, p, y_bar).unwrap();
        let g = tape.backward(l).unwrap().wrt(p).unwrap().clone();
        for i in 0..3 {
            let mut up = pred;
            up[i] += 1e-6;
            let mut down = pred;
            down[i] -= 1e-6;
            let numeric = (loss_r(&up, y_bar).unwrap() - loss_r(&down, y_bar).unwrap()) / 2e-6;
            assert!((g.data()[i] - numeric).abs() < 1e-8);
        }
    }

    #[test]
    fn batch_bounds_merge_singletons() {
        assert_eq!(batch_bounds(33, 16), vec![0..16, 16..33]);
        assert_eq!(batch_bounds(34, 16), vec![0..16, 16..32, 32..34]);
        assert_eq!(batch_bounds(5, 16), vec![0..5]);
    }

    #[test]
    fn rotation_pairs() {
        let z = Tensor::column(&[1.0, 2.0, 3.0]);
        assert_eq!(rotation(3, 1).matmul(&z).unwrap().data(), &[2.0, 3.0, 1.0]);
    }
}
