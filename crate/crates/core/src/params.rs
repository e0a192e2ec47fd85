//! Learnable parameters, the Adam optimizer, and the checkpoint format.
//!
//! Checkpoint format (UTF-8 text, one record per parameter):
//!
//! ```text
//! carl-params v1
//! param <name> <rows> <cols>
//! <rows*cols values, whitespace separated, row-major>
//! ...
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! a save/load cycle reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::tensor::{Tensor, TensorError};

pub const CHECKPOINT_HEADER: &str = "carl-params v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    m: Tensor,
    v: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let (r, c) = (value.rows(), value.cols());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
        });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform initialized `rows x cols` weight.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        self.add(name, Tensor::new(rows, cols, data).expect("sized"))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds a backward pass's gradients into each parameter's `grad`.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<(), TensorError> {
        for (id, g) in grads.params() {
            self.params[id.0].grad.add_assign(g)?;
        }
        Ok(())
    }

    /// Clears optimizer moments so a new optimizer run starts fresh.
    pub fn reset_moments(&mut self) {
        for p in &mut self.params {
            p.m.data_mut().fill(0.0);
            p.v.data_mut().fill(0.0);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_HEADER);
        out.push('\n');
        for p in &self.params {
            let _ = writeln!(out, "param {} {} {}", p.name, p.value.rows(), p.value.cols());
            let line: Vec<String> = p.value.data().iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CHECKPOINT_HEADER => {}
            other => {
                return Err(CheckpointError::Format(format!(
                    "bad header {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut store = ParamStore::new();
        while let Some(head) = lines.next() {
            if head.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = head.split_whitespace().collect();
            let [tag, name, rows, cols] = fields[..] else {
                return Err(CheckpointError::Format(format!("bad record line {head:?}")));
            };
            if tag != "param" {
                return Err(CheckpointError::Format(format!("bad record line {head:?}")));
            }
            let parse_dim = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| CheckpointError::Format(format!("bad dimension {s:?}")))
            };
            let (rows, cols) = (parse_dim(rows)?, parse_dim(cols)?);
            let values: Vec<f64> = lines
                .next()
                .unwrap_or("")
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| CheckpointError::Format(format!("bad value {v:?} in {name}")))
                })
                .collect::<Result<_, _>>()?;
            let t = Tensor::new(rows, cols, values).map_err(|e| CheckpointError::Format(e.to_string()))?;
            store.add(name, t);
        }
        Ok(store)
    }

    /// Copies values from `other`, matching by name and shape.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<(), CheckpointError> {
        if other.len() != self.len() {
            return Err(CheckpointError::Format(format!(
                "expected {} parameters, checkpoint has {}",
                self.len(),
                other.len()
            )));
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(CheckpointError::Format(format!(
                    "parameter mismatch: {} {:?} vs {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
            mine.value = theirs.value.clone();
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Gradients are zeroed after each step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for p in &mut store.params {
            let n = p.value.len();
            let (value, grad, m, v) = (
                p.value.data_mut(),
                p.grad.data(),
                p.m.data_mut(),
                p.v.data_mut(),
            );
            for i in 0..n {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(values: &[f64]) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::row(values));
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = store_with(&[1.0, -2.0, 3.5]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut s);
        assert_eq!(s.value(id).data(), &[1.0, -2.0, 3.5]);
    }

    #[test]
    fn first_step_closed_form() {
        // From zero moments: m_hat = g, v_hat = g², update = -lr * g / (|g| + eps).
        let (mut s, id) = store_with(&[0.0, 0.0, 0.0]);
        let g = [0.3, -2.0, 1e-3];
        s.params[0].grad = Tensor::row(&g);
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg);
        adam.step(&mut s);
        for (i, gi) in g.iter().enumerate() {
            let expected = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((s.value(id).data()[i] - expected).abs() < 1e-15);
        }
        assert!(s.get(id).grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        s.add_glorot("enc.w0", 5, 7, &mut rng);
        s.add("bias", Tensor::row(&[0.1, 1.0 / 3.0, -1e-300]));
        let back = ParamStore::from_text(&s.to_text()).unwrap();
        assert_eq!(back.len(), 2);
        for ((_, a), (_, b)) in s.iter().zip(back.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn checkpoint_rejects_bad_header() {
        assert!(matches!(
            ParamStore::from_text("nope\n"),
            Err(CheckpointError::Format(_))
        ));
    }
}
