//! Central finite-difference checks of every analytic gradient, for the
//! autodiff primitives and for the full training loss of a small model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archgraph::{synth_generate, ArchDag, SyntheticSpec};
use crate::autodiff::{Bound, OpKind, Tape, Var};
use crate::disentangler::DisentanglerConfig;
use crate::encoder::{EncoderConfig, GraphBatch};
use crate::params::ParamStore;
use crate::predictor::{ModelConfig, PredictorError, PredictorModel, TrainConfig};
use crate::tensor::{Result, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms. With a loss
/// of order 10 and `STEP = 1e-5`, central differences carry roughly 1e-10 of
/// rounding noise, so relative error below this scale measures the noise.
pub const ABS_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub suite: String,
    pub name: String,
    pub scalars: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub checks: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_rel_err < self.tolerance)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.checks.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares the tape gradient of `f` with central differences for every
/// scalar of every parameter in `store`. `fault` corrupts one backward rule.
pub fn check_store<F>(suite: &str, store: &ParamStore, fault: Option<OpKind>, f: F) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let params = tape.bind(s);
        let out = f(&mut tape, &params)?;
        tape.value(out).item()
    };
    let mut tape = fault.map_or_else(Tape::new, Tape::with_fault);
    let params = tape.bind(store);
    let out = f(&mut tape, &params)?;
    let grads = tape.backward(out)?;

    let mut probe = store.clone();
    let mut checks = Vec::new();
    for (id, p) in store.iter() {
        let analytic = grads
            .wrt(params.get(id))
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p.value.rows(), p.value.cols()));
        let mut worst = 0.0f64;
        for k in 0..p.value.len() {
            let orig = p.value.data()[k];
            probe.value_mut(id).data_mut()[k] = orig + STEP;
            let up = eval(&probe)?;
            probe.value_mut(id).data_mut()[k] = orig - STEP;
            let down = eval(&probe)?;
            probe.value_mut(id).data_mut()[k] = orig;
            let e = rel_err(analytic.data()[k], (up - down) / (2.0 * STEP));
            worst = worst.max(e);
        }
        checks.push(ParamCheck {
            suite: suite.to_string(),
            name: p.name.clone(),
            scalars: p.value.len(),
            max_rel_err: worst,
        });
    }
    Ok(checks)
}

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// One small expression per primitive, each reduced to a scalar through a
/// fixed random projection so that no gradient is trivially uniform.
pub fn check_primitives(seed: u64, fault: Option<OpKind>) -> Result<Vec<ParamCheck>> {
    type Build = fn(&mut Tape, Var, Var) -> Result<Var>;
    let cases: [(&str, [usize; 4], Build); 16] = [
        ("matmul", [3, 4, 4, 2], |t, a, b| t.matmul(a, b)),
        ("add", [3, 4, 3, 4], |t, a, b| t.add(a, b)),
        ("sub", [3, 4, 3, 4], |t, a, b| t.sub(a, b)),
        ("mul", [3, 4, 3, 4], |t, a, b| t.mul(a, b)),
        ("mul_col", [3, 4, 3, 1], |t, a, b| t.mul_col(a, b)),
        ("relu", [3, 4, 1, 1], |t, a, _| t.relu(a)),
        ("softmax_rows", [3, 4, 1, 1], |t, a, _| t.softmax_rows(a)),
        ("concat_cols", [3, 2, 3, 3], |t, a, b| t.concat_cols(a, b)),
        ("concat_rows", [2, 4, 3, 4], |t, a, b| t.concat_rows(&[a, b, a])),
        ("mean_rows", [3, 4, 1, 1], |t, a, _| t.mean_rows(a)),
        ("sum", [3, 4, 1, 1], |t, a, _| t.sum(a)),
        ("scale", [3, 4, 1, 1], |t, a, _| t.scale(a, -1.7)),
        ("add_scalar", [3, 4, 1, 1], |t, a, _| t.add_scalar(a, 0.3)),
        ("row_sum", [3, 4, 1, 1], |t, a, _| t.row_sum(a)),
        ("recip", [3, 4, 1, 1], |t, a, _| {
            let shifted = t.add_scalar(a, 3.0)?;
            t.recip(shifted)
        }),
        ("transpose", [3, 4, 1, 1], |t, a, _| t.transpose(a)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, [ar, ac, br, bc], build) in cases {
        let mut store = ParamStore::new();
        let mut a = random(ar, ac, &mut rng);
        if name == "relu" {
            // keep finite differences away from the kink
            a = a.map(|x| if x.abs() < 0.05 { x + 0.1 } else { x });
        }
        store.add("a", a);
        store.add("b", random(br, bc, &mut rng));
        let probe_rng = rng.random::<u64>();
        let ids: Vec<_> = store.ids().collect();
        let f = |tape: &mut Tape, p: &Bound| -> Result<Var> {
            let y = build(tape, p.get(ids[0]), p.get(ids[1]))?;
            let shape = tape.value(y).shape();
            let w = tape.constant(random(shape[0], shape[1], &mut ChaCha8Rng::seed_from_u64(probe_rng)));
            let yw = tape.mul(y, w)?;
            tape.sum(yw)
        };
        out.extend(check_store(name, &store, fault, f)?);
    }
    Ok(out)
}

/// Random valid DAGs with at most `max_nodes` nodes.
pub fn random_dags(count: usize, max_nodes: usize, seed: u64) -> std::result::Result<Vec<ArchDag>, PredictorError> {
    let mut spec = SyntheticSpec::benchmark(0.5, 0.01, seed);
    spec.min_nodes = 4.min(max_nodes);
    spec.max_nodes = max_nodes;
    spec.num_archs = count;
    spec.edge_prob = 0.3;
    spec.op_weights.clear();
    let ds = synth_generate(&spec).map_err(|e| PredictorError::Config(e.to_string()))?;
    Ok(ds.records.into_iter().map(|r| r.arch).collect())
}

/// Small model whose full loss is cheap enough to difference scalar by
/// scalar. Every parameter, biases included, is jittered so that no ReLU
/// input sits exactly on the kink (zero biases meeting an all-zero pooled
/// row would).
pub fn small_model(seed: u64) -> std::result::Result<PredictorModel, PredictorError> {
    let vocab = SyntheticSpec::benchmark(0.5, 0.01, seed).vocab;
    let config = ModelConfig {
        encoder: EncoderConfig {
            layers: 2,
            hidden: 6,
            ..EncoderConfig::default()
        },
        disentangler: DisentanglerConfig {
            sub_layers: 2,
            d_z: 4,
            ..DisentanglerConfig::default()
        },
        init_seed: seed,
    };
    let mut model = PredictorModel::new(config, vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let store = model.store_mut();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    Ok(model)
}

/// Total training loss of `model` on a batch of four random DAGs with at
/// most six nodes, every parameter checked.
pub fn check_pipeline(model: &PredictorModel, seed: u64, fault: Option<OpKind>) -> std::result::Result<Vec<ParamCheck>, PredictorError> {
    let dags = random_dags(4, 6, seed)?;
    let refs: Vec<&ArchDag> = dags.iter().collect();
    let batch = GraphBatch::new(&refs);
    let y = [0.61, 0.93, 0.42, 0.77];
    let y_bar = 0.65;
    let cfg = TrainConfig::default();
    // margin large enough that every pair sits inside the hinge
    let cfg = TrainConfig { margin: 2.0, ..cfg };
    let f = |tape: &mut Tape, params: &Bound| -> Result<Var> {
        Ok(model.batch_loss(tape, params, &batch, &y, y_bar, 1, &cfg)?.total)
    };
    Ok(check_store("pipeline", model.store(), fault, f)?)
}

/// Every finite-difference suite.
pub fn run(seed: u64, fault: Option<OpKind>) -> std::result::Result<GradcheckReport, PredictorError> {
    let mut checks = check_primitives(seed, fault)?;
    checks.extend(check_pipeline(&small_model(seed)?, seed, fault)?);
    Ok(GradcheckReport {
        tolerance: TOLERANCE,
        step: STEP,
        checks,
    })
}
