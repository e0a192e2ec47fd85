//! GCN encoder producing node- and edge-level architecture embeddings.
//!
//! Layer update: `H^{l+1} = ReLU(Ã H^l W^l)` with `H^0 = O` (the one-hot
//! operation matrix). By default `Ã = RowNorm(A + I)`; [`AdjNorm::Raw`]
//! uses the raw adjacency instead.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archgraph::ArchDag;
use crate::autodiff::{Bound, Tape, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjNorm {
    /// `RowNorm(A + I)`: self-loops, then each row divided by its sum.
    RowNormSelfLoops,
    /// The adjacency as-is.
    Raw,
}

/// Which way features travel. With [`AdjDirection::AsGiven`] row `i` of
/// `Ã H` aggregates over the successors of node `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjDirection {
    AsGiven,
    Transposed,
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub norm: AdjNorm,
    pub direction: AdjDirection,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 128,
            norm: AdjNorm::RowNormSelfLoops,
            direction: AdjDirection::AsGiven,
        }
    }
}

/// `D x d_h` node embeddings, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings(pub Tensor);

/// `E x 2d_h` edge embeddings in row-major edge order of the adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeEmbeddings(pub Tensor);

pub fn orient(a: &Tensor, direction: AdjDirection) -> Tensor {
    match direction {
        AdjDirection::AsGiven => a.clone(),
        AdjDirection::Transposed => a.transpose(),
        AdjDirection::Symmetric => a.add(&a.transpose()).expect("square"),
    }
}

pub fn orient_var(tape: &mut Tape, a: Var, direction: AdjDirection) -> Result<Var> {
    match direction {
        AdjDirection::AsGiven => Ok(a),
        AdjDirection::Transposed => tape.transpose(a),
        AdjDirection::Symmetric => {
            let t = tape.transpose(a)?;
            tape.add(a, t)
        }
    }
}

/// Normalizes a (possibly soft) adjacency matrix.
pub fn normalize_adj(a: &Tensor, norm: AdjNorm) -> Tensor {
    match norm {
        AdjNorm::Raw => a.clone(),
        AdjNorm::RowNormSelfLoops => {
            let with_loops = a.add(&Tensor::identity(a.rows())).expect("square");
            let inv = with_loops.row_sums().map(|s| 1.0 / s);
            with_loops.mul_col(&inv).expect("column")
        }
    }
}

/// Differentiable [`normalize_adj`].
pub fn normalize_adj_var(tape: &mut Tape, a: Var, norm: AdjNorm) -> Result<Var> {
    match norm {
        AdjNorm::Raw => Ok(a),
        AdjNorm::RowNormSelfLoops => {
            let n = tape.value(a).rows();
            let eye = tape.constant(Tensor::identity(n));
            let with_loops = tape.add(a, eye)?;
            let deg = tape.row_sum(with_loops)?;
            let inv = tape.recip(deg)?;
            tape.mul_col(with_loops, inv)
        }
    }
}

/// Bias-free stack of graph convolutions.
#[derive(Debug, Clone)]
pub struct Gcn {
    weights: Vec<ParamId>,
}

impl Gcn {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weights = (0..layers)
            .map(|l| {
                let rows = if l == 0 { in_dim } else { hidden };
                store.add_glorot(format!("{prefix}.w{l}"), rows, hidden, rng)
            })
            .collect();
        Self { weights }
    }

    /// Runs every layer on already-normalized adjacency `adj` (`D x D`) and
    /// input features `feats` (`D x in_dim`).
    pub fn forward(&self, tape: &mut Tape, params: &Bound, adj: Var, feats: Var) -> Result<Var> {
        let mut h = feats;
        for &w in &self.weights {
            let agg = tape.matmul(adj, h)?;
            let lin = tape.matmul(agg, params.get(w))?;
            h = tape.relu(lin)?;
        }
        Ok(h)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.weights.iter().copied()
    }
}

/// Several architectures packed as one block-diagonal graph so a whole
/// mini-batch runs through a single sequence of tape ops.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    node_offsets: Vec<usize>,
    edge_offsets: Vec<usize>,
    edges: Vec<(usize, usize)>,
    one_hot: Tensor,
    adj: Tensor,
    src: Tensor,
    dst: Tensor,
    src_t: Tensor,
    pool: Tensor,
}

impl GraphBatch {
    pub fn new(archs: &[&ArchDag]) -> Self {
        let total: usize = archs.iter().map(|a| a.num_nodes()).sum();
        let f = archs.first().map_or(0, |a| a.num_ops());
        let mut node_offsets = vec![0];
        let mut edge_offsets = vec![0];
        let mut edges = Vec::new();
        let mut one_hot = Tensor::zeros(total, f);
        let mut adj = Tensor::zeros(total, total);
        let mut pool = Tensor::zeros(archs.len(), total);
        for (g, arch) in archs.iter().enumerate() {
            assert_eq!(arch.num_ops(), f, "mixed vocabularies in one batch");
            let base = *node_offsets.last().unwrap();
            let d = arch.num_nodes();
            for i in 0..d {
                one_hot.set(base + i, arch.op(i), 1.0);
                pool.set(g, base + i, 1.0 / d as f64);
            }
            for (i, j) in arch.edges() {
                adj.set(base + i, base + j, 1.0);
                edges.push((base + i, base + j));
            }
            node_offsets.push(base + d);
            edge_offsets.push(edges.len());
        }
        let mut src = Tensor::zeros(edges.len(), total);
        let mut dst = Tensor::zeros(edges.len(), total);
        for (e, &(i, j)) in edges.iter().enumerate() {
            src.set(e, i, 1.0);
            dst.set(e, j, 1.0);
        }
        let src_t = src.transpose();
        Self {
            node_offsets,
            edge_offsets,
            edges,
            one_hot,
            adj,
            src,
            dst,
            src_t,
            pool,
        }
    }

    pub fn len(&self) -> usize {
        self.node_offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_nodes(&self) -> usize {
        *self.node_offsets.last().unwrap()
    }

    pub fn total_edges(&self) -> usize {
        self.edges.len()
    }

    /// Rows of graph `g` in node-level matrices.
    pub fn node_range(&self, g: usize) -> std::ops::Range<usize> {
        self.node_offsets[g]..self.node_offsets[g + 1]
    }

    /// Rows of graph `g` in edge-level matrices.
    pub fn edge_range(&self, g: usize) -> std::ops::Range<usize> {
        self.edge_offsets[g]..self.edge_offsets[g + 1]
    }

    pub fn one_hot(&self) -> &Tensor {
        &self.one_hot
    }

    /// Block-diagonal binary adjacency.
    pub fn adjacency(&self) -> &Tensor {
        &self.adj
    }

    /// `E x N` source selector.
    pub fn src(&self) -> &Tensor {
        &self.src
    }

    /// `E x N` target selector.
    pub fn dst(&self) -> &Tensor {
        &self.dst
    }

    pub fn src_t(&self) -> &Tensor {
        &self.src_t
    }

    /// `B x N` per-graph mean-pooling matrix.
    pub fn pool(&self) -> &Tensor {
        &self.pool
    }
}

/// Encoder output on the tape: stacked `H_node` (`N x d_h`).
pub fn encode_var(tape: &mut Tape, params: &Bound, gcn: &Gcn, cfg: &EncoderConfig, batch: &GraphBatch) -> Result<Var> {
    let adj = normalize_adj(&orient(batch.adjacency(), cfg.direction), cfg.norm);
    let adj = tape.constant(adj);
    let feats = tape.constant(batch.one_hot().clone());
    gcn.forward(tape, params, adj, feats)
}

/// `[H_src ; H_dst]` for every edge, on the tape.
pub fn edge_embed_var(tape: &mut Tape, h_node: Var, batch: &GraphBatch) -> Result<Var> {
    let src = tape.constant(batch.src().clone());
    let dst = tape.constant(batch.dst().clone());
    let hs = tape.matmul(src, h_node)?;
    let hd = tape.matmul(dst, h_node)?;
    tape.concat_cols(hs, hd)
}

pub fn encode(arch: &ArchDag, gcn: &Gcn, cfg: &EncoderConfig, store: &ParamStore) -> Result<NodeEmbeddings> {
    let batch = GraphBatch::new(&[arch]);
    let mut tape = Tape::new();
    let params = tape.bind(store);
    let h = encode_var(&mut tape, &params, gcn, cfg, &batch)?;
    Ok(NodeEmbeddings(tape.value(h).clone()))
}

pub fn edge_embed(h: &NodeEmbeddings, arch: &ArchDag) -> Result<EdgeEmbeddings> {
    let batch = GraphBatch::new(&[arch]);
    let hs = batch.src().matmul(&h.0)?;
    let hd = batch.dst().matmul(&h.0)?;
    Ok(EdgeEmbeddings(hs.concat_cols(&hd)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalize_single_node() {
        assert_eq!(
            normalize_adj(&Tensor::zeros(1, 1), AdjNorm::RowNormSelfLoops),
            Tensor::scalar(1.0)
        );
    }

    #[test]
    fn normalize_chain() {
        let a = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        let n = normalize_adj(&a, AdjNorm::RowNormSelfLoops);
        assert_eq!(n.row_slice(0), &[0.5, 0.5]);
        assert_eq!(n.row_slice(1), &[0.0, 1.0]);
    }

    #[test]
    fn normalize_var_matches_plain() {
        let a = Tensor::from_rows(&[vec![0.0, 0.3, 0.9], vec![0.0, 0.0, 0.2], vec![0.0, 0.0, 0.0]]);
        let mut tape = Tape::new();
        let v = tape.constant(a.clone());
        let out = normalize_adj_var(&mut tape, v, AdjNorm::RowNormSelfLoops).unwrap();
        assert!(tape.value(out).max_abs_diff(&normalize_adj(&a, AdjNorm::RowNormSelfLoops)) < 1e-15);
    }

    #[test]
    fn identity_weights_single_node() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gcn = Gcn::new(&mut store, "enc", 3, 3, 1, &mut rng);
        *store.value_mut(gcn.weights[0]) = Tensor::identity(3);
        let arch = ArchDag::new(vec![false], vec![2], 3).unwrap();
        let cfg = EncoderConfig {
            layers: 1,
            hidden: 3,
            ..EncoderConfig::default()
        };
        let h = encode(&arch, &gcn, &cfg, &store).unwrap();
        assert_eq!(h.0, arch.one_hot());
    }

    #[test]
    fn single_edge_embedding_halves() {
        let arch = ArchDag::from_edges(2, &[(0, 1)], vec![0, 1], 2).unwrap();
        let h = NodeEmbeddings(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let e = edge_embed(&h, &arch).unwrap();
        assert_eq!(e.0, Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]));
        let rev = ArchDag::from_edges(2, &[(1, 0)], vec![0, 1], 2).unwrap();
        let e = edge_embed(&h, &rev).unwrap();
        assert_eq!(e.0, Tensor::from_rows(&[vec![3.0, 4.0, 1.0, 2.0]]));
    }

    fn sample_arch() -> ArchDag {
        // input -> 2 -> 3 -> output, plus 2 -> 4 -> output
        ArchDag::from_edges(5, &[(0, 2), (2, 3), (3, 1), (2, 4), (4, 1)], vec![0, 1, 2, 3, 4], 5).unwrap()
    }

    fn small_model(seed: u64) -> (ParamStore, Gcn, EncoderConfig) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gcn = Gcn::new(&mut store, "enc", 5, 6, 2, &mut rng);
        let cfg = EncoderConfig {
            layers: 2,
            hidden: 6,
            ..EncoderConfig::default()
        };
        (store, gcn, cfg)
    }

    #[test]
    fn permutation_equivariance() {
        let (store, gcn, cfg) = small_model(3);
        let arch = sample_arch();
        let perm = [4, 2, 0, 1, 3];
        let h = encode(&arch, &gcn, &cfg, &store).unwrap().0;
        let hp = encode(&arch.permuted(&perm), &gcn, &cfg, &store).unwrap().0;
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..h.cols() {
                assert!((h.get(i, c) - hp.get(p, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_matches_individual() {
        let (store, gcn, cfg) = small_model(4);
        let a = sample_arch();
        let b = ArchDag::from_edges(3, &[(0, 2), (2, 1)], vec![0, 1, 3], 5).unwrap();
        let batch = GraphBatch::new(&[&a, &b]);
        let mut tape = Tape::new();
        let p = tape.bind(&store);
        let h = encode_var(&mut tape, &p, &gcn, &cfg, &batch).unwrap();
        let h = tape.value(h);
        for (g, arch) in [&a, &b].into_iter().enumerate() {
            let single = encode(arch, &gcn, &cfg, &store).unwrap().0;
            for (local, row) in batch.node_range(g).enumerate() {
                assert_eq!(h.row_slice(row), single.row_slice(local));
            }
        }
        assert_eq!(batch.edge_range(1), 5..7);
    }

    #[test]
    fn first_layer_gradient_matches_finite_differences() {
        let (mut store, gcn, cfg) = small_model(5);
        let arch = sample_arch();
        let w0 = gcn.weights[0];
        let loss_of = |store: &ParamStore| encode(&arch, &gcn, &cfg, store).unwrap().0.sum();

        let mut tape = Tape::new();
        let p = tape.bind(&store);
        let batch = GraphBatch::new(&[&arch]);
        let h = encode_var(&mut tape, &p, &gcn, &cfg, &batch).unwrap();
        let loss = tape.sum(h).unwrap();
        let analytic = tape.backward(loss).unwrap().wrt(p.get(w0)).unwrap().clone();

        let eps = 1e-5;
        for k in 0..analytic.len() {
            let orig = store.value(w0).data()[k];
            store.value_mut(w0).data_mut()[k] = orig + eps;
            let up = loss_of(&store);
            store.value_mut(w0).data_mut()[k] = orig - eps;
            let down = loss_of(&store);
            store.value_mut(w0).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-4, "entry {k}: analytic {a} numeric {numeric}");
        }
    }

    #[test]
    fn normalized_rows_sum_to_one() {
        let a = sample_arch().adjacency_tensor();
        for dir in [AdjDirection::AsGiven, AdjDirection::Transposed, AdjDirection::Symmetric] {
            let n = normalize_adj(&orient(&a, dir), AdjNorm::RowNormSelfLoops);
            for s in n.row_sums().data() {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
