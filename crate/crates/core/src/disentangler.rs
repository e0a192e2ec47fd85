//! Critical/redundant substructure extraction.
//!
//! Node and edge scorers assign each node and edge a softmax pair
//! `(α_C, α_R)`. The critical substructure keeps `O` rows scaled by the
//! node `α_C` and an adjacency weighted by the edge `α_C`; the redundant
//! one uses the complements. Two separate bias-free GCNs embed the two
//! substructures and a mean pool reduces them to graph vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archgraph::ArchDag;
use crate::autodiff::{Bound, Tape, Var};
use crate::encoder::{edge_embed_var, normalize_adj, normalize_adj_var, orient, orient_var, EncoderConfig, Gcn, GraphBatch};
use crate::nn::Mlp;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

/// Which levels are scored. A disabled level is fixed at `(0.5, 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DisentangleMode {
    #[default]
    Both,
    NodeOnly,
    EdgeOnly,
}

impl DisentangleMode {
    fn nodes(self) -> bool {
        self != DisentangleMode::EdgeOnly
    }

    fn edges(self) -> bool {
        self != DisentangleMode::NodeOnly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisentanglerConfig {
    pub sub_layers: usize,
    pub d_z: usize,
    pub mode: DisentangleMode,
}

impl Default for DisentanglerConfig {
    fn default() -> Self {
        Self {
            sub_layers: 2,
            d_z: 64,
            mode: DisentangleMode::Both,
        }
    }
}

/// Per-node and per-edge `(α_C, α_R)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskScores {
    pub node_alpha: Tensor,
    pub edge_alpha: Tensor,
}

/// `node_*` are `D x 1` columns, `adj_*` are `D x D` and vanish off the edges.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrices {
    pub node_c: Tensor,
    pub node_r: Tensor,
    pub adj_c: Tensor,
    pub adj_r: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubstructurePair {
    pub feats_c: Tensor,
    pub adj_c: Tensor,
    pub feats_r: Tensor,
    pub adj_r: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationPair {
    pub z_c: Tensor,
    pub z_r: Tensor,
}

/// Tape handles produced by [`Disentangler::forward`]. `z_c`/`z_r` are
/// `B x d_z`, one row per graph of the batch.
#[derive(Debug, Clone, Copy)]
pub struct DisentangledVars {
    pub node_alpha: Var,
    pub edge_alpha: Var,
    pub z_c: Var,
    pub z_r: Var,
}

#[derive(Debug, Clone)]
pub struct Disentangler {
    node_scorer: Mlp,
    edge_scorer: Mlp,
    g_c: Gcn,
    g_r: Gcn,
    cfg: DisentanglerConfig,
}

impl Disentangler {
    pub fn new(
        store: &mut ParamStore,
        hidden: usize,
        num_ops: usize,
        cfg: DisentanglerConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let half = (hidden / 2).max(1);
        Self {
            node_scorer: Mlp::new(store, "node_scorer", &[hidden, half, 2], rng),
            edge_scorer: Mlp::new(store, "edge_scorer", &[2 * hidden, hidden, 2], rng),
            g_c: Gcn::new(store, "g_c", num_ops, cfg.d_z, cfg.sub_layers, rng),
            g_r: Gcn::new(store, "g_r", num_ops, cfg.d_z, cfg.sub_layers, rng),
            cfg,
        }
    }

    pub fn config(&self) -> &DisentanglerConfig {
        &self.cfg
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.node_scorer
            .param_ids()
            .chain(self.edge_scorer.param_ids())
            .chain(self.g_c.param_ids())
            .chain(self.g_r.param_ids())
            .collect()
    }

    /// Scores nodes and edges of every graph in `batch` from the encoder
    /// output `h_node`, then embeds both substructures.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Bound,
        enc: &EncoderConfig,
        h_node: Var,
        batch: &GraphBatch,
    ) -> Result<DisentangledVars> {
        let node_alpha = if self.cfg.mode.nodes() {
            let logits = self.node_scorer.forward(tape, params, h_node)?;
            tape.softmax_rows(logits)?
        } else {
            tape.constant(Tensor::full(batch.total_nodes(), 2, 0.5))
        };
        let edge_alpha = if self.cfg.mode.edges() {
            let h_edge = edge_embed_var(tape, h_node, batch)?;
            let logits = self.edge_scorer.forward(tape, params, h_edge)?;
            tape.softmax_rows(logits)?
        } else {
            tape.constant(Tensor::full(batch.total_edges(), 2, 0.5))
        };
        let (z_c, z_r) = self.embed_var(tape, params, enc, node_alpha, edge_alpha, batch)?;
        Ok(DisentangledVars {
            node_alpha,
            edge_alpha,
            z_c,
            z_r,
        })
    }

    /// Masks, splits and embeds given alpha matrices already on the tape.
    pub fn embed_var(
        &self,
        tape: &mut Tape,
        params: &Bound,
        enc: &EncoderConfig,
        node_alpha: Var,
        edge_alpha: Var,
        batch: &GraphBatch,
    ) -> Result<(Var, Var)> {
        let pick_c = tape.constant(Tensor::column(&[1.0, 0.0]));
        let pick_r = tape.constant(Tensor::column(&[0.0, 1.0]));
        let feats = tape.constant(batch.one_hot().clone());
        let src_t = tape.constant(batch.src_t().clone());
        let dst = tape.constant(batch.dst().clone());
        let pool = tape.constant(batch.pool().clone());

        let side = |tape: &mut Tape, pick: Var, gcn: &Gcn| -> Result<Var> {
            let node_w = tape.matmul(node_alpha, pick)?;
            let edge_w = tape.matmul(edge_alpha, pick)?;
            let x = tape.mul_col(feats, node_w)?;
            let weighted_dst = tape.mul_col(dst, edge_w)?;
            let soft_adj = tape.matmul(src_t, weighted_dst)?;
            let oriented = orient_var(tape, soft_adj, enc.direction)?;
            let adj = normalize_adj_var(tape, oriented, enc.norm)?;
            let h = gcn.forward(tape, params, adj, x)?;
            tape.matmul(pool, h)
        };
        let z_c = side(tape, pick_c, &self.g_c)?;
        let z_r = side(tape, pick_r, &self.g_r)?;
        Ok((z_c, z_r))
    }

    /// Embeds an already-split pair without a tape-side mask path.
    pub fn embed(
        &self,
        store: &ParamStore,
        enc: &EncoderConfig,
        pair: &SubstructurePair,
    ) -> Result<RepresentationPair> {
        let mut tape = Tape::new();
        let params = tape.bind(store);
        let mut run = |gcn: &Gcn, feats: &Tensor, adj: &Tensor| -> Result<Tensor> {
            let adj = tape.constant(normalize_adj(&orient(adj, enc.direction), enc.norm));
            let x = tape.constant(feats.clone());
            let h = gcn.forward(&mut tape, &params, adj, x)?;
            let z = tape.mean_rows(h)?;
            Ok(tape.value(z).clone())
        };
        Ok(RepresentationPair {
            z_c: run(&self.g_c, &pair.feats_c, &pair.adj_c)?,
            z_r: run(&self.g_r, &pair.feats_r, &pair.adj_r)?,
        })
    }
}

/// Places per-edge alphas (in row-major edge order) into `D x D` masks.
pub fn build_masks(scores: &MaskScores, arch: &ArchDag) -> Result<MaskMatrices> {
    let d = arch.num_nodes();
    let edges = arch.edges();
    if scores.node_alpha.shape() != [d, 2] || scores.edge_alpha.shape() != [edges.len(), 2] {
        return Err(TensorError::Invalid(format!(
            "alphas {:?}/{:?} do not match {} nodes and {} edges",
            scores.node_alpha.shape(),
            scores.edge_alpha.shape(),
            d,
            edges.len()
        )));
    }
    let mut node_c = Tensor::zeros(d, 1);
    let mut node_r = Tensor::zeros(d, 1);
    for i in 0..d {
        node_c.set(i, 0, scores.node_alpha.get(i, 0));
        node_r.set(i, 0, scores.node_alpha.get(i, 1));
    }
    let mut adj_c = Tensor::zeros(d, d);
    let mut adj_r = Tensor::zeros(d, d);
    for (e, &(i, j)) in edges.iter().enumerate() {
        adj_c.set(i, j, scores.edge_alpha.get(e, 0));
        adj_r.set(i, j, scores.edge_alpha.get(e, 1));
    }
    Ok(MaskMatrices {
        node_c,
        node_r,
        adj_c,
        adj_r,
    })
}

/// `X_C = (O ⊙ M_O^C, A ⊙ M_A^C)` and its redundant counterpart.
pub fn split(arch: &ArchDag, masks: &MaskMatrices) -> Result<SubstructurePair> {
    let o = arch.one_hot();
    let a = arch.adjacency_tensor();
    Ok(SubstructurePair {
        feats_c: o.mul_col(&masks.node_c)?,
        adj_c: a.mul(&masks.adj_c)?,
        feats_r: o.mul_col(&masks.node_r)?,
        adj_r: a.mul(&masks.adj_r)?,
    })
}
