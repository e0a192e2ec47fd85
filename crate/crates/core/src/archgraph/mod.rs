//! Architecture data model: operation vocabularies, cell DAGs and their
//! structural validation, plus dataset ingestion and the planted-motif
//! synthetic benchmark.

mod dataset;
mod nb201;
mod synth;

use std::collections::VecDeque;
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::Tensor;

pub use dataset::{
    load_dataset, parse_dataset, split, write_dataset, AccuracyScale, BenchmarkDataset, BenchmarkRecord,
    DatasetError, Provenance, Split,
};
pub use nb201::{encode_nb201, nb201_vocab, Nb201Error, NB201_OPS};
pub use synth::{
    find_embeddings, synth_generate, synth_generate_with_meta, synth_oracle, GeneratedArch, Motif, MotifMatch,
    OracleResult, SynthError, SyntheticSpec,
};

pub const INPUT: usize = 0;
pub const OUTPUT: usize = 1;

#[derive(Debug, Error, PartialEq)]
pub enum VocabError {
    #[error("vocabulary needs at least `input` and `output`")]
    TooSmall,
    #[error("vocabulary index 0 must be `input` and index 1 `output`")]
    ReservedSlots,
    #[error("duplicate operation name `{0}`")]
    Duplicate(String),
}

/// Ordered operation names. Index 0 is `input`, index 1 is `output`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpVocab {
    names: Vec<String>,
}

impl OpVocab {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, VocabError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(VocabError::TooSmall);
        }
        if names[INPUT] != "input" || names[OUTPUT] != "output" {
            return Err(VocabError::ReservedSlots);
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(VocabError::Duplicate(n.clone()));
            }
        }
        Ok(Self { names })
    }

    /// Parses a sidecar vocab file: one name per line, line order = index.
    pub fn parse(text: &str) -> Result<Self, VocabError> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn to_text(&self) -> String {
        let mut s = self.names.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, idx: usize) -> Option<&str> {
        self.names.get(idx).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Indices of every operation other than `input`/`output`.
    pub fn body_ops(&self) -> std::ops::Range<usize> {
        2..self.names.len()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.names.join("\n").as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Cycle,
    InputCount(usize),
    OutputCount(usize),
    InputHasPredecessor,
    OutputHasSuccessor,
    /// Node not on any input -> output path.
    Unreachable(usize),
    /// Operation index outside the vocabulary (the one-hot row would be empty).
    NotOneHot(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle => write!(f, "cycle"),
            Violation::InputCount(n) => write!(f, "expected one input node, found {n}"),
            Violation::OutputCount(n) => write!(f, "expected one output node, found {n}"),
            Violation::InputHasPredecessor => write!(f, "input node has a predecessor"),
            Violation::OutputHasSuccessor => write!(f, "output node has a successor"),
            Violation::Unreachable(i) => write!(f, "node {i} is not on an input->output path"),
            Violation::NotOneHot(i) => write!(f, "node {i} has no valid operation"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DagError {
    #[error("adjacency has {got} entries, expected {expected}")]
    AdjacencyLength { expected: usize, got: usize },
    #[error("{got} operations for {nodes} nodes")]
    OpsLength { nodes: usize, got: usize },
    #[error("adjacency entry `{0}` is not 0 or 1")]
    AdjacencyChar(char),
}

/// A cell as a DAG in node-op form: `adj[i*n + j]` is the edge `i -> j`,
/// `ops[i]` the operation index of node `i` (the hot column of row `i` of
/// the one-hot matrix).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchDag {
    n: usize,
    adj: Vec<bool>,
    ops: Vec<usize>,
    num_ops: usize,
}

impl ArchDag {
    pub fn new(adj: Vec<bool>, ops: Vec<usize>, num_ops: usize) -> Result<Self, DagError> {
        let n = ops.len();
        if adj.len() != n * n {
            return Err(DagError::AdjacencyLength {
                expected: n * n,
                got: adj.len(),
            });
        }
        Ok(Self { n, adj, ops, num_ops })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)], ops: Vec<usize>, num_ops: usize) -> Result<Self, DagError> {
        if ops.len() != n {
            return Err(DagError::OpsLength { nodes: n, got: ops.len() });
        }
        let mut adj = vec![false; n * n];
        for &(i, j) in edges {
            adj[i * n + j] = true;
        }
        Self::new(adj, ops, num_ops)
    }

    /// Parses the row-major `0`/`1` adjacency string of the ingestion schema.
    pub fn from_adjacency_str(bits: &str, ops: Vec<usize>, num_ops: usize) -> Result<Self, DagError> {
        let adj = bits
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(DagError::AdjacencyChar(other)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(adj, ops, num_ops)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_ops(&self) -> usize {
        self.num_ops
    }

    pub fn ops(&self) -> &[usize] {
        &self.ops
    }

    pub fn op(&self, i: usize) -> usize {
        self.ops[i]
    }

    pub fn set_op(&mut self, i: usize, op: usize) {
        self.ops[i] = op;
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j]
    }

    pub fn set_edge(&mut self, i: usize, j: usize, on: bool) {
        self.adj[i * self.n + j] = on;
    }

    /// Edges in row-major scan order of the adjacency matrix. Every
    /// per-edge quantity in the crate is indexed by this order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.adj[i * self.n + j] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().filter(|&&b| b).count()
    }

    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.adj[i * self.n + j])
    }

    pub fn predecessors(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&i| self.adj[i * self.n + j])
    }

    pub fn adjacency_str(&self) -> String {
        self.adj.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn adjacency_tensor(&self) -> Tensor {
        let data = self.adj.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::new(self.n, self.n, data).expect("square")
    }

    /// `D x F` one-hot operation matrix.
    pub fn one_hot(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n, self.num_ops);
        for (i, &op) in self.ops.iter().enumerate() {
            if op < self.num_ops {
                t.set(i, op, 1.0);
            }
        }
        t
    }

    /// Exact identity key: node count, adjacency bits, op indices.
    pub fn key(&self) -> String {
        let ops: Vec<String> = self.ops.iter().map(|o| o.to_string()).collect();
        format!("{}:{}:{}", self.n, self.adjacency_str(), ops.join(","))
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> ArchDag {
        let n = self.n;
        let mut adj = vec![false; n * n];
        let mut ops = vec![0; n];
        for i in 0..n {
            ops[perm[i]] = self.ops[i];
            for j in 0..n {
                adj[perm[i] * n + perm[j]] = self.adj[i * n + j];
            }
        }
        ArchDag {
            n,
            adj,
            ops,
            num_ops: self.num_ops,
        }
    }

    /// Number of differing op labels plus differing adjacency entries.
    /// `None` when node counts differ.
    pub fn edit_distance(&self, other: &ArchDag) -> Option<usize> {
        if self.n != other.n {
            return None;
        }
        let ops = self.ops.iter().zip(&other.ops).filter(|(a, b)| a != b).count();
        let adj = self.adj.iter().zip(&other.adj).filter(|(a, b)| a != b).count();
        Some(ops + adj)
    }

    /// Kahn topological order, or `None` if the graph has a cycle.
    pub fn topo_order(&self) -> Option<Vec<usize>> {
        let n = self.n;
        let mut indeg: Vec<usize> = (0..n).map(|j| self.predecessors(j).count()).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&j| indeg[j] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for j in self.successors(i) {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    queue.push_back(j);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    fn reach(&self, start: usize, forward: bool) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let next: Vec<usize> = if forward {
                self.successors(i).collect()
            } else {
                self.predecessors(i).collect()
            };
            for j in next {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    }

    /// Every structural invariant violation; empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.topo_order().is_none() {
            out.push(Violation::Cycle);
        }
        for (i, &op) in self.ops.iter().enumerate() {
            if op >= self.num_ops {
                out.push(Violation::NotOneHot(i));
            }
        }
        let inputs: Vec<usize> = (0..self.n).filter(|&i| self.ops[i] == INPUT).collect();
        let outputs: Vec<usize> = (0..self.n).filter(|&i| self.ops[i] == OUTPUT).collect();
        if inputs.len() != 1 {
            out.push(Violation::InputCount(inputs.len()));
        }
        if outputs.len() != 1 {
            out.push(Violation::OutputCount(outputs.len()));
        }
        if let (&[input], &[output]) = (&inputs[..], &outputs[..]) {
            if self.predecessors(input).next().is_some() {
                out.push(Violation::InputHasPredecessor);
            }
            if self.successors(output).next().is_some() {
                out.push(Violation::OutputHasSuccessor);
            }
            let from_input = self.reach(input, true);
            let to_output = self.reach(output, false);
            for i in 0..self.n {
                if !(from_input[i] && to_output[i]) {
                    out.push(Violation::Unreachable(i));
                }
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// True when the labeled input cannot reach the labeled output at all
    /// (e.g. a NAS-Bench-201 cell whose every operation is `none`).
    pub fn is_degenerate(&self) -> bool {
        let input = self.ops.iter().position(|&o| o == INPUT);
        let output = self.ops.iter().position(|&o| o == OUTPUT);
        match (input, output) {
            (Some(i), Some(o)) => !self.reach(i, true)[o],
            _ => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_rules() {
        assert!(OpVocab::new(["input", "output", "conv"]).is_ok());
        assert_eq!(OpVocab::new(["output", "input"]), Err(VocabError::ReservedSlots));
        assert_eq!(
            OpVocab::new(["input", "output", "a", "a"]),
            Err(VocabError::Duplicate("a".into()))
        );
        let v = OpVocab::parse("input\noutput\nconv\n").unwrap();
        assert_eq!(OpVocab::parse(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn chain_is_valid() {
        let d = ArchDag::from_edges(2, &[(0, 1)], vec![INPUT, OUTPUT], 3).unwrap();
        assert!(d.validate().is_empty());
    }

    #[test]
    fn two_cycle_is_reported() {
        let d = ArchDag::from_edges(4, &[(0, 1), (1, 2), (2, 1), (2, 3)], vec![0, 2, 2, 1], 3).unwrap();
        assert!(d.validate().contains(&Violation::Cycle));
    }

    #[test]
    fn dead_end_is_unreachable() {
        // node 2 hangs off node 1 without reaching the output
        let d = ArchDag::from_edges(4, &[(0, 1), (1, 3), (1, 2)], vec![0, 2, 2, 1], 3).unwrap();
        assert_eq!(d.validate(), vec![Violation::Unreachable(2)]);
    }

    #[test]
    fn bad_op_index() {
        let d = ArchDag::from_edges(3, &[(0, 1), (1, 2)], vec![0, 7, 1], 3).unwrap();
        assert_eq!(d.validate(), vec![Violation::NotOneHot(1)]);
    }

    #[test]
    fn io_counts() {
        let d = ArchDag::from_edges(3, &[(0, 2), (1, 2)], vec![0, 0, 1], 3).unwrap();
        assert!(d.validate().contains(&Violation::InputCount(2)));
        let d = ArchDag::from_edges(3, &[(0, 1), (0, 2)], vec![0, 1, 1], 3).unwrap();
        assert!(d.validate().contains(&Violation::OutputCount(2)));
    }

    #[test]
    fn permutation_round_trip() {
        let d = ArchDag::from_edges(4, &[(0, 1), (0, 2), (1, 3), (2, 3)], vec![0, 2, 3, 1], 4).unwrap();
        let p = d.permuted(&[3, 1, 0, 2]);
        assert!(p.is_valid());
        let inv = [2, 1, 3, 0];
        assert_eq!(p.permuted(&inv), d);
    }

    #[test]
    fn adjacency_string_round_trip() {
        let d = ArchDag::from_edges(3, &[(0, 1), (1, 2)], vec![0, 2, 1], 3).unwrap();
        assert_eq!(d.adjacency_str(), "010001000");
        assert_eq!(ArchDag::from_adjacency_str("010001000", vec![0, 2, 1], 3).unwrap(), d);
        assert_eq!(
            ArchDag::from_adjacency_str("01x", vec![0], 3),
            Err(DagError::AdjacencyChar('x'))
        );
    }
}
