//! Planted-motif synthetic benchmark.
//!
//! Random valid DAGs are generated, labeled "motifs" (small op-labeled
//! sub-DAGs with a known additive score contribution) are planted into
//! them, and the ground truth is `base + sum of contributions of motifs
//! present + sigma * noise`, clipped to `[0, 1]`. A zero-contribution
//! "decoration" pattern is planted alongside good motifs with probability
//! `rho`, creating a spurious correlation between the decoration and high
//! accuracy.
//!
//! The noise term is a deterministic function of `(seed, architecture)`,
//! so the ground truth is defined for any architecture over the vocab, not
//! only the generated ones.
//!
//! Spec files are line-based `key = value`; `#` starts a comment:
//!
//! ```text
//! vocab = conv3x3, conv1x1, avgpool, skip
//! min_nodes = 7
//! max_nodes = 10
//! num_archs = 10000
//! edge_prob = 0.2
//! base = 0.6
//! plant_prob = 0.35
//! # optional: relative weights of the body ops for background nodes
//! op_weights = 1, 1, 1, 0.5
//! # motif = <name> <contribution> <op,op,..> [<u-v,u-v,..>] [@<planting prob>]
//! motif = g1 0.10 conv3x3,conv1x1 0-1
//! motif = b1 -0.08 avgpool,avgpool 0-1
//! decoration = deco skip,conv1x1 0-1
//! rho = 0.9
//! sigma = 0.01
//! seed = 7
//! ```

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ArchDag, BenchmarkDataset, BenchmarkRecord, OpVocab, Provenance, INPUT, OUTPUT};
use crate::config::{ConfigError, KeyValues};

pub const MAX_NODES: usize = 32;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error("infeasible spec: {0}")]
    Infeasible(String),
    #[error("architecture has {arch} op types, spec vocab has {spec}")]
    VocabMismatch { arch: usize, spec: usize },
}

/// An op-labeled pattern; `edges` are `(u, v)` with `u < v` over pattern
/// node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Motif {
    pub name: String,
    pub ops: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub contribution: f64,
    /// Overrides the spec-wide planting probability.
    pub plant_prob: Option<f64>,
}

impl Motif {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn is_good(&self) -> bool {
        self.contribution > 0.0
    }

    fn parse(value: &str, vocab: &OpVocab, with_contribution: bool) -> Result<Self, SynthError> {
        let mut fields: Vec<&str> = value.split_whitespace().collect();
        let plant_prob = match fields.last() {
            Some(f) if f.starts_with('@') && with_contribution => {
                let p = f[1..]
                    .parse::<f64>()
                    .ok()
                    .filter(|p| (0.0..=1.0).contains(p))
                    .ok_or_else(|| SynthError::Invalid(format!("bad planting probability in `{value}`")))?;
                fields.pop();
                Some(p)
            }
            _ => None,
        };
        let min = if with_contribution { 3 } else { 2 };
        if fields.len() < min || fields.len() > min + 1 {
            return Err(SynthError::Invalid(format!("bad pattern `{value}`")));
        }
        let name = fields[0].to_string();
        let (contribution, rest) = if with_contribution {
            let c = fields[1]
                .parse::<f64>()
                .map_err(|_| SynthError::Invalid(format!("bad contribution in `{value}`")))?;
            (c, &fields[2..])
        } else {
            (0.0, &fields[1..])
        };
        let ops = rest[0]
            .split(',')
            .map(|op| {
                vocab
                    .index_of(op.trim())
                    .ok_or_else(|| SynthError::Invalid(format!("unknown op `{op}` in `{value}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let edges = match rest.get(1) {
            None => Vec::new(),
            Some(spec) => spec
                .split(',')
                .map(|e| {
                    let (u, v) = e
                        .split_once('-')
                        .ok_or_else(|| SynthError::Invalid(format!("bad edge `{e}`")))?;
                    let p = |s: &str| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| SynthError::Invalid(format!("bad edge `{e}`")))
                    };
                    Ok((p(u)?, p(v)?))
                })
                .collect::<Result<Vec<_>, SynthError>>()?,
        };
        let m = Motif {
            name,
            ops,
            edges,
            contribution,
            plant_prob,
        };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<(), SynthError> {
        if self.ops.is_empty() {
            return Err(SynthError::Invalid(format!("motif `{}` is empty", self.name)));
        }
        if self.ops.iter().any(|&o| o == INPUT || o == OUTPUT) {
            return Err(SynthError::Invalid(format!(
                "motif `{}` may not use input/output ops",
                self.name
            )));
        }
        for &(u, v) in &self.edges {
            if u >= v || v >= self.ops.len() {
                return Err(SynthError::Invalid(format!(
                    "motif `{}` edge {u}-{v} must satisfy u < v < {}",
                    self.name,
                    self.ops.len()
                )));
            }
        }
        Ok(())
    }

    fn to_value(&self, vocab: &OpVocab, with_contribution: bool) -> String {
        let ops: Vec<&str> = self.ops.iter().map(|&o| vocab.name(o).unwrap_or("?")).collect();
        let mut s = self.name.clone();
        if with_contribution {
            s.push_str(&format!(" {:?}", self.contribution));
        }
        s.push(' ');
        s.push_str(&ops.join(","));
        if !self.edges.is_empty() {
            let e: Vec<String> = self.edges.iter().map(|(u, v)| format!("{u}-{v}")).collect();
            s.push(' ');
            s.push_str(&e.join(","));
        }
        if let Some(p) = self.plant_prob {
            s.push_str(&format!(" @{p:?}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub vocab: OpVocab,
    /// Node-count range, including the input and output nodes.
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub num_archs: usize,
    /// Probability of each optional forward edge between body nodes.
    pub edge_prob: f64,
    pub base: f64,
    pub motifs: Vec<Motif>,
    /// Per-architecture probability of planting each motif.
    pub plant_prob: f64,
    /// Relative sampling weights of the body ops for background nodes;
    /// empty means uniform.
    pub op_weights: Vec<f64>,
    pub decoration: Option<Motif>,
    pub rho: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The 10k-architecture benchmark: two good and two bad motifs with a
    /// decoration correlated to the good ones.
    pub fn benchmark(rho: f64, sigma: f64, seed: u64) -> Self {
        let text = format!(
            "vocab = conv3x3, conv1x1, sepconv, dilconv, avgpool, maxpool, skip, zero
min_nodes = 10
max_nodes = 14
num_archs = 10000
edge_prob = 0.15
base = 0.60
plant_prob = 0.35
op_weights = 1, 1, 0, 0, 1, 0, 1, 0
motif = good_a 0.12 sepconv,dilconv 0-1 @0.3
motif = good_b 0.07 dilconv,sepconv,sepconv 0-1,1-2 @0.25
motif = bad_a -0.10 maxpool,zero 0-1 @0.45
motif = bad_b -0.05 zero,maxpool 0-1 @0.4
decoration = deco maxpool,skip,skip 0-1,0-2
rho = {rho:?}
sigma = {sigma:?}
seed = {seed}
"
        );
        Self::parse(&text).expect("static benchmark spec")
    }

    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let kv = KeyValues::parse(text)?;
        let mut names = vec!["input".to_string(), "output".to_string()];
        names.extend(kv.require("vocab")?.split(',').map(|s| s.trim().to_string()));
        let vocab = OpVocab::new(names).map_err(|e| SynthError::Invalid(e.to_string()))?;
        let motifs = kv
            .all("motif")
            .map(|v| Motif::parse(v, &vocab, true))
            .collect::<Result<Vec<_>, _>>()?;
        let decoration = kv.get("decoration").map(|v| Motif::parse(v, &vocab, false)).transpose()?;
        let spec = SyntheticSpec {
            min_nodes: kv.parse_or("min_nodes", 7)?,
            max_nodes: kv.parse_or("max_nodes", 10)?,
            num_archs: kv.parse_or("num_archs", 1000)?,
            edge_prob: kv.parse_or("edge_prob", 0.15)?,
            base: kv.parse_or("base", 0.6)?,
            plant_prob: kv.parse_or("plant_prob", 0.35)?,
            op_weights: match kv.get("op_weights") {
                None => Vec::new(),
                Some(v) => v
                    .split(',')
                    .map(|w| {
                        w.trim()
                            .parse::<f64>()
                            .map_err(|_| SynthError::Invalid(format!("bad op weight `{w}`")))
                    })
                    .collect::<Result<_, _>>()?,
            },
            rho: kv.parse_or("rho", 0.0)?,
            sigma: kv.parse_or("sigma", 0.0)?,
            seed: kv.parse_or("seed", 0)?,
            vocab,
            motifs,
            decoration,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let body: Vec<&str> = self.vocab.names()[2..].iter().map(String::as_str).collect();
        let mut s = format!(
            "vocab = {}\nmin_nodes = {}\nmax_nodes = {}\nnum_archs = {}\nedge_prob = {:?}\nbase = {:?}\nplant_prob = {:?}\n",
            body.join(", "),
            self.min_nodes,
            self.max_nodes,
            self.num_archs,
            self.edge_prob,
            self.base,
            self.plant_prob
        );
        if !self.op_weights.is_empty() {
            let w: Vec<String> = self.op_weights.iter().map(|w| format!("{w:?}")).collect();
            s.push_str(&format!("op_weights = {}\n", w.join(", ")));
        }
        for m in &self.motifs {
            s.push_str(&format!("motif = {}\n", m.to_value(&self.vocab, true)));
        }
        if let Some(d) = &self.decoration {
            s.push_str(&format!("decoration = {}\n", d.to_value(&self.vocab, false)));
        }
        s.push_str(&format!(
            "rho = {:?}\nsigma = {:?}\nseed = {}\n",
            self.rho, self.sigma, self.seed
        ));
        s
    }

    pub fn check(&self) -> Result<(), SynthError> {
        let invalid = |m: String| Err(SynthError::Invalid(m));
        if self.vocab.len() < 3 {
            return invalid("vocab needs at least one body op".into());
        }
        if self.min_nodes < 3 || self.min_nodes > self.max_nodes || self.max_nodes > MAX_NODES {
            return invalid(format!(
                "node range {}..={} must lie within 3..={MAX_NODES}",
                self.min_nodes, self.max_nodes
            ));
        }
        for (name, p) in [
            ("edge_prob", self.edge_prob),
            ("plant_prob", self.plant_prob),
            ("rho", self.rho),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if !(self.sigma >= 0.0) || !self.base.is_finite() {
            return invalid("sigma must be >= 0 and base finite".into());
        }
        if !self.op_weights.is_empty()
            && (self.op_weights.len() != self.vocab.body_ops().len()
                || self.op_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
                || self.op_weights.iter().sum::<f64>() <= 0.0)
        {
            return invalid(format!(
                "op_weights needs {} non-negative weights with a positive sum",
                self.vocab.body_ops().len()
            ));
        }
        let body = self.max_nodes - 2;
        for m in self.motifs.iter().chain(&self.decoration) {
            m.check()?;
            if m.len() > body {
                return Err(SynthError::Infeasible(format!(
                    "pattern `{}` has {} nodes but architectures hold at most {body} body nodes",
                    m.name,
                    m.len()
                )));
            }
        }
        Ok(())
    }

    pub fn good_motifs(&self) -> impl Iterator<Item = (usize, &Motif)> {
        self.motifs.iter().enumerate().filter(|(_, m)| m.is_good())
    }

    /// Deterministic standard-normal draw tied to `(seed, arch)`.
    pub fn noise(&self, arch: &ArchDag) -> f64 {
        let digest = Sha256::digest(format!("{}/{}", self.seed, arch.key()).as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed).sample(StandardNormal)
    }

    /// Ground-truth accuracy of any architecture over this vocab.
    pub fn accuracy(&self, arch: &ArchDag) -> Result<f64, SynthError> {
        let score = synth_oracle(arch, self)?.score;
        Ok((score + self.sigma * self.noise(arch)).clamp(0.0, 1.0))
    }
}

/// Every injective map of motif nodes onto same-labeled architecture nodes
/// under which each motif edge is an architecture edge. Entry `k` of a
/// result is the architecture node playing motif node `k`.
pub fn find_embeddings(motif: &Motif, arch: &ArchDag) -> Vec<Vec<usize>> {
    fn extend(motif: &Motif, arch: &ArchDag, partial: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let k = partial.len();
        if k == motif.len() {
            out.push(partial.clone());
            return;
        }
        for cand in 0..arch.num_nodes() {
            if arch.op(cand) != motif.ops[k] || partial.contains(&cand) {
                continue;
            }
            let consistent = motif.edges.iter().all(|&(u, v)| {
                if v == k && u < k {
                    arch.has_edge(partial[u], cand)
                } else if u == k && v < k {
                    arch.has_edge(cand, partial[v])
                } else {
                    true
                }
            });
            if consistent {
                partial.push(cand);
                extend(motif, arch, partial, out);
                partial.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(motif, arch, &mut Vec::with_capacity(motif.len()), &mut out);
    out
}

/// Nodes and edges covered by all embeddings of one motif.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotifMatch {
    pub motif: usize,
    pub nodes: BTreeSet<usize>,
    pub edges: BTreeSet<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// `base + sum of contributions`, without noise or clipping.
    pub score: f64,
    /// One entry per motif present, in spec order.
    pub matches: Vec<MotifMatch>,
}

impl OracleResult {
    pub fn good_edges(&self, spec: &SyntheticSpec) -> BTreeSet<(usize, usize)> {
        self.matches
            .iter()
            .filter(|m| spec.motifs[m.motif].is_good())
            .flat_map(|m| m.edges.iter().copied())
            .collect()
    }

    pub fn good_nodes(&self, spec: &SyntheticSpec) -> BTreeSet<usize> {
        self.matches
            .iter()
            .filter(|m| spec.motifs[m.motif].is_good())
            .flat_map(|m| m.nodes.iter().copied())
            .collect()
    }
}

fn match_motif(idx: usize, motif: &Motif, arch: &ArchDag) -> Option<MotifMatch> {
    let embeddings = find_embeddings(motif, arch);
    if embeddings.is_empty() {
        return None;
    }
    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    for e in &embeddings {
        nodes.extend(e.iter().copied());
        edges.extend(motif.edges.iter().map(|&(u, v)| (e[u], e[v])));
    }
    Some(MotifMatch {
        motif: idx,
        nodes,
        edges,
    })
}

/// Noiseless score and exact motif matches for `arch`.
pub fn synth_oracle(arch: &ArchDag, spec: &SyntheticSpec) -> Result<OracleResult, SynthError> {
    if arch.num_ops() != spec.vocab.len() {
        return Err(SynthError::VocabMismatch {
            arch: arch.num_ops(),
            spec: spec.vocab.len(),
        });
    }
    let matches: Vec<MotifMatch> = spec
        .motifs
        .iter()
        .enumerate()
        .filter_map(|(i, m)| match_motif(i, m, arch))
        .collect();
    let score = spec.base + matches.iter().map(|m| spec.motifs[m.motif].contribution).sum::<f64>();
    Ok(OracleResult { score, matches })
}

/// One generated architecture with its construction record.
#[derive(Debug, Clone)]
pub struct GeneratedArch {
    pub arch: ArchDag,
    pub score: f64,
    pub accuracy: f64,
    pub planted: Vec<bool>,
    pub decorated: bool,
}

fn random_dag(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> ArchDag {
    let n = rng.random_range(spec.min_nodes..=spec.max_nodes);
    let body = spec.vocab.body_ops();
    let mut ops = vec![INPUT];
    if spec.op_weights.is_empty() {
        ops.extend((1..n - 1).map(|_| rng.random_range(body.clone())));
    } else {
        let dist = WeightedIndex::new(&spec.op_weights).expect("checked weights");
        ops.extend((1..n - 1).map(|_| body.start + rng.sample(&dist)));
    }
    ops.push(OUTPUT);
    let mut dag = ArchDag::new(vec![false; n * n], ops, spec.vocab.len()).expect("sized");
    // every node gets a predecessor, so everything is reachable from input
    for j in 1..n {
        let p = if j == n - 1 {
            rng.random_range(1..j)
        } else {
            rng.random_range(0..j)
        };
        dag.set_edge(p, j, true);
        for i in 1..j {
            if i != p && j != n - 1 && rng.random_bool(spec.edge_prob) {
                dag.set_edge(i, j, true);
            }
        }
    }
    // every body node gets a successor, so everything reaches output
    for i in 1..n - 1 {
        if dag.successors(i).next().is_none() {
            let j = rng.random_range(i + 1..n);
            dag.set_edge(i, j, true);
        }
    }
    dag
}

/// Writes `pattern` onto free body nodes (ascending positions keep the
/// graph acyclic). Returns the nodes used, or `None` if there is no room.
fn plant(dag: &mut ArchDag, pattern: &Motif, used: &mut [bool], rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let free: Vec<usize> = (1..dag.num_nodes() - 1).filter(|&i| !used[i]).collect();
    if free.len() < pattern.len() {
        return None;
    }
    let mut pos: Vec<usize> = sample(rng, free.len(), pattern.len())
        .into_iter()
        .map(|i| free[i])
        .collect();
    pos.sort_unstable();
    for (k, &node) in pos.iter().enumerate() {
        dag.set_op(node, pattern.ops[k]);
        used[node] = true;
    }
    for &(u, v) in &pattern.edges {
        dag.set_edge(pos[u], pos[v], true);
    }
    Some(pos)
}

/// Generates the benchmark together with per-architecture construction
/// records. Pure function of `spec`.
pub fn synth_generate_with_meta(spec: &SyntheticSpec) -> Result<Vec<GeneratedArch>, SynthError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.num_archs);
    for _ in 0..spec.num_archs {
        let mut dag = random_dag(spec, &mut rng);
        let mut used = vec![false; dag.num_nodes()];
        let planted: Vec<bool> = spec
            .motifs
            .iter()
            .map(|m| rng.random_bool(m.plant_prob.unwrap_or(spec.plant_prob)) && plant(&mut dag, m, &mut used, &mut rng).is_some())
            .collect();

        let mut decorated = false;
        if let Some(deco) = &spec.decoration {
            let roll = rng.random_bool(spec.rho);
            let pre = synth_oracle(&dag, spec)?;
            let good = pre.good_nodes(spec);
            if roll && !good.is_empty() {
                // keep every good-motif node intact
                let mut blocked = vec![false; dag.num_nodes()];
                for &g in &good {
                    blocked[g] = true;
                }
                decorated = plant(&mut dag, deco, &mut blocked, &mut rng).is_some();
            }
        }

        debug_assert!(dag.is_valid(), "{:?}", dag.validate());
        let score = synth_oracle(&dag, spec)?.score;
        let accuracy = (score + spec.sigma * spec.noise(&dag)).clamp(0.0, 1.0);
        out.push(GeneratedArch {
            arch: dag,
            score,
            accuracy,
            planted,
            decorated,
        });
    }
    Ok(out)
}

pub fn synth_generate(spec: &SyntheticSpec) -> Result<BenchmarkDataset, SynthError> {
    let records = synth_generate_with_meta(spec)?
        .into_iter()
        .enumerate()
        .map(|(i, g)| BenchmarkRecord {
            id: format!("syn{i:05}"),
            arch: g.arch,
            val_acc: g.accuracy,
            test_acc: g.accuracy,
            flagged: false,
        })
        .collect();
    Ok(BenchmarkDataset {
        vocab: spec.vocab.clone(),
        records,
        provenance: Provenance::Synthetic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(text_extra: &str) -> SyntheticSpec {
        SyntheticSpec::parse(&format!(
            "vocab = a, b, c, d\nmin_nodes = 5\nmax_nodes = 8\nnum_archs = 300\nseed = 3\n{text_extra}"
        ))
        .unwrap()
    }

    #[test]
    fn spec_text_round_trip() {
        let spec = SyntheticSpec::benchmark(0.9, 0.01, 4);
        assert_eq!(SyntheticSpec::parse(&spec.to_text()).unwrap(), spec);
    }

    #[test]
    fn no_motifs_no_noise_is_flat() {
        let spec = small("base = 0.42\nsigma = 0\n");
        let ds = synth_generate(&spec).unwrap();
        assert!(ds.records.iter().all(|r| r.val_acc == 0.42 && r.arch.is_valid()));
    }

    #[test]
    fn single_motif_gap_is_exact() {
        let spec = small("base = 0.5\nsigma = 0\nplant_prob = 0.5\nmotif = g 0.1 a,b 0-1\n");
        let gen = synth_generate_with_meta(&spec).unwrap();
        let (mut with, mut without) = (Vec::new(), Vec::new());
        for g in &gen {
            if find_embeddings(&spec.motifs[0], &g.arch).is_empty() {
                without.push(g.accuracy);
            } else {
                with.push(g.accuracy);
            }
        }
        assert!(!with.is_empty() && !without.is_empty());
        assert!(with.iter().all(|&a| a == 0.6));
        assert!(without.iter().all(|&a| a == 0.5));
    }

    #[test]
    fn oracle_on_constructed_arch() {
        let spec = small("base = 0.5\nmotif = g 0.1 a,b,c 0-1,1-2\n");
        let v = &spec.vocab;
        let (a, b, c, d) = (
            v.index_of("a").unwrap(),
            v.index_of("b").unwrap(),
            v.index_of("c").unwrap(),
            v.index_of("d").unwrap(),
        );
        // input -> a -> b -> c -> d -> output
        let chain = |ops: Vec<usize>| {
            ArchDag::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)], ops, v.len()).unwrap()
        };
        let hit = chain(vec![INPUT, a, b, c, d, OUTPUT]);
        let r = synth_oracle(&hit, &spec).unwrap();
        assert!((r.score - 0.6).abs() < 1e-15);
        assert_eq!(r.matches.len(), 1);
        assert_eq!(r.matches[0].nodes, BTreeSet::from([1, 2, 3]));
        assert_eq!(r.matches[0].edges, BTreeSet::from([(1, 2), (2, 3)]));

        let miss = chain(vec![INPUT, a, c, b, d, OUTPUT]);
        let r = synth_oracle(&miss, &spec).unwrap();
        assert_eq!(r.score, 0.5);
        assert!(r.matches.is_empty());
    }

    #[test]
    fn oracle_matches_generation_minus_noise() {
        let spec = SyntheticSpec {
            num_archs: 500,
            ..SyntheticSpec::benchmark(0.9, 0.02, 11)
        };
        let noisy = synth_generate_with_meta(&spec).unwrap();
        let clean = synth_generate_with_meta(&SyntheticSpec { sigma: 0.0, ..spec.clone() }).unwrap();
        for (n, c) in noisy.iter().zip(&clean) {
            assert_eq!(n.arch, c.arch);
            let oracle = synth_oracle(&n.arch, &spec).unwrap().score;
            assert_eq!(oracle, c.score);
            assert_eq!(c.accuracy, oracle.clamp(0.0, 1.0));
            let expected = (oracle + spec.sigma * spec.noise(&n.arch)).clamp(0.0, 1.0);
            assert_eq!(n.accuracy, expected);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec {
            num_archs: 200,
            ..SyntheticSpec::benchmark(0.9, 0.01, 5)
        };
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&spec).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn vocab_mismatch() {
        let spec = small("");
        let arch = ArchDag::from_edges(2, &[(0, 1)], vec![INPUT, OUTPUT], 3).unwrap();
        assert!(matches!(
            synth_oracle(&arch, &spec),
            Err(SynthError::VocabMismatch { .. })
        ));
    }

    #[test]
    fn infeasible_and_invalid_specs() {
        let r = SyntheticSpec::parse("vocab = a\nmin_nodes = 3\nmax_nodes = 4\nmotif = big 0.1 a,a,a 0-1\n");
        assert!(matches!(r, Err(SynthError::Infeasible(_))));
        let r = SyntheticSpec::parse("vocab = a\nmotif = m 0.1 a,a 1-0\n");
        assert!(matches!(r, Err(SynthError::Invalid(_))));
        let r = SyntheticSpec::parse("vocab = a\nmotif = m 0.1 input 0\n");
        assert!(matches!(r, Err(SynthError::Invalid(_))));
        let r = SyntheticSpec::parse("vocab = a\nrho = 1.5\n");
        assert!(matches!(r, Err(SynthError::Invalid(_))));
    }
}
