//! NAS-Bench-201 cell strings to node-op DAGs.
//!
//! A cell string such as
//! `|nor_conv_3x3~0|+|skip_connect~0|avg_pool_3x3~1|+|none~0|nor_conv_1x1~1|skip_connect~2|`
//! labels the six edges of a 4-node cell. Each non-`none` edge becomes a DAG
//! node carrying its operation; an op-node `j -> k` feeds every op-node that
//! leaves cell node `k`. Cell node 0 becomes the `input` node and cell node 3
//! the `output` node. Op-nodes that end up off every input -> output path
//! (e.g. fed only by `none` edges) compute nothing and are pruned.

use thiserror::Error;

use super::{ArchDag, OpVocab, INPUT, OUTPUT};

/// Edge operation tokens in the benchmark's canonical order.
pub const NB201_OPS: [&str; 5] = ["none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"];

const CELL_NODES: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum Nb201Error {
    #[error("malformed cell string: {0}")]
    Malformed(String),
    #[error("unknown operation `{0}`")]
    UnknownOp(String),
}

/// Node vocabulary for converted cells (`none` never appears as a node).
pub fn nb201_vocab() -> OpVocab {
    OpVocab::new(["input", "output", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"])
        .expect("static vocab")
}

fn parse_cell(s: &str) -> Result<Vec<(usize, usize, &str)>, Nb201Error> {
    let groups: Vec<&str> = s.trim().split('+').collect();
    if groups.len() != CELL_NODES - 1 {
        return Err(Nb201Error::Malformed(format!(
            "expected {} node groups, found {}",
            CELL_NODES - 1,
            groups.len()
        )));
    }
    let mut edges = Vec::with_capacity(6);
    for (g, group) in groups.iter().enumerate() {
        let target = g + 1;
        let inner = group
            .strip_prefix('|')
            .and_then(|x| x.strip_suffix('|'))
            .ok_or_else(|| Nb201Error::Malformed(format!("group `{group}` not delimited by `|`")))?;
        let tokens: Vec<&str> = inner.split('|').collect();
        if tokens.len() != target {
            return Err(Nb201Error::Malformed(format!(
                "node {target} needs {target} inputs, found {}",
                tokens.len()
            )));
        }
        for (src, tok) in tokens.iter().enumerate() {
            let (op, from) = tok
                .split_once('~')
                .ok_or_else(|| Nb201Error::Malformed(format!("token `{tok}` lacks `~`")))?;
            let from: usize = from
                .parse()
                .map_err(|_| Nb201Error::Malformed(format!("bad source index in `{tok}`")))?;
            if from != src {
                return Err(Nb201Error::Malformed(format!("token `{tok}` out of order")));
            }
            if !NB201_OPS.contains(&op) {
                return Err(Nb201Error::UnknownOp(op.to_string()));
            }
            edges.push((src, target, op));
        }
    }
    Ok(edges)
}

/// Converts a cell string to node-op form over [`nb201_vocab`].
///
/// An all-`none` cell converts to a degenerate graph (input and output
/// only, no path); callers see that through [`ArchDag::validate`].
pub fn encode_nb201(cell: &str) -> Result<ArchDag, Nb201Error> {
    let vocab = nb201_vocab();
    let edges: Vec<(usize, usize, usize)> = parse_cell(cell)?
        .into_iter()
        .filter(|(_, _, op)| *op != "none")
        .map(|(s, t, op)| (s, t, vocab.index_of(op).expect("known op")))
        .collect();

    // node 0 = input, 1..=k op nodes in token order, k+1 = output
    let k = edges.len();
    let n = k + 2;
    let out = n - 1;
    let mut adj = vec![false; n * n];
    for (e, &(src, dst, _)) in edges.iter().enumerate() {
        let node = e + 1;
        if src == 0 {
            adj[node] = true;
        } else {
            for (f, &(_, fdst, _)) in edges.iter().enumerate() {
                if fdst == src {
                    adj[(f + 1) * n + node] = true;
                }
            }
        }
        if dst == CELL_NODES - 1 {
            adj[node * n + out] = true;
        }
    }
    let mut ops = vec![INPUT];
    ops.extend(edges.iter().map(|e| e.2));
    ops.push(OUTPUT);
    let full = ArchDag::new(adj, ops, vocab.len()).expect("sized");

    // prune op nodes off every input -> output path
    let fwd = full.reach(0, true);
    let bwd = full.reach(out, false);
    let keep: Vec<usize> = (0..n)
        .filter(|&i| i == 0 || i == out || (fwd[i] && bwd[i]))
        .collect();
    if keep.len() == n {
        return Ok(full);
    }
    let m = keep.len();
    let mut adj = vec![false; m * m];
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            adj[a * m + b] = full.has_edge(i, j);
        }
    }
    let ops = keep.iter().map(|&i| full.op(i)).collect();
    Ok(ArchDag::new(adj, ops, vocab.len()).expect("sized"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archgraph::Violation;

    const ALL_SKIP: &str = "|skip_connect~0|+|skip_connect~0|skip_connect~1|+|skip_connect~0|skip_connect~1|skip_connect~2|";

    #[test]
    fn all_skip_cell_expansion() {
        let d = encode_nb201(ALL_SKIP).unwrap();
        assert_eq!(d.num_nodes(), 8);
        assert!(d.is_valid());
        let skip = nb201_vocab().index_of("skip_connect").unwrap();
        assert!(d.ops()[1..7].iter().all(|&o| o == skip));
        // Hand expansion. Op nodes in token order:
        // 1:(0->1) 2:(0->2) 3:(1->2) 4:(0->3) 5:(1->3) 6:(2->3)
        let expected = [
            (0, 1),
            (0, 2),
            (0, 4),
            (1, 3),
            (1, 5),
            (2, 6),
            (3, 6),
            (4, 7),
            (5, 7),
            (6, 7),
        ];
        assert_eq!(d.edges(), expected.to_vec());
    }

    #[test]
    fn all_none_is_degenerate() {
        let d = encode_nb201("|none~0|+|none~0|none~1|+|none~0|none~1|none~2|").unwrap();
        assert!(d.is_degenerate());
        assert!(d.validate().contains(&Violation::Unreachable(1)));
    }

    #[test]
    fn op_multiset_matches_tokens() {
        let cell = "|nor_conv_3x3~0|+|nor_conv_3x3~0|nor_conv_1x1~1|+|skip_connect~0|nor_conv_3x3~1|avg_pool_3x3~2|";
        let d = encode_nb201(cell).unwrap();
        let vocab = nb201_vocab();
        let mut got: Vec<&str> = d.ops()[1..d.num_nodes() - 1]
            .iter()
            .map(|&o| vocab.name(o).unwrap())
            .collect();
        let mut want = vec![
            "nor_conv_3x3",
            "nor_conv_3x3",
            "nor_conv_1x1",
            "skip_connect",
            "nor_conv_3x3",
            "avg_pool_3x3",
        ];
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn dead_op_is_pruned() {
        // 0->1 is none, so the op on 1->2 and 1->3 never receives input
        let cell = "|none~0|+|nor_conv_3x3~0|nor_conv_1x1~1|+|skip_connect~0|avg_pool_3x3~1|nor_conv_3x3~2|";
        let d = encode_nb201(cell).unwrap();
        assert!(d.is_valid(), "{:?}", d.validate());
        assert_eq!(d.num_nodes(), 5);
    }

    #[test]
    fn rejects_bad_strings() {
        assert!(matches!(encode_nb201("|skip_connect~0|"), Err(Nb201Error::Malformed(_))));
        assert_eq!(
            encode_nb201("|conv_7x7~0|+|none~0|none~1|+|none~0|none~1|none~2|"),
            Err(Nb201Error::UnknownOp("conv_7x7".into()))
        );
        assert!(matches!(
            encode_nb201("|none~1|+|none~0|none~1|+|none~0|none~1|none~2|"),
            Err(Nb201Error::Malformed(_))
        ));
    }
}
