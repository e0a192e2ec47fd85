//! Benchmark datasets in the neutral ingestion schema.
//!
//! CSV (UTF-8, header required):
//!
//! ```text
//! id,num_nodes,adjacency,ops,val_acc,test_acc
//! a0,3,010001000,input|conv3x3|output,0.91,0.90
//! ```
//!
//! `adjacency` is the row-major `D x D` bit string, `ops` a `|`-separated
//! list of names from the sidecar vocab file (one name per line).

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ArchDag, OpVocab, Violation};

const HEADER: [&str; 6] = ["id", "num_nodes", "adjacency", "ops", "val_acc", "test_acc"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: schema error: {msg}")]
    Schema { line: u64, msg: String },
    #[error("line {line}: architecture `{id}` is invalid: {}", fmt_violations(.violations))]
    Invalid {
        line: u64,
        id: String,
        violations: Vec<Violation>,
    },
    #[error("vocab error: {0}")]
    Vocab(#[from] super::VocabError),
    #[error("split portion {0} outside (0, 1]")]
    Portion(f64),
    #[error("dataset has no trainable records")]
    Empty,
}

fn fmt_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    RealExport,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRecord {
    pub id: String,
    pub arch: ArchDag,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Degenerate cell (no input -> output path). Kept for completeness,
    /// never sampled for training.
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct BenchmarkDataset {
    pub vocab: OpVocab,
    pub records: Vec<BenchmarkRecord>,
    pub provenance: Provenance,
}

impl BenchmarkDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }

    pub fn trainable(&self) -> impl Iterator<Item = usize> + '_ {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.flagged)
            .map(|(i, _)| i)
    }
}

/// How `val_acc`/`test_acc` columns are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccuracyScale {
    Fraction,
    Percent,
    /// Percent when more than half of all accuracy values exceed 1.5.
    #[default]
    Auto,
}

#[derive(Debug, Deserialize)]
struct Row {
    id: String,
    num_nodes: usize,
    adjacency: String,
    ops: String,
    val_acc: f64,
    test_acc: f64,
}

pub fn load_dataset(csv_path: &Path, vocab_path: &Path) -> Result<BenchmarkDataset, DatasetError> {
    let vocab = OpVocab::parse(&std::fs::read_to_string(vocab_path)?)?;
    let file = std::fs::File::open(csv_path)?;
    parse_dataset(file, vocab, AccuracyScale::Auto, Provenance::RealExport)
}

/// Parses and validates every row. Rows failing validation abort the load
/// with their line number, except degenerate rows, which are kept flagged.
pub fn parse_dataset(
    reader: impl std::io::Read,
    vocab: OpVocab,
    scale: AccuracyScale,
    provenance: Provenance,
) -> Result<BenchmarkDataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DatasetError::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if headers.iter().map(str::trim).ne(HEADER) {
        return Err(DatasetError::Schema {
            line: 1,
            msg: format!("header must be `{}`", HEADER.join(",")),
        });
    }

    let mut rows = Vec::new();
    for result in rdr.records() {
        let raw = result.map_err(|e| DatasetError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = raw.position().map_or(0, |p| p.line());
        let row: Row = raw.deserialize(None).map_err(|e| DatasetError::Parse {
            line,
            msg: e.to_string(),
        })?;
        rows.push((line, row));
    }

    let percent = match scale {
        AccuracyScale::Fraction => false,
        AccuracyScale::Percent => true,
        AccuracyScale::Auto => {
            let big = rows
                .iter()
                .flat_map(|(_, r)| [r.val_acc, r.test_acc])
                .filter(|&v| v > 1.5)
                .count();
            big > rows.len()
        }
    };
    let div = if percent { 100.0 } else { 1.0 };

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let schema = |msg: String| DatasetError::Schema { line, msg };
        if !seen.insert(row.id.clone()) {
            return Err(schema(format!("duplicate id `{}`", row.id)));
        }
        let (val_acc, test_acc) = (row.val_acc / div, row.test_acc / div);
        for (name, v) in [("val_acc", val_acc), ("test_acc", test_acc)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(schema(format!("{name} {} outside [0, 1]", v * div)));
            }
        }
        if row.adjacency.len() != row.num_nodes * row.num_nodes {
            return Err(schema(format!(
                "adjacency has {} bits, expected {}",
                row.adjacency.len(),
                row.num_nodes * row.num_nodes
            )));
        }
        let ops = row
            .ops
            .split('|')
            .map(|name| {
                vocab
                    .index_of(name.trim())
                    .ok_or_else(|| schema(format!("unknown op `{name}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if ops.len() != row.num_nodes {
            return Err(schema(format!("{} ops for {} nodes", ops.len(), row.num_nodes)));
        }
        let arch = ArchDag::from_adjacency_str(&row.adjacency, ops, vocab.len()).map_err(|e| schema(e.to_string()))?;
        let violations = arch.validate();
        let flagged = !violations.is_empty();
        if flagged && !arch.is_degenerate() {
            return Err(DatasetError::Invalid {
                line,
                id: row.id,
                violations,
            });
        }
        records.push(BenchmarkRecord {
            id: row.id,
            arch,
            val_acc,
            test_acc,
            flagged,
        });
    }
    Ok(BenchmarkDataset {
        vocab,
        records,
        provenance,
    })
}

pub fn write_dataset(ds: &BenchmarkDataset, csv_path: &Path, vocab_path: &Path) -> Result<(), DatasetError> {
    std::fs::write(vocab_path, ds.vocab.to_text())?;
    let mut out = String::from("id,num_nodes,adjacency,ops,val_acc,test_acc\n");
    for r in &ds.records {
        let ops: Vec<&str> = r.arch.ops().iter().map(|&o| ds.vocab.name(o).unwrap_or("?")).collect();
        out.push_str(&format!(
            "{},{},{},{},{:?},{:?}\n",
            r.id,
            r.arch.num_nodes(),
            r.arch.adjacency_str(),
            ops.join("|"),
            r.val_acc,
            r.test_acc
        ));
    }
    std::fs::write(csv_path, out)?;
    Ok(())
}

/// Training indices drawn from a dataset; the test set is always the whole
/// dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
}

/// Samples `ceil(portion * N)` records uniformly without replacement from
/// the non-flagged records.
pub fn split(ds: &BenchmarkDataset, portion: f64, seed: u64) -> Result<Split, DatasetError> {
    if !(portion > 0.0 && portion <= 1.0) {
        return Err(DatasetError::Portion(portion));
    }
    let pool: Vec<usize> = ds.trainable().collect();
    if pool.is_empty() {
        return Err(DatasetError::Empty);
    }
    let want = ((portion * ds.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let k = want.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train: Vec<usize> = sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
    if k == pool.len() {
        train.sort_unstable();
    }
    Ok(Split { train })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> OpVocab {
        OpVocab::new(["input", "output", "conv3x3", "pool"]).unwrap()
    }

    const GOOD: &str = "id,num_nodes,adjacency,ops,val_acc,test_acc
a,3,010001000,input|conv3x3|output,0.91,0.90
b,3,010001000,input|pool|output,0.80,0.79
c,4,0110000100010000,input|conv3x3|pool|output,0.85,0.86
";

    fn parse(text: &str) -> Result<BenchmarkDataset, DatasetError> {
        parse_dataset(text.as_bytes(), vocab(), AccuracyScale::Auto, Provenance::RealExport)
    }

    #[test]
    fn well_formed_file() {
        let ds = parse(GOOD).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.records[2].arch.num_edges(), 4);
        assert!(ds.records.iter().all(|r| !r.flagged));
    }

    #[test]
    fn out_of_range_accuracy_reports_line() {
        let bad = GOOD.replace("0.80,0.79", "1.7,0.79");
        match parse(&bad) {
            Err(DatasetError::Schema { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("1.7"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn percent_values_are_rescaled() {
        let pct = "id,num_nodes,adjacency,ops,val_acc,test_acc
a,3,010001000,input|conv3x3|output,91.5,90.0
b,3,010001000,input|pool|output,10.0,1.0
";
        let ds = parse(pct).unwrap();
        assert!((ds.records[0].val_acc - 0.915).abs() < 1e-12);
        assert!((ds.records[1].test_acc - 0.01).abs() < 1e-12);
    }

    #[test]
    fn invalid_architecture_is_rejected() {
        let cyc = "id,num_nodes,adjacency,ops,val_acc,test_acc
a,3,011101000,input|conv3x3|output,0.5,0.5
";
        assert!(matches!(parse(cyc), Err(DatasetError::Invalid { line: 2, .. })));
    }

    #[test]
    fn degenerate_cell_is_flagged_not_rejected() {
        let text = format!("{GOOD}z,2,0000,input|output,0.1,0.1\n");
        let ds = parse(&text).unwrap();
        assert!(ds.records[3].flagged);
        let s = split(&ds, 1.0, 0).unwrap();
        assert_eq!(s.train, vec![0, 1, 2]);
    }

    #[test]
    fn bad_header_and_unknown_op() {
        assert!(matches!(parse("a,b\n"), Err(DatasetError::Schema { line: 1, .. })));
        let bad = GOOD.replace("input|pool|output", "input|zz|output");
        assert!(matches!(parse(&bad), Err(DatasetError::Schema { line: 3, .. })));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let vocab = vocab();
        let arch = ArchDag::from_edges(3, &[(0, 2), (2, 1)], vec![0, 1, 2], vocab.len()).unwrap();
        let records = (0..15_625)
            .map(|i| BenchmarkRecord {
                id: i.to_string(),
                arch: arch.clone(),
                val_acc: 0.5,
                test_acc: 0.5,
                flagged: false,
            })
            .collect();
        let ds = BenchmarkDataset {
            vocab,
            records,
            provenance: Provenance::Synthetic,
        };
        let s = split(&ds, 0.005, 9).unwrap();
        assert_eq!(s.train.len(), 79);
        assert_eq!(s, split(&ds, 0.005, 9).unwrap());
        assert_ne!(s, split(&ds, 0.005, 10).unwrap());
        assert_eq!(split(&ds, 1.0, 1).unwrap().train.len(), 15_625);
        assert!(matches!(split(&ds, 0.0, 1), Err(DatasetError::Portion(_))));
        assert!(matches!(split(&ds, 1.5, 1), Err(DatasetError::Portion(_))));
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let ds = parse(GOOD).unwrap();
        let (c, v) = (dir.path().join("d.csv"), dir.path().join("v.txt"));
        write_dataset(&ds, &c, &v).unwrap();
        let back = load_dataset(&c, &v).unwrap();
        assert_eq!(back.records, ds.records);
    }
}
