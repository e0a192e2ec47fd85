use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use carl_core::archgraph::{load_dataset, split, synth_generate_with_meta, write_dataset, ArchDag, BenchmarkDataset, SyntheticSpec};
use carl_core::autodiff::OpKind;
use carl_core::gradcheck;
use carl_core::metrics::RankReport;
use carl_core::predictor::{std_dev, EpochLoss, ModelConfig, PredictorModel, TrainConfig};
use carl_core::report;
use carl_core::search::{evolve, guided_random_search, Budget, CarlScorer, EvolutionConfig, GroundTruth, SynthTruth, TableTruth};

use crate::args::*;
use crate::failure::{Failure, Result};

/// Regret cutoffs reported alongside Kendall's tau.
const REGRET_KS: [usize; 3] = [1, 10, 100];

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Search(a) => search(a),
        Command::Sweep(a) => sweep(a),
        Command::Importance(a) => importance(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn out_dir(o: &OutArgs) -> Result<&Path> {
    fs::create_dir_all(&o.out).map_err(|e| Failure::data(format!("cannot create {}: {e}", o.out.display())))?;
    Ok(&o.out)
}

fn load(d: &DataArgs) -> Result<BenchmarkDataset> {
    let vocab = d.vocab_path();
    load_dataset(&d.dataset, &vocab).map_err(|e| Failure::from(e).context(format!("loading {}", d.dataset.display())))
}

fn all_archs(ds: &BenchmarkDataset) -> Vec<&ArchDag> {
    ds.records.iter().map(|r| &r.arch).collect()
}

fn test_accs(ds: &BenchmarkDataset) -> Vec<f64> {
    ds.records.iter().map(|r| r.test_acc).collect()
}

#[derive(Serialize)]
struct SynthReport {
    num_archs: usize,
    mean_accuracy: f64,
    /// Fraction of architectures with at least one good motif.
    good_rate: f64,
    /// Fraction of good-motif architectures that carry the decoration.
    decoration_given_good: f64,
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => SyntheticSpec::parse(&fs::read_to_string(p)?)?,
        None => SyntheticSpec::benchmark(a.rho, a.sigma, a.seed),
    };
    if let Some(n) = a.num_archs {
        spec.num_archs = n;
    }
    let generated = synth_generate_with_meta(&spec)?;
    let good: Vec<bool> = generated
        .iter()
        .map(|g| spec.good_motifs().any(|(k, _)| g.planted[k]))
        .collect();
    let n_good = good.iter().filter(|&&g| g).count();
    let decorated = generated.iter().zip(&good).filter(|(g, &is)| is && g.decorated).count();
    let ds = carl_core::archgraph::synth_generate(&spec)?;

    let out = out_dir(&a.out)?;
    write_dataset(&ds, &out.join("dataset.csv"), &out.join("vocab.txt"))?;
    fs::write(out.join("spec.txt"), spec.to_text())?;
    let rep = SynthReport {
        num_archs: ds.len(),
        mean_accuracy: ds.records.iter().map(|r| r.test_acc).sum::<f64>() / ds.len().max(1) as f64,
        good_rate: n_good as f64 / ds.len().max(1) as f64,
        decoration_given_good: decorated as f64 / n_good.max(1) as f64,
    };
    report::write(&out.join("synth_report.txt"), "synth", &rep)?;
    println!("wrote {} architectures to {}", ds.len(), out.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct TrainReport {
    pub dataset: String,
    pub portion: f64,
    pub n_train: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub y_bar: f64,
    pub final_epoch: Option<EpochLoss>,
    pub rank: RankReport,
}

fn train_once(ds: &BenchmarkDataset, ids: &[usize], model: ModelConfig, cfg: &TrainConfig) -> Result<(PredictorModel, f64, Option<EpochLoss>, RankReport)> {
    let data: Vec<(&ArchDag, f64)> = ids.iter().map(|&i| (&ds.records[i].arch, ds.records[i].val_acc)).collect();
    let mut m = PredictorModel::new(model, ds.vocab.clone())?;
    let hist = m.fit(&data, cfg)?;
    let preds = m.predict(&all_archs(ds))?;
    let rank = RankReport::compute(&preds, &test_accs(ds), &REGRET_KS)?;
    Ok((m, hist.y_bar, hist.epochs.last().copied(), rank))
}

fn train(a: TrainArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let sp = split(&ds, a.portion, a.seed)?;
    let cfg = a.loss.config(a.seed);
    let (model, y_bar, final_epoch, rank) = train_once(&ds, &sp.train, a.model.config(a.seed), &cfg)?;

    let out = out_dir(&a.out)?;
    let ids: Vec<String> = sp.train.iter().map(|&i| ds.records[i].id.clone()).collect();
    model.save(&out.join("model"), Some(&cfg), &ids)?;
    let preds = model.predict(&all_archs(&ds))?;
    write_predictions(&out.join("predictions.csv"), &ds, &preds)?;
    let rep = TrainReport {
        dataset: a.data.dataset.display().to_string(),
        portion: a.portion,
        n_train: ids.len(),
        model: *model.config(),
        train: cfg,
        y_bar,
        final_epoch,
        rank,
    };
    report::write(&out.join("train_report.txt"), "train", &rep)?;
    println!("ktau {:.4} over {} architectures", rep.rank.ktau, rep.rank.n);
    Ok(())
}

fn write_predictions(path: &Path, ds: &BenchmarkDataset, preds: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::data(e.to_string()))?;
    w.write_record(["id", "prediction", "test_acc"]).map_err(|e| Failure::data(e.to_string()))?;
    for (r, p) in ds.records.iter().zip(preds) {
        w.write_record([r.id.clone(), format!("{p:?}"), format!("{:?}", r.test_acc)])
            .map_err(|e| Failure::data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn read_predictions(path: &Path, ds: &BenchmarkDataset) -> Result<Vec<f64>> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        prediction: f64,
    }
    let mut rd = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Failure::data(e.to_string()))?;
    let mut by_id = HashMap::new();
    for row in rd.deserialize::<Row>() {
        let row = row.map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        by_id.insert(row.id, row.prediction);
    }
    ds.records
        .iter()
        .map(|r| {
            by_id
                .get(&r.id)
                .copied()
                .ok_or_else(|| Failure::data(format!("no prediction for architecture `{}`", r.id)))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
pub struct EvalReport {
    pub source: String,
    pub rank: RankReport,
}

fn eval(a: EvalArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let (preds, source) = match (&a.model, &a.predictions) {
        (Some(dir), _) => {
            let (model, _) = PredictorModel::load(dir)?;
            model.check_vocab(&ds.vocab)?;
            (model.predict(&all_archs(&ds))?, dir.display().to_string())
        }
        (None, Some(p)) => (read_predictions(p, &ds)?, p.display().to_string()),
        (None, None) => return Err(Failure::usage("either --model or --predictions is required")),
    };
    let rep = EvalReport {
        source,
        rank: RankReport::compute(&preds, &test_accs(&ds), &REGRET_KS)?,
    };
    let out = out_dir(&a.out)?;
    report::write(&out.join("eval_report.txt"), "eval", &rep)?;
    println!("ktau {:.4} over {} architectures", rep.rank.ktau, rep.rank.n);
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct SearchRun {
    pub seed: u64,
    pub queries: usize,
    pub best_id: String,
    pub best_val: f64,
    pub best_test: f64,
    /// Fraction of the dataset with strictly higher test accuracy.
    pub top_fraction: f64,
}

#[derive(Serialize, Deserialize)]
pub struct SearchReport {
    pub strategy: String,
    pub budget: usize,
    pub n0: usize,
    pub runs: Vec<SearchRun>,
    pub mean_best_test: f64,
    pub std_best_test: f64,
}

fn search(a: SearchArgs) -> Result<()> {
    let ds = load(&a.data)?;
    if a.budget > ds.len() {
        return Err(Failure::usage(format!("budget {} exceeds the dataset size {}", a.budget, ds.len())));
    }
    let spec = match &a.spec {
        Some(p) => Some(SyntheticSpec::parse(&fs::read_to_string(p)?)?),
        None => None,
    };
    let truth: Box<dyn GroundTruth> = match &spec {
        Some(s) => {
            if s.vocab != ds.vocab {
                return Err(Failure::data("spec vocabulary differs from the dataset vocabulary"));
            }
            Box::new(SynthTruth::new(s, &ds))
        }
        None => Box::new(TableTruth::new(&ds)),
    };
    let truth = truth.as_ref();
    let out = out_dir(&a.out)?;
    let test = test_accs(&ds);

    let runs: Vec<Result<(SearchRun, String)>> = (a.seed..a.seed + a.repeats)
        .into_par_iter()
        .map(|seed| {
            let model = PredictorModel::new(a.model.config(seed), ds.vocab.clone())?;
            let mut scorer = CarlScorer::new(model, a.loss.config(seed), a.refit_epochs);
            let mut budget = Budget::new(truth, a.budget);
            let trace = match a.strategy {
                Strategy::Evolution => {
                    let cfg = EvolutionConfig {
                        n0: a.n0,
                        budget: a.budget,
                        population: a.population,
                        candidates: a.candidates,
                        retrain_every: a.retrain_every,
                        seed,
                        ..EvolutionConfig::default()
                    };
                    evolve(&mut budget, &mut scorer, &cfg)?
                }
                Strategy::Random => guided_random_search(&mut budget, &mut scorer, a.n0, a.sample_size, seed)?,
            };
            let best_test = trace.best_obs.test_acc;
            let run = SearchRun {
                seed,
                queries: budget.spent(),
                best_id: trace.best_obs.id.clone(),
                best_val: trace.best_obs.val_acc,
                best_test,
                top_fraction: test.iter().filter(|&&t| t > best_test).count() as f64 / test.len() as f64,
            };
            Ok((run, trace.to_tsv()))
        })
        .collect();

    let mut done = Vec::new();
    for r in runs {
        let (run, tsv) = r?;
        fs::write(out.join(format!("trace_seed{}.tsv", run.seed)), tsv)?;
        done.push(run);
    }
    let finals: Vec<f64> = done.iter().map(|r| r.best_test).collect();
    let rep = SearchReport {
        strategy: format!("{:?}", a.strategy).to_lowercase(),
        budget: a.budget,
        n0: a.n0,
        mean_best_test: finals.iter().sum::<f64>() / finals.len().max(1) as f64,
        std_best_test: if finals.is_empty() { 0.0 } else { std_dev(&finals) },
        runs: done,
    };
    report::write(&out.join("search_report.txt"), "search", &rep)?;
    println!(
        "best test accuracy {:.4} ± {:.4} over {} runs",
        rep.mean_best_test,
        rep.std_best_test,
        rep.runs.len()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda1: f64,
    pub lambda2: f64,
    pub ktau: f64,
}

#[derive(Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub portion: f64,
    pub cells: Vec<SweepCell>,
}

fn sweep(a: SweepArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let sp = split(&ds, a.portion, a.seed)?;
    let grid: Vec<(f64, f64)> = a
        .lambda1s
        .iter()
        .flat_map(|&l1| a.lambda2s.iter().map(move |&l2| (l1, l2)))
        .collect();
    let cells: Vec<Result<SweepCell>> = grid
        .par_iter()
        .map(|&(lambda1, lambda2)| {
            let cfg = TrainConfig {
                lambda1,
                lambda2,
                ..a.loss.config(a.seed)
            };
            let (_, _, _, rank) = train_once(&ds, &sp.train, a.model.config(a.seed), &cfg)?;
            Ok(SweepCell {
                lambda1,
                lambda2,
                ktau: rank.ktau,
            })
        })
        .collect();
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;

    let mut table = String::from("lambda1\\lambda2");
    for l2 in &a.lambda2s {
        write!(table, "\t{l2}").unwrap();
    }
    for (row, l1) in a.lambda1s.iter().enumerate() {
        write!(table, "\n{l1}").unwrap();
        for col in 0..a.lambda2s.len() {
            write!(table, "\t{:.4}", cells[row * a.lambda2s.len() + col].ktau).unwrap();
        }
    }
    table.push('\n');

    let out = out_dir(&a.out)?;
    fs::write(out.join("sweep_grid.tsv"), &table)?;
    let rep = SweepReport {
        seed: a.seed,
        portion: a.portion,
        cells,
    };
    report::write(&out.join("sweep_report.txt"), "sweep", &rep)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct EdgeScore {
    pub src: usize,
    pub dst: usize,
    pub alpha_c: f64,
}

#[derive(Serialize, Deserialize)]
pub struct ArchImportance {
    pub id: String,
    pub ops: Vec<String>,
    pub node_alpha_c: Vec<f64>,
    pub edges: Vec<EdgeScore>,
}

/// Linear ramp from light gray at 0 to black at 1.
pub fn gray(alpha: f64) -> String {
    let level = (208.0 * (1.0 - alpha.clamp(0.0, 1.0))).round() as u8;
    format!("#{level:02x}{level:02x}{level:02x}")
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn render_dot(imp: &ArchImportance) -> String {
    let mut s = format!("digraph \"{}\" {{\n  rankdir=LR;\n  node [shape=box, style=rounded];\n", dot_escape(&imp.id));
    for (i, (op, a)) in imp.ops.iter().zip(&imp.node_alpha_c).enumerate() {
        writeln!(s, "  n{i} [label=\"{}\\n{a:.2}\"];", dot_escape(op)).unwrap();
    }
    for e in &imp.edges {
        writeln!(
            s,
            "  n{} -> n{} [color=\"{}\", penwidth={:.2}, label=\"{:.2}\"];",
            e.src,
            e.dst,
            gray(e.alpha_c),
            1.0 + 2.0 * e.alpha_c,
            e.alpha_c
        )
        .unwrap();
    }
    s.push_str("}\n");
    s
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn importance(a: ImportanceArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let (model, _) = PredictorModel::load(&a.model)?;
    model.check_vocab(&ds.vocab)?;
    let mut exports = Vec::with_capacity(a.ids.len());
    for id in &a.ids {
        let i = ds
            .position(id)
            .ok_or_else(|| Failure::data(format!("unknown architecture id `{id}`")))?;
        let arch = &ds.records[i].arch;
        let scores = model.scores(arch)?;
        let edges = arch
            .edges()
            .into_iter()
            .enumerate()
            .map(|(k, (src, dst))| EdgeScore {
                src,
                dst,
                alpha_c: scores.edge_alpha.get(k, 0),
            })
            .collect();
        exports.push(ArchImportance {
            id: id.clone(),
            ops: arch.ops().iter().map(|&o| ds.vocab.name(o).unwrap_or("?").to_string()).collect(),
            node_alpha_c: (0..arch.num_nodes()).map(|n| scores.node_alpha.get(n, 0)).collect(),
            edges,
        });
    }
    let out = out_dir(&a.out)?;
    for imp in &exports {
        fs::write(out.join(format!("{}.dot", file_stem(&imp.id))), render_dot(imp))?;
    }
    report::write(&out.join("importance_report.txt"), "importance", &exports)?;
    println!("exported importance for {} architectures", exports.len());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let fault = match &a.fault {
        Some(name) => Some(OpKind::parse(name).ok_or_else(|| Failure::usage(format!("unknown op `{name}`")))?),
        None => None,
    };
    let rep = gradcheck::run(a.seed, fault)?;
    let out = out_dir(&a.out)?;
    report::write(&out.join("gradcheck_report.txt"), "gradcheck", &rep)?;
    for c in &rep.checks {
        println!("{:<9} {:<20} {:>5} scalars  max rel err {:.2e}", c.suite, c.name, c.scalars, c.max_rel_err);
    }
    if rep.passed() {
        println!("PASS: all {} parameters within {:e}", rep.checks.len(), rep.tolerance);
        Ok(())
    } else {
        let w = rep.worst().expect("failed report has checks");
        Err(Failure::numeric(format!(
            "gradient check failed: {} {} has max rel err {:.3e} (tolerance {:e})",
            w.suite, w.name, w.max_rel_err, rep.tolerance
        )))
    }
}
