use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use ihnn::baselines::train_hgnn;
use ihnn::data::{generate_synthetic, load_dataset, write_dataset, Dataset, LoadOptions, SynthConfig};
use ihnn::model::{accuracy, argmax, sample_membership};
use ihnn::seed::{stream_rng, Stream};
use ihnn::training::{gradient_check, init_params, predict, train_with, Problem, TrainConfig};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    prepare_out_dir, prepare_out_file, require_file, DataArgs, EmbedArgs, EvalArgs, GradcheckArgs, OversmoothArgs,
    SynthArgs, TrainArgs, OVERSMOOTH_DEPTHS,
};
use crate::model_file::{DataKeys, ModelFile};
use crate::NumericalFailure;

pub const MODEL_FILE: &str = "model.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const NODE_EMBEDDINGS_FILE: &str = "node_embeddings.csv";
pub const EDGE_EMBEDDINGS_FILE: &str = "hyperedge_embeddings.csv";

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = args.synth_config()?;
    let out = args.out()?;
    cfg.validate()?;
    prepare_out_dir(out)?;
    let ds = generate_synthetic(&cfg)?;
    let stats = write_dataset(&ds, out)?;
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

fn load(data: &DataArgs) -> Result<(Dataset, LoadOptions)> {
    let dir = data.dir()?;
    let opts = data.load_options();
    let ds = load_dataset(dir, &opts).with_context(|| format!("loading dataset {}", dir.display()))?;
    Ok((ds, opts))
}

#[derive(Debug, Serialize)]
struct ClassAccuracy {
    class: usize,
    count: usize,
    accuracy: f64,
}

fn per_class(
    logits: &ihnn::linalg::DenseMatrix,
    labels: &[usize],
    mask: &[bool],
    classes: usize,
) -> Vec<ClassAccuracy> {
    let mut count = vec![0usize; classes];
    let mut hits = vec![0usize; classes];
    for (v, &l) in labels.iter().enumerate() {
        if mask[v] {
            count[l] += 1;
            if argmax(logits.row(v)) == l {
                hits[l] += 1;
            }
        }
    }
    (0..classes)
        .map(|class| ClassAccuracy {
            class,
            count: count[class],
            accuracy: if count[class] == 0 {
                0.0
            } else {
                hits[class] as f64 / count[class] as f64
            },
        })
        .collect()
}

pub fn metrics_csv(report: &ihnn::training::TrainReport) -> String {
    let mut s = String::from(
        "epoch,total_loss,class_loss,member_loss,train_accuracy,val_accuracy,forward_iterations,backward_iterations\n",
    );
    for r in &report.records {
        writeln!(
            s,
            "{},{:?},{:?},{:?},{:?},{:?},{},{}",
            r.epoch,
            r.total_loss,
            r.class_loss,
            r.member_loss,
            r.train_accuracy,
            r.val_accuracy,
            r.forward_iterations,
            r.backward_iterations
        )
        .unwrap();
    }
    s
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    dataset: ihnn::data::DatasetStats,
    config: &'a TrainConfig,
    opnorm_a: f64,
    kappa_radius: f64,
    epochs_run: usize,
    train_accuracy: f64,
    val_accuracy: f64,
    test_accuracy: f64,
    test_per_class: Vec<ClassAccuracy>,
    forward_iterations: usize,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg = args.model.train_config()?;
    let out = args
        .out
        .as_deref()
        .context("missing output directory (--out or `out` in the config)")?;
    let (ds, opts) = load(&args.data)?;
    prepare_out_dir(out)?;

    let problem = Problem::new(&ds, &cfg)?;
    info!(
        "{}: n={} E={} C={}, ||A||_op={:.12}, W radius {:.6}",
        ds.name,
        ds.node_count(),
        ds.hypergraph.edge_count(),
        ds.num_classes,
        problem.ops.opnorm_a,
        problem.ops.kappa_radius
    );
    let start = Instant::now();
    let (params, report) = train_with(&problem, &cfg, |r| {
        info!(
            "epoch {:>4}  loss {:.5}  class {:.5}  member {:.5}  train {:.3}  val {:.3}  iters {}/{}  {:.2}s",
            r.epoch,
            r.total_loss,
            r.class_loss,
            r.member_loss,
            r.train_accuracy,
            r.val_accuracy,
            r.forward_iterations,
            r.backward_iterations,
            r.wall_time_secs
        )
    })?;
    info!("trained {} epochs in {:.1}s", cfg.epochs, start.elapsed().as_secs_f64());

    let (state, logits) = predict(&params, &problem, &cfg)?;
    let model = ModelFile {
        params,
        config: cfg.clone(),
        data: DataKeys {
            random_feature_dim: opts.feature_dim,
            data_seed: opts.seed,
            train_ratio: opts.train_ratio,
        },
        opnorm_a: problem.ops.opnorm_a,
        kappa_radius: problem.ops.kappa_radius,
    };
    model.save(&out.join(MODEL_FILE))?;
    write_file(&out.join(METRICS_FILE), metrics_csv(&report))?;

    let summary = TrainSummary {
        dataset: ds.stats(),
        config: &cfg,
        opnorm_a: problem.ops.opnorm_a,
        kappa_radius: problem.ops.kappa_radius,
        epochs_run: report.records.len(),
        train_accuracy: accuracy(&logits, &problem.labels, &problem.fit_mask),
        val_accuracy: accuracy(&logits, &problem.labels, &problem.val_mask),
        test_accuracy: accuracy(&logits, &problem.labels, &problem.test_mask),
        test_per_class: per_class(&logits, &problem.labels, &problem.test_mask, problem.num_classes),
        forward_iterations: state.iterations_used,
    };
    write_json(&out.join(REPORT_FILE), &summary)?;
    println!(
        "train {:.4}  val {:.4}  test {:.4}  -> {}",
        summary.train_accuracy,
        summary.val_accuracy,
        summary.test_accuracy,
        out.display()
    );
    Ok(())
}

/// Dataset keys from the flags, falling back to those stored with the model.
fn data_for_model(data: &DataArgs, model: &ModelFile) -> DataArgs {
    DataArgs {
        data: data.data.clone(),
        random_feature_dim: data.random_feature_dim.or(Some(model.data.random_feature_dim)),
        data_seed: data.data_seed.or(Some(model.data.data_seed)),
        train_ratio: data.train_ratio.or(Some(model.data.train_ratio)),
    }
}

fn model_problem(model_path: Option<&Path>, data: &DataArgs) -> Result<(ModelFile, Dataset, Problem)> {
    let path = model_path.context("missing model file (--model or `model` in the config)")?;
    require_file(path, "model file")?;
    data.dir()?;
    let model = ModelFile::load(path)?;
    let (ds, _) = load(&data_for_model(data, &model))?;
    let p = &model.params;
    ensure!(
        ds.features.cols() == p.input_dim(),
        "model expects {} input features, dataset has {}",
        p.input_dim(),
        ds.features.cols()
    );
    ensure!(
        ds.num_classes <= p.classes(),
        "model predicts {} classes, dataset has {}",
        p.classes(),
        ds.num_classes
    );
    let problem = Problem::new(&ds, &model.config)?;
    if (problem.ops.opnorm_a - model.opnorm_a).abs() > 1e-9 {
        warn!(
            "operator norm {} differs from the stored {}; is this the training hypergraph?",
            problem.ops.opnorm_a, model.opnorm_a
        );
    }
    Ok((model, ds, problem))
}

#[derive(Serialize)]
struct EvalReport {
    model: PathBuf,
    dataset: ihnn::data::DatasetStats,
    test_nodes: usize,
    test_accuracy: f64,
    per_class: Vec<ClassAccuracy>,
    forward_iterations: usize,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let (model, ds, problem) = model_problem(args.model.as_deref(), &args.data)?;
    let model_path = args.model.clone().expect("checked above");
    let out = match &args.out {
        Some(p) => p.clone(),
        None => model_path.with_file_name("eval.json"),
    };
    prepare_out_file(&out)?;
    let (state, logits) = predict(&model.params, &problem, &model.config)?;
    let report = EvalReport {
        model: model_path,
        dataset: ds.stats(),
        test_nodes: problem.test_mask.iter().filter(|&&t| t).count(),
        test_accuracy: accuracy(&logits, &problem.labels, &problem.test_mask),
        per_class: per_class(&logits, &problem.labels, &problem.test_mask, model.params.classes()),
        forward_iterations: state.iterations_used,
    };
    println!(
        "test accuracy {:.4} on {} nodes",
        report.test_accuracy, report.test_nodes
    );
    for c in &report.per_class {
        println!("  class {:>3}: {:.4} ({} nodes)", c.class, c.accuracy, c.count);
    }
    write_json(&out, &report)
}

fn embedding_csv(prefix: &str, rows: impl Iterator<Item = impl AsRef<[f64]>>, dim: usize) -> String {
    let mut s = String::from(prefix);
    for j in 0..dim {
        write!(s, ",z{j}").unwrap();
    }
    s.push('\n');
    for (i, row) in rows.enumerate() {
        write!(s, "{i}").unwrap();
        for x in row.as_ref() {
            write!(s, ",{x:?}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn embed(args: &EmbedArgs) -> Result<()> {
    let out = args
        .out
        .as_deref()
        .context("missing output directory (--out or `out` in the config)")?;
    let (model, ds, problem) = model_problem(args.model.as_deref(), &args.data)?;
    prepare_out_dir(out)?;
    let (state, _) = predict(&model.params, &problem, &model.config)?;
    let n = ds.node_count();
    let d = model.params.hidden_dim();
    let rows: Vec<&[f64]> = state.z.row_iter().collect();
    write_file(
        &out.join(NODE_EMBEDDINGS_FILE),
        embedding_csv("node", rows[..n].iter(), d),
    )?;
    write_file(
        &out.join(EDGE_EMBEDDINGS_FILE),
        embedding_csv("hyperedge", rows[n..].iter(), d),
    )?;
    println!(
        "{} node and {} hyperedge embeddings of width {d} -> {}",
        n,
        rows.len() - n,
        out.display()
    );
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<()> {
    let cfg = args.train_config()?;
    let check = args.check_config();
    if let Some(out) = &args.out {
        prepare_out_file(out)?;
    }
    let ds = match &args.data {
        Some(_) => {
            let data = DataArgs {
                data: args.data.clone(),
                random_feature_dim: args.random_feature_dim,
                data_seed: args.data_seed,
                train_ratio: Some(args.train_ratio.unwrap_or(0.5)),
            };
            load(&data)?.0
        }
        None => generate_synthetic(&SynthConfig {
            nodes: 8,
            communities: 2,
            edges: 6,
            edge_size: 3,
            feature_dim: 3,
            train_ratio: args.train_ratio.unwrap_or(0.5),
            seed: args.data_seed.unwrap_or(0),
            ..SynthConfig::default()
        })?,
    };
    let problem = Problem::new(&ds, &cfg)?;
    let params = match &args.model {
        Some(path) => {
            require_file(path, "model file")?;
            let m = ModelFile::load(path)?;
            ensure!(
                m.params.input_dim() == problem.input_dim() && m.params.classes() >= problem.num_classes,
                "model shapes do not fit the dataset"
            );
            m.params
        }
        None => init_params(
            problem.input_dim(),
            cfg.hidden_dim,
            problem.num_classes,
            problem.ops.kappa_radius,
            cfg.seed,
        )?,
    };
    let batch = sample_membership(
        &problem.hypergraph,
        cfg.batch_size,
        &mut stream_rng(cfg.seed, Stream::Sampler),
    );
    let report = gradient_check(&params, &problem, &batch, &cfg, &check)?;

    println!("checked {} parameters", report.checked);
    for (group, err) in &report.per_group {
        println!("  {group:<10} max scaled error {err:.3e}");
    }
    if let Some(w) = &report.worst {
        println!(
            "worst: {}[{}] analytic {:e} numeric {:e} error {:.3e}",
            w.group, w.index, w.analytic, w.numeric, w.error
        );
    }
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    if !report.passes(&check) {
        return Err(NumericalFailure(format!(
            "gradient check failed: max scaled error {:.3e} exceeds {:e}",
            report.max_error, check.rel_tol
        ))
        .into());
    }
    println!(
        "PASS (max scaled error {:.3e} <= {:e})",
        report.max_error, check.rel_tol
    );
    Ok(())
}

/// One cell of the depth sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub model: &'static str,
    /// `None` for the implicit model.
    pub depth: Option<usize>,
    pub seed: u64,
    pub accuracy: Option<f64>,
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut s = String::from("model,depth,seed,accuracy\n");
    for c in cells {
        let depth = c.depth.map_or("inf".to_string(), |d| d.to_string());
        let acc = c.accuracy.map_or("failed".to_string(), |a| format!("{a:?}"));
        writeln!(s, "{},{depth},{},{acc}", c.model, c.seed).unwrap();
    }
    s
}

fn run_cell(base: &Dataset, cfg: &TrainConfig, train_ratio: f64, depth: Option<usize>) -> Result<f64> {
    let mut ds = base.clone();
    ds.resplit(train_ratio, cfg.seed)?;
    match depth {
        Some(k) => Ok(train_hgnn(&ds, k, &OversmoothArgs::baseline_config(cfg))?
            .1
            .test_accuracy),
        None => {
            let problem = Problem::new(&ds, cfg)?;
            let (params, _) = train_with(&problem, cfg, |_| {})?;
            let (_, logits) = predict(&params, &problem, cfg)?;
            Ok(accuracy(&logits, &problem.labels, &problem.test_mask))
        }
    }
}

/// Trains every (seed, model) cell; failures are kept as empty cells.
pub fn run_sweep(ds: &Dataset, cfg: &TrainConfig, train_ratio: f64, seeds: std::ops::Range<u64>) -> Vec<SweepCell> {
    let jobs: Vec<(u64, Option<usize>)> = seeds
        .flat_map(|s| OVERSMOOTH_DEPTHS.map(Some).chain([None]).map(move |d| (s, d)))
        .collect();
    jobs.par_iter()
        .map(|&(seed, depth)| {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let start = Instant::now();
            let model = if depth.is_some() { "hgnn" } else { "ihnn" };
            let accuracy = match run_cell(ds, &cfg, train_ratio, depth) {
                Ok(a) => {
                    info!(
                        "{model} depth {depth:?} seed {seed}: {a:.4} ({:.1}s)",
                        start.elapsed().as_secs_f64()
                    );
                    Some(a)
                }
                Err(e) => {
                    warn!("{model} depth {depth:?} seed {seed} failed: {e:#}");
                    None
                }
            };
            SweepCell {
                model,
                depth,
                seed,
                accuracy,
            }
        })
        .collect()
}

/// Mean accuracy per (model, depth) over the cells that finished.
pub fn sweep_means(cells: &[SweepCell]) -> Vec<(&'static str, Option<usize>, f64, usize)> {
    let mut keys: Vec<(&'static str, Option<usize>)> = Vec::new();
    for c in cells {
        if !keys.contains(&(c.model, c.depth)) {
            keys.push((c.model, c.depth));
        }
    }
    keys.into_iter()
        .map(|(m, d)| {
            let accs: Vec<f64> = cells
                .iter()
                .filter(|c| c.model == m && c.depth == d)
                .filter_map(|c| c.accuracy)
                .collect();
            let mean = if accs.is_empty() {
                f64::NAN
            } else {
                accs.iter().sum::<f64>() / accs.len() as f64
            };
            (m, d, mean, accs.len())
        })
        .collect()
}

pub fn oversmooth(args: &OversmoothArgs) -> Result<()> {
    let cfg = args.train_config()?;
    let out = args
        .out
        .as_deref()
        .context("missing output CSV path (--out or `out` in the config)")?;
    let train_ratio = args.train_ratio.unwrap_or(0.3);
    let seeds = args.seeds.unwrap_or(5);
    ensure!(seeds > 0, "need at least one seed");
    let first = args.first_seed.unwrap_or(0);
    let ds = match &args.data {
        Some(_) => {
            let data = DataArgs {
                data: args.data.clone(),
                random_feature_dim: args.random_feature_dim,
                data_seed: args.dataset_seed,
                train_ratio: Some(train_ratio),
            };
            load(&data)?.0
        }
        None => generate_synthetic(&SynthConfig {
            train_ratio,
            ..SynthConfig::long_range(args.dataset_seed.unwrap_or(0))
        })?,
    };
    prepare_out_file(out)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()?;
    let start = Instant::now();
    let cells = pool.install(|| run_sweep(&ds, &cfg, train_ratio, first..first + seeds));
    write_file(out, sweep_csv(&cells))?;
    info!("sweep finished in {:.1}s", start.elapsed().as_secs_f64());

    println!("model  depth  mean accuracy  runs");
    for (m, d, mean, runs) in sweep_means(&cells) {
        let depth = d.map_or("inf".to_string(), |d| d.to_string());
        println!("{m:<6} {depth:>5}  {mean:>13.4}  {runs}");
    }
    let failed = cells.iter().filter(|c| c.accuracy.is_none()).count();
    if failed > 0 {
        bail!(NumericalFailure(format!(
            "{failed} of {} runs failed; see the log",
            cells.len()
        )));
    }
    Ok(())
}
