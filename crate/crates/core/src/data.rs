//! Dataset ingestion, synthetic planted-partition hypergraphs and splits.
//!
//! On-disk layout of a dataset directory:
//!
//! - `hyperedges.txt`: one hyperedge per line, whitespace-separated 0-based
//!   node ids; blank lines and `#` comments are skipped.
//! - `labels.txt`: one `node_id label_id` pair per line.
//! - `features.csv` (optional): comma-separated floats, row `i` is node `i`.
//! - `stats.json` (written only): `n`, `E`, `C` and `max_edge_size`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::linalg::DenseMatrix;
use crate::seed::{stream_rng, Stream};

pub const HYPEREDGES_FILE: &str = "hyperedges.txt";
pub const LABELS_FILE: &str = "labels.txt";
pub const FEATURES_FILE: &str = "features.csv";
pub const STATS_FILE: &str = "stats.json";

/// Feature width used when a dataset ships without features.
pub const DEFAULT_RANDOM_FEATURE_DIM: usize = 64;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub provenance: String,
    pub hypergraph: Hypergraph,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
}

impl Dataset {
    pub fn node_count(&self) -> usize {
        self.hypergraph.node_count()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            n: self.node_count(),
            edges: self.hypergraph.edge_count(),
            classes: self.num_classes,
            max_edge_size: self.hypergraph.max_edge_size(),
        }
    }

    /// Replaces the split with a fresh seeded one.
    pub fn resplit(&mut self, train_ratio: f64, seed: u64) -> Result<()> {
        let (train, test) = make_split(self.node_count(), train_ratio, seed)?;
        self.train_mask = train;
        self.test_mask = test;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n: usize,
    #[serde(rename = "E")]
    pub edges: usize,
    #[serde(rename = "C")]
    pub classes: usize,
    pub max_edge_size: usize,
}

/// Options for [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Width of the random features generated when `features.csv` is absent.
    pub feature_dim: usize,
    pub seed: u64,
    pub train_ratio: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            feature_dim: DEFAULT_RANDOM_FEATURE_DIM,
            seed: 0,
            train_ratio: 0.3,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Content lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_hyperedges(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = read(path)?;
    content_lines(&text)
        .map(|(no, line)| {
            line.split_whitespace()
                .map(|tok| {
                    tok.parse::<usize>()
                        .map_err(|_| parse_err(path, no, format!("'{tok}' is not a node id")))
                })
                .collect()
        })
        .collect()
}

fn parse_labels(path: &Path) -> Result<Vec<(usize, usize, usize)>> {
    let text = read(path)?;
    content_lines(&text)
        .map(|(no, line)| {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(parse_err(path, no, "expected 'node_id label_id'"));
            }
            let node = toks[0]
                .parse()
                .map_err(|_| parse_err(path, no, format!("'{}' is not a node id", toks[0])))?;
            let label = toks[1]
                .parse()
                .map_err(|_| parse_err(path, no, format!("'{}' is not a label id", toks[1])))?;
            Ok((no, node, label))
        })
        .collect()
}

fn parse_features(path: &Path) -> Result<DenseMatrix> {
    let text = read(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (no, line) in content_lines(&text) {
        let row = line
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, no, format!("'{tok}' is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    no,
                    format!("row has {} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    DenseMatrix::from_rows(&rows)
}

/// Standard-normal features, `n × dim`.
pub fn random_features(n: usize, dim: usize, seed: u64) -> DenseMatrix {
    let mut rng = stream_rng(seed, Stream::Features);
    DenseMatrix::from_fn(n, dim, |_, _| rng.sample(StandardNormal))
}

/// Loads a dataset directory. Node count comes from `features.csv` when
/// present, otherwise from the labels; every node must carry exactly one label.
pub fn load_dataset(dir: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let edges_path = dir.join(HYPEREDGES_FILE);
    let labels_path = dir.join(LABELS_FILE);
    let features_path = dir.join(FEATURES_FILE);

    let edges = parse_hyperedges(&edges_path)?;
    let label_lines = parse_labels(&labels_path)?;
    let features = if features_path.exists() {
        Some(parse_features(&features_path)?)
    } else {
        None
    };

    let n = match &features {
        Some(f) => f.rows(),
        None => label_lines.iter().map(|&(_, v, _)| v + 1).max().unwrap_or(0),
    };
    if n == 0 {
        return Err(Error::invalid(format!("{}: dataset has no nodes", dir.display())));
    }
    let mut labels: Vec<Option<usize>> = vec![None; n];
    for &(no, node, label) in &label_lines {
        if node >= n {
            return Err(parse_err(&labels_path, no, format!("label for unknown node {node}")));
        }
        if labels[node].replace(label).is_some() {
            return Err(parse_err(&labels_path, no, format!("node {node} labeled twice")));
        }
    }
    let labels: Vec<usize> = labels
        .into_iter()
        .enumerate()
        .map(|(v, l)| l.ok_or_else(|| Error::invalid(format!("{}: node {v} has no label", labels_path.display()))))
        .collect::<Result<_>>()?;
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);

    for (line_idx, edge) in edges.iter().enumerate() {
        if let Some(&bad) = edge.iter().find(|&&v| v >= n) {
            return Err(Error::invalid(format!(
                "{}: hyperedge {line_idx} references node {bad}, but only {n} nodes are labeled",
                edges_path.display()
            )));
        }
    }
    let hypergraph = Hypergraph::new(n, edges)?;

    let (features, provenance) = match features {
        Some(f) => (f, format!("loaded from {}", dir.display())),
        None => (
            random_features(n, opts.feature_dim, opts.seed),
            format!(
                "loaded from {}; standard-normal features (dim {}, seed {})",
                dir.display(),
                opts.feature_dim,
                opts.seed
            ),
        ),
    };
    let (train_mask, test_mask) = make_split(n, opts.train_ratio, opts.seed)?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Ok(Dataset {
        name,
        provenance,
        hypergraph,
        features,
        labels,
        num_classes,
        train_mask,
        test_mask,
    })
}

/// Writes the dataset files plus `stats.json`; returns the stats.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<DatasetStats> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };

    let mut edges = String::new();
    for members in ds.hypergraph.hyperedges() {
        let line: Vec<String> = members.iter().map(usize::to_string).collect();
        edges.push_str(&line.join(" "));
        edges.push('\n');
    }
    write(HYPEREDGES_FILE, edges)?;

    let mut labels = String::new();
    for (v, l) in ds.labels.iter().enumerate() {
        labels.push_str(&format!("{v} {l}\n"));
    }
    write(LABELS_FILE, labels)?;

    let mut features = String::new();
    for row in ds.features.row_iter() {
        let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        features.push_str(&line.join(","));
        features.push('\n');
    }
    write(FEATURES_FILE, features)?;

    let stats = ds.stats();
    let json = serde_json::to_string_pretty(&stats).expect("stats serialize");
    write(STATS_FILE, json + "\n")?;
    Ok(stats)
}

/// Uniform permutation by `seed`; the first `⌊ratio·n⌋` nodes train, the
/// rest test.
pub fn make_split(n: usize, train_ratio: f64, seed: u64) -> Result<(Vec<bool>, Vec<bool>)> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::invalid(format!(
            "train ratio must lie in (0, 1), got {train_ratio}"
        )));
    }
    let n_train = (train_ratio * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!(
            "split of {n} nodes at ratio {train_ratio} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Split));
    let mut train = vec![false; n];
    for &v in &order[..n_train] {
        train[v] = true;
    }
    let test = train.iter().map(|t| !t).collect();
    Ok((train, test))
}

/// Planted-partition hypergraph with a knob for how far label information
/// has to travel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub nodes: usize,
    pub communities: usize,
    pub edges: usize,
    /// Mean hyperedge size; sizes are uniform on `2..=2s−2`.
    pub edge_size: usize,
    /// Probability that a member is drawn from all nodes instead of the
    /// hyperedge's community.
    pub impurity: f64,
    /// Fraction of each community whose features carry the label.
    pub informative: f64,
    pub feature_dim: usize,
    pub noise: f64,
    pub signal: f64,
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// A small smoke-test dataset.
    fn default() -> Self {
        Self {
            nodes: 200,
            communities: 2,
            edges: 400,
            edge_size: 4,
            impurity: 0.05,
            informative: 0.5,
            feature_dim: 8,
            noise: 1.0,
            signal: 3.0,
            train_ratio: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// The long-range setting used for the depth sweep.
    pub fn long_range(seed: u64) -> Self {
        Self {
            nodes: 600,
            communities: 3,
            edges: 2400,
            edge_size: 5,
            impurity: 0.05,
            informative: 0.1,
            feature_dim: 16,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.communities < 2 {
            return fail(format!("need at least 2 communities, got {}", self.communities));
        }
        if self.edge_size < 2 {
            return fail(format!("mean edge size must be at least 2, got {}", self.edge_size));
        }
        if self.edge_size > self.nodes {
            return fail(format!(
                "mean edge size {} exceeds node count {}",
                self.edge_size, self.nodes
            ));
        }
        if self.nodes < self.communities {
            return fail(format!(
                "{} nodes cannot fill {} communities",
                self.nodes, self.communities
            ));
        }
        if !(self.informative > 0.0 && self.informative <= 1.0) {
            return fail(format!(
                "informative fraction must lie in (0, 1], got {}",
                self.informative
            ));
        }
        if !(self.impurity >= 0.0 && self.impurity < 1.0) {
            return fail(format!("impurity must lie in [0, 1), got {}", self.impurity));
        }
        if self.feature_dim < self.communities {
            return fail(format!(
                "feature dimension {} cannot one-hot encode {} communities",
                self.feature_dim, self.communities
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.signal.is_finite()) {
            return fail("noise and signal scales must be finite, noise non-negative".into());
        }
        Ok(())
    }
}

/// Generates a planted-partition dataset. Labels are uniform community
/// assignments; each hyperedge picks a community and draws members from it,
/// except that each member comes from all nodes with probability `impurity`.
/// Only an `informative` fraction of every community gets label-bearing
/// features; everyone else is pure noise.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.nodes;
    let k = cfg.communities;
    let mut rng = stream_rng(cfg.seed, Stream::Structure);

    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut by_community: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (v, &l) in labels.iter().enumerate() {
        by_community[l].push(v);
    }

    let max_size = (2 * cfg.edge_size - 2).max(2).min(n);
    let mut edges = Vec::with_capacity(cfg.edges);
    for _ in 0..cfg.edges {
        let community = rng.random_range(0..k);
        let size = rng.random_range(2..=max_size);
        let pool = &by_community[community];
        let mut members = HashSet::with_capacity(size);
        let mut picked = Vec::with_capacity(size);
        let mut attempts = 0;
        while picked.len() < size && attempts < 20 * size {
            attempts += 1;
            let v = if pool.is_empty() || rng.random_bool(cfg.impurity) {
                rng.random_range(0..n)
            } else {
                pool[rng.random_range(0..pool.len())]
            };
            if members.insert(v) {
                picked.push(v);
            }
        }
        edges.push(picked);
    }
    let hypergraph = Hypergraph::new(n, edges)?;

    let mut frng = stream_rng(cfg.seed, Stream::Features);
    let mut informative = vec![false; n];
    for members in &by_community {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut frng);
        let take = (cfg.informative * shuffled.len() as f64).ceil() as usize;
        for &v in shuffled.iter().take(take) {
            informative[v] = true;
        }
    }
    let mut features = DenseMatrix::zeros(n, cfg.feature_dim);
    for v in 0..n {
        let row = features.row_mut(v);
        for x in row.iter_mut() {
            let z: f64 = frng.sample(StandardNormal);
            *x = cfg.noise * z;
        }
        if informative[v] {
            row[labels[v]] += cfg.signal;
        }
    }

    let (train_mask, test_mask) = make_split(n, cfg.train_ratio, cfg.seed)?;
    Ok(Dataset {
        name: "synthetic".into(),
        provenance: format!("{cfg:?}"),
        hypergraph,
        features,
        labels,
        num_classes: k,
        train_mask,
        test_mask,
    })
}
