//! Portable text model file.
//!
//! ```text
//! ihnn-model 1
//! input_dim 16
//! hidden_dim 16
//! classes 3
//! opnorm_a 0.9999999999999998
//! kappa_radius 0.9499999999895
//! data {"random_feature_dim":64,"data_seed":0,"train_ratio":0.3}
//! config {"epochs":100,...}
//! W 16 16
//! <16 rows of 16 values>
//! U 16 16
//! ...
//! ```
//!
//! Every parameter group follows as `name rows cols` and then its rows;
//! vectors are a single row. Floats use the shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use ihnn::model::ModelParams;
use ihnn::training::TrainConfig;
use serde::{Deserialize, Serialize};

pub const MAGIC: &str = "ihnn-model";
pub const VERSION: u32 = 1;

/// Dataset reading options the model was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataKeys {
    pub random_feature_dim: usize,
    pub data_seed: u64,
    pub train_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub data: DataKeys,
    pub opnorm_a: f64,
    pub kappa_radius: f64,
}

fn shapes(p: &ModelParams) -> [(usize, usize); 7] {
    let (i, d, c) = (p.input_dim(), p.hidden_dim(), p.classes());
    [(d, d), (i, d), (1, d), (2 * d, c), (1, c), (1, 2 * d), (1, 1)]
}

impl ModelFile {
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        writeln!(s, "{MAGIC} {VERSION}").unwrap();
        writeln!(s, "input_dim {}", p.input_dim()).unwrap();
        writeln!(s, "hidden_dim {}", p.hidden_dim()).unwrap();
        writeln!(s, "classes {}", p.classes()).unwrap();
        writeln!(s, "opnorm_a {:?}", self.opnorm_a).unwrap();
        writeln!(s, "kappa_radius {:?}", self.kappa_radius).unwrap();
        writeln!(s, "data {}", serde_json::to_string(&self.data).unwrap()).unwrap();
        writeln!(s, "config {}", serde_json::to_string(&self.config).unwrap()).unwrap();
        for ((name, values), (rows, cols)) in p.groups().into_iter().zip(shapes(p)) {
            writeln!(s, "{name} {rows} {cols}").unwrap();
            for row in values.chunks(cols) {
                let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
                writeln!(s, "{}", line.join(" ")).unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |want: &str| -> Result<(usize, String)> {
            let (no, line) = lines.next().with_context(|| format!("file ends before {want}"))?;
            Ok((no, line.to_string()))
        };
        let field = |(no, line): (usize, String), key: &str| -> Result<String> {
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => bail!("line {no}: expected `{key} ...`, found `{line}`"),
            }
        };

        let version = field(next("header")?, MAGIC).context("not an ihnn model file")?;
        ensure!(
            version == VERSION.to_string(),
            "unsupported model file version {version}"
        );
        let input_dim: usize = field(next("input_dim")?, "input_dim")?.parse()?;
        let hidden_dim: usize = field(next("hidden_dim")?, "hidden_dim")?.parse()?;
        let classes: usize = field(next("classes")?, "classes")?.parse()?;
        let opnorm_a: f64 = field(next("opnorm_a")?, "opnorm_a")?.parse()?;
        let kappa_radius: f64 = field(next("kappa_radius")?, "kappa_radius")?.parse()?;
        let data: DataKeys = serde_json::from_str(&field(next("data")?, "data")?).context("data keys")?;
        let config: TrainConfig = serde_json::from_str(&field(next("config")?, "config")?).context("config")?;
        ensure!(
            config.hidden_dim == hidden_dim,
            "config hidden_dim {} disagrees with header {hidden_dim}",
            config.hidden_dim
        );

        let mut params = ModelParams::zeros(input_dim, hidden_dim, classes);
        let expected = shapes(&params);
        for (g, (rows, cols)) in expected.into_iter().enumerate() {
            let name = params.groups()[g].0;
            let (no, header) = next(name)?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            ensure!(
                parts == [name, &rows.to_string(), &cols.to_string()],
                "line {no}: expected `{name} {rows} {cols}`, found `{header}`"
            );
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (no, line) = next(name)?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .with_context(|| format!("line {no}: bad number"))?;
                ensure!(
                    row.len() == cols,
                    "line {no}: expected {cols} values, found {}",
                    row.len()
                );
                values.extend(row);
            }
            params.groups_mut()[g].1.copy_from_slice(&values);
        }
        ensure!(params.is_finite(), "model file holds non-finite parameters");
        Ok(Self {
            params,
            config,
            data,
            opnorm_a,
            kappa_radius,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).with_context(|| format!("writing model {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
        Self::from_text(&text).with_context(|| format!("parsing model {}", path.display()))
    }
}
