//! Run configuration: one TOML file, overridden by flags, resolved to
//! absolute paths and a single seed before anything runs.

use std::path::{Path, PathBuf};

use psp_hdc::data::{gap_threshold, load_csv, DatasetTable, TableSchema};
use psp_hdc::eval::{SplitPlan, SweepGrid};
use psp_hdc::graph::{GraphSpec, GraphSpecFile};
use psp_hdc::synth::{self, SyntheticSpec};
use psp_hdc::trainer::TrainConfig;
use psp_hdc::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threshold {
    Value(f64),
    Mode(String),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Mode("auto".into())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset CSV. Mutually exclusive with `synthetic`.
    pub path: Option<PathBuf>,
    /// Graph file; its parameter names select the dataset columns.
    pub graph: Option<PathBuf>,
    /// Column holding 0-based class indices.
    pub label: Option<String>,
    /// Raw target column, binarized when there is no label column.
    pub target: Option<String>,
    pub threshold: Threshold,
    pub regimes: Vec<String>,
    /// 0-based data rows dropped after loading.
    pub exclude: Vec<usize>,
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub beta: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { beta: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Source of every random draw: model seeds and split draws.
    pub seed: u64,
    pub output_root: Option<PathBuf>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: SplitPlan,
    pub sweep: SweepGrid,
    pub explain: ExplainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_root: None,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: SplitPlan::default(),
            sweep: SweepGrid::reference(),
            explain: ExplainConfig::default(),
        }
    }
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Reads a config file; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = std::fs::canonicalize(&base).unwrap_or(base);
        cfg.data.path = cfg.data.path.map(|p| absolute(&base, &p));
        cfg.data.graph = cfg.data.graph.map(|p| absolute(&base, &p));
        cfg.output_root = cfg.output_root.map(|p| absolute(&base, &p));
        Ok(cfg)
    }

    /// Pushes the top-level seed into every section that draws randomness.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.eval.base_seed = self.seed;
        if let Some(s) = &mut self.data.synthetic {
            s.seed = self.seed;
        }
        self.train.validate()?;
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "data.path and data.synthetic are mutually exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "config needs data.path or a [data.synthetic] table".into(),
                ))
            }
            _ => {}
        }
        if self.data.path.is_some() && self.data.graph.is_none() {
            return Err(Error::Config(
                "data.graph is required with data.path".into(),
            ));
        }
        if let Threshold::Mode(m) = &self.data.threshold {
            if m != "auto" {
                return Err(Error::Config(format!(
                    "data.threshold must be \"auto\" or a number, got \"{m}\""
                )));
            }
        }
        Ok(self)
    }
}

/// A loaded dataset with its graph and the files it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub table: DatasetTable,
    pub spec: GraphSpec,
    pub inputs: Vec<PathBuf>,
    /// Threshold used to derive labels, when labels came from a target.
    pub threshold: Option<f64>,
}

pub fn parse_threshold(s: &str) -> Result<Threshold> {
    if s == "auto" {
        return Ok(Threshold::Mode(s.into()));
    }
    s.parse()
        .map(Threshold::Value)
        .map_err(|_| Error::Config(format!("threshold must be 'auto' or a number, got '{s}'")))
}

pub fn load_data(cfg: &DataConfig) -> Result<Loaded> {
    let mut inputs = Vec::new();
    let graph_file = match &cfg.graph {
        Some(p) => {
            inputs.push(p.clone());
            Some(GraphSpecFile::load(p)?)
        }
        None => None,
    };
    let (table, generated) = if let Some(spec) = &cfg.synthetic {
        let (t, g) = synth::two_class(spec)?;
        (t, Some(g))
    } else {
        let path = cfg
            .path
            .as_ref()
            .expect("resolved config has a data source");
        inputs.push(path.clone());
        let graph = graph_file.as_ref().expect("resolved config has a graph");
        let schema = TableSchema {
            parameters: graph.parameter_names(),
            target: cfg.target.clone(),
            label: cfg.label.clone(),
            regimes: cfg.regimes.clone(),
        };
        (load_csv(path, &schema)?, None)
    };
    let mut table = if cfg.exclude.is_empty() {
        table
    } else {
        table.exclude_rows(&cfg.exclude)?
    };
    let mut threshold = None;
    if table.labels().is_none() {
        if table.target().is_none() {
            return Err(Error::Config(
                "dataset needs a label column or a target column to threshold".into(),
            ));
        }
        let t = match cfg.threshold {
            Threshold::Value(v) => v,
            Threshold::Mode(_) => gap_threshold(&table.finite_target_values())?.threshold,
        };
        let (labelled, report) = table.binarize(t)?;
        if report.single_class {
            return Err(Error::Data(format!(
                "threshold {t} puts every row in one class"
            )));
        }
        table = labelled;
        threshold = Some(t);
    }
    let spec = match (graph_file, generated) {
        (Some(g), _) => g.resolve(table.param_names())?,
        (None, Some(g)) => g,
        (None, None) => unreachable!("file data always has a graph"),
    };
    spec.validate(table.n_params(), true)
        .map_err(Error::Graph)?;
    Ok(Loaded {
        table,
        spec,
        inputs,
        threshold,
    })
}
