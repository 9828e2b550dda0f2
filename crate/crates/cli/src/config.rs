//! JSON configuration documents, one per command.

use std::path::{Path, PathBuf};

use rbp_core::channel::ChannelSpec;
use rbp_core::data::{load_idx, synthetic_scalar, Dataset, MnistFiles, MomentSpec};
use rbp_core::dynamics::{GridSpec, Monitor, OdeSystem};
use rbp_core::net::Architecture;
use rbp_core::train::{ExperimentSpec, TrainConfig};
use rbp_core::SeededRng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub schema: u32,
    pub architecture: Architecture,
    pub channel: ChannelSpec,
    pub train: TrainConfig,
    pub data: DataSource,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Explicit IDX files. The test pair is optional.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default)]
        limit_train: Option<usize>,
        #[serde(default)]
        limit_test: Option<usize>,
    },
    /// The four standard MNIST files in `dir` (default `$RBP_MNIST_DIR`,
    /// then `data/mnist`).
    Mnist {
        #[serde(default)]
        dir: Option<PathBuf>,
        #[serde(default)]
        limit_train: Option<usize>,
        #[serde(default)]
        limit_test: Option<usize>,
    },
    /// Scalar regression pairs with exact second moments.
    Synthetic {
        moments: MomentSpec,
        examples: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsFile {
    pub schema: u32,
    pub system: OdeSystem,
    pub initial_state: Vec<f64>,
    #[serde(default)]
    pub integrate: IntegrateSection,
    /// Allowed componentwise gap between the RK4 endpoint and the prediction.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_tolerance() -> f64 {
    1e-6
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrateSection {
    pub dt: f64,
    pub t_max: f64,
    pub records: usize,
    pub monitors: Vec<Monitor>,
    pub stop_on_convergence: bool,
}

impl Default for IntegrateSection {
    fn default() -> Self {
        IntegrateSection {
            dt: 1e-3,
            t_max: 1e4,
            records: 1000,
            monitors: vec![Monitor::Product, Monitor::Error, Monitor::Conserved],
            stop_on_convergence: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldFile {
    pub schema: u32,
    pub system: OdeSystem,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Reads, parses and version-checks a config file.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    match value.get("schema").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA as u64 => {}
        Some(v) => return Err(CliError::Config(format!("{}: unsupported schema {v} (expected {SCHEMA})", path.display()))),
        None => return Err(CliError::Config(format!("{}: missing \"schema\": {SCHEMA}", path.display()))),
    }
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl TrainFile {
    pub fn spec(&self) -> ExperimentSpec {
        ExperimentSpec { arch: self.architecture.clone(), channel: self.channel.clone(), train: self.train.clone() }
    }

    /// Makes relative data paths absolute against `base` so the embedded
    /// config can be re-run from anywhere.
    pub fn resolve_paths(&mut self, base: &Path) {
        match &mut self.data {
            DataSource::Idx { train_images, train_labels, test_images, test_labels, .. } => {
                resolve(base, train_images);
                resolve(base, train_labels);
                for p in [test_images, test_labels].into_iter().flatten() {
                    resolve(base, p);
                }
            }
            DataSource::Mnist { dir, .. } => {
                let mut d = dir.clone().or_else(|| std::env::var_os("RBP_MNIST_DIR").map(PathBuf::from)).unwrap_or_else(|| "data/mnist".into());
                if dir.is_some() {
                    resolve(base, &mut d);
                } else if d.is_relative() {
                    d = std::env::current_dir().map(|c| c.join(&d)).unwrap_or(d);
                }
                *dir = Some(d);
            }
            DataSource::Synthetic { .. } => {}
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.spec().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if let DataSource::Synthetic { examples, .. } = &self.data {
            if *examples == 0 {
                return Err(CliError::Config("synthetic data needs at least one example".into()));
            }
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<(Dataset, Option<Dataset>), CliError> {
        let limit = |ds: Dataset, n: &Option<usize>| match n {
            Some(n) => ds.take(*n),
            None => ds,
        };
        Ok(match &self.data {
            DataSource::Idx { train_images, train_labels, test_images, test_labels, limit_train, limit_test } => {
                let train = limit(load_idx(train_images, train_labels)?, limit_train);
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some(limit(load_idx(i, l)?, limit_test)),
                    (None, None) => None,
                    _ => return Err(CliError::Config("test_images and test_labels must be given together".into())),
                };
                (train, test)
            }
            DataSource::Mnist { dir, limit_train, limit_test } => {
                let dir = dir.as_deref().expect("resolved before loading");
                let (train, test) = MnistFiles::in_dir(dir).load()?;
                (limit(train, limit_train), Some(limit(test, limit_test)))
            }
            DataSource::Synthetic { moments, examples, seed } => (synthetic_scalar(moments, *examples, &mut SeededRng::new(*seed))?, None),
        })
    }
}

impl DynamicsFile {
    pub fn validate(&self) -> Result<(), CliError> {
        self.system.validate()?;
        self.system.check_state(&self.initial_state)?;
        let i = &self.integrate;
        if !(i.dt > 0.0) || !(i.t_max > 0.0) || i.records == 0 {
            return Err(CliError::Config("integrate needs dt > 0, t_max > 0 and records >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(CliError::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

impl FieldFile {
    pub fn validate(&self) -> Result<(), CliError> {
        self.system.validate()?;
        let g = &self.grid;
        if g.n_a1 < 2 || g.n_a2 < 2 || !(g.a1_max > g.a1_min) || !(g.a2_max > g.a2_min) {
            return Err(CliError::Config("grid needs at least 2 nodes per axis and max > min".into()));
        }
        Ok(())
    }
}
