//! TOML experiment configuration with defaults, validation and overrides.
//!
//! Precedence is command-line overrides, then file values, then defaults.
//! Every error names the offending key.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Augment, DatasetKind};
use crate::distributions::DistKind;
use crate::masked::{Arch, ArchSpec};
use crate::optim::Schedule;
use crate::randomize::RandomizeMode;
use crate::training::{Method, TrainParams};

/// Environment variable that overrides the dataset root directory.
pub const DATA_ROOT_ENV: &str = "ITERAND_DATA_ROOT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    Type { key: String, msg: String },
    #[error("`{key}` {msg}")]
    Constraint { key: String, msg: String },
}

impl ConfigError {
    /// The key an error refers to, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey(k) => Some(k),
            ConfigError::Type { key, .. } | ConfigError::Constraint { key, .. } => Some(key),
            _ => None,
        }
    }
}

fn constraint(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Constraint {
        key: key.into(),
        msg: msg.into(),
    }
}

/// Initial learning rate of weight training.
pub const DEFAULT_ETA0_SGD: f64 = 0.1;
/// Initial learning rate of score training.
pub const DEFAULT_ETA0_MASK: f64 = 2.0;

/// Parameter distribution names accepted in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamDist {
    /// Kaiming uniform.
    Ku,
    /// Signed Kaiming constant.
    Sc,
}

impl ParamDist {
    pub fn kind(self) -> DistKind {
        match self {
            ParamDist::Ku => DistKind::KaimingUniform,
            ParamDist::Sc => DistKind::SignedKaimingConstant,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamDist::Ku => "ku",
            ParamDist::Sc => "sc",
        }
    }
}

/// Axis varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Rho,
    P,
    KPer,
    R,
}

impl SweepAxis {
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::Rho => "rho",
            SweepAxis::P => "p",
            SweepAxis::KPer => "k_per",
            SweepAxis::R => "r",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Methods run at every point; empty means just the top-level `method`.
    pub methods: Vec<Method>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Rho,
            values: vec![0.25, 0.5, 1.0, 2.0],
            methods: vec![Method::EdgePopup, Method::Iterand],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub arch: Arch,
    /// Width factor.
    pub rho: f64,
    /// Sparsity rate.
    pub p: f64,
    pub dist_param: ParamDist,
    pub dataset: DatasetKind,
    /// Directory holding `mnist/` or `cifar-10-batches-bin/`.
    pub data_root: PathBuf,
    pub epochs: usize,
    pub batch: usize,
    /// Unset means 0.1 for `sgd` and 2.0 for the mask-learning methods.
    pub eta0: Option<f64>,
    pub lambda: f64,
    pub mu: f64,
    pub schedule: Schedule,
    pub randomize: RandomizeMode,
    /// Randomization period in steps; unset means one epoch.
    pub k_per: Option<usize>,
    pub r: f64,
    pub seeds: Vec<u64>,
    /// Fraction of the training set held out for validation; 0 disables it.
    pub val_fraction: f64,
    /// Unset means flip+crop for CIFAR-10 and none for MNIST.
    pub augment: Option<Augment>,
    /// Unset means on for conv nets and off for the MLP.
    pub batchnorm: Option<bool>,
    /// Required to run conv6.
    pub long_run: bool,
    pub output: PathBuf,
    /// Write a checkpoint per run under `<output>/checkpoints`.
    pub save_checkpoints: bool,
    pub jobs: usize,
    pub sweep: Option<SweepSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Iterand,
            arch: Arch::Mlp,
            rho: 1.0,
            p: 0.5,
            dist_param: ParamDist::Sc,
            dataset: DatasetKind::Mnist,
            data_root: PathBuf::from("data"),
            epochs: 3,
            batch: 128,
            eta0: None,
            lambda: 1e-4,
            mu: 0.9,
            schedule: Schedule::Cosine,
            randomize: RandomizeMode::Partial,
            k_per: None,
            r: 0.1,
            seeds: vec![0],
            val_fraction: 0.1,
            augment: None,
            batchnorm: None,
            long_run: false,
            output: PathBuf::from("runs"),
            save_checkpoints: false,
            jobs: 1,
            sweep: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(constraint("rho", format!("must be positive, got {}", self.rho)));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(constraint("p", format!("must lie in [0, 1), got {}", self.p)));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(constraint("r", format!("must lie in [0, 1], got {}", self.r)));
        }
        if self.k_per == Some(0) {
            return Err(constraint("k_per", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(constraint("epochs", "must be at least 1"));
        }
        if self.batch < 2 {
            return Err(constraint("batch", format!("must be at least 2, got {}", self.batch)));
        }
        for (key, v) in [("eta0", self.eta0()), ("lambda", self.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(constraint(key, format!("must be finite and non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(constraint("mu", format!("must lie in [0, 1), got {}", self.mu)));
        }
        if self.method == Method::Iterand && self.randomize == RandomizeMode::Off {
            return Err(constraint("randomize", "must be naive or partial for method iterand"));
        }
        if self.seeds.is_empty() {
            return Err(constraint("seeds", "must list at least one seed"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(constraint(
                "val_fraction",
                format!("must lie in [0, 1), got {}", self.val_fraction),
            ));
        }
        if self.arch == Arch::Conv6 && !self.long_run {
            return Err(constraint("arch", "conv6 needs long_run = true"));
        }
        if self.jobs == 0 {
            return Err(constraint("jobs", "must be at least 1"));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(constraint("sweep.values", "must not be empty"));
            }
            for &v in &sweep.values {
                let mut probe = self.clone();
                probe.sweep = None;
                probe.apply_axis(sweep.axis, v).map_err(|e| match e {
                    ConfigError::Constraint { msg, .. } => constraint("sweep.values", msg),
                    other => other,
                })?;
                probe.validate().map_err(|e| match e {
                    ConfigError::Constraint { key, msg } => constraint("sweep.values", format!("({key}) {msg}")),
                    other => other,
                })?;
            }
        }
        Ok(())
    }

    /// Sets the swept field to `value`.
    pub fn apply_axis(&mut self, axis: SweepAxis, value: f64) -> Result<(), ConfigError> {
        match axis {
            SweepAxis::Rho => self.rho = value,
            SweepAxis::P => self.p = value,
            SweepAxis::R => self.r = value,
            SweepAxis::KPer => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(constraint("k_per", format!("must be a positive integer, got {value}")));
                }
                self.k_per = Some(value as usize);
            }
        }
        Ok(())
    }

    pub fn eta0(&self) -> f64 {
        self.eta0.unwrap_or(match self.method {
            Method::Sgd => DEFAULT_ETA0_SGD,
            Method::EdgePopup | Method::Iterand => DEFAULT_ETA0_MASK,
        })
    }

    pub fn augment(&self) -> Augment {
        self.augment.unwrap_or(match self.dataset {
            DatasetKind::Mnist => Augment::None,
            DatasetKind::Cifar10 => Augment::FlipCrop,
        })
    }

    pub fn arch_spec(&self) -> ArchSpec {
        let mut spec = ArchSpec::new(
            self.arch,
            self.rho,
            self.dataset.image_shape(),
            10,
            self.dist_param.kind(),
            self.p,
        );
        if let Some(bn) = self.batchnorm {
            spec.batchnorm = bn;
        }
        spec
    }

    pub fn train_params(&self, seed: u64) -> TrainParams {
        TrainParams {
            method: self.method,
            arch: self.arch_spec(),
            epochs: self.epochs,
            batch: self.batch,
            eta0: self.eta0(),
            lambda: self.lambda,
            mu: self.mu,
            schedule: self.schedule,
            randomize: self.randomize,
            r: self.r,
            k_per: self.k_per,
            augment: self.augment(),
            seed,
        }
    }

    /// Dataset directory: `$ITERAND_DATA_ROOT` if set, else `data_root`,
    /// joined with the dataset's subdirectory.
    pub fn dataset_dir(&self) -> PathBuf {
        let root = std::env::var_os(DATA_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.data_root.clone());
        root.join(self.dataset.default_dir())
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let cfg: Self = parse_toml(text, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        Self::from_toml(&read_config(path)?, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn read_config(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses one `key=value` override; the value is TOML, falling back to a bare string.
fn parse_override(item: &str) -> Result<(Vec<String>, toml::Value), ConfigError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| ConfigError::Syntax(format!("override `{item}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), ConfigError> {
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut cur = table;
    for (i, part) in parents.iter().enumerate() {
        let entry = cur
            .entry(part.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::Type {
            key: path[..=i].join("."),
            msg: "is not a table".into(),
        })?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Locates the key responsible for a deserialization failure by retrying
/// with one top-level key at a time.
fn blame<T: DeserializeOwned>(table: &toml::Table, err: toml::de::Error) -> ConfigError {
    for (key, value) in table {
        let mut single = toml::Table::new();
        single.insert(key.clone(), value.clone());
        if let Err(e) = toml::Value::Table(single).try_into::<T>() {
            let msg = e.message().to_string();
            if let Some(unknown) = msg.strip_prefix("unknown field `").and_then(|m| m.split('`').next()) {
                return ConfigError::UnknownKey(if unknown == key {
                    key.clone()
                } else {
                    format!("{key}.{unknown}")
                });
            }
            return ConfigError::Type { key: key.clone(), msg };
        }
    }
    ConfigError::Syntax(err.message().to_string())
}

/// Deserializes TOML `text` after applying `key=value` overrides; missing
/// keys take their defaults.
pub fn parse_toml<T: DeserializeOwned>(text: &str, overrides: &[String]) -> Result<T, ConfigError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    for item in overrides {
        let (path, value) = parse_override(item)?;
        set_path(&mut table, &path, value)?;
    }
    toml::Value::Table(table.clone())
        .try_into::<T>()
        .map_err(|e| blame::<T>(&table, e))
}
