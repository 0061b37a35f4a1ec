use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::binarize::{BinarizeConfig, UMode};
use crate::data::AugmentSpec;
use crate::error::{Error, Result};
use crate::optim::{Milestone, SgdwConfig};
use crate::tensor::PoolMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }
}

/// Milestone list given either by preset name or explicitly.
#[derive(Clone, Debug, PartialEq)]
pub enum MilestoneSpec {
    /// 0.1, 0.25, 0.4, 0.55, 0.7, 0.85 with factor 0.3.
    Binary,
    /// 1/3 and 2/3 with factor 0.1.
    FullPrecision,
    List(Vec<Milestone>),
}

impl MilestoneSpec {
    pub fn resolve(&self) -> Vec<Milestone> {
        match self {
            MilestoneSpec::Binary => SgdwConfig::binary_milestones(),
            MilestoneSpec::FullPrecision => SgdwConfig::full_precision_milestones(),
            MilestoneSpec::List(v) => v.clone(),
        }
    }
}

impl fmt::Display for MilestoneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MilestoneSpec::Binary => write!(f, "binary"),
            MilestoneSpec::FullPrecision => write!(f, "full_precision"),
            MilestoneSpec::List(v) => {
                let items: Vec<String> = v.iter().map(|m| format!("{}:{}", m.fraction, m.factor)).collect();
                write!(f, "{}", if items.is_empty() { "none".to_string() } else { items.join(",") })
            }
        }
    }
}

impl FromStr for MilestoneSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(MilestoneSpec::Binary),
            "full_precision" => Ok(MilestoneSpec::FullPrecision),
            "none" => Ok(MilestoneSpec::List(Vec::new())),
            list => list
                .split(',')
                .map(|item| {
                    let (f, k) = item
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("milestone {item:?} is not fraction:factor")))?;
                    Ok(Milestone {
                        fraction: parse_num(f.trim(), "milestones")?,
                        factor: parse_num(k.trim(), "milestones")?,
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(MilestoneSpec::List),
        }
    }
}

/// Everything a training, evaluation or export run needs.
///
/// Read from a flat `key = value` file (`#` starts a comment) with optional
/// overrides. The defaults are the LeNet5 1-bit MNIST setting: batch 100,
/// 200 epochs, lr 0.01, weight decay 1e-3, `t_alpha` 0.9.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub architecture: String,
    /// Pooling in the LeNet5 subsampling layers.
    pub pool: PoolMode,
    pub bits: u32,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    /// `None` picks 1e-3 for 1-bit and 1e-4 for 32-bit runs.
    pub wd0: Option<f64>,
    pub momentum: f64,
    pub warmup_epochs: u32,
    /// `None` picks the milestone list matching `bits`.
    pub milestones: Option<MilestoneSpec>,
    pub t_alpha: f64,
    pub zeta_initial: f64,
    pub zeta_final: f64,
    pub zeta_ramp_start: f64,
    pub u_mode: UMode,
    /// `None` augments CIFAR-10 with the basic spec and leaves MNIST alone.
    pub augment: Option<bool>,
    pub standardize: bool,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Use only the first N training / test samples; 0 means all.
    pub train_limit: usize,
    pub test_limit: usize,
    /// Model file read by eval, export and infer.
    pub model: Option<PathBuf>,
    /// Destination of export; defaults to `model.bwn` in `output_dir`.
    pub export_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetKind::Mnist,
            data_dir: PathBuf::from("data/mnist"),
            architecture: "lenet5".into(),
            pool: PoolMode::Max,
            bits: 1,
            batch_size: 100,
            epochs: 200,
            lr0: 0.01,
            wd0: None,
            momentum: 0.9,
            warmup_epochs: 5,
            milestones: None,
            t_alpha: 0.9,
            zeta_initial: 1.0,
            zeta_final: 12.0,
            zeta_ramp_start: 0.9,
            u_mode: UMode::Identity,
            augment: None,
            standardize: false,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            train_limit: 0,
            test_limit: 0,
            model: None,
            export_path: None,
        }
    }
}

/// Keys accepted in config files and overrides, in documentation order.
pub const CONFIG_KEYS: &[&str] = &[
    "preset",
    "dataset",
    "data_dir",
    "architecture",
    "pool",
    "bits",
    "batch_size",
    "epochs",
    "lr0",
    "wd0",
    "momentum",
    "warmup_epochs",
    "milestones",
    "t_alpha",
    "zeta_initial",
    "zeta_final",
    "zeta_ramp_start",
    "u_mode",
    "augment",
    "standardize",
    "seed",
    "output_dir",
    "train_limit",
    "test_limit",
    "model",
    "export_path",
];

fn parse_num<T: FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(v: &str, key: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are ignored;
/// a repeated key keeps the last value.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Desk-scale preset: the defaults with 10 epochs.
    pub fn desk() -> Self {
        RunConfig {
            epochs: 10,
            ..Default::default()
        }
    }

    /// Builds a config from key/value pairs. `preset` is applied first, then
    /// every other key in order.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut map: BTreeMap<&str, &str> = BTreeMap::new();
        for (k, v) in pairs {
            if !CONFIG_KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
            map.insert(k, v);
        }
        let mut cfg = match map.get("preset").copied() {
            None | Some("table") => RunConfig::default(),
            Some("desk") => RunConfig::desk(),
            Some(other) => return Err(Error::Config(format!("unknown preset {other:?} (expected table or desk)"))),
        };
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and applies `overrides` on top.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => parse_key_values(&fs::read_to_string(p).map_err(|e| Error::path(p, e))?)?,
            None => Vec::new(),
        };
        pairs.extend_from_slice(overrides);
        Self::from_pairs(&pairs)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "preset" => {}
            "dataset" => {
                self.dataset = match v {
                    "mnist" => DatasetKind::Mnist,
                    "cifar10" => DatasetKind::Cifar10,
                    _ => return Err(Error::Config(format!("dataset: unknown {v:?} (expected mnist or cifar10)"))),
                }
            }
            "data_dir" => self.data_dir = PathBuf::from(v),
            "architecture" => self.architecture = v.to_string(),
            "pool" => {
                self.pool = match v {
                    "max" => PoolMode::Max,
                    "avg" => PoolMode::Avg,
                    _ => return Err(Error::Config(format!("pool: expected max or avg, got {v:?}"))),
                }
            }
            "bits" => self.bits = parse_num(v, key)?,
            "batch_size" => self.batch_size = parse_num(v, key)?,
            "epochs" => self.epochs = parse_num(v, key)?,
            "lr0" => self.lr0 = parse_num(v, key)?,
            "wd0" => self.wd0 = Some(parse_num(v, key)?),
            "momentum" => self.momentum = parse_num(v, key)?,
            "warmup_epochs" => self.warmup_epochs = parse_num(v, key)?,
            "milestones" => self.milestones = Some(v.parse()?),
            "t_alpha" => self.t_alpha = parse_num(v, key)?,
            "zeta_initial" => self.zeta_initial = parse_num(v, key)?,
            "zeta_final" => self.zeta_final = parse_num(v, key)?,
            "zeta_ramp_start" => self.zeta_ramp_start = parse_num(v, key)?,
            "u_mode" => self.u_mode = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "augment" => {
                self.augment = match v {
                    "none" => Some(false),
                    "basic" => Some(true),
                    _ => Some(parse_bool(v, key)?),
                }
            }
            "standardize" => self.standardize = parse_bool(v, key)?,
            "seed" => self.seed = parse_num(v, key)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "train_limit" => self.train_limit = parse_num(v, key)?,
            "test_limit" => self.test_limit = parse_num(v, key)?,
            "model" => self.model = Some(PathBuf::from(v)),
            "export_path" => self.export_path = Some(PathBuf::from(v)),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits != 1 && self.bits != 32 {
            return Err(Error::Config(format!("bits must be 1 or 32, got {}", self.bits)));
        }
        if self.architecture != "lenet5" {
            return Err(Error::Config(format!(
                "architecture {:?} is not available (expected lenet5)",
                self.architecture
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        self.sgdw().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.binarize().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn resolved_wd0(&self) -> f64 {
        self.wd0.unwrap_or(if self.bits == 1 { 1e-3 } else { 1e-4 })
    }

    pub fn resolved_milestones(&self) -> MilestoneSpec {
        self.milestones.clone().unwrap_or(if self.bits == 1 {
            MilestoneSpec::Binary
        } else {
            MilestoneSpec::FullPrecision
        })
    }

    pub fn sgdw(&self) -> SgdwConfig {
        SgdwConfig {
            lr0: self.lr0,
            momentum: self.momentum,
            wd0: self.resolved_wd0(),
            warmup_epochs: self.warmup_epochs,
            milestones: self.resolved_milestones().resolve(),
        }
    }

    pub fn binarize(&self) -> BinarizeConfig {
        BinarizeConfig {
            zeta_initial: self.zeta_initial,
            zeta_final: self.zeta_final,
            zeta_ramp_start_fraction: self.zeta_ramp_start,
            t_alpha: self.t_alpha,
            u_mode: self.u_mode,
        }
    }

    pub fn augment_spec(&self) -> AugmentSpec {
        let on = self.augment.unwrap_or(self.dataset == DatasetKind::Cifar10);
        if on {
            AugmentSpec::basic()
        } else {
            AugmentSpec::none()
        }
    }

    /// Resolved settings as `key = value` lines, readable by [`RunConfig::load`].
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("dataset = {}", self.dataset.name()),
            format!("data_dir = {}", self.data_dir.display()),
            format!("architecture = {}", self.architecture),
            format!("pool = {}", if self.pool == PoolMode::Max { "max" } else { "avg" }),
            format!("bits = {}", self.bits),
            format!("batch_size = {}", self.batch_size),
            format!("epochs = {}", self.epochs),
            format!("lr0 = {}", self.lr0),
            format!("wd0 = {}", self.resolved_wd0()),
            format!("momentum = {}", self.momentum),
            format!("warmup_epochs = {}", self.warmup_epochs),
            format!("milestones = {}", self.resolved_milestones()),
            format!("t_alpha = {}", self.t_alpha),
            format!("zeta_initial = {}", self.zeta_initial),
            format!("zeta_final = {}", self.zeta_final),
            format!("zeta_ramp_start = {}", self.zeta_ramp_start),
            format!("u_mode = {}", self.u_mode.name()),
            format!("augment = {}", if self.augment_spec().is_identity() { "none" } else { "basic" }),
            format!("standardize = {}", self.standardize),
            format!("seed = {}", self.seed),
            format!("output_dir = {}", self.output_dir.display()),
            format!("train_limit = {}", self.train_limit),
            format!("test_limit = {}", self.test_limit),
        ];
        if let Some(m) = &self.model {
            lines.push(format!("model = {}", m.display()));
        }
        if let Some(m) = &self.export_path {
            lines.push(format!("export_path = {}", m.display()));
        }
        lines.join("\n") + "\n"
    }
}
