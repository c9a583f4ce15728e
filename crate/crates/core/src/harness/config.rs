//! Experiment configuration as a plain-text `key = value` file.
//!
//! Blank lines and `#` comments are ignored; unknown keys are rejected. Every
//! key has a default, and [`ExperimentConfig::to_text`] writes all of them so
//! a run directory always records the full configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::clustering::{ClusterMode, KMeansParams};
use crate::error::{Error, Result};
use crate::harness::data::AugmentSettings;
use crate::losses::LossWeights;
use crate::model::{Activation, EncoderConfig, HeadConfig, MixtureHeadConfig, ModelConfig, ProjectionConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Single,
    Mixture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClusterSelection {
    Random,
    Mixem,
    MaxComponent,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalizeSelection {
    On,
    Off,
    Both,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,

    // Synthetic data, used when no feature file is supplied.
    pub data_classes: usize,
    pub data_per_class: usize,
    pub data_dim: usize,
    pub data_separation: f64,
    pub data_seed: u64,

    pub hidden_dims: Vec<usize>,
    pub representation_dim: usize,
    pub activation: Activation,
    pub head: HeadKind,
    /// 0 means "one component per class".
    pub num_components: usize,
    pub embedding_dim: usize,
    pub head_hidden_dim: usize,

    pub weights: LossWeights,

    pub learning_rate: f64,
    pub momentum: f64,
    pub steps: usize,
    /// Source samples per step; each contributes two views.
    pub batch_size: usize,
    /// Steps trained with the warm-up head and contrastive loss only.
    pub warmup_steps: usize,

    pub augment: AugmentSettings,

    pub cluster_mode: ClusterSelection,
    pub normalize: NormalizeSelection,
    pub restarts: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,

    pub test_fraction: f64,
    /// Train on the train split only instead of train + test.
    pub holdout_test: bool,

    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            data_classes: 4,
            data_per_class: 200,
            data_dim: 16,
            data_separation: 8.0,
            data_seed: 0,
            hidden_dims: vec![64],
            representation_dim: 32,
            activation: Activation::Relu,
            head: HeadKind::Mixture,
            num_components: 0,
            embedding_dim: 16,
            head_hidden_dim: 32,
            // The auxiliary terms are sums over the 2N views of a batch, so
            // their weights sit near 1/(2N) of the contrastive scale.
            weights: LossWeights {
                comp_entropy: 1.0,
                inst_entropy: 0.005,
                push: 0.001,
                pull: 0.001,
                temperature: 0.5,
            },
            learning_rate: 0.01,
            momentum: 0.9,
            steps: 1000,
            batch_size: 64,
            warmup_steps: 0,
            augment: AugmentSettings {
                noise_std: 0.5,
                mask_prob: 0.0,
            },
            cluster_mode: ClusterSelection::All,
            normalize: NormalizeSelection::Both,
            restarts: 10,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-6,
            test_fraction: 0.2,
            holdout_test: false,
            output_dir: PathBuf::from("run"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::contract(format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::contract(format!("`{key}` expects true/false, got `{value}`"))),
    }
}

impl FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(HeadKind::Single),
            "mixture" => Ok(HeadKind::Mixture),
            _ => Err(Error::contract(format!("head must be single or mixture, got `{s}`"))),
        }
    }
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Single => "single",
            HeadKind::Mixture => "mixture",
        }
    }
}

impl FromStr for ClusterSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans-random" => Ok(ClusterSelection::Random),
            "kmeans-mixem" => Ok(ClusterSelection::Mixem),
            "max-component" => Ok(ClusterSelection::MaxComponent),
            "all" => Ok(ClusterSelection::All),
            _ => Err(Error::contract(format!(
                "cluster_mode must be kmeans-random, kmeans-mixem, max-component or all, got `{s}`"
            ))),
        }
    }
}

impl ClusterSelection {
    pub fn name(self) -> &'static str {
        match self {
            ClusterSelection::Random => "kmeans-random",
            ClusterSelection::Mixem => "kmeans-mixem",
            ClusterSelection::MaxComponent => "max-component",
            ClusterSelection::All => "all",
        }
    }
}

impl FromStr for NormalizeSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" | "on" => Ok(NormalizeSelection::On),
            "false" | "off" => Ok(NormalizeSelection::Off),
            "both" => Ok(NormalizeSelection::Both),
            _ => Err(Error::contract(format!("normalize must be on, off or both, got `{s}`"))),
        }
    }
}

impl NormalizeSelection {
    pub fn name(self) -> &'static str {
        match self {
            NormalizeSelection::On => "on",
            NormalizeSelection::Off => "off",
            NormalizeSelection::Both => "both",
        }
    }

    pub fn flags(self) -> &'static [bool] {
        match self {
            NormalizeSelection::On => &[true],
            NormalizeSelection::Off => &[false],
            NormalizeSelection::Both => &[false, true],
        }
    }
}

/// Requested evaluation: a clustering mode and whether rows are normalized first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalMode {
    pub cluster: ClusterMode,
    pub normalize: bool,
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::contract(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::contract(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data_classes" => self.data_classes = parse(key, v)?,
            "data_per_class" => self.data_per_class = parse(key, v)?,
            "data_dim" => self.data_dim = parse(key, v)?,
            "data_separation" => self.data_separation = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "hidden_dims" => {
                self.hidden_dims = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_>>()?
                }
            }
            "representation_dim" => self.representation_dim = parse(key, v)?,
            "activation" => self.activation = parse(key, v)?,
            "head" => self.head = parse(key, v)?,
            "num_components" => self.num_components = parse(key, v)?,
            "embedding_dim" => self.embedding_dim = parse(key, v)?,
            "head_hidden_dim" => self.head_hidden_dim = parse(key, v)?,
            "temperature" => self.weights.temperature = parse(key, v)?,
            "lambda_comp_entropy" => self.weights.comp_entropy = parse(key, v)?,
            "lambda_inst_entropy" => self.weights.inst_entropy = parse(key, v)?,
            "lambda_push" => self.weights.push = parse(key, v)?,
            "lambda_pull" => self.weights.pull = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "warmup_steps" => self.warmup_steps = parse(key, v)?,
            "noise_std" => self.augment.noise_std = parse(key, v)?,
            "mask_prob" => self.augment.mask_prob = parse(key, v)?,
            "cluster_mode" => self.cluster_mode = parse(key, v)?,
            "normalize" => self.normalize = parse(key, v)?,
            "restarts" => self.restarts = parse(key, v)?,
            "kmeans_max_iter" => self.kmeans_max_iter = parse(key, v)?,
            "kmeans_tol" => self.kmeans_tol = parse(key, v)?,
            "test_fraction" => self.test_fraction = parse(key, v)?,
            "holdout_test" => self.holdout_test = parse_bool(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(Error::contract(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order. Floats use the
    /// shortest representation that parses back to the same bits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("seed", self.seed.to_string());
        kv("data_classes", self.data_classes.to_string());
        kv("data_per_class", self.data_per_class.to_string());
        kv("data_dim", self.data_dim.to_string());
        kv("data_separation", self.data_separation.to_string());
        kv("data_seed", self.data_seed.to_string());
        kv(
            "hidden_dims",
            self.hidden_dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("representation_dim", self.representation_dim.to_string());
        kv("activation", self.activation.name().to_string());
        kv("head", self.head.name().to_string());
        kv("num_components", self.num_components.to_string());
        kv("embedding_dim", self.embedding_dim.to_string());
        kv("head_hidden_dim", self.head_hidden_dim.to_string());
        kv("temperature", self.weights.temperature.to_string());
        kv("lambda_comp_entropy", self.weights.comp_entropy.to_string());
        kv("lambda_inst_entropy", self.weights.inst_entropy.to_string());
        kv("lambda_push", self.weights.push.to_string());
        kv("lambda_pull", self.weights.pull.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("momentum", self.momentum.to_string());
        kv("steps", self.steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("warmup_steps", self.warmup_steps.to_string());
        kv("noise_std", self.augment.noise_std.to_string());
        kv("mask_prob", self.augment.mask_prob.to_string());
        kv("cluster_mode", self.cluster_mode.name().to_string());
        kv("normalize", self.normalize.name().to_string());
        kv("restarts", self.restarts.to_string());
        kv("kmeans_max_iter", self.kmeans_max_iter.to_string());
        kv("kmeans_tol", self.kmeans_tol.to_string());
        kv("test_fraction", self.test_fraction.to_string());
        kv("holdout_test", self.holdout_test.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::contract(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.steps == 0 {
            return Err(Error::contract("steps must be >= 1"));
        }
        if self.warmup_steps > self.steps {
            return Err(Error::contract(format!(
                "warmup_steps ({}) exceeds steps ({})",
                self.warmup_steps, self.steps
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::contract(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.restarts == 0 {
            return Err(Error::contract("restarts must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::contract(format!("test_fraction must be in [0, 1), got {}", self.test_fraction)));
        }
        if self.holdout_test && self.test_fraction == 0.0 {
            return Err(Error::contract("holdout_test needs test_fraction > 0"));
        }
        self.weights.validate()?;
        self.augment.validate()
    }

    /// Components for a dataset with `class_count` classes (when known).
    pub fn components_for(&self, class_count: Option<usize>) -> Result<usize> {
        match (self.num_components, class_count) {
            (0, Some(c)) => Ok(c.max(1)),
            (0, None) => Err(Error::contract(
                "num_components = 0 means one per class, but the dataset has no labels",
            )),
            (m, _) => Ok(m),
        }
    }

    pub fn model_config(&self, input_dim: usize, class_count: Option<usize>) -> Result<ModelConfig> {
        let head = match self.head {
            HeadKind::Single => HeadConfig::Single(ProjectionConfig {
                embedding_dim: self.embedding_dim,
                hidden_dim: self.head_hidden_dim,
            }),
            HeadKind::Mixture => HeadConfig::Mixture(MixtureHeadConfig {
                num_components: self.components_for(class_count)?,
                embedding_dim: self.embedding_dim,
                hidden_dim: self.head_hidden_dim,
            }),
        };
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                input_dim,
                hidden_dims: self.hidden_dims.clone(),
                representation_dim: self.representation_dim,
                activation: self.activation,
            },
            base_head: (self.warmup_steps > 0).then_some(ProjectionConfig {
                embedding_dim: self.embedding_dim,
                hidden_dim: self.head_hidden_dim,
            }),
            head,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kmeans_params(&self) -> KMeansParams {
        KMeansParams {
            max_iter: self.kmeans_max_iter,
            tol: self.kmeans_tol,
        }
    }

    /// Evaluation modes selected by `cluster_mode` and `normalize`. Modes that
    /// need mixture components are skipped for single-head models under `all`
    /// and rejected when requested explicitly.
    pub fn eval_modes(&self, has_mixture: bool) -> Result<Vec<EvalMode>> {
        let random = ClusterMode::RandomRestart {
            restarts: self.restarts,
            seed: self.seed,
        };
        let clusters = match self.cluster_mode {
            ClusterSelection::Random => vec![random],
            ClusterSelection::Mixem => vec![ClusterMode::MixemInit],
            ClusterSelection::MaxComponent => vec![ClusterMode::MaxComponent],
            ClusterSelection::All if has_mixture => vec![random, ClusterMode::MixemInit, ClusterMode::MaxComponent],
            ClusterSelection::All => vec![random],
        };
        if !has_mixture && clusters.iter().any(|c| !matches!(c, ClusterMode::RandomRestart { .. })) {
            return Err(Error::contract(format!(
                "cluster_mode {} needs a mixture head",
                self.cluster_mode.name()
            )));
        }
        Ok(clusters
            .into_iter()
            .flat_map(|cluster| {
                self.normalize
                    .flags()
                    .iter()
                    .map(move |&normalize| EvalMode { cluster, normalize })
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.learning_rate = 0.1 + 0.2;
        cfg.hidden_dims = vec![7, 3];
        cfg.head = HeadKind::Single;
        cfg.holdout_test = true;
        let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_defaults_and_errors() {
        let cfg = ExperimentConfig::from_text("# header\n\nsteps = 3   # short\nwarmup_steps = 1\n").unwrap();
        assert_eq!(cfg.steps, 3);
        assert_eq!(cfg.batch_size, ExperimentConfig::default().batch_size);
        assert!(ExperimentConfig::from_text("bogus = 1").is_err());
        assert!(ExperimentConfig::from_text("steps").is_err());
        assert!(ExperimentConfig::from_text("steps = 0").is_err());
        assert!(ExperimentConfig::from_text("batch_size = 1").is_err());
        assert!(ExperimentConfig::from_text("steps = x").is_err());
        assert!(ExperimentConfig::from_text("hidden_dims =").unwrap().hidden_dims.is_empty());
    }

    #[test]
    fn every_key_is_echoed() {
        let text = ExperimentConfig::default().to_text();
        let mut cfg = ExperimentConfig::default();
        for line in text.lines() {
            let (k, v) = line.split_once(" = ").unwrap();
            cfg.set(k, v).unwrap();
        }
        assert_eq!(text.lines().count(), 33);
    }

    #[test]
    fn eval_mode_selection() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.eval_modes(true).unwrap().len(), 6);
        assert_eq!(cfg.eval_modes(false).unwrap().len(), 2);
        let mut c = cfg.clone();
        c.cluster_mode = ClusterSelection::Mixem;
        assert!(c.eval_modes(false).is_err());
    }

    #[test]
    fn components_default_to_class_count() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.components_for(Some(5)).unwrap(), 5);
        assert!(cfg.components_for(None).is_err());
    }
}
