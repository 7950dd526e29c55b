//! Experiment configuration: flat `key = value` text, `#` comments, every key
//! also settable from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::store::{SyntheticSpec, DEFAULT_TEMPERATURE};
use crate::strategies::{CecParams, StrategyKind};
use crate::trainer::TrainConfig;

/// Relative class weights of the default synthetic mixture.
pub const DEFAULT_SYNTH_WEIGHTS: [f64; 10] = [10.0, 10.0, 10.0, 10.0, 10.0, 5.0, 5.0, 2.0, 1.0, 1.0];

/// Synthetic train/test data drawn from one mixture; the first `n_train`
/// samples train, the next `n_test` evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSource {
    pub num_classes: usize,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Relative weights; normalized when the mixture is drawn.
    pub weights: Vec<f64>,
    pub spread: f64,
    pub outlier_fraction: f64,
    pub head_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        Self {
            num_classes: DEFAULT_SYNTH_WEIGHTS.len(),
            dim: 32,
            n_train: 5000,
            n_test: 1000,
            weights: DEFAULT_SYNTH_WEIGHTS.to_vec(),
            spread: 0.3,
            outlier_fraction: 0.0,
            head_noise: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSource {
    pub fn spec(&self) -> Result<SyntheticSpec> {
        if self.weights.len() != self.num_classes {
            return Err(Error::Config(format!(
                "synth_weights has {} entries but synth_classes = {}",
                self.weights.len(),
                self.num_classes
            )));
        }
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0) || self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("synth_weights must be nonnegative with a positive sum".into()));
        }
        Ok(SyntheticSpec {
            num_classes: self.num_classes,
            dim: self.dim,
            n: self.n_train + self.n_test,
            class_weights: self.weights.iter().map(|w| w / total).collect(),
            cluster_spread: self.spread,
            outlier_fraction: self.outlier_fraction,
            head_noise: self.head_noise,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileSource {
    pub train: PathBuf,
    pub test: PathBuf,
    pub class_head: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSource),
    Files(FileSource),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlConfig {
    pub rounds: usize,
    pub budget_fraction: f64,
    pub strategy: StrategyKind,
    /// Strategies for `compare`.
    pub strategies: Vec<StrategyKind>,
    pub params: CecParams,
    pub temperature: f64,
    /// Training recipe; its seed is replaced per run and round.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub synthetic: SyntheticSource,
    pub train_embeddings: Option<PathBuf>,
    pub test_embeddings: Option<PathBuf>,
    pub class_head: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            rounds: 6,
            budget_fraction: 0.01,
            strategy: StrategyKind::Cec,
            strategies: vec![StrategyKind::Random, StrategyKind::Entropy, StrategyKind::Cec],
            params: CecParams::default(),
            temperature: DEFAULT_TEMPERATURE,
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2],
            synthetic: SyntheticSource::default(),
            train_embeddings: None,
            test_embeddings: None,
            class_head: None,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected a boolean, got {other:?}"))),
    }
}

/// Every key the config file and the command line accept.
pub const KEYS: &[&str] = &[
    "rounds",
    "budget_fraction",
    "strategy",
    "strategies",
    "top_n",
    "knn_k",
    "alpha",
    "temperature",
    "seeds",
    "epochs",
    "lr",
    "momentum",
    "weight_decay",
    "batch_size",
    "cosine",
    "train_embeddings",
    "test_embeddings",
    "class_head",
    "out",
    "synth_classes",
    "synth_dim",
    "synth_train",
    "synth_test",
    "synth_weights",
    "synth_spread",
    "synth_outliers",
    "synth_head_noise",
    "synth_seed",
];

impl AlConfig {
    /// Sets one key; dashes and underscores are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        match k {
            "rounds" => self.rounds = parse(k, value)?,
            "budget_fraction" => self.budget_fraction = parse(k, value)?,
            "strategy" => self.strategy = value.parse()?,
            "strategies" => self.strategies = parse_list(k, value)?,
            "top_n" => self.params.top_n = parse(k, value)?,
            "knn_k" => self.params.k = parse(k, value)?,
            "alpha" => self.params.alpha = parse(k, value)?,
            "temperature" => self.temperature = parse(k, value)?,
            "seeds" => self.seeds = parse_list(k, value)?,
            "epochs" => self.train.epochs = parse(k, value)?,
            "lr" => self.train.lr = parse(k, value)?,
            "momentum" => self.train.momentum = parse(k, value)?,
            "weight_decay" => self.train.weight_decay = parse(k, value)?,
            "batch_size" => self.train.batch_size = parse(k, value)?,
            "cosine" => self.train.cosine = parse_bool(k, value)?,
            "train_embeddings" => self.train_embeddings = Some(PathBuf::from(value.trim())),
            "test_embeddings" => self.test_embeddings = Some(PathBuf::from(value.trim())),
            "class_head" => self.class_head = Some(PathBuf::from(value.trim())),
            "out" => self.out = PathBuf::from(value.trim()),
            "synth_classes" => self.synthetic.num_classes = parse(k, value)?,
            "synth_dim" => self.synthetic.dim = parse(k, value)?,
            "synth_train" => self.synthetic.n_train = parse(k, value)?,
            "synth_test" => self.synthetic.n_test = parse(k, value)?,
            "synth_weights" => self.synthetic.weights = parse_list(k, value)?,
            "synth_spread" => self.synthetic.spread = parse(k, value)?,
            "synth_outliers" => self.synthetic.outlier_fraction = parse(k, value)?,
            "synth_head_noise" => self.synthetic.head_noise = parse(k, value)?,
            "synth_seed" => self.synthetic.seed = parse(k, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, e.to_string().trim_start_matches("configuration error: "))))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn data_source(&self) -> Result<DataSource> {
        match (&self.train_embeddings, &self.test_embeddings, &self.class_head) {
            (None, None, None) => Ok(DataSource::Synthetic(self.synthetic.clone())),
            (Some(train), Some(test), Some(head)) => Ok(DataSource::Files(FileSource {
                train: train.clone(),
                test: test.clone(),
                class_head: head.clone(),
            })),
            _ => Err(Error::Config(
                "train_embeddings, test_embeddings and class_head must be given together".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if !(self.budget_fraction > 0.0) || self.rounds as f64 * self.budget_fraction > 1.0 + 1e-12 {
            return bad(format!(
                "need 0 < budget_fraction and rounds * budget_fraction <= 1, got {} * {}",
                self.rounds, self.budget_fraction
            ));
        }
        if self.params.top_n == 0 {
            return bad("top_n must be at least 1".into());
        }
        if self.params.k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        if !(self.params.alpha > 0.0 && self.params.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.params.alpha));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        self.train.validate()?;
        if let DataSource::Synthetic(s) = self.data_source()? {
            s.spec()?
                .validate()
                .map_err(|e| Error::Config(format!("synthetic data: {e}")))?;
            if s.n_test == 0 {
                return bad("synth_test must be at least 1".into());
            }
        }
        Ok(())
    }

    /// Per-round budget `ceil(budget_fraction * n_train)`.
    pub fn budget(&self, n_train: usize) -> usize {
        ((self.budget_fraction * n_train as f64) - 1e-9).ceil().max(1.0) as usize
    }

    /// The configuration as it appears in reports: one entry per key.
    pub fn to_block(&self) -> ConfigBlock {
        let data = match self.data_source() {
            Ok(DataSource::Files(f)) => DataBlock::Files {
                train_embeddings: f.train.display().to_string(),
                test_embeddings: f.test.display().to_string(),
                class_head: f.class_head.display().to_string(),
            },
            _ => DataBlock::Synthetic {
                synth_classes: self.synthetic.num_classes,
                synth_dim: self.synthetic.dim,
                synth_train: self.synthetic.n_train,
                synth_test: self.synthetic.n_test,
                synth_weights: self.synthetic.weights.clone(),
                synth_spread: self.synthetic.spread,
                synth_outliers: self.synthetic.outlier_fraction,
                synth_head_noise: self.synthetic.head_noise,
                synth_seed: self.synthetic.seed,
            },
        };
        ConfigBlock {
            rounds: self.rounds,
            budget_fraction: self.budget_fraction,
            temperature: self.temperature,
            top_n: self.params.top_n,
            knn_k: self.params.k,
            alpha: self.params.alpha,
            epochs: self.train.epochs,
            lr: self.train.lr,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            batch_size: self.train.batch_size,
            cosine: self.train.cosine,
            seeds: self.seeds.clone(),
            data,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigBlock {
    pub rounds: usize,
    pub budget_fraction: f64,
    pub temperature: f64,
    pub top_n: usize,
    pub knn_k: usize,
    pub alpha: f64,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub cosine: bool,
    pub seeds: Vec<u64>,
    #[serde(flatten)]
    pub data: DataBlock,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum DataBlock {
    Synthetic {
        synth_classes: usize,
        synth_dim: usize,
        synth_train: usize,
        synth_test: usize,
        synth_weights: Vec<f64>,
        synth_spread: f64,
        synth_outliers: f64,
        synth_head_noise: f64,
        synth_seed: u64,
    },
    Files {
        train_embeddings: String,
        test_embeddings: String,
        class_head: String,
    },
}
