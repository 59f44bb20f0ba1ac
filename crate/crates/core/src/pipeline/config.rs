//! Run configuration as `section.key=value` lines.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::embedding::EmbedConfig;
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::index::{IndexOptions, MonthlyAggregation};
use crate::training::{EarlyStop, LossKind, TrainConfig};
use crate::transport::{BarycenterKind, SinkhornConfig};

/// Scalar type used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::InvalidConfig(format!("unknown precision `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    /// Replace the shipped lists when set.
    pub lemmas: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub phrases: Option<PathBuf>,
    pub output: PathBuf,
    pub reference: Option<PathBuf>,
}

/// Hyperparameter grid for `tune`. Empty axes use the base configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneGrid {
    pub epsilon: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub topics: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub embed_depth: Vec<usize>,
    pub holdout_fraction: f64,
}

impl Default for TuneGrid {
    fn default() -> Self {
        Self {
            epsilon: Vec::new(),
            batch_size: Vec::new(),
            topics: Vec::new(),
            learning_rate: Vec::new(),
            embed_depth: Vec::new(),
            holdout_fraction: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub paths: Paths,
    pub seed: u64,
    pub min_count: usize,
    pub embed: EmbedConfig,
    pub normalize_cost: bool,
    pub sinkhorn: SinkhornConfig<f64>,
    pub train: TrainConfig,
    pub precision: Precision,
    pub index: IndexOptions,
    pub top_tokens: usize,
    pub eval: EvalOptions,
    pub plot: bool,
    pub tune: TuneGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths { output: PathBuf::from("wig-out"), ..Paths::default() },
            seed: 1,
            min_count: 1,
            embed: EmbedConfig::default(),
            normalize_cost: true,
            sinkhorn: SinkhornConfig::default(),
            train: TrainConfig::default(),
            precision: Precision::default(),
            index: IndexOptions::default(),
            top_tokens: 20,
            eval: EvalOptions::default(),
            plot: false,
            tune: TuneGrid::default(),
        }
    }
}

/// Keys starting with this prefix carry run records rather than settings
/// and are skipped when a manifest is read back as a configuration.
pub const RECORD_PREFIX: &str = "run.";

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.trim().parse().map_err(|e| Error::InvalidConfig(format!("{key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::InvalidConfig(format!("{key}: expected true or false, got `{other}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_num(key, s)).collect()
}

fn parse_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn show_list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse_num(key, v)?,
            "paths.corpus" => self.paths.corpus = parse_path(v),
            "paths.lemmas" => self.paths.lemmas = parse_path(v),
            "paths.stopwords" => self.paths.stopwords = parse_path(v),
            "paths.phrases" => self.paths.phrases = parse_path(v),
            "paths.output" => {
                self.paths.output = parse_path(v).ok_or_else(|| Error::InvalidConfig("paths.output cannot be empty".into()))?
            }
            "paths.reference" => self.paths.reference = parse_path(v),
            "corpus.min_count" => self.min_count = parse_num(key, v)?,
            "embed.depth" => self.embed.depth = parse_num(key, v)?,
            "embed.window" => self.embed.window = parse_num(key, v)?,
            "embed.negatives" => self.embed.negatives = parse_num(key, v)?,
            "embed.epochs" => self.embed.epochs = parse_num(key, v)?,
            "embed.learning_rate" => self.embed.learning_rate = parse_num(key, v)?,
            "embed.normalize_cost" => self.normalize_cost = parse_bool(key, v)?,
            "sinkhorn.epsilon" => self.sinkhorn.epsilon = parse_num(key, v)?,
            "sinkhorn.unroll_iters" => self.sinkhorn.unroll_iters = parse_num(key, v)?,
            "sinkhorn.max_iter" => self.sinkhorn.max_iter = parse_num(key, v)?,
            "sinkhorn.tol" => self.sinkhorn.tol = parse_num(key, v)?,
            "sinkhorn.barycenter" => self.sinkhorn.barycenter = BarycenterKind::parse(v)?,
            "train.topics" => self.train.topics = parse_num(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, v)?,
            "train.learning_rate" => self.train.adam.learning_rate = parse_num(key, v)?,
            "train.beta1" => self.train.adam.beta1 = parse_num(key, v)?,
            "train.beta2" => self.train.adam.beta2 = parse_num(key, v)?,
            "train.eps_hat" => self.train.adam.eps_hat = parse_num(key, v)?,
            "train.epochs" => self.train.epochs = parse_num(key, v)?,
            "train.loss" => self.train.loss = LossKind::parse(v)?,
            "train.holdout_fraction" => self.train.holdout_fraction = parse_num(key, v)?,
            "train.chunk_docs" => self.train.chunk_docs = parse_num(key, v)?,
            "train.precision" => self.precision = Precision::parse(v)?,
            "train.early_stop" => {
                if parse_bool(key, v)? {
                    self.train.early_stop.get_or_insert_with(EarlyStop::default);
                } else {
                    self.train.early_stop = None;
                }
            }
            "train.early_stop_rel_tol" => self.train.early_stop.get_or_insert_with(EarlyStop::default).rel_tol = parse_num(key, v)?,
            "train.early_stop_patience" => self.train.early_stop.get_or_insert_with(EarlyStop::default).patience = parse_num(key, v)?,
            "index.flip" => self.index.flip = parse_bool(key, v)?,
            "index.aggregation" => {
                self.index.aggregation = match v {
                    "sum" => MonthlyAggregation::Sum,
                    "mean" => MonthlyAggregation::Mean,
                    other => return Err(Error::InvalidConfig(format!("{key}: expected sum or mean, got `{other}`"))),
                }
            }
            "index.top_tokens" => self.top_tokens = parse_num(key, v)?,
            "eval.hp_lambda" => self.eval.hp_lambda = parse_num(key, v)?,
            "eval.signed_cumdiff" => self.eval.signed_cumdiff = parse_bool(key, v)?,
            "eval.plot" => self.plot = parse_bool(key, v)?,
            "tune.epsilon" => self.tune.epsilon = parse_list(key, v)?,
            "tune.batch_size" => self.tune.batch_size = parse_list(key, v)?,
            "tune.topics" => self.tune.topics = parse_list(key, v)?,
            "tune.learning_rate" => self.tune.learning_rate = parse_list(key, v)?,
            "tune.embed_depth" => self.tune.embed_depth = parse_list(key, v)?,
            "tune.holdout_fraction" => self.tune.holdout_fraction = parse_num(key, v)?,
            other => return Err(Error::InvalidConfig(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a config file body. Blank lines, `#` comments and run records
    /// (see [`RECORD_PREFIX`]) are skipped; later lines override earlier ones.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value", i + 1)))?;
            if k.trim().starts_with(RECORD_PREFIX) {
                continue;
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::InvalidConfig(format!("config file {} not found", path.display())),
            _ => Error::Io(e),
        })?;
        Self::parse(&text)
    }

    /// Every effective setting in a fixed order, as accepted by [`RunConfig::set`].
    pub fn entries(&self) -> Vec<(String, String)> {
        let es = self.train.early_stop;
        let mut out: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("paths.corpus", show_path(&self.paths.corpus)),
            ("paths.lemmas", show_path(&self.paths.lemmas)),
            ("paths.stopwords", show_path(&self.paths.stopwords)),
            ("paths.phrases", show_path(&self.paths.phrases)),
            ("paths.output", self.paths.output.display().to_string()),
            ("paths.reference", show_path(&self.paths.reference)),
            ("corpus.min_count", self.min_count.to_string()),
            ("embed.depth", self.embed.depth.to_string()),
            ("embed.window", self.embed.window.to_string()),
            ("embed.negatives", self.embed.negatives.to_string()),
            ("embed.epochs", self.embed.epochs.to_string()),
            ("embed.learning_rate", self.embed.learning_rate.to_string()),
            ("embed.normalize_cost", self.normalize_cost.to_string()),
            ("sinkhorn.epsilon", self.sinkhorn.epsilon.to_string()),
            ("sinkhorn.unroll_iters", self.sinkhorn.unroll_iters.to_string()),
            ("sinkhorn.max_iter", self.sinkhorn.max_iter.to_string()),
            ("sinkhorn.tol", self.sinkhorn.tol.to_string()),
            ("sinkhorn.barycenter", self.sinkhorn.barycenter.as_str().to_string()),
            ("train.topics", self.train.topics.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.learning_rate", self.train.adam.learning_rate.to_string()),
            ("train.beta1", self.train.adam.beta1.to_string()),
            ("train.beta2", self.train.adam.beta2.to_string()),
            ("train.eps_hat", self.train.adam.eps_hat.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.loss", self.train.loss.as_str().to_string()),
            ("train.holdout_fraction", self.train.holdout_fraction.to_string()),
            ("train.chunk_docs", self.train.chunk_docs.to_string()),
            ("train.precision", self.precision.as_str().to_string()),
            ("train.early_stop", es.is_some().to_string()),
        ];
        if let Some(es) = es {
            out.push(("train.early_stop_rel_tol", es.rel_tol.to_string()));
            out.push(("train.early_stop_patience", es.patience.to_string()));
        }
        out.extend([
            ("index.flip", self.index.flip.to_string()),
            (
                "index.aggregation",
                match self.index.aggregation {
                    MonthlyAggregation::Sum => "sum",
                    MonthlyAggregation::Mean => "mean",
                }
                .to_string(),
            ),
            ("index.top_tokens", self.top_tokens.to_string()),
            ("eval.hp_lambda", self.eval.hp_lambda.to_string()),
            ("eval.signed_cumdiff", self.eval.signed_cumdiff.to_string()),
            ("eval.plot", self.plot.to_string()),
            ("tune.epsilon", show_list(&self.tune.epsilon)),
            ("tune.batch_size", show_list(&self.tune.batch_size)),
            ("tune.topics", show_list(&self.tune.topics)),
            ("tune.learning_rate", show_list(&self.tune.learning_rate)),
            ("tune.embed_depth", show_list(&self.tune.embed_depth)),
            ("tune.holdout_fraction", self.tune.holdout_fraction.to_string()),
        ]);
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Embedding settings with the run seed applied.
    pub fn embed_config(&self) -> EmbedConfig {
        EmbedConfig { seed: self.seed, ..self.embed.clone() }
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_count == 0 {
            return Err(Error::InvalidConfig("corpus.min_count must be >= 1".into()));
        }
        self.embed_config().validate()?;
        self.sinkhorn.validate()?;
        self.train_config().validate()?;
        if !(self.eval.hp_lambda > 0.0) || !self.eval.hp_lambda.is_finite() {
            return Err(Error::InvalidConfig("eval.hp_lambda must be positive".into()));
        }
        if !(self.tune.holdout_fraction > 0.0 && self.tune.holdout_fraction < 1.0) {
            return Err(Error::InvalidConfig("tune.holdout_fraction must lie in (0, 1)".into()));
        }
        if self.tune.epsilon.iter().chain(&self.tune.learning_rate).any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidConfig("tune grid values must be positive".into()));
        }
        if self.tune.batch_size.iter().chain(&self.tune.topics).chain(&self.tune.embed_depth).any(|&x| x == 0) {
            return Err(Error::InvalidConfig("tune grid values must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_shipped_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.embed.depth, 10);
        assert_eq!(c.sinkhorn.epsilon, 0.1);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.train.topics, 4);
        assert_eq!(c.train.adam.learning_rate, 0.005);
        assert_eq!(c.sinkhorn.unroll_iters, 50);
        c.validate().unwrap();
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("train.topics=3\nsinkhorn.epsilon = 0.25\n# comment\n\ntune.topics=2,4,8\ntrain.early_stop=false\npaths.corpus=a b.jsonl\n")
            .unwrap();
        assert_eq!(c.train.topics, 3);
        assert_eq!(c.tune.topics, vec![2, 4, 8]);
        assert_eq!(c.paths.corpus.as_deref(), Some(Path::new("a b.jsonl")));
        let text = c.to_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn records_are_skipped_and_unknown_keys_rejected() {
        let c = RunConfig::parse("run.stage=train\ntrain.loss=l2\n").unwrap();
        assert_eq!(c.train.loss, LossKind::L2);
        assert!(RunConfig::parse("train.topicz=3").is_err());
        assert!(RunConfig::parse("train.topics").is_err());
        assert!(RunConfig::parse("train.topics=x").is_err());
        assert!(RunConfig::parse("train.precision=f16").is_err());
    }

    #[test]
    fn seed_reaches_every_stage() {
        let c = RunConfig::parse("seed=42").unwrap();
        assert_eq!(c.embed_config().seed, 42);
        assert_eq!(c.train_config().seed, 42);
    }
}
