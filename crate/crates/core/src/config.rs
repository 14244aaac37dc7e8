//! Run configuration and the flat `key = value` file format.
//!
//! ```text
//! # comments start with '#'
//! model.k = 50
//! train.alpha = 1.6487212707001282
//! augment.mode = gcn
//! ```
//!
//! Every key has a default; unknown keys are rejected.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Trainable GCN stacks and document-word information propagation.
    Gcn,
    /// Parameter-free `A_d · Ã` features through the shared encoder.
    EdgePerturb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconTarget {
    Tfidf,
    Bow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoCl,
    NoNeg,
    NoPos,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoCl, Ablation::NoNeg, Ablation::NoPos];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "Full",
            Ablation::NoCl => "w/o cl",
            Ablation::NoNeg => "w/o neg",
            Ablation::NoPos => "w/o pos",
        }
    }

    pub fn uses_positive(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoNeg)
    }

    pub fn uses_negative(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoPos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contextual {
    /// On exactly when an embeddings file is configured.
    Auto,
    On,
    Off,
}

macro_rules! keyword_enum {
    ($ty:ty { $($text:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        "`{other}` is not one of: {}",
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let text = [$(($variant, $text)),+]
                    .into_iter()
                    .find(|(v, _)| v == self)
                    .map(|(_, t)| t)
                    .unwrap_or("?");
                f.write_str(text)
            }
        }
    };
}

keyword_enum!(SampleMode { "gcn" => SampleMode::Gcn, "edge_perturb" => SampleMode::EdgePerturb });
keyword_enum!(Activation { "relu" => Activation::Relu, "identity" => Activation::Identity });
keyword_enum!(ReconTarget { "tfidf" => ReconTarget::Tfidf, "bow" => ReconTarget::Bow });
keyword_enum!(Ablation {
    "full" => Ablation::Full,
    "no_cl" => Ablation::NoCl,
    "no_neg" => Ablation::NoNeg,
    "no_pos" => Ablation::NoPos,
});
keyword_enum!(Contextual { "auto" => Contextual::Auto, "on" => Contextual::On, "off" => Contextual::Off });

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataConfig {
    pub input: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub mu_pos: f64,
    pub mu_neg: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            mu_pos: 0.2,
            mu_neg: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub mode: SampleMode,
    pub gcn_layers: usize,
    pub hidden_dim: usize,
    pub hidden_activation: Activation,
    pub final_activation: Activation,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mode: SampleMode::Gcn,
            gcn_layers: 2,
            hidden_dim: 100,
            hidden_activation: Activation::Relu,
            final_activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k: usize,
    pub encoder_hidden: usize,
    pub background: bool,
    pub recon_target: ReconTarget,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 50,
            encoder_hidden: 300,
            background: true,
            recon_target: ReconTarget::Tfidf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub clip_norm: f64,
    pub eval_every: usize,
    pub top_n: usize,
    pub seeds: Vec<u64>,
    pub ablation: Ablation,
    pub contextual: Contextual,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            epochs: 400,
            batch_size: 200,
            alpha: 0.5f64.exp(),
            gamma: 1.0,
            beta1: 0.99,
            beta2: 0.999,
            clip_norm: 5.0,
            eval_every: 10,
            top_n: 10,
            seeds: vec![1, 2, 3, 4, 5],
            ablation: Ablation::Full,
            contextual: Contextual::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GctmConfig {
    pub data: DataConfig,
    pub corpus: CorpusConfig,
    pub graph: GraphConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn path_or_empty(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl GctmConfig {
    /// Parses a configuration file on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let opt_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "data.input" => self.data.input = opt_path(value),
            "data.embeddings" => self.data.embeddings = opt_path(value),
            "corpus.vocab_size" => self.corpus.vocab_size = parse(key, value)?,
            "corpus.window" => self.corpus.window_length = parse(key, value)?,
            "corpus.split" => {
                let r: Vec<f64> = parse_list(key, value)?;
                self.corpus.split_ratios = r.try_into().map_err(|_| {
                    Error::Config(format!("{key} needs three comma-separated ratios"))
                })?;
            }
            "corpus.split_seed" => self.corpus.split_seed = parse(key, value)?,
            "graph.mu_pos" => self.graph.mu_pos = parse(key, value)?,
            "graph.mu_neg" => self.graph.mu_neg = parse(key, value)?,
            "augment.mode" => self.augment.mode = parse(key, value)?,
            "augment.gcn_layers" => self.augment.gcn_layers = parse(key, value)?,
            "augment.hidden_dim" => self.augment.hidden_dim = parse(key, value)?,
            "augment.hidden_activation" => self.augment.hidden_activation = parse(key, value)?,
            "augment.final_activation" => self.augment.final_activation = parse(key, value)?,
            "model.k" => self.model.k = parse(key, value)?,
            "model.encoder_hidden" => self.model.encoder_hidden = parse(key, value)?,
            "model.background" => self.model.background = parse(key, value)?,
            "model.recon_target" => self.model.recon_target = parse(key, value)?,
            "train.lr" => self.train.lr = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.alpha" => self.train.alpha = parse(key, value)?,
            "train.gamma" => self.train.gamma = parse(key, value)?,
            "train.beta1" => self.train.beta1 = parse(key, value)?,
            "train.beta2" => self.train.beta2 = parse(key, value)?,
            "train.clip_norm" => self.train.clip_norm = parse(key, value)?,
            "train.eval_every" => self.train.eval_every = parse(key, value)?,
            "train.top_n" => self.train.top_n = parse(key, value)?,
            "train.seeds" => self.train.seeds = parse_list(key, value)?,
            "train.ablation" => self.train.ablation = parse(key, value)?,
            "train.contextual" => self.train.contextual = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("data.input", path_or_empty(&self.data.input)),
            ("data.embeddings", path_or_empty(&self.data.embeddings)),
            ("corpus.vocab_size", self.corpus.vocab_size.to_string()),
            ("corpus.window", self.corpus.window_length.to_string()),
            ("corpus.split", join(&self.corpus.split_ratios)),
            ("corpus.split_seed", self.corpus.split_seed.to_string()),
            ("graph.mu_pos", self.graph.mu_pos.to_string()),
            ("graph.mu_neg", self.graph.mu_neg.to_string()),
            ("augment.mode", self.augment.mode.to_string()),
            ("augment.gcn_layers", self.augment.gcn_layers.to_string()),
            ("augment.hidden_dim", self.augment.hidden_dim.to_string()),
            ("augment.hidden_activation", self.augment.hidden_activation.to_string()),
            ("augment.final_activation", self.augment.final_activation.to_string()),
            ("model.k", self.model.k.to_string()),
            ("model.encoder_hidden", self.model.encoder_hidden.to_string()),
            ("model.background", self.model.background.to_string()),
            ("model.recon_target", self.model.recon_target.to_string()),
            ("train.lr", self.train.lr.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.alpha", self.train.alpha.to_string()),
            ("train.gamma", self.train.gamma.to_string()),
            ("train.beta1", self.train.beta1.to_string()),
            ("train.beta2", self.train.beta2.to_string()),
            ("train.clip_norm", self.train.clip_norm.to_string()),
            ("train.eval_every", self.train.eval_every.to_string()),
            ("train.top_n", self.train.top_n.to_string()),
            ("train.seeds", join(&self.train.seeds)),
            ("train.ablation", self.train.ablation.to_string()),
            ("train.contextual", self.train.contextual.to_string()),
        ]
    }

    /// The canonical file form; parsing it yields an equal configuration.
    pub fn to_file_string(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 over the canonical lines whose key starts with one of `prefixes`.
    pub fn hash_keys(&self, prefixes: &[&str]) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.to_pairs() {
            if prefixes.iter().any(|p| k.starts_with(p)) {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn config_hash(&self) -> String {
        self.hash_keys(&[""])
    }

    pub fn contextual_enabled(&self) -> bool {
        match self.train.contextual {
            Contextual::On => true,
            Contextual::Off => false,
            Contextual::Auto => self.data.embeddings.is_some(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        crate::corpus::validate_ratios(self.corpus.split_ratios)?;
        if self.corpus.vocab_size == 0 {
            return fail("corpus.vocab_size must be positive".into());
        }
        if self.corpus.window_length < 2 {
            return fail("corpus.window must be at least 2".into());
        }
        if !(self.graph.mu_pos >= 0.0 && self.graph.mu_neg >= 0.0) {
            return fail("graph thresholds must be nonnegative".into());
        }
        if self.model.k < 2 {
            return fail(format!("model.k must exceed 1 (got {})", self.model.k));
        }
        if self.model.encoder_hidden == 0 || self.augment.hidden_dim == 0 {
            return fail("hidden widths must be positive".into());
        }
        if self.augment.gcn_layers == 0 {
            return fail("augment.gcn_layers must be at least 1".into());
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return fail("train.batch_size must be at least 1".into());
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return fail("train.lr must be positive".into());
        }
        if !(t.alpha > 0.0 && t.alpha.is_finite()) {
            return fail("train.alpha must be positive".into());
        }
        if !(t.gamma >= 0.0 && t.gamma.is_finite()) {
            return fail("train.gamma must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) {
            return fail("Adam coefficients must lie in [0, 1)".into());
        }
        if t.eval_every == 0 || t.top_n == 0 {
            return fail("train.eval_every and train.top_n must be positive".into());
        }
        if t.seeds.is_empty() {
            return fail("train.seeds must list at least one seed".into());
        }
        Ok(())
    }
}
