//! Run configuration: a TOML document with nested sections, optionally
//! patched by dotted `key=value` overrides. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Pooling;

/// Architecture and loss composition, one per results-table row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Regression only.
    Base,
    /// `L_r − βλ·L_d`
    BaseDa,
    /// `L_r − βλ·L_d + α·L_v`
    VaeDa,
    /// `L_r − βλ·L_d + α·L_dec`
    DecoderDa,
    /// `L_r − βλ·L_task + L_ML`
    MultitaskDa,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Base,
        Variant::BaseDa,
        Variant::VaeDa,
        Variant::DecoderDa,
        Variant::MultitaskDa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::BaseDa => "base-da",
            Variant::VaeDa => "vae-da",
            Variant::DecoderDa => "decoder-da",
            Variant::MultitaskDa => "multitask-da",
        }
    }

    pub fn adversarial(self) -> bool {
        self != Variant::Base
    }

    pub fn default_epochs(self) -> usize {
        match self {
            Variant::VaeDa => 12,
            _ => 8,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!(
                    "unknown variant {s:?}; valid variants: {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    L1,
    Mse,
}

/// What the adversarial classifier is asked to recognise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscriminatorKind {
    #[default]
    Domain,
    Language,
    Task,
}

/// Input layout of a lexical-complexity corpus file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    #[default]
    Complex,
    Cwi2018,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub char_embed_dim: usize,
    pub char_hidden: usize,
    pub max_chars: usize,
    pub max_tokens: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub pooling: Pooling,
    pub head_hidden: [usize; 2],
    pub disc_hidden: [usize; 2],
    pub dropout: f64,
    pub vae_hidden: usize,
    pub z_dim: usize,
    pub decoder_hidden: usize,
    pub decoder_proj: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            char_embed_dim: 16,
            char_hidden: 16,
            max_chars: 32,
            max_tokens: 128,
            d_model: 64,
            layers: 2,
            heads: 4,
            ff_dim: 128,
            pooling: Pooling::First,
            head_hidden: [64, 32],
            disc_hidden: [64, 32],
            dropout: 0.1,
            vae_hidden: 32,
            z_dim: 16,
            decoder_hidden: 64,
            decoder_proj: 64,
        }
    }
}

/// Loss weights. `beta·λ` scales the reversed discriminator gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha_vae: f64,
    pub alpha_dec: f64,
    pub alpha_task: f64,
    pub ml_weight: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_vae: 0.1,
            alpha_dec: 0.01,
            alpha_task: 0.01,
            ml_weight: 1.0,
            beta: 0.2,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("alpha_vae", self.alpha_vae),
            ("alpha_dec", self.alpha_dec),
            ("alpha_task", self.alpha_task),
            ("ml_weight", self.ml_weight),
            ("beta", self.beta),
        ];
        for (name, v) in all {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("epsilon must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub discriminator: DiscriminatorKind,
    pub loss: LossKind,
    /// Defaults to 8, or 12 for the VAE variant.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    /// Simplification examples per step relative to `batch_size`.
    pub simplification_ratio: f64,
    /// Global-norm gradient clip; 0 disables.
    pub clip_norm: f64,
    /// Learning-rate multiplier for the discriminator's own parameters.
    pub discriminator_lr_scale: f64,
    /// Overrides the annealed λ with a constant.
    pub lambda_fixed: Option<f64>,
    /// Groups whose examples feed only the discriminator.
    pub unlabeled_groups: Vec<String>,
    pub optimizer: OptimizerConfig,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::BaseDa,
            discriminator: DiscriminatorKind::Domain,
            loss: LossKind::L1,
            epochs: None,
            batch_size: 32,
            simplification_ratio: 1.0,
            clip_norm: 5.0,
            discriminator_lr_scale: 1.0,
            lambda_fixed: None,
            unlabeled_groups: Vec::new(),
            optimizer: OptimizerConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or_else(|| self.variant.default_epochs())
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.weights.validate()?;
        if self.epochs() == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.simplification_ratio > 0.0) {
            return Err(Error::Config("simplification_ratio must be positive".into()));
        }
        if !(self.discriminator_lr_scale > 0.0) || !self.discriminator_lr_scale.is_finite() {
            return Err(Error::Config("discriminator_lr_scale must be positive".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        if let Some(l) = self.lambda_fixed {
            if !(0.0..1.0).contains(&l) {
                return Err(Error::Config(format!("lambda_fixed must be in [0, 1), got {l}")));
            }
        }
        let task = self.discriminator == DiscriminatorKind::Task;
        match (self.variant, task) {
            (Variant::MultitaskDa, false) => Err(Error::Config(
                "variant multitask-da requires discriminator = \"task\"".into(),
            )),
            (v, true) if v != Variant::MultitaskDa => Err(Error::Config(format!(
                "discriminator \"task\" only applies to multitask-da, not {}",
                v.name()
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub format: CorpusFormat,
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Group label for CWI 2018 files; inferred from the file name when unset.
    pub group: Option<String>,
    /// BenchLS-layout file for the multi-task variant.
    pub simplification: Option<PathBuf>,
    /// Existing vocabulary file; built from the training data when unset.
    pub vocab: Option<PathBuf>,
    /// Keep at most this many training examples (seeded subsample).
    pub max_train: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::with_overrides(text, &[])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Parses `text`, applies `key.path=value` overrides in order and
    /// validates the result.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config: Config = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let m = &self.model;
        if m.heads == 0 || !m.d_model.is_multiple_of(m.heads) {
            return Err(Error::Config(format!(
                "model.d_model {} must be divisible by model.heads {}",
                m.d_model, m.heads
            )));
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return Err(Error::Config("model.dropout must be in [0, 1)".into()));
        }
        let dims = [
            m.char_embed_dim,
            m.char_hidden,
            m.max_chars,
            m.max_tokens,
            m.d_model,
            m.layers,
            m.ff_dim,
            m.z_dim,
            m.vae_hidden,
            m.decoder_hidden,
            m.decoder_proj,
        ];
        if dims.contains(&0) || m.head_hidden.contains(&0) || m.disc_hidden.contains(&0) {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot render config: {e}")))
    }
}

fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = path.split_last().expect("non-empty");
    let mut table = doc;
    for part in parents {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part:?} is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// TOML literal when it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}
