//! Experiment orchestration: load the datasets, transliterate, train,
//! pseudo-label, build the combined training set, evaluate, and persist
//! every artifact of a run under one output directory.

mod pipeline;

pub use pipeline::{
    run_experiment, run_training_only, RunManifest, RunOutcome, StageFailure,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use codemix_core::corpus::{CorpusError, Language};
use codemix_core::model::{ModelConfig, ModelError, TrainConfig};
use codemix_core::nn::NnError;
use codemix_core::pseudo::PseudoError;
use codemix_core::translit::{TranslitError, TranslitPipelineError};

/// Which training set the experiment uses: the code-mixed original, the
/// transliterated copy, or the fused combination of both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cm,
    Tra,
    Cmtra,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Cm => "cm",
            Variant::Tra => "tra",
            Variant::Cmtra => "cmtra",
        }
    }
}

fn default_min_freq() -> usize {
    1
}

fn default_tag() -> String {
    "scratch".into()
}

/// One experiment, loaded from JSON and optionally overridden by flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub language: Language,
    pub variant: Variant,
    pub train_path: PathBuf,
    #[serde(default)]
    pub dev_path: Option<PathBuf>,
    pub test_path: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
    /// Confidence floor for pseudo-labels; plain argmax when absent.
    #[serde(default)]
    pub threshold: Option<f64>,
    /// Grapheme table file; the built-in table when absent.
    #[serde(default)]
    pub translit_table: Option<PathBuf>,
    /// Train a dedicated labeler model instead of reusing one model for
    /// both the labeling and final-classifier roles.
    #[serde(default)]
    pub separate_labeler: bool,
    /// For the `tra` variant: carry gold labels through transliteration
    /// instead of pseudo-labeling.
    #[serde(default)]
    pub tra_gold_labels: bool,
    #[serde(default = "default_tag")]
    pub tag: String,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_seed() -> u64 {
    42
}

/// Flag-level overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub language: Option<Language>,
    pub variant: Option<Variant>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub threshold: Option<f64>,
    pub translit_table: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<ExperimentConfig, PipelineError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&content)
            .map_err(|e| PipelineError::Config(format!("parsing {}: {e}", path.display())))
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(l) = o.language {
            self.language = l;
        }
        if let Some(v) = o.variant {
            self.variant = v;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if let Some(b) = o.batch_size {
            self.train.batch_size = b;
        }
        if let Some(t) = o.threshold {
            self.threshold = Some(t);
        }
        if let Some(p) = &o.translit_table {
            self.translit_table = Some(p.clone());
        }
        if let Some(p) = &o.out {
            self.out_dir = p.clone();
        }
    }

    /// Pin the derived fields: the class count follows the language, and
    /// every random stream flows from the experiment seed.
    pub fn normalize(&mut self) {
        self.model.num_classes = self.language.num_classes();
        self.model.seed = codemix_core::rng::derive_seed(self.seed, "model");
        self.train.seed = codemix_core::rng::derive_seed(self.seed, "train");
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl PipelineError {
    /// Process exit code: 1 config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data(_) => 2,
            PipelineError::Numerical(_) => 3,
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<TranslitError> for PipelineError {
    fn from(e: TranslitError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<TranslitPipelineError> for PipelineError {
    fn from(e: TranslitPipelineError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<codemix_core::eval::EvalError> for PipelineError {
    fn from(e: codemix_core::eval::EvalError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match &e {
            ModelError::NonFiniteLoss { .. } | ModelError::Nn(NnError::Numerical(_)) => {
                PipelineError::Numerical(e.to_string())
            }
            ModelError::Config(_) | ModelError::Nn(NnError::Config(_)) => {
                PipelineError::Config(e.to_string())
            }
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<PseudoError> for PipelineError {
    fn from(e: PseudoError) -> Self {
        match e {
            PseudoError::Model(m) => m.into(),
            PseudoError::BadThreshold(t) => {
                PipelineError::Config(format!("threshold {t} is not a probability"))
            }
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Data(format!("io: {e}"))
    }
}

/// Hex sha256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex sha256 of a file's contents.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| {
        PipelineError::Data(format!("reading {}: {e}", path.as_ref().display()))
    })?;
    Ok(sha256_hex(&bytes))
}

pub type Digests = BTreeMap<String, String>;
