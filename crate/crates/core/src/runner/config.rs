use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::datasets::{SyntheticVariant, TuSplit};
use crate::evaluation::ExplanationRule;
use crate::model::{ExtractorKind, ModelConfig};
use crate::objective::{Estimator, LossConfig, NegativeMode};
use crate::training::TrainConfig;

/// One row of published per-dataset hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Table5Row {
    pub name: &'static str,
    pub epochs: usize,
    pub learning_rate: f64,
    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub extractor: ExtractorKind,
    pub extractor_layers: usize,
    pub extractor_hidden: usize,
}

#[allow(clippy::too_many_arguments)]
const fn row(
    name: &'static str,
    epochs: usize,
    learning_rate: f64,
    encoder_layers: usize,
    encoder_hidden: usize,
    extractor: ExtractorKind,
    extractor_layers: usize,
    extractor_hidden: usize,
) -> Table5Row {
    Table5Row {
        name,
        epochs,
        learning_rate,
        encoder_layers,
        encoder_hidden,
        extractor,
        extractor_layers,
        extractor_hidden,
    }
}

use ExtractorKind::{Gnn, Mlp};

pub const TABLE5: &[Table5Row] = &[
    row("BM-MT", 1000, 1e-2, 5, 16, Gnn, 2, 16),
    row("BM-MN", 500, 1e-2, 5, 16, Gnn, 3, 8),
    row("BM-MS", 200, 1e-2, 5, 16, Gnn, 2, 32),
    row("MNIST-0", 50, 1e-2, 2, 16, Mlp, 2, 16),
    row("MNIST-1", 50, 1e-2, 2, 16, Mlp, 2, 16),
    row("MUTAG", 50, 1e-2, 5, 16, Gnn, 5, 4),
    row("PROTEINS-F", 800, 1e-3, 5, 16, Gnn, 5, 8),
    row("ENZYMES", 1000, 1e-3, 5, 128, Gnn, 5, 8),
    row("AIDS", 1000, 1e-4, 5, 16, Gnn, 5, 8),
    row("DHFR", 1000, 1e-4, 5, 128, Gnn, 5, 8),
    row("BZR", 1000, 1e-4, 5, 128, Gnn, 5, 8),
    row("COX2", 1000, 1e-4, 5, 64, Gnn, 5, 8),
    row("DD", 100, 1e-4, 5, 128, Gnn, 5, 8),
    row("NCI1", 1000, 1e-4, 5, 128, Gnn, 5, 8),
    row("IMDB-B", 10, 1e-4, 5, 64, Gnn, 5, 8),
    row("REDDIT-B", 1000, 1e-4, 5, 128, Gnn, 5, 8),
];

fn normalize(name: &str) -> String {
    name.chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_uppercase())
        .collect()
}

/// Looks up a dataset by name, ignoring case and punctuation. The common TU
/// spellings `PROTEINS_full`, `IMDB-BINARY`, `REDDIT-BINARY` and
/// `Mutagenicity` are recognized too.
pub fn table5_row(name: &str) -> Option<&'static Table5Row> {
    let key = match normalize(name).as_str() {
        "PROTEINSFULL" | "PROTEINS" => "PROTEINSF".to_string(),
        "IMDBBINARY" => "IMDBB".to_string(),
        "REDDITBINARY" => "REDDITB".to_string(),
        "MUTAGENICITY" => "MUTAG".to_string(),
        other => other.to_string(),
    };
    TABLE5.iter().find(|r| normalize(r.name) == key)
}

fn default_n_train() -> usize {
    500
}
fn default_n_test() -> usize {
    200
}
fn default_ratio() -> f64 {
    0.1
}
fn default_test_fraction() -> f64 {
    TuSplit::default().test_fraction
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub variant: SyntheticVariant,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_ratio")]
    pub anomaly_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuSpec {
    /// File prefix, e.g. `MUTAG` for `MUTAG_A.txt`.
    pub name: String,
    /// Directory holding the `<name>_*.txt` files. Relative paths are
    /// resolved against the config file's directory.
    pub path: PathBuf,
    #[serde(default)]
    pub normal_class: i64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub anomaly_count: Option<usize>,
}

impl TuSpec {
    pub fn split(&self) -> TuSplit {
        TuSplit {
            normal_class: self.normal_class,
            test_fraction: self.test_fraction,
            anomaly_count: self.anomaly_count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Tu(TuSpec),
}

impl DatasetSpec {
    pub fn name(&self) -> &str {
        match self {
            Self::Synthetic(s) => s.variant.name(),
            Self::Tu(t) => &t.name,
        }
    }
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// `train.seed` is the base seed; repeat `r` trains with `seed + r`.
    pub train: TrainConfig,
    pub explanation: ExplanationRule,
    pub out: PathBuf,
    pub repeats: usize,
    /// Run repeats on separate threads.
    pub parallel: bool,
}

impl ExperimentConfig {
    /// Table 5 and artifact defaults for a dataset.
    pub fn for_dataset(dataset: DatasetSpec) -> Self {
        let mut train = TrainConfig::default();
        if let Some(r) = table5_row(dataset.name()) {
            apply_row(&mut train, r);
        }
        Self {
            dataset,
            train,
            explanation: ExplanationRule::default(),
            out: PathBuf::from("runs"),
            repeats: 5,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.repeats == 0 {
            return Err(RunError::Config("repeats must be at least 1".into()));
        }
        self.train
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        match self.explanation {
            ExplanationRule::Threshold(t) if !(t > 0.0 && t < 1.0) => Err(RunError::Config(
                format!("explanation threshold {t} outside (0, 1)"),
            )),
            _ => Ok(()),
        }
    }
}

fn apply_row(train: &mut TrainConfig, r: &Table5Row) {
    train.epochs = r.epochs;
    train.learning_rate = r.learning_rate;
    train.model = ModelConfig {
        extractor: r.extractor,
        extractor_layers: r.extractor_layers,
        extractor_hidden: r.extractor_hidden,
        encoder_layers: r.encoder_layers,
        encoder_hidden: r.encoder_hidden,
        ..train.model.clone()
    };
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    checkpoint_every: Option<usize>,
    clip_norm: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    extractor: Option<ExtractorKind>,
    extractor_layers: Option<usize>,
    extractor_hidden: Option<usize>,
    encoder_layers: Option<usize>,
    encoder_hidden: Option<usize>,
    dual_extractor: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoss {
    estimator: Option<Estimator>,
    temperature: Option<f64>,
    beta: Option<f64>,
    negative_mode: Option<NegativeMode>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dataset: DatasetSpec,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    loss: RawLoss,
    explanation: Option<ExplanationRule>,
    out: Option<PathBuf>,
    repeats: Option<usize>,
    seed: Option<u64>,
    parallel: Option<bool>,
}

macro_rules! set {
    ($dst:expr, $src:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

impl RawConfig {
    fn resolve(self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::for_dataset(self.dataset);
        let t = &mut cfg.train;
        set!(t.epochs, self.train.epochs);
        set!(t.learning_rate, self.train.learning_rate);
        set!(t.batch_size, self.train.batch_size);
        set!(t.checkpoint_every, self.train.checkpoint_every);
        t.clip_norm = self.train.clip_norm;
        set!(t.seed, self.seed);
        let m = &mut t.model;
        set!(m.extractor, self.model.extractor);
        set!(m.extractor_layers, self.model.extractor_layers);
        set!(m.extractor_hidden, self.model.extractor_hidden);
        set!(m.encoder_layers, self.model.encoder_layers);
        set!(m.encoder_hidden, self.model.encoder_hidden);
        set!(m.dual_extractor, self.model.dual_extractor);
        let l = &mut t.loss;
        set!(l.estimator, self.loss.estimator);
        set!(l.temperature, self.loss.temperature);
        set!(l.negative_mode, self.loss.negative_mode);
        l.beta = match self.loss.beta {
            Some(b) => b,
            None if t.model.dual_extractor => 1.0,
            None => LossConfig::default().beta,
        };
        set!(cfg.explanation, self.explanation);
        set!(cfg.out, self.out);
        set!(cfg.repeats, self.repeats);
        set!(cfg.parallel, self.parallel);
        cfg
    }
}

/// Parses a TOML experiment description. `base` resolves relative dataset
/// paths.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig, RunError> {
    let de = toml::Deserializer::parse(text).map_err(|e| RunError::Config(e.to_string()))?;
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().trim_end().to_string();
        RunError::Config(if path == "." || path.is_empty() {
            msg
        } else {
            format!("{path}: {msg}")
        })
    })?;
    let mut cfg = raw.resolve();
    if let DatasetSpec::Tu(t) = &mut cfg.dataset {
        if t.path.is_relative() {
            t.path = base.join(&t.path);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, RunError> {
    let text = fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}
