//! Experiment orchestration: config parsing, repeated generate/load, fit,
//! score, explain, and artifact persistence.
//!
//! Output layout:
//!
//! ```text
//! <out>/config.json
//! <out>/report.json
//! <out>/repeat_<r>/scores.csv
//! <out>/repeat_<r>/explanations.txt
//! <out>/repeat_<r>/model.ckpt
//! ```

mod config;
mod output;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{error, info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{gen_synthetic, load_tu_dataset, DataError, DatasetBundle};
use crate::evaluation::{
    evaluate_test_set, explanation_auc, extract_explanation, Averaging, EvalError, Level,
    MetricError,
};
use crate::training::{fit_with_history, save_checkpoint, CheckpointError, TrainError};

pub use config::{
    load_config, parse_config, table5_row, DatasetSpec, ExperimentConfig, SyntheticSpec, Table5Row,
    TuSpec, TABLE5,
};
pub use output::{
    format_explanations, format_scores, read_graph_dir, write_atomic, write_synthetic_dataset,
};

/// Coarse error classes, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Config,
    Data,
    Divergence,
    Metric,
    Io,
    Other,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("all {count} repeats failed; first error: {first}")]
    AllRepeatsFailed {
        count: usize,
        kind: FailureKind,
        first: String,
    },
}

impl From<CheckpointError> for RunError {
    fn from(e: CheckpointError) -> Self {
        Self::Train(e.into())
    }
}

impl RunError {
    pub fn kind(&self) -> FailureKind {
        use crate::model::ModelError;
        use crate::objective::ObjectiveError;
        match self {
            Self::Config(_) => FailureKind::Config,
            Self::Data(_) => FailureKind::Data,
            Self::Train(e) => match e {
                TrainError::Config(_)
                | TrainError::Model(ModelError::Config(_))
                | TrainError::Objective(ObjectiveError::Config(_)) => FailureKind::Config,
                TrainError::Divergence { .. } => FailureKind::Divergence,
                TrainError::Graph(_) | TrainError::Model(ModelError::Graph(_)) => FailureKind::Data,
                TrainError::Checkpoint(CheckpointError::Io { .. }) => FailureKind::Io,
                _ => FailureKind::Other,
            },
            Self::Eval(e) => match e {
                EvalError::Metric(_) => FailureKind::Metric,
                EvalError::Argument(_) => FailureKind::Config,
                _ => FailureKind::Other,
            },
            Self::Io { .. } => FailureKind::Io,
            Self::AllRepeatsFailed { kind, .. } => *kind,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepeatStatus {
    Ok,
    Failed,
}

/// Metrics of one repeat. Explanation AUCs are absent when the test set has
/// no ground-truth masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatRow {
    pub repeat: usize,
    pub seed: u64,
    pub status: RepeatStatus,
    pub error: Option<String>,
    pub error_kind: Option<FailureKind>,
    pub ad_auc: Option<f64>,
    pub nx_auc: Option<f64>,
    pub ex_auc: Option<f64>,
    pub nx_auc_macro: Option<f64>,
    pub ex_auc_macro: Option<f64>,
    pub final_loss: Option<f64>,
    pub train_seconds: f64,
    pub warnings: Vec<String>,
}

impl RepeatRow {
    fn failed(repeat: usize, seed: u64, err: &RunError, secs: f64) -> Self {
        Self {
            repeat,
            seed,
            status: RepeatStatus::Failed,
            error: Some(err.to_string()),
            error_kind: Some(err.kind()),
            ad_auc: None,
            nx_auc: None,
            ex_auc: None,
            nx_auc_macro: None,
            ex_auc_macro: None,
            final_loss: None,
            train_seconds: secs,
            warnings: Vec::new(),
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "ad_auc" => self.ad_auc,
            "nx_auc" => self.nx_auc,
            "ex_auc" => self.ex_auc,
            "nx_auc_macro" => self.nx_auc_macro,
            "ex_auc_macro" => self.ex_auc_macro,
            _ => None,
        }
    }
}

pub const METRICS: [&str; 5] = ["ad_auc", "nx_auc", "ex_auc", "nx_auc_macro", "ex_auc_macro"];

/// Mean and population standard deviation over the repeats that produced a value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub repeats: Vec<RepeatRow>,
    pub aggregate: BTreeMap<String, MetricSummary>,
    pub seeds: Vec<u64>,
    pub wall_clock_seconds: f64,
}

impl MetricsReport {
    pub fn failed_repeats(&self) -> Vec<usize> {
        self.repeats
            .iter()
            .filter(|r| r.status == RepeatStatus::Failed)
            .map(|r| r.repeat)
            .collect()
    }

    pub fn values(&self, metric: &str) -> Vec<f64> {
        self.repeats
            .iter()
            .filter_map(|r| r.metric(metric))
            .collect()
    }
}

pub fn aggregate(rows: &[RepeatRow]) -> BTreeMap<String, MetricSummary> {
    METRICS
        .iter()
        .filter_map(|&m| {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.metric(m)).collect();
            MetricSummary::of(&vals).map(|s| (m.to_string(), s))
        })
        .collect()
}

pub fn read_report(path: &Path) -> Result<MetricsReport, RunError> {
    let text = fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))
}

/// The dataset for one repeat.
pub fn build_dataset(spec: &DatasetSpec, seed: u64) -> Result<DatasetBundle, DataError> {
    let bundle = match spec {
        DatasetSpec::Synthetic(s) => {
            gen_synthetic(s.variant, s.n_train, s.n_test, s.anomaly_ratio, seed)?
        }
        DatasetSpec::Tu(t) => load_tu_dataset(&t.path, &t.name, &t.split(), seed)?,
    };
    bundle.validate(false)?;
    Ok(bundle)
}

fn optional_auc(
    result: Result<f64, MetricError>,
    what: &str,
    warnings: &mut Vec<String>,
) -> Result<Option<f64>, RunError> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(MetricError::SingleClass) => {
            warnings.push(format!(
                "{what} undefined: ground-truth masks hold a single class"
            ));
            Ok(None)
        }
        Err(e) => Err(EvalError::from(e).into()),
    }
}

/// Runs one repeat end to end and writes its artifacts into `dir`.
pub fn run_repeat(
    cfg: &ExperimentConfig,
    repeat: usize,
    seed: u64,
    dir: &Path,
) -> Result<RepeatRow, RunError> {
    let start = Instant::now();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let data = build_dataset(&cfg.dataset, seed)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let ckpt = dir.join("model.ckpt");
    let (state, history) = fit_with_history(&data.train, &train_cfg, Some(&ckpt))?;
    save_checkpoint(&state, &ckpt)?;

    let loss = &train_cfg.loss;
    let (table, outputs) = evaluate_test_set(
        &state.model,
        &data.test,
        loss.temperature,
        loss.negative_mode,
    )?;
    let mut warnings = table.warnings.clone();
    let ad_auc = table.auc().map_err(EvalError::from)?;
    let explanations = outputs
        .iter()
        .enumerate()
        .map(|(i, o)| extract_explanation(i, o, cfg.explanation))
        .collect::<Result<Vec<_>, _>>()?;

    let (mut nx, mut ex, mut nx_m, mut ex_m) = (None, None, None, None);
    if data.has_masks() {
        let auc = |level, avg| explanation_auc(&explanations, &data.test, level, avg);
        nx = optional_auc(auc(Level::Node, Averaging::Micro), "NX-AUC", &mut warnings)?;
        ex = optional_auc(auc(Level::Edge, Averaging::Micro), "EX-AUC", &mut warnings)?;
        nx_m = optional_auc(
            auc(Level::Node, Averaging::Macro),
            "macro NX-AUC",
            &mut warnings,
        )?;
        ex_m = optional_auc(
            auc(Level::Edge, Averaging::Macro),
            "macro EX-AUC",
            &mut warnings,
        )?;
    }

    write_atomic(&dir.join("scores.csv"), format_scores(&table).as_bytes())?;
    write_atomic(
        &dir.join("explanations.txt"),
        format_explanations(&explanations).as_bytes(),
    )?;
    Ok(RepeatRow {
        repeat,
        seed,
        status: RepeatStatus::Ok,
        error: None,
        error_kind: None,
        ad_auc: Some(ad_auc),
        nx_auc: nx,
        ex_auc: ex,
        nx_auc_macro: nx_m,
        ex_auc_macro: ex_m,
        final_loss: history.last().copied(),
        train_seconds: start.elapsed().as_secs_f64(),
        warnings,
    })
}

fn repeat_row(cfg: &ExperimentConfig, r: usize) -> RepeatRow {
    let seed = cfg.train.seed + r as u64;
    let dir = cfg.out.join(format!("repeat_{r}"));
    let start = Instant::now();
    info!("repeat {r}/{} (seed {seed})", cfg.repeats);
    match run_repeat(cfg, r, seed, &dir) {
        Ok(row) => {
            info!(
                "repeat {r}: AD-AUC {:.4}{}",
                row.ad_auc.unwrap_or(f64::NAN),
                row.nx_auc
                    .map_or(String::new(), |v| format!(", NX-AUC {v:.4}"))
            );
            row
        }
        Err(e) => {
            error!("repeat {r} FAILED: {e}");
            RepeatRow::failed(r, seed, &e, start.elapsed().as_secs_f64())
        }
    }
}

/// Runs every repeat (`r = 1..=R`, seed = base seed + r) and writes the
/// aggregate report. Fails only when every repeat failed; the report is
/// written either way.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    fs::create_dir_all(&cfg.out).map_err(|source| RunError::Io {
        path: cfg.out.clone(),
        source,
    })?;
    let echo = serde_json::to_string_pretty(cfg).expect("config serializes");
    write_atomic(&cfg.out.join("config.json"), echo.as_bytes())?;

    let indices: Vec<usize> = (1..=cfg.repeats).collect();
    let rows: Vec<RepeatRow> = if cfg.parallel && cfg.repeats > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = indices
                .iter()
                .map(|&r| s.spawn(move || repeat_row(cfg, r)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("repeat thread panicked"))
                .collect()
        })
    } else {
        indices.iter().map(|&r| repeat_row(cfg, r)).collect()
    };

    let report = MetricsReport {
        config: cfg.clone(),
        aggregate: aggregate(&rows),
        seeds: rows.iter().map(|r| r.seed).collect(),
        repeats: rows,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&cfg.out.join("report.json"), json.as_bytes())?;

    let failed = report.failed_repeats();
    if !failed.is_empty() {
        warn!("FAILED repeats: {failed:?}");
    }
    if failed.len() == report.repeats.len() {
        let first = &report.repeats[0];
        return Err(RunError::AllRepeatsFailed {
            count: failed.len(),
            kind: first.error_kind.unwrap_or(FailureKind::Other),
            first: first.error.clone().unwrap_or_default(),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::SyntheticVariant;

    fn tiny(out: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::for_dataset(DatasetSpec::Synthetic(SyntheticSpec {
            variant: SyntheticVariant::MotifType,
            n_train: 12,
            n_test: 10,
            anomaly_ratio: 0.3,
        }));
        cfg.train.epochs = 2;
        cfg.train.batch_size = 6;
        cfg.train.model.encoder_layers = 2;
        cfg.train.model.encoder_hidden = 8;
        cfg.train.model.extractor_hidden = 4;
        cfg.repeats = 2;
        cfg.out = out.to_path_buf();
        cfg
    }

    #[test]
    fn writes_artifacts_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.repeats.len(), 2);
        assert_eq!(report.seeds, vec![1, 2]);
        for r in 1..=2 {
            let rd = dir.path().join(format!("repeat_{r}"));
            let scores = fs::read_to_string(rd.join("scores.csv")).unwrap();
            let mut lines = scores.lines();
            assert_eq!(lines.next(), Some("graph_id,score,label"));
            assert_eq!(lines.count(), 10);
            assert!(rd.join("model.ckpt").exists());
            let ex = fs::read_to_string(rd.join("explanations.txt")).unwrap();
            assert_eq!(ex.lines().filter(|l| l.starts_with("graph ")).count(), 10);
        }
        let back = read_report(&dir.path().join("report.json")).unwrap();
        assert_eq!(back.repeats, report.repeats);
        assert_eq!(back.config, cfg);
        for m in ["ad_auc", "nx_auc", "ex_auc"] {
            let s = MetricSummary::of(&report.values(m)).unwrap();
            let a = back.aggregate[m];
            assert!((a.mean - s.mean).abs() < 1e-12 && (a.std - s.std).abs() < 1e-12);
        }
    }

    #[test]
    fn single_repeat_has_zero_std() {
        let s = MetricSummary::of(&[0.7]).unwrap();
        assert_eq!((s.mean, s.std, s.count), (0.7, 0.0, 1));
        let s = MetricSummary::of(&[0.5, 1.0]).unwrap();
        assert_eq!(s.std, 0.25);
    }

    #[test]
    fn parallel_matches_sequential() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let seq = tiny(a.path());
        let par = ExperimentConfig {
            parallel: true,
            ..tiny(b.path())
        };
        run_experiment(&seq).unwrap();
        run_experiment(&par).unwrap();
        for r in 1..=2 {
            let f = |d: &Path| fs::read(d.join(format!("repeat_{r}/scores.csv"))).unwrap();
            assert_eq!(f(a.path()), f(b.path()));
        }
    }

    #[test]
    fn all_failed_repeats_surface_kind() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path());
        cfg.dataset = DatasetSpec::Tu(TuSpec {
            name: "MISSING".into(),
            path: dir.path().join("nowhere"),
            normal_class: 0,
            test_fraction: 0.2,
            anomaly_count: None,
        });
        let err = run_experiment(&cfg).unwrap_err();
        assert_eq!(err.kind(), FailureKind::Data);
        let report = read_report(&dir.path().join("report.json")).unwrap();
        assert_eq!(report.failed_repeats(), vec![1, 2]);
        assert!(report.aggregate.is_empty());
    }
}
