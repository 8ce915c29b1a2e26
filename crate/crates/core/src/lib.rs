//! Self-interpretable graph-level anomaly detection.
//!
//! A graph and its dual hypergraph are encoded by a GIN and a hypergraph
//! network after a shared extractor masks both views down to a bottleneck
//! subgraph. Training maximizes cross-view mutual information on normal
//! graphs; at test time low cross-view agreement flags an anomaly and the
//! extractor's node and edge probabilities explain it.

pub mod datasets;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod runner;
pub mod training;

pub use datasets::{gen_synthetic, load_tu_dataset, DataError, DatasetBundle, SyntheticVariant};
pub use evaluation::{
    explanation_auc, extract_explanation, roc_auc, score_test_set, EvalError, ExplanationResult,
    ExplanationRule, MetricError, ScoreTable,
};
pub use graph::{dht_transform, DualHypergraph, Graph, GraphBatch, GraphError};
pub use model::{ForwardOutput, ModelConfig, ModelError, Signet};
pub use numerics::{Tape, Tensor, TensorError, Var};
pub use objective::{Estimator, LossConfig, NegativeMode, ObjectiveError};
pub use runner::{load_config, run_experiment, ExperimentConfig, MetricsReport, RunError};
pub use training::{fit, load_checkpoint, save_checkpoint, ModelState, TrainConfig, TrainError};
