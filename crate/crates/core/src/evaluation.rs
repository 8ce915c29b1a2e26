//! Test-set scoring, explanation subgraphs and ROC-AUC metrics.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::model::{ForwardOutput, ModelError, Signet};
use crate::numerics::Tensor;
use crate::objective::{anomaly_scores, NegativeMode, ObjectiveError};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric undefined: labels contain a single class")]
    SingleClass,
    #[error("metric unavailable: graph {graph} has no ground-truth mask")]
    MissingMasks { graph: usize },
    #[error("{what}: {got} values for {expected} labels")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("score {index} is not finite")]
    NonFinite { index: usize },
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub graph_id: usize,
    pub score: f64,
    pub label: Option<u8>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    pub warnings: Vec<String>,
}

impl ScoreTable {
    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }

    /// AD-AUC against the stored labels.
    pub fn auc(&self) -> Result<f64, MetricError> {
        let labels: Vec<bool> = self.rows.iter().map(|r| r.label == Some(1)).collect();
        roc_auc(&self.scores(), &labels)
    }
}

/// Scores every test graph against the rest of the test set as negative pool.
/// Edgeless graphs have no dual view; they are ranked above every other graph.
pub fn evaluate_test_set(
    model: &Signet,
    graphs: &[Graph],
    tau: f64,
    mode: NegativeMode,
) -> Result<(ScoreTable, Vec<ForwardOutput>), EvalError> {
    if graphs.len() < 2 {
        return Err(EvalError::Argument(format!(
            "need at least 2 test graphs, got {}",
            graphs.len()
        )));
    }
    let refs: Vec<&Graph> = graphs.iter().collect();
    let outputs = model.forward_graphs(&refs)?;
    let scored: Vec<usize> = (0..graphs.len())
        .filter(|&i| graphs[i].num_edges() > 0)
        .collect();
    let d = model.embedding_dim();
    let stack = |f: fn(&ForwardOutput) -> &Vec<f64>| {
        let data = scored
            .iter()
            .flat_map(|&i| f(&outputs[i]).iter().copied())
            .collect();
        Tensor::new(scored.len(), d, data).expect("embedding width")
    };
    let h = stack(|o| &o.h_sub);
    let hs = stack(|o| &o.h_dual_sub);
    let pool_scores = anomaly_scores(&h, &hs, tau, mode)?;

    let mut scores = vec![f64::NAN; graphs.len()];
    for (k, &i) in scored.iter().enumerate() {
        scores[i] = pool_scores[k];
    }
    let mut warnings = Vec::new();
    let top = pool_scores
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    for (i, g) in graphs.iter().enumerate() {
        if g.num_edges() == 0 {
            scores[i] = top + 1.0;
            let msg = format!("test graph {i} has no edges; scored as maximally anomalous");
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite { index }.into());
    }
    let rows = graphs
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(graph_id, (g, score))| ScoreRow {
            graph_id,
            score,
            label: g.label,
        })
        .collect();
    Ok((ScoreTable { rows, warnings }, outputs))
}

pub fn score_test_set(
    model: &Signet,
    graphs: &[Graph],
    tau: f64,
    mode: NegativeMode,
) -> Result<ScoreTable, EvalError> {
    Ok(evaluate_test_set(model, graphs, tau, mode)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationRule {
    /// The `k` most probable nodes and the `min(k, m)` most probable edges.
    TopK(usize),
    /// Every entry strictly above the threshold.
    Threshold(f64),
}

impl Default for ExplanationRule {
    fn default() -> Self {
        Self::Threshold(0.5)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplanationResult {
    pub graph_id: usize,
    pub node_probs: Vec<f64>,
    /// Unclamped edge scores.
    pub edge_probs: Vec<f64>,
    /// Ascending indices.
    pub selected_nodes: Vec<usize>,
    pub selected_edges: Vec<usize>,
    pub rule: ExplanationRule,
}

fn top_k(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

fn above(probs: &[f64], t: f64) -> Vec<usize> {
    (0..probs.len()).filter(|&i| probs[i] > t).collect()
}

pub fn extract_explanation(
    graph_id: usize,
    out: &ForwardOutput,
    rule: ExplanationRule,
) -> Result<ExplanationResult, EvalError> {
    let (nodes, edges) = match rule {
        ExplanationRule::TopK(k) => {
            if k > out.p.len() {
                return Err(EvalError::Argument(format!(
                    "top-k of {k} exceeds the {} nodes of graph {graph_id}",
                    out.p.len()
                )));
            }
            (
                top_k(&out.p, k),
                top_k(&out.p_star_raw, k.min(out.p_star_raw.len())),
            )
        }
        ExplanationRule::Threshold(t) => {
            if !(t > 0.0 && t < 1.0) {
                return Err(EvalError::Argument(format!("threshold {t} outside (0, 1)")));
            }
            (above(&out.p, t), above(&out.p_star_raw, t))
        }
    };
    Ok(ExplanationResult {
        graph_id,
        node_probs: out.p.clone(),
        edge_probs: out.p_star_raw.clone(),
        selected_nodes: nodes,
        selected_edges: edges,
        rule,
    })
}

/// Mann-Whitney ROC-AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length {
            what: "roc_auc",
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite { index });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based average ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Node,
    Edge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// One AUC over the concatenation of all graphs.
    #[default]
    Micro,
    /// Mean of per-graph AUCs over graphs whose mask has both classes.
    Macro,
}

/// NX-AUC (node level) or EX-AUC (edge level) of explanation probabilities
/// against ground-truth masks.
pub fn explanation_auc(
    results: &[ExplanationResult],
    graphs: &[Graph],
    level: Level,
    averaging: Averaging,
) -> Result<f64, MetricError> {
    if results.len() != graphs.len() {
        return Err(MetricError::Length {
            what: "explanation_auc",
            expected: graphs.len(),
            got: results.len(),
        });
    }
    let mut pairs = Vec::with_capacity(results.len());
    for (i, (r, g)) in results.iter().zip(graphs).enumerate() {
        let (probs, mask) = match level {
            Level::Node => (&r.node_probs, g.gt_node_mask.as_ref()),
            Level::Edge => (&r.edge_probs, g.gt_edge_mask.as_ref()),
        };
        let mask = mask.ok_or(MetricError::MissingMasks { graph: i })?;
        if mask.len() != probs.len() {
            return Err(MetricError::Length {
                what: "explanation mask",
                expected: mask.len(),
                got: probs.len(),
            });
        }
        pairs.push((probs, mask));
    }
    match averaging {
        Averaging::Micro => {
            let scores: Vec<f64> = pairs.iter().flat_map(|(p, _)| p.iter().copied()).collect();
            let labels: Vec<bool> = pairs.iter().flat_map(|(_, m)| m.iter().copied()).collect();
            roc_auc(&scores, &labels)
        }
        Averaging::Macro => {
            let mut aucs = Vec::new();
            for (p, m) in pairs {
                match roc_auc(p, m) {
                    Ok(a) => aucs.push(a),
                    Err(MetricError::SingleClass) => {}
                    Err(e) => return Err(e),
                }
            }
            if aucs.is_empty() {
                return Err(MetricError::SingleClass);
            }
            Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
        }
    }
}
