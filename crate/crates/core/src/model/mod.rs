//! Bottleneck subgraph extractor and the two view encoders.
//!
//! A forward pass computes node probabilities `p` with the extractor, lifts
//! them to edge probabilities `p*_e = p_i p_j`, masks node features by `p` and
//! dual features by `p*`, then encodes the masked graph with GIN layers and the
//! masked dual hypergraph with hypergraph convolutions. Both branches use sum
//! pooling.
//!
//! With [`ModelConfig::dual_extractor`] set, a second extractor over the dual
//! hypergraph produces `p*` directly and the lifted `p` is only used by the
//! alignment regularizer.

mod layers;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{dht_transform, DualHypergraph, Graph, GraphBatch, GraphError};
use crate::numerics::{SegmentMode, Tape, Tensor, TensorError, Var};
use layers::{Extractor, GinStack, HgnnStack};

pub use params::{glorot_bound, glorot_uniform, Bound, Linear, ParamId, ParamStore};

/// Lower clamp applied to lifted edge probabilities.
pub const EDGE_PROB_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{what} dimension {got} does not match the model's {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("parameter mismatch: {0}")]
    Params(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    #[serde(alias = "gin")]
    Gnn,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub extractor: ExtractorKind,
    pub extractor_layers: usize,
    pub extractor_hidden: usize,
    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    /// Separate extractor on the dual hypergraph instead of lifting `p`.
    pub dual_extractor: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorKind::Gnn,
            extractor_layers: 2,
            extractor_hidden: 16,
            encoder_layers: 5,
            encoder_hidden: 16,
            dual_extractor: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("extractor_layers", self.extractor_layers),
            ("extractor_hidden", self.extractor_hidden),
            ("encoder_layers", self.encoder_layers),
            ("encoder_hidden", self.encoder_hidden),
        ] {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// How node and edge probabilities enter the feature masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MaskMode {
    #[default]
    Learned,
    /// Masks fixed to one; the encoders see the raw features.
    Identity,
}

/// Tape handles produced by [`Signet::forward_batch`].
#[derive(Clone, Copy, Debug)]
pub struct BatchOutput {
    /// `N x 1` node probabilities.
    pub p: Var,
    /// `M x 1` edge probabilities used to mask the dual features.
    pub p_star: Var,
    /// `M x 1` unclamped edge scores used for ranking.
    pub p_star_raw: Var,
    /// `M x 1` clamped products `p_i p_j`; equal to `p_star` unless a dual
    /// extractor is present.
    pub p_lift: Var,
    /// `B x D` pooled embeddings of the masked graphs.
    pub h: Var,
    /// `B x D` pooled embeddings of the masked dual hypergraphs.
    pub h_dual: Var,
}

/// Per-graph forward results as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub p: Vec<f64>,
    pub p_star: Vec<f64>,
    pub p_star_raw: Vec<f64>,
    pub h_sub: Vec<f64>,
    pub h_dual_sub: Vec<f64>,
}

/// Architecture plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Signet {
    config: ModelConfig,
    node_dim: usize,
    dual_dim: usize,
    params: ParamStore,
    extractor: Extractor,
    dual_extractor: Option<(HgnnStack, Linear)>,
    gin: GinStack,
    hgnn: HgnnStack,
}

impl Signet {
    /// Builds the model with Glorot-uniform weights and zero biases drawn from
    /// a generator seeded by `seed`.
    pub fn new(
        config: ModelConfig,
        node_dim: usize,
        dual_dim: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if node_dim == 0 || dual_dim == 0 {
            return Err(ModelError::Config(
                "feature dimensions must be positive".into(),
            ));
        }
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (le, de) = (config.extractor_layers, config.extractor_hidden);
        let extractor = match config.extractor {
            ExtractorKind::Gnn => Extractor::Gnn {
                body: GinStack::new(&mut store, "extractor", node_dim, de, le, rng),
                head: Linear::new(&mut store, "extractor.head", de, 1, rng),
            },
            ExtractorKind::Mlp => Extractor::Mlp {
                body: (0..le)
                    .map(|l| {
                        let d = if l == 0 { node_dim } else { de };
                        Linear::new(&mut store, &format!("extractor.{l}"), d, de, rng)
                    })
                    .collect(),
                head: Linear::new(&mut store, "extractor.head", de, 1, rng),
            },
        };
        let dual_extractor = config.dual_extractor.then(|| {
            (
                HgnnStack::new(&mut store, "dual_extractor", dual_dim, de, le, rng),
                Linear::new(&mut store, "dual_extractor.head", de, 1, rng),
            )
        });
        let (ln, dn) = (config.encoder_layers, config.encoder_hidden);
        let gin = GinStack::new(&mut store, "gin", node_dim, dn, ln, rng);
        let hgnn = HgnnStack::new(&mut store, "hgnn", dual_dim, dn, ln, rng);
        Ok(Self {
            config,
            node_dim,
            dual_dim,
            params: store,
            extractor,
            dual_extractor,
            gin,
            hgnn,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn dual_dim(&self) -> usize {
        self.dual_dim
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.encoder_hidden
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Weight and bias of the layer producing the extractor logits.
    pub fn extractor_head(&self) -> Linear {
        self.extractor.head()
    }

    /// Replaces every parameter; names and shapes must match the layout.
    pub fn load_params(&mut self, named: Vec<(String, Tensor)>) -> Result<(), ModelError> {
        if named.len() != self.params.len() {
            return Err(ModelError::Params(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                named.len()
            )));
        }
        for (i, (name, t)) in named.iter().enumerate() {
            let (want_name, want) = (&self.params.names()[i], &self.params.tensors()[i]);
            if name != want_name || t.shape() != want.shape() {
                return Err(ModelError::Params(format!(
                    "tensor {i}: found {name} {:?}, expected {want_name} {:?}",
                    t.shape(),
                    want.shape()
                )));
            }
        }
        for (slot, (_, t)) in self.params.tensors_mut().iter_mut().zip(named) {
            *slot = t;
        }
        Ok(())
    }

    fn check_batch(&self, batch: &GraphBatch) -> Result<(), ModelError> {
        let got = batch.node_features.cols();
        if got != self.node_dim {
            return Err(ModelError::Dimension {
                what: "node feature",
                expected: self.node_dim,
                got,
            });
        }
        let got = batch.dual_features.cols();
        if got != self.dual_dim && batch.num_edges() > 0 {
            return Err(ModelError::Dimension {
                what: "dual feature",
                expected: self.dual_dim,
                got,
            });
        }
        Ok(())
    }

    /// Node embeddings of the GIN encoder for features `x`.
    pub fn gin_nodes(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        batch: &GraphBatch,
    ) -> Result<Var, ModelError> {
        Ok(self.gin.forward(tape, p, x, batch)?)
    }

    /// Dual-node embeddings of the hypergraph encoder for dual features `x`.
    pub fn hgnn_nodes(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        batch: &GraphBatch,
    ) -> Result<Var, ModelError> {
        Ok(self.hgnn.forward(tape, p, x, batch)?)
    }

    /// Sum-pooled GIN embeddings, `B x D`.
    pub fn gin_encode(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        batch: &GraphBatch,
    ) -> Result<Var, ModelError> {
        let nodes = self.gin_nodes(tape, p, x, batch)?;
        Ok(tape.segment_reduce(
            nodes,
            batch.node_segments.clone(),
            SegmentMode::Sum,
            batch.num_graphs(),
        )?)
    }

    /// Sum-pooled hypergraph embeddings, `B x D`.
    pub fn hgnn_encode(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        batch: &GraphBatch,
    ) -> Result<Var, ModelError> {
        let nodes = self.hgnn_nodes(tape, p, x, batch)?;
        Ok(tape.segment_reduce(
            nodes,
            batch.edge_segments.clone(),
            SegmentMode::Sum,
            batch.num_graphs(),
        )?)
    }

    /// Node probabilities `σ(logits)`, `N x 1`.
    pub fn node_probs(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        batch: &GraphBatch,
    ) -> Result<Var, ModelError> {
        let logits = self.extractor.logits(tape, p, x, batch)?;
        Ok(tape.sigmoid(logits))
    }

    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: &GraphBatch,
        mask: MaskMode,
    ) -> Result<BatchOutput, ModelError> {
        self.check_batch(batch)?;
        let x = tape.constant(batch.node_features.clone());
        let xd = tape.constant(batch.dual_features.clone());
        let probs = self.node_probs(tape, p, x, batch)?;
        let src = tape.gather_rows(probs, batch.edge_src.clone())?;
        let dst = tape.gather_rows(probs, batch.edge_dst.clone())?;
        let lift_raw = tape.mul(src, dst)?;
        let lift = tape.clamp(lift_raw, EDGE_PROB_FLOOR, 1.0);
        let (p_star, p_star_raw) = match &self.dual_extractor {
            None => (lift, lift_raw),
            Some((body, head)) => {
                let hidden = body.forward(tape, p, xd, batch)?;
                let logits = head.apply(tape, p, hidden)?;
                let q = tape.sigmoid(logits);
                (q, q)
            }
        };
        let (mask_nodes, mask_edges) = match mask {
            MaskMode::Learned => (probs, p_star),
            MaskMode::Identity => (
                tape.constant(Tensor::ones(batch.num_nodes(), 1)),
                tape.constant(Tensor::ones(batch.num_edges(), 1)),
            ),
        };
        let xs = tape.scale_rows(x, mask_nodes)?;
        let xds = tape.scale_rows(xd, mask_edges)?;
        let h = self.gin_encode(tape, p, xs, batch)?;
        let h_dual = self.hgnn_encode(tape, p, xds, batch)?;
        Ok(BatchOutput {
            p: probs,
            p_star,
            p_star_raw,
            p_lift: lift,
            h,
            h_dual,
        })
    }

    /// Evaluates a batch without recording gradients and splits the results
    /// per graph.
    pub fn forward_graphs(&self, gs: &[&Graph]) -> Result<Vec<ForwardOutput>, ModelError> {
        self.forward_graphs_with(gs, MaskMode::Learned)
    }

    pub fn forward_graphs_with(
        &self,
        gs: &[&Graph],
        mask: MaskMode,
    ) -> Result<Vec<ForwardOutput>, ModelError> {
        let batch = GraphBatch::from_refs(gs)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let out = self.forward_batch(&mut tape, &bound, &batch, mask)?;
        let (node_off, edge_off) = batch.offsets();
        let slice =
            |v: Var, start: usize, len: usize| tape.value(v).data()[start..start + len].to_vec();
        Ok((0..gs.len())
            .map(|g| {
                let (n0, n) = (node_off[g], batch.node_counts[g]);
                let (e0, m) = (edge_off[g], batch.edge_counts[g]);
                ForwardOutput {
                    p: slice(out.p, n0, n),
                    p_star: slice(out.p_star, e0, m),
                    p_star_raw: slice(out.p_star_raw, e0, m),
                    h_sub: tape.value(out.h).row(g).to_vec(),
                    h_dual_sub: tape.value(out.h_dual).row(g).to_vec(),
                }
            })
            .collect())
    }

    /// Single-graph forward pass. Edgeless graphs are rejected because their
    /// dual hypergraph is empty.
    pub fn forward(&self, g: &Graph) -> Result<ForwardOutput, ModelError> {
        dht_transform(g)?;
        let mut out = self.forward_graphs(&[g])?;
        Ok(out.remove(0))
    }
}

/// Edge probabilities `p_i p_j` clamped to `[EDGE_PROB_FLOOR, 1]`.
pub fn lift_edge_probs(p: &[f64], edges: &[(usize, usize)]) -> Vec<f64> {
    lift_edge_probs_raw(p, edges)
        .into_iter()
        .map(|v| v.clamp(EDGE_PROB_FLOOR, 1.0))
        .collect()
}

/// Unclamped products `p_i p_j`.
pub fn lift_edge_probs_raw(p: &[f64], edges: &[(usize, usize)]) -> Vec<f64> {
    edges.iter().map(|&(i, j)| p[i] * p[j]).collect()
}

/// Scales row `i` of the node features by `p[i]` and row `e` of the dual
/// features by `p_star[e]`.
pub fn mask_subgraphs(
    g: &Graph,
    dual: &DualHypergraph,
    p: &[f64],
    p_star: &[f64],
) -> Result<(Tensor, Tensor), ModelError> {
    let scale = |x: &Tensor, s: &[f64], what| {
        if s.len() != x.rows() {
            return Err(ModelError::Dimension {
                what,
                expected: x.rows(),
                got: s.len(),
            });
        }
        let mut out = x.clone();
        for (r, &c) in s.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|v| *v *= c);
        }
        Ok(out)
    };
    Ok((
        scale(&g.node_features, p, "node probability")?,
        scale(&dual.dual_features, p_star, "edge probability")?,
    ))
}

impl Bound {
    /// Wraps externally recorded handles, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::datasets::{degree_features, gen_synthetic, SyntheticVariant};
    use crate::graph::{batch_graphs, fixtures};

    fn model(kind: ExtractorKind, dual: bool, d: usize) -> Signet {
        let cfg = ModelConfig {
            extractor: kind,
            extractor_layers: 2,
            extractor_hidden: 8,
            encoder_layers: 3,
            encoder_hidden: 8,
            dual_extractor: dual,
        };
        Signet::new(cfg, d, d, 7).unwrap()
    }

    fn cycle(n: usize) -> Graph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::new(n, edges, Tensor::ones(n, 3)).unwrap()
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Graph {
        let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
        for _ in 0..n {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            if a != b && !edges.contains(&(a.min(b), a.max(b))) {
                edges.push((a.min(b), a.max(b)));
            }
        }
        let vals: Vec<f64> = (0..n * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = Tensor::new(n, 3, vals).unwrap();
        Graph::new(n, edges, x).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len()
            && a.iter()
                .zip(b)
                .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs()))
    }

    #[test]
    fn output_shapes() {
        let g = fixtures::house();
        let m = model(ExtractorKind::Gnn, false, 1);
        let out = m.forward(&g).unwrap();
        assert_eq!(out.p.len(), 5);
        assert_eq!(out.p_star.len(), 6);
        assert_eq!(out.h_sub.len(), 8);
        assert_eq!(out.h_dual_sub.len(), 8);
        assert!(out.p.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(out.p_star.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let g = fixtures::house();
        let m = model(ExtractorKind::Gnn, false, 1);
        assert_eq!(m.forward(&g).unwrap(), m.forward(&g).unwrap());
    }

    #[test]
    fn edgeless_graph_is_rejected() {
        let g = Graph::new(2, Vec::new(), Tensor::ones(2, 1)).unwrap();
        let m = model(ExtractorKind::Gnn, false, 1);
        assert!(matches!(
            m.forward(&g),
            Err(ModelError::Graph(GraphError::Edgeless))
        ));
    }

    #[test]
    fn zero_head_gives_half() {
        let mut m = model(ExtractorKind::Gnn, false, 1);
        let head = m.extractor_head();
        for id in [head.weight, head.bias] {
            m.params_mut().tensors_mut()[id.0].data_mut().fill(0.0);
        }
        let out = m.forward(&fixtures::house()).unwrap();
        assert!(out.p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn mlp_identical_features_identical_probs() {
        let m = model(ExtractorKind::Mlp, false, 1);
        let out = m.forward(&fixtures::house()).unwrap();
        assert!(out.p.iter().all(|&v| v == out.p[0]));
    }

    #[test]
    fn gnn_on_cycle_is_uniform() {
        let m = model(ExtractorKind::Gnn, false, 3);
        let out = m.forward(&cycle(6)).unwrap();
        assert!(out.p.iter().all(|&v| (v - out.p[0]).abs() < 1e-9));
    }

    #[test]
    fn lift_examples() {
        assert_eq!(
            lift_edge_probs(&[1.0; 3], &[(0, 1), (1, 2)]),
            vec![1.0, 1.0]
        );
        assert_eq!(
            lift_edge_probs(&[0.5, 1.0, 0.2], &[(0, 1), (1, 2)]),
            vec![0.5, 0.2]
        );
        assert_eq!(
            lift_edge_probs(&[0.0, 0.3], &[(0, 1)]),
            vec![EDGE_PROB_FLOOR]
        );
        assert_eq!(lift_edge_probs_raw(&[0.0, 0.3], &[(0, 1)]), vec![0.0]);
    }

    #[test]
    fn lift_matches_forward() {
        let g = fixtures::house();
        let m = model(ExtractorKind::Gnn, false, 1);
        let out = m.forward(&g).unwrap();
        assert!(close(
            &lift_edge_probs(&out.p, &g.edges),
            &out.p_star,
            1e-15
        ));
        assert!(close(
            &lift_edge_probs_raw(&out.p, &g.edges),
            &out.p_star_raw,
            1e-15
        ));
    }

    #[test]
    fn lift_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let edges = fixtures::house().edges;
        for _ in 0..200 {
            let p: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let base = lift_edge_probs(&p, &edges);
            let i = rng.random_range(0..5);
            let mut q = p.clone();
            q[i] = rng.random_range(p[i]..=1.0);
            let raised = lift_edge_probs(&q, &edges);
            for (e, &(a, b)) in edges.iter().enumerate() {
                if a == i || b == i {
                    assert!(raised[e] >= base[e]);
                } else {
                    assert_eq!(raised[e], base[e]);
                }
            }
        }
    }

    #[test]
    fn masking_examples() {
        let g = fixtures::path3();
        let dual = dht_transform(&g).unwrap();
        let (x, xd) = mask_subgraphs(&g, &dual, &[1.0; 3], &[1.0; 2]).unwrap();
        assert_eq!(x, g.node_features);
        assert_eq!(xd, dual.dual_features);
        let (x, _) = mask_subgraphs(&g, &dual, &[0.0; 3], &[1.0; 2]).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
        let (x, _) = mask_subgraphs(&g, &dual, &[1.0, 1.0, 0.5], &[1.0; 2]).unwrap();
        assert_eq!(x.row(2), &[1.0, 1.5]);
        assert_eq!(x.row(1), g.node_features.row(1));
        assert!(mask_subgraphs(&g, &dual, &[1.0; 2], &[1.0; 2]).is_err());
    }

    #[test]
    fn identity_mask_matches_plain_encoders() {
        let g = fixtures::house();
        let m = model(ExtractorKind::Gnn, false, 1);
        let masked = m.forward_graphs_with(&[&g], MaskMode::Identity).unwrap();
        let batch = batch_graphs(&[g]).unwrap();
        let mut tape = Tape::new();
        let bound = m.params().bind(&mut tape, false);
        let x = tape.constant(batch.node_features.clone());
        let h = m.gin_encode(&mut tape, &bound, x, &batch).unwrap();
        let xd = tape.constant(batch.dual_features.clone());
        let hd = m.hgnn_encode(&mut tape, &bound, xd, &batch).unwrap();
        assert!(close(&masked[0].h_sub, tape.value(h).data(), 1e-12));
        assert!(close(&masked[0].h_dual_sub, tape.value(hd).data(), 1e-12));
    }

    #[test]
    fn components_add_up() {
        let a = fixtures::house();
        let b = cycle(4);
        let b = Graph::new(4, b.edges, Tensor::ones(4, 1)).unwrap();
        let mut edges = a.edges.clone();
        edges.extend(b.edges.iter().map(|&(u, v)| (u + 5, v + 5)));
        let union = Graph::new(9, edges, Tensor::ones(9, 1)).unwrap();
        let m = model(ExtractorKind::Gnn, false, 1);
        let whole = m.forward(&union).unwrap();
        let (oa, ob) = (m.forward(&a).unwrap(), m.forward(&b).unwrap());
        let sum: Vec<f64> = oa.h_sub.iter().zip(&ob.h_sub).map(|(x, y)| x + y).collect();
        assert!(close(&whole.h_sub, &sum, 1e-12));
        let sum: Vec<f64> = oa
            .h_dual_sub
            .iter()
            .zip(&ob.h_dual_sub)
            .map(|(x, y)| x + y)
            .collect();
        assert!(close(&whole.h_dual_sub, &sum, 1e-12));
    }

    #[test]
    fn dual_nodes_of_triangle_are_symmetric() {
        let g = fixtures::triangle();
        let m = model(ExtractorKind::Gnn, false, 1);
        let batch = batch_graphs(&[g]).unwrap();
        let mut tape = Tape::new();
        let bound = m.params().bind(&mut tape, false);
        let xd = tape.constant(batch.dual_features.clone());
        let nodes = m.hgnn_nodes(&mut tape, &bound, xd, &batch).unwrap();
        let v = tape.value(nodes);
        for r in 1..3 {
            assert!(close(v.row(r), v.row(0), 1e-12));
        }
    }

    #[test]
    fn two_extractor_probs_come_from_dual() {
        let g = fixtures::house();
        let m = model(ExtractorKind::Gnn, true, 1);
        let out = m.forward(&g).unwrap();
        assert_eq!(out.p_star, out.p_star_raw);
        assert!(out.p_star.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(m
            .params()
            .names()
            .iter()
            .any(|n| n.starts_with("dual_extractor")));
    }

    #[test]
    fn load_params_checks_layout() {
        let mut m = model(ExtractorKind::Gnn, false, 1);
        let other = model(ExtractorKind::Mlp, false, 1);
        let named: Vec<_> = other
            .params()
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        assert!(m.load_params(named).is_err());
        let same: Vec<_> = m
            .params()
            .iter()
            .map(|(n, t)| (n.to_string(), t.map(|v| v * 2.0)))
            .collect();
        m.load_params(same.clone()).unwrap();
        assert_eq!(m.params().tensors()[0], same[0].1);
    }

    #[test]
    fn synthetic_batch_runs() {
        let b = gen_synthetic(SyntheticVariant::MotifType, 4, 4, 0.5, 0).unwrap();
        let m = Signet::new(ModelConfig::default(), b.feature_dim(), b.feature_dim(), 0).unwrap();
        let refs: Vec<&Graph> = b.test.iter().collect();
        let outs = m.forward_graphs(&refs).unwrap();
        for (o, g) in outs.iter().zip(&b.test) {
            assert_eq!(o.p.len(), g.num_nodes);
            assert_eq!(o.p_star.len(), g.num_edges());
            assert!(o.h_sub.iter().chain(&o.h_dual_sub).all(|v| v.is_finite()));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn relabeling_nodes_is_invariant(seed in 0u64..1000, n in 3usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, n);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let pg = g.permute_nodes(&perm);
            let m = model(ExtractorKind::Gnn, false, 3);
            let (a, b) = (m.forward(&g).unwrap(), m.forward(&pg).unwrap());
            prop_assert!(close(&a.h_sub, &b.h_sub, 1e-9));
            prop_assert!(close(&a.h_dual_sub, &b.h_dual_sub, 1e-9));
            for (v, &pv) in perm.iter().enumerate() {
                prop_assert!((a.p[v] - b.p[pv]).abs() < 1e-12);
            }
        }

        #[test]
        fn reordering_dual_nodes_is_invariant(seed in 0u64..1000, n in 3usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_graph(&mut rng, n);
            let mut edges = g.edges.clone();
            edges.shuffle(&mut rng);
            let h = Graph::new(n, edges, g.node_features.clone()).unwrap();
            let m = model(ExtractorKind::Gnn, false, 3);
            let (a, b) = (m.forward(&g).unwrap(), m.forward(&h).unwrap());
            prop_assert!(close(&a.h_dual_sub, &b.h_dual_sub, 1e-9));
        }
    }

    #[test]
    fn degree_features_feed_the_model() {
        let g = fixtures::house();
        let x = degree_features(g.num_nodes, &g.edges);
        let g = Graph::new(g.num_nodes, g.edges, x).unwrap();
        let m = model(ExtractorKind::Gnn, false, g.feature_dim());
        assert!(m.forward(&g).is_ok());
    }
}
