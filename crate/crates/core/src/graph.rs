//! Undirected attributed graphs, their dual hypergraphs, and batching.
//!
//! Edges are stored once as `(min, max)` pairs. The position of an edge in
//! [`Graph::edges`] is its identity everywhere else: it indexes the dual node
//! of the edge, the rows of the dual features, edge probabilities and the
//! ground-truth edge mask.

use std::collections::HashMap;
use std::rc::Rc;

use thiserror::Error;

use crate::numerics::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge {edge} is a self-loop on node {node}")]
    SelfLoop { edge: usize, node: usize },
    #[error("edge {edge} duplicates edge {first}")]
    DuplicateEdge { edge: usize, first: usize },
    #[error("edge {edge} endpoint {node} is out of range for {num_nodes} nodes")]
    EndpointOutOfRange {
        edge: usize,
        node: usize,
        num_nodes: usize,
    },
    #[error("{what} has {got} rows, expected {expected}")]
    RowCount {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("graph {graph}: {what} dimension {got} differs from {expected}")]
    FeatureDim {
        graph: usize,
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("graph has no edges, so its dual hypergraph has no nodes")]
    Edgeless,
    #[error("cannot batch an empty sequence of graphs")]
    EmptyBatch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub num_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    /// `n x d_f`
    pub node_features: Tensor,
    /// `m x d_e`, used as dual features when present.
    pub edge_features: Option<Tensor>,
    /// 0 normal, 1 anomalous.
    pub label: Option<u8>,
    pub gt_node_mask: Option<Vec<bool>>,
    pub gt_edge_mask: Option<Vec<bool>>,
}

impl Graph {
    /// Builds and validates a graph. Edge endpoints are reordered to `(min, max)`;
    /// edge order is preserved.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        node_features: Tensor,
    ) -> Result<Self, GraphError> {
        let g = Self {
            num_nodes,
            edges: edges
                .into_iter()
                .map(|(a, b)| (a.min(b), a.max(b)))
                .collect(),
            node_features,
            edge_features: None,
            label: None,
            gt_node_mask: None,
            gt_edge_mask: None,
        };
        validate_graph(&g)?;
        Ok(g)
    }

    pub fn with_label(mut self, label: u8) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_masks(
        mut self,
        node_mask: Vec<bool>,
        edge_mask: Vec<bool>,
    ) -> Result<Self, GraphError> {
        self.gt_node_mask = Some(node_mask);
        self.gt_edge_mask = Some(edge_mask);
        validate_graph(&self)?;
        Ok(self)
    }

    pub fn with_edge_features(mut self, features: Tensor) -> Result<Self, GraphError> {
        self.edge_features = Some(features);
        validate_graph(&self)?;
        Ok(self)
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Dense `n x m` node-edge incidence matrix.
    pub fn incidence_matrix(&self) -> Vec<Vec<bool>> {
        let mut m = vec![vec![false; self.edges.len()]; self.num_nodes];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            m[a][e] = true;
            m[b][e] = true;
        }
        m
    }

    /// Relabels node `i` as `perm[i]`, keeping edge order.
    pub fn permute_nodes(&self, perm: &[usize]) -> Self {
        let n = self.num_nodes;
        let mut features = Tensor::zeros(n, self.feature_dim());
        for (old, &new) in perm.iter().enumerate() {
            features
                .row_mut(new)
                .copy_from_slice(self.node_features.row(old));
        }
        let node_mask = self.gt_node_mask.as_ref().map(|mask| {
            let mut out = vec![false; n];
            for (old, &new) in perm.iter().enumerate() {
                out[new] = mask[old];
            }
            out
        });
        Self {
            num_nodes: n,
            edges: self
                .edges
                .iter()
                .map(|&(a, b)| {
                    let (a, b) = (perm[a], perm[b]);
                    (a.min(b), a.max(b))
                })
                .collect(),
            node_features: features,
            edge_features: self.edge_features.clone(),
            label: self.label,
            gt_node_mask: node_mask,
            gt_edge_mask: self.gt_edge_mask.clone(),
        }
    }
}

/// Checks every [`Graph`] invariant, reporting the first offending element.
pub fn validate_graph(g: &Graph) -> Result<(), GraphError> {
    let mut seen: HashMap<(usize, usize), usize> = HashMap::with_capacity(g.edges.len());
    for (e, &(a, b)) in g.edges.iter().enumerate() {
        for node in [a, b] {
            if node >= g.num_nodes {
                return Err(GraphError::EndpointOutOfRange {
                    edge: e,
                    node,
                    num_nodes: g.num_nodes,
                });
            }
        }
        if a == b {
            return Err(GraphError::SelfLoop { edge: e, node: a });
        }
        if let Some(&first) = seen.get(&(a.min(b), a.max(b))) {
            return Err(GraphError::DuplicateEdge { edge: e, first });
        }
        seen.insert((a.min(b), a.max(b)), e);
    }
    let checks = [
        ("node_features", g.num_nodes, Some(g.node_features.rows())),
        (
            "edge_features",
            g.edges.len(),
            g.edge_features.as_ref().map(Tensor::rows),
        ),
        (
            "gt_node_mask",
            g.num_nodes,
            g.gt_node_mask.as_ref().map(Vec::len),
        ),
        (
            "gt_edge_mask",
            g.edges.len(),
            g.gt_edge_mask.as_ref().map(Vec::len),
        ),
    ];
    for (what, expected, got) in checks {
        if let Some(got) = got {
            if got != expected {
                return Err(GraphError::RowCount {
                    what,
                    expected,
                    got,
                });
            }
        }
    }
    Ok(())
}

/// Dual hypergraph: each edge of the source graph becomes a dual node and each
/// source node becomes a hyperedge.
#[derive(Clone, Debug, PartialEq)]
pub struct DualHypergraph {
    pub num_dual_nodes: usize,
    pub num_hyperedges: usize,
    /// Dual node `e` lies in exactly the two hyperedges `incidence[e]`.
    pub incidence: Vec<[usize; 2]>,
    /// `m x d_f*`
    pub dual_features: Tensor,
}

impl DualHypergraph {
    pub fn hyperedge_members(&self, hyperedge: usize) -> Vec<usize> {
        self.incidence
            .iter()
            .enumerate()
            .filter(|(_, pair)| pair.contains(&hyperedge))
            .map(|(e, _)| e)
            .collect()
    }

    /// Dense `m x n` incidence matrix M*.
    pub fn incidence_matrix(&self) -> Vec<Vec<bool>> {
        let mut m = vec![vec![false; self.num_hyperedges]; self.num_dual_nodes];
        for (e, pair) in self.incidence.iter().enumerate() {
            for &v in pair {
                m[e][v] = true;
            }
        }
        m
    }
}

/// Dual hypergraph transformation.
pub fn dht_transform(g: &Graph) -> Result<DualHypergraph, GraphError> {
    validate_graph(g)?;
    if g.edges.is_empty() {
        return Err(GraphError::Edgeless);
    }
    Ok(DualHypergraph {
        num_dual_nodes: g.edges.len(),
        num_hyperedges: g.num_nodes,
        incidence: g.edges.iter().map(|&(a, b)| [a, b]).collect(),
        dual_features: build_dual_features(g),
    })
}

/// Edge features when present, otherwise the sum of the two endpoint features.
pub fn build_dual_features(g: &Graph) -> Tensor {
    if let Some(ef) = &g.edge_features {
        return ef.clone();
    }
    let d = g.feature_dim();
    let mut out = Tensor::zeros(g.edges.len(), d);
    for (e, &(a, b)) in g.edges.iter().enumerate() {
        let (xa, xb) = (g.node_features.row(a), g.node_features.row(b));
        for ((o, &u), &v) in out.row_mut(e).iter_mut().zip(xa).zip(xb) {
            *o = u + v;
        }
    }
    out
}

/// Contiguous concatenation of graphs with per-graph segment ids.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub node_features: Tensor,
    pub edge_features: Option<Tensor>,
    pub dual_features: Tensor,
    /// Edges with node offsets applied.
    pub edges: Vec<(usize, usize)>,
    pub node_segments: Rc<[usize]>,
    pub edge_segments: Rc<[usize]>,
    pub node_counts: Vec<usize>,
    pub edge_counts: Vec<usize>,
    pub labels: Vec<Option<u8>>,
    pub gt_node_masks: Vec<Option<Vec<bool>>>,
    pub gt_edge_masks: Vec<Option<Vec<bool>>>,
    /// `[a0, b0, a1, b1, ...]`: the two hyperedges of each dual node.
    pub endpoints: Rc<[usize]>,
    /// `[b0, a0, b1, a1, ...]`: receiving node for each entry of `endpoints`.
    pub endpoints_swapped: Rc<[usize]>,
    /// `[0, 0, 1, 1, ...]`: dual node for each entry of `endpoints`.
    pub dual_repeat: Rc<[usize]>,
    /// First endpoint of every edge.
    pub edge_src: Rc<[usize]>,
    /// Second endpoint of every edge.
    pub edge_dst: Rc<[usize]>,
}

impl GraphBatch {
    pub fn from_refs(gs: &[&Graph]) -> Result<Self, GraphError> {
        let first = gs.first().ok_or(GraphError::EmptyBatch)?;
        let d_f = first.feature_dim();
        let d_e = first.edge_features.as_ref().map(Tensor::cols);
        let total_n: usize = gs.iter().map(|g| g.num_nodes).sum();
        let total_m: usize = gs.iter().map(|g| g.num_edges()).sum();

        let mut node_data = Vec::with_capacity(total_n * d_f);
        let mut dual_data = Vec::new();
        let mut edge_data = d_e.map(|d| Vec::with_capacity(total_m * d));
        let mut edges = Vec::with_capacity(total_m);
        let mut node_segments = Vec::with_capacity(total_n);
        let mut edge_segments = Vec::with_capacity(total_m);
        let mut offset = 0;
        for (gi, g) in gs.iter().enumerate() {
            validate_graph(g)?;
            if g.feature_dim() != d_f {
                return Err(GraphError::FeatureDim {
                    graph: gi,
                    what: "node feature",
                    expected: d_f,
                    got: g.feature_dim(),
                });
            }
            let ge = g.edge_features.as_ref().map(Tensor::cols);
            if ge != d_e {
                return Err(GraphError::FeatureDim {
                    graph: gi,
                    what: "edge feature",
                    expected: d_e.unwrap_or(0),
                    got: ge.unwrap_or(0),
                });
            }
            node_data.extend_from_slice(g.node_features.data());
            dual_data.extend_from_slice(build_dual_features(g).data());
            if let (Some(buf), Some(ef)) = (edge_data.as_mut(), &g.edge_features) {
                buf.extend_from_slice(ef.data());
            }
            edges.extend(g.edges.iter().map(|&(a, b)| (a + offset, b + offset)));
            node_segments.extend(std::iter::repeat_n(gi, g.num_nodes));
            edge_segments.extend(std::iter::repeat_n(gi, g.num_edges()));
            offset += g.num_nodes;
        }
        let d_dual = d_e.unwrap_or(d_f);
        let endpoints: Vec<usize> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
        let endpoints_swapped: Vec<usize> = edges.iter().flat_map(|&(a, b)| [b, a]).collect();
        let dual_repeat: Vec<usize> = (0..edges.len()).flat_map(|e| [e, e]).collect();
        let to_tensor = |rows, cols, data| Tensor::new(rows, cols, data).expect("sized buffer");
        Ok(Self {
            node_features: to_tensor(total_n, d_f, node_data),
            edge_features: d_e
                .zip(edge_data)
                .map(|(d, data)| to_tensor(total_m, d, data)),
            dual_features: to_tensor(total_m, d_dual, dual_data),
            edge_src: edges.iter().map(|e| e.0).collect(),
            edge_dst: edges.iter().map(|e| e.1).collect(),
            edges,
            node_segments: node_segments.into(),
            edge_segments: edge_segments.into(),
            node_counts: gs.iter().map(|g| g.num_nodes).collect(),
            edge_counts: gs.iter().map(|g| g.num_edges()).collect(),
            labels: gs.iter().map(|g| g.label).collect(),
            gt_node_masks: gs.iter().map(|g| g.gt_node_mask.clone()).collect(),
            gt_edge_masks: gs.iter().map(|g| g.gt_edge_mask.clone()).collect(),
            endpoints: endpoints.into(),
            endpoints_swapped: endpoints_swapped.into(),
            dual_repeat: dual_repeat.into(),
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.node_counts.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Start offsets of each graph's nodes and edges.
    pub fn offsets(&self) -> (Vec<usize>, Vec<usize>) {
        let prefix = |counts: &[usize]| {
            counts
                .iter()
                .scan(0, |acc, &c| {
                    let start = *acc;
                    *acc += c;
                    Some(start)
                })
                .collect()
        };
        (prefix(&self.node_counts), prefix(&self.edge_counts))
    }

    /// Reconstructs the member graphs.
    pub fn unbatch(&self) -> Vec<Graph> {
        let (node_off, edge_off) = self.offsets();
        let d_f = self.node_features.cols();
        (0..self.num_graphs())
            .map(|gi| {
                let (n0, n) = (node_off[gi], self.node_counts[gi]);
                let (e0, m) = (edge_off[gi], self.edge_counts[gi]);
                let slice = |t: &Tensor, start: usize, len: usize| {
                    let c = t.cols();
                    Tensor::new(len, c, t.data()[start * c..(start + len) * c].to_vec())
                        .expect("sized slice")
                };
                Graph {
                    num_nodes: n,
                    edges: self.edges[e0..e0 + m]
                        .iter()
                        .map(|&(a, b)| (a - n0, b - n0))
                        .collect(),
                    node_features: if d_f == 0 {
                        Tensor::zeros(n, 0)
                    } else {
                        slice(&self.node_features, n0, n)
                    },
                    edge_features: self.edge_features.as_ref().map(|t| slice(t, e0, m)),
                    label: self.labels[gi],
                    gt_node_mask: self.gt_node_masks[gi].clone(),
                    gt_edge_mask: self.gt_edge_masks[gi].clone(),
                }
            })
            .collect()
    }
}

pub fn batch_graphs(gs: &[Graph]) -> Result<GraphBatch, GraphError> {
    let refs: Vec<&Graph> = gs.iter().collect();
    GraphBatch::from_refs(&refs)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn features(n: usize, d: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        Tensor::new(n, d, (0..n * d).map(|k| f(k / d, k % d)).collect()).unwrap()
    }

    pub fn path3() -> Graph {
        Graph::new(3, [(0, 1), (1, 2)], features(3, 2, |i, j| (i + j) as f64)).unwrap()
    }

    pub fn triangle() -> Graph {
        Graph::new(3, [(0, 1), (1, 2), (0, 2)], Tensor::ones(3, 1)).unwrap()
    }

    /// Square 0-1-2-3 with roof node 4 on edge (0, 1).
    pub fn house() -> Graph {
        Graph::new(
            5,
            [(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)],
            Tensor::ones(5, 1),
        )
        .unwrap()
    }
}
