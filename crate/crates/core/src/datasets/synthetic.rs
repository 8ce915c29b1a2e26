//! BM-MT / BM-MN / BM-MS generators.
//!
//! Every graph is a random base (tree, ladder or wheel) with one or more motifs
//! each attached by a single bridge edge. Motif nodes and motif-internal edges
//! form the ground-truth explanation; bridges never do.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetBundle};
use crate::graph::Graph;
use crate::numerics::Tensor;

/// Node features are one-hot degrees with everything at or above this value
/// sharing the last slot, so `d_f = DEGREE_CAP + 1`.
pub const DEGREE_CAP: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyntheticVariant {
    /// Normal: one house. Anomaly: one 5-cycle.
    #[serde(rename = "BM-MT")]
    MotifType,
    /// Normal: 1-2 houses. Anomaly: 3-4 houses.
    #[serde(rename = "BM-MN")]
    MotifNumber,
    /// Normal: one 3-5 cycle. Anomaly: one 6-9 cycle.
    #[serde(rename = "BM-MS")]
    MotifSize,
}

impl SyntheticVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::MotifType => "BM-MT",
            Self::MotifNumber => "BM-MN",
            Self::MotifSize => "BM-MS",
        }
    }

    fn motifs(self, anomalous: bool, rng: &mut impl Rng) -> MotifSpec {
        match (self, anomalous) {
            (Self::MotifType, false) => MotifSpec::new(MotifKind::House, 1),
            (Self::MotifType, true) => MotifSpec::new(MotifKind::Cycle(5), 1),
            (Self::MotifNumber, false) => MotifSpec::new(MotifKind::House, rng.random_range(1..=2)),
            (Self::MotifNumber, true) => MotifSpec::new(MotifKind::House, rng.random_range(3..=4)),
            (Self::MotifSize, false) => {
                MotifSpec::new(MotifKind::Cycle(rng.random_range(3..=5)), 1)
            }
            (Self::MotifSize, true) => MotifSpec::new(MotifKind::Cycle(rng.random_range(6..=9)), 1),
        }
    }
}

impl fmt::Display for SyntheticVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticVariant {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BM-MT" => Ok(Self::MotifType),
            "BM-MN" => Ok(Self::MotifNumber),
            "BM-MS" => Ok(Self::MotifSize),
            other => Err(DataError::Argument(format!(
                "unknown synthetic variant {other:?} (expected BM-MT, BM-MN or BM-MS)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaseKind {
    Tree,
    Ladder,
    Wheel,
}

/// Inclusive size ranges for each base kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BaseSizes {
    /// Node count of a random tree.
    pub tree: (usize, usize),
    /// Number of rungs `k` of a `2 x k` ladder.
    pub ladder: (usize, usize),
    /// Rim length of a wheel (hub excluded).
    pub wheel: (usize, usize),
}

impl Default for BaseSizes {
    fn default() -> Self {
        Self {
            tree: (5, 8),
            ladder: (3, 4),
            wheel: (5, 7),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotifKind {
    /// Five nodes, six edges: a square with a roof.
    House,
    /// Simple cycle with the given number of nodes (at least 3).
    Cycle(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MotifSpec {
    pub kind: MotifKind,
    pub count: usize,
}

impl MotifSpec {
    pub fn new(kind: MotifKind, count: usize) -> Self {
        if let MotifKind::Cycle(k) = kind {
            assert!(k >= 3, "cycle motifs need at least 3 nodes");
        }
        Self { kind, count }
    }
}

impl MotifKind {
    fn edges(self) -> (usize, Vec<(usize, usize)>) {
        match self {
            MotifKind::House => (5, vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)]),
            MotifKind::Cycle(k) => (k, ring(0, k)),
        }
    }
}

fn ring(start: usize, k: usize) -> Vec<(usize, usize)> {
    (0..k).map(|i| (start + i, start + (i + 1) % k)).collect()
}

/// Edge list of a base graph; node count is returned alongside.
fn base_edges(
    kind: BaseKind,
    sizes: &BaseSizes,
    rng: &mut impl Rng,
) -> (usize, Vec<(usize, usize)>) {
    match kind {
        BaseKind::Tree => {
            let n = rng.random_range(sizes.tree.0..=sizes.tree.1);
            let edges = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
            (n, edges)
        }
        BaseKind::Ladder => {
            let k = rng.random_range(sizes.ladder.0..=sizes.ladder.1);
            // Rails 0..k and k..2k, rungs between i and k + i.
            let mut edges: Vec<(usize, usize)> = (0..k.saturating_sub(1))
                .flat_map(|i| [(i, i + 1), (k + i, k + i + 1)])
                .collect();
            edges.extend((0..k).map(|i| (i, k + i)));
            (2 * k, edges)
        }
        BaseKind::Wheel => {
            let rim = rng.random_range(sizes.wheel.0..=sizes.wheel.1);
            // Hub is node 0, rim is 1..=rim.
            let mut edges = ring(1, rim);
            edges.extend((1..=rim).map(|v| (0, v)));
            (rim + 1, edges)
        }
    }
}

/// One-hot degree features, capped at [`DEGREE_CAP`].
pub fn degree_features(num_nodes: usize, edges: &[(usize, usize)]) -> Tensor {
    let mut deg = vec![0usize; num_nodes];
    for &(a, b) in edges {
        deg[a] += 1;
        deg[b] += 1;
    }
    let mut x = Tensor::zeros(num_nodes, DEGREE_CAP + 1);
    for (v, &d) in deg.iter().enumerate() {
        x.set(v, d.min(DEGREE_CAP), 1.0);
    }
    x
}

/// A single random base graph with degree features.
pub fn gen_base(kind: BaseKind, sizes: &BaseSizes, rng: &mut impl Rng) -> Graph {
    let (n, edges) = base_edges(kind, sizes, rng);
    let x = degree_features(n, &edges);
    Graph::new(n, edges, x).expect("base generators emit simple graphs")
}

fn gen_graph(
    variant: SyntheticVariant,
    anomalous: bool,
    sizes: &BaseSizes,
    rng: &mut impl Rng,
) -> Graph {
    let kind = [BaseKind::Tree, BaseKind::Ladder, BaseKind::Wheel][rng.random_range(0..3)];
    let (base_n, mut edges) = base_edges(kind, sizes, rng);
    let mut motif_edge = vec![false; edges.len()];
    let mut n = base_n;
    let spec = variant.motifs(anomalous, rng);
    for _ in 0..spec.count {
        let (k, local) = spec.kind.edges();
        edges.extend(local.iter().map(|&(a, b)| (n + a, n + b)));
        motif_edge.extend(std::iter::repeat_n(true, local.len()));
        let bridge = (rng.random_range(0..base_n), n + rng.random_range(0..k));
        edges.push(bridge);
        motif_edge.push(false);
        n += k;
    }
    let node_mask = (0..n).map(|v| v >= base_n).collect();
    let x = degree_features(n, &edges);
    Graph::new(n, edges, x)
        .and_then(|g| g.with_masks(node_mask, motif_edge))
        .expect("generator emits simple graphs")
        .with_label(u8::from(anomalous))
}

fn graph_rng(seed: u64, split: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 40) | index as u64);
    rng
}

/// Generates a synthetic bundle. Training graphs are all normal; the test set
/// holds `ceil(anomaly_ratio * n_test)` anomalies at random positions.
pub fn gen_synthetic(
    variant: SyntheticVariant,
    n_train: usize,
    n_test: usize,
    anomaly_ratio: f64,
    seed: u64,
) -> Result<DatasetBundle, DataError> {
    gen_synthetic_with(
        variant,
        n_train,
        n_test,
        anomaly_ratio,
        seed,
        &BaseSizes::default(),
    )
}

pub(crate) fn gen_synthetic_with(
    variant: SyntheticVariant,
    n_train: usize,
    n_test: usize,
    anomaly_ratio: f64,
    seed: u64,
    sizes: &BaseSizes,
) -> Result<DatasetBundle, DataError> {
    if n_train == 0 || n_test == 0 {
        return Err(DataError::Argument(
            "n_train and n_test must be at least 1".into(),
        ));
    }
    if !(anomaly_ratio > 0.0 && anomaly_ratio < 1.0) {
        return Err(DataError::Argument(format!(
            "anomaly_ratio must lie in (0, 1), got {anomaly_ratio}"
        )));
    }
    let n_anomalies = ((anomaly_ratio * n_test as f64) - 1e-9).ceil() as usize;
    let mut test_labels: Vec<bool> = (0..n_test).map(|i| i < n_anomalies).collect();
    test_labels.shuffle(&mut graph_rng(seed, 0, 0));

    let train = (0..n_train)
        .map(|i| gen_graph(variant, false, sizes, &mut graph_rng(seed, 1, i)))
        .collect();
    let test = test_labels
        .iter()
        .enumerate()
        .map(|(i, &anom)| gen_graph(variant, anom, sizes, &mut graph_rng(seed, 2, i)))
        .collect();
    Ok(DatasetBundle {
        name: variant.name().to_string(),
        seed,
        train,
        test,
    })
}
