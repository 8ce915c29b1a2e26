use rand::Rng;

use super::params::{Bound, Linear, ParamStore};
use crate::graph::GraphBatch;
use crate::numerics::{SegmentMode, Tape, TensorError, Var};

/// Sum of neighbor rows for every node of the batch.
pub(crate) fn neighbor_sum(
    tape: &mut Tape,
    x: Var,
    batch: &GraphBatch,
) -> Result<Var, TensorError> {
    let msgs = tape.gather_rows(x, batch.endpoints.clone())?;
    tape.segment_reduce(
        msgs,
        batch.endpoints_swapped.clone(),
        SegmentMode::Sum,
        batch.num_nodes(),
    )
}

/// Dual nodes -> incident hyperedges (mean) -> incident dual nodes (mean).
pub(crate) fn hyperedge_mean(
    tape: &mut Tape,
    x: Var,
    batch: &GraphBatch,
) -> Result<Var, TensorError> {
    let spread = tape.gather_rows(x, batch.dual_repeat.clone())?;
    let hyper = tape.segment_reduce(
        spread,
        batch.endpoints.clone(),
        SegmentMode::Mean,
        batch.num_nodes(),
    )?;
    let back = tape.gather_rows(hyper, batch.endpoints.clone())?;
    tape.segment_reduce(
        back,
        batch.dual_repeat.clone(),
        SegmentMode::Mean,
        batch.num_edges(),
    )
}

/// GIN layers with `eps = 0`; each layer is `MLP(h_v + Σ_u h_u)`, with ReLU between
/// layers.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct GinStack {
    pub layers: Vec<(Linear, Linear)>,
}

impl GinStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        width: usize,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..depth)
            .map(|l| {
                let d = if l == 0 { d_in } else { width };
                (
                    Linear::new(store, &format!("{name}.{l}.lin1"), d, width, rng),
                    Linear::new(store, &format!("{name}.{l}.lin2"), width, width, rng),
                )
            })
            .collect();
        Self { layers }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        mut x: Var,
        batch: &GraphBatch,
    ) -> Result<Var, TensorError> {
        let n_layers = self.layers.len();
        for (l, (lin1, lin2)) in self.layers.iter().enumerate() {
            let nbr = neighbor_sum(tape, x, batch)?;
            let agg = tape.add(x, nbr)?;
            let hidden = lin1.apply(tape, p, agg)?;
            let hidden = tape.relu(hidden);
            let out = lin2.apply(tape, p, hidden)?;
            x = if l + 1 < n_layers {
                tape.relu(out)
            } else {
                out
            };
        }
        Ok(x)
    }
}

/// Hypergraph convolutions over the dual: `relu(mean-mean(x) W + b)`, the
/// last layer left linear.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct HgnnStack {
    pub layers: Vec<Linear>,
}

impl HgnnStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        width: usize,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..depth)
            .map(|l| {
                let d = if l == 0 { d_in } else { width };
                Linear::new(store, &format!("{name}.{l}"), d, width, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        mut x: Var,
        batch: &GraphBatch,
    ) -> Result<Var, TensorError> {
        let n_layers = self.layers.len();
        for (l, lin) in self.layers.iter().enumerate() {
            let agg = hyperedge_mean(tape, x, batch)?;
            let out = lin.apply(tape, p, agg)?;
            x = if l + 1 < n_layers {
                tape.relu(out)
            } else {
                out
            };
        }
        Ok(x)
    }
}

/// Per-node logit producers.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Extractor {
    Gnn { body: GinStack, head: Linear },
    Mlp { body: Vec<Linear>, head: Linear },
}

impl Extractor {
    pub fn head(&self) -> Linear {
        match self {
            Self::Gnn { head, .. } | Self::Mlp { head, .. } => *head,
        }
    }

    pub fn logits(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        batch: &GraphBatch,
    ) -> Result<Var, TensorError> {
        let (hidden, head) = match self {
            Self::Gnn { body, head } => (body.forward(tape, p, x, batch)?, head),
            Self::Mlp { body, head } => {
                let mut h = x;
                for lin in body {
                    let z = lin.apply(tape, p, h)?;
                    h = tape.relu(z);
                }
                (h, head)
            }
        };
        head.apply(tape, p, hidden)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{batch_graphs, fixtures, Graph};
    use crate::numerics::Tensor;

    fn values(tape: &Tape, v: Var) -> Vec<f64> {
        tape.value(v).data().to_vec()
    }

    #[test]
    fn gin_aggregation_sums_neighbors() {
        // Star: centre 0 with value 1, leaves carrying 2 and 3.
        let x = Tensor::column(vec![1.0, 2.0, 3.0]);
        let g = Graph::new(3, vec![(0, 1), (0, 2)], x.clone()).unwrap();
        let batch = batch_graphs(&[g]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let nbr = neighbor_sum(&mut tape, xv, &batch).unwrap();
        let agg = tape.add(xv, nbr).unwrap();
        assert_eq!(values(&tape, agg), vec![6.0, 3.0, 4.0]);
    }

    #[test]
    fn single_dual_node_is_a_fixed_point() {
        let x = fixtures::features(2, 2, |r, c| (r + c) as f64);
        let g = Graph::new(2, vec![(0, 1)], x).unwrap();
        let batch = batch_graphs(&[g]).unwrap();
        let mut tape = Tape::new();
        let xd = tape.constant(batch.dual_features.clone());
        let out = hyperedge_mean(&mut tape, xd, &batch).unwrap();
        assert_eq!(tape.value(out), &batch.dual_features);
    }

    #[test]
    fn hyperedge_mean_by_hand() {
        // Path a-b-c: dual nodes e0=(a,b), e1=(b,c). Hyperedge b averages both.
        let g = fixtures::path3();
        let batch = batch_graphs(&[g]).unwrap();
        let mut tape = Tape::new();
        let xd = tape.constant(Tensor::column(vec![2.0, 4.0]));
        let out = hyperedge_mean(&mut tape, xd, &batch).unwrap();
        // e0: mean(a=2, b=3) = 2.5; e1: mean(b=3, c=4) = 3.5
        assert_eq!(values(&tape, out), vec![2.5, 3.5]);
    }
}
