//! Benchmark data: synthetic motif graphs, TU-format files, train/test splits.

mod split;
mod synthetic;
mod tu;

use std::path::PathBuf;

use thiserror::Error;

use crate::graph::{validate_graph, Graph, GraphError};

pub use split::make_split;
pub use synthetic::{
    degree_features, gen_base, gen_synthetic, BaseKind, BaseSizes, MotifKind, MotifSpec,
    SyntheticVariant, DEGREE_CAP,
};
pub use tu::{load_tu_dataset, read_tu_graphs, write_tu_dataset, LabeledGraph, TuSplit};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Normal-only training graphs plus a labeled test set.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub seed: u64,
    pub train: Vec<Graph>,
    pub test: Vec<Graph>,
}

impl DatasetBundle {
    /// Checks the bundle invariants. `require_masks` demands ground-truth
    /// masks on every test graph.
    pub fn validate(&self, require_masks: bool) -> Result<(), DataError> {
        for (i, g) in self.train.iter().enumerate() {
            validate_graph(g)?;
            if g.label == Some(1) {
                return Err(DataError::Argument(format!(
                    "training graph {i} is labeled anomalous"
                )));
            }
        }
        for (i, g) in self.test.iter().enumerate() {
            validate_graph(g)?;
            if g.label.is_none() {
                return Err(DataError::Argument(format!("test graph {i} has no label")));
            }
            if require_masks && (g.gt_node_mask.is_none() || g.gt_edge_mask.is_none()) {
                return Err(DataError::Argument(format!(
                    "test graph {i} has no ground-truth masks"
                )));
            }
        }
        Ok(())
    }

    pub fn has_masks(&self) -> bool {
        !self.test.is_empty()
            && self
                .test
                .iter()
                .all(|g| g.gt_node_mask.is_some() && g.gt_edge_mask.is_some())
    }

    pub fn feature_dim(&self) -> usize {
        self.train
            .first()
            .or(self.test.first())
            .map_or(0, Graph::feature_dim)
    }
}
