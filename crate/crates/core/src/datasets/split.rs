use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, DatasetBundle, LabeledGraph};

/// Splits labeled graphs into a normal-only training set and a test set.
///
/// `round(test_fraction * #normal)` normals are held out; `anomaly_count`
/// anomalies join them (all held-out normals' count when `None`, capped by
/// availability). Labels are rewritten to 0 (normal) and 1 (anomaly), and the
/// test set is shuffled.
pub fn make_split(
    name: &str,
    graphs: Vec<LabeledGraph>,
    normal_class: i64,
    test_fraction: f64,
    anomaly_count: Option<usize>,
    seed: u64,
) -> Result<DatasetBundle, DataError> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction.is_nan() {
        return Err(DataError::Argument(format!(
            "test_fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let (mut normals, mut anomalies): (Vec<_>, Vec<_>) =
        graphs.into_iter().partition(|g| g.class == normal_class);
    if normals.is_empty() || anomalies.is_empty() {
        return Err(DataError::Argument(format!(
            "need both classes, found {} normal and {} anomalous graphs",
            normals.len(),
            anomalies.len()
        )));
    }
    let n_test_norm = (test_fraction * normals.len() as f64).round() as usize;
    let n_anom = match anomaly_count {
        Some(k) if k > anomalies.len() => {
            return Err(DataError::Argument(format!(
                "anomaly_count {k} exceeds the {} available anomalies",
                anomalies.len()
            )))
        }
        Some(k) => k,
        None => n_test_norm.min(anomalies.len()),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normals.shuffle(&mut rng);
    anomalies.shuffle(&mut rng);

    let relabel = |lg: LabeledGraph, label: u8| lg.graph.with_label(label);
    let train = normals
        .split_off(n_test_norm)
        .into_iter()
        .map(|g| relabel(g, 0))
        .collect();
    let mut test: Vec<_> = normals
        .into_iter()
        .map(|g| relabel(g, 0))
        .chain(anomalies.into_iter().take(n_anom).map(|g| relabel(g, 1)))
        .collect();
    test.shuffle(&mut rng);
    Ok(DatasetBundle {
        name: name.to_string(),
        seed,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures;

    fn pool(normal: usize, anomalous: usize) -> Vec<LabeledGraph> {
        (0..normal + anomalous)
            .map(|i| {
                // Node count encodes identity so membership can be compared.
                let n = i + 2;
                let edges: Vec<_> = (0..n - 1).map(|v| (v, v + 1)).collect();
                let graph =
                    crate::graph::Graph::new(n, edges, fixtures::features(n, 1, |_, _| 1.0))
                        .unwrap();
                LabeledGraph {
                    graph,
                    class: if i < normal { 7 } else { 3 },
                }
            })
            .collect()
    }

    fn ids(gs: &[crate::graph::Graph]) -> Vec<usize> {
        gs.iter().map(|g| g.num_nodes).collect()
    }

    #[test]
    fn counts_follow_fraction() {
        let b = make_split("toy", pool(10, 2), 7, 0.5, Some(2), 0).unwrap();
        assert_eq!(b.train.len(), 5);
        assert_eq!(b.test.len(), 7);
        assert_eq!(b.test.iter().filter(|g| g.label == Some(1)).count(), 2);
        assert!(b.train.iter().all(|g| g.label == Some(0)));
        b.validate(false).unwrap();
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_split("toy", pool(10, 4), 7, 0.5, Some(2), 11).unwrap();
        let b = make_split("toy", pool(10, 4), 7, 0.5, Some(2), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_change_membership() {
        let base = ids(&make_split("toy", pool(20, 5), 7, 0.5, Some(3), 0)
            .unwrap()
            .train);
        let mut base_sorted = base.clone();
        base_sorted.sort_unstable();
        let differing = (1..=20)
            .filter(|&s| {
                let mut t = ids(&make_split("toy", pool(20, 5), 7, 0.5, Some(3), s)
                    .unwrap()
                    .train);
                t.sort_unstable();
                t != base_sorted
            })
            .count();
        assert!(
            differing >= 18,
            "only {differing} of 20 seeds changed membership"
        );
    }

    #[test]
    fn too_many_anomalies_rejected() {
        let err = make_split("toy", pool(10, 2), 7, 0.5, Some(3), 0).unwrap_err();
        assert!(matches!(err, DataError::Argument(_)));
    }

    #[test]
    fn default_anomaly_count_balances() {
        let b = make_split("toy", pool(10, 9), 7, 0.4, None, 0).unwrap();
        assert_eq!(b.test.iter().filter(|g| g.label == Some(1)).count(), 4);
        let c = make_split("toy", pool(10, 2), 7, 0.4, None, 0).unwrap();
        assert_eq!(c.test.iter().filter(|g| g.label == Some(1)).count(), 2);
    }
}
