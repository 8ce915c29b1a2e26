//! TU benchmark text format.
//!
//! Mandatory files: `<name>_A.txt` (1-indexed `i, j` per line, usually both
//! directions), `<name>_graph_indicator.txt` (graph id per node) and
//! `<name>_graph_labels.txt` (class per graph). Optional:
//! `<name>_node_labels.txt` (one-hot encoded), `<name>_node_attributes.txt`
//! (comma-separated floats), and the ground-truth extensions
//! `<name>_gt_node_mask.txt` / `<name>_gt_edge_mask.txt` with one 0/1 per node
//! line and per `_A.txt` line respectively.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{make_split, DataError, DatasetBundle};
use crate::datasets::degree_features;
use crate::graph::Graph;
use crate::numerics::Tensor;

/// A graph together with its raw class label from `_graph_labels.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledGraph {
    pub graph: Graph,
    pub class: i64,
}

/// How a TU dataset is cut into normal-only training data and a labeled test set.
#[derive(Clone, Debug, PartialEq)]
pub struct TuSplit {
    pub normal_class: i64,
    /// Fraction of normal-class graphs held out for testing.
    pub test_fraction: f64,
    /// Anomalies placed in the test set; `None` matches the held-out normal count.
    pub anomaly_count: Option<usize>,
}

impl Default for TuSplit {
    fn default() -> Self {
        Self {
            normal_class: 0,
            test_fraction: 0.2,
            anomaly_count: None,
        }
    }
}

fn file(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

/// Non-blank lines with their 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .collect())
}

fn parse_fields<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    text: &str,
) -> Result<Vec<T>, DataError> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| DataError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("cannot parse {s:?}"),
            })
        })
        .collect()
}

fn parse_single<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    text: &str,
) -> Result<T, DataError> {
    let mut fields = parse_fields::<T>(path, line, text)?;
    if fields.len() != 1 {
        return Err(DataError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("expected one value, found {}", fields.len()),
        });
    }
    Ok(fields.remove(0))
}

fn per_node_lines<T: std::str::FromStr>(
    path: &Path,
    total_nodes: usize,
) -> Result<Vec<Vec<T>>, DataError> {
    let lines = read_lines(path)?;
    if lines.len() != total_nodes {
        return Err(DataError::Parse {
            path: path.to_path_buf(),
            line: lines.last().map_or(0, |l| l.0),
            message: format!("expected {total_nodes} node lines, found {}", lines.len()),
        });
    }
    lines
        .iter()
        .map(|(ln, text)| parse_fields(path, *ln, text))
        .collect()
}

/// Reads every graph of a TU dataset in file order.
pub fn read_tu_graphs(dir: &Path, name: &str) -> Result<Vec<LabeledGraph>, DataError> {
    let ind_path = file(dir, name, "graph_indicator");
    let indicator: Vec<usize> = read_lines(&ind_path)?
        .iter()
        .map(|(ln, t)| parse_single(&ind_path, *ln, t))
        .collect::<Result<_, _>>()?;
    let labels_path = file(dir, name, "graph_labels");
    let classes: Vec<i64> = read_lines(&labels_path)?
        .iter()
        .map(|(ln, t)| parse_single(&labels_path, *ln, t))
        .collect::<Result<_, _>>()?;
    let num_graphs = classes.len();
    let total_nodes = indicator.len();

    // Global node -> (graph, local index)
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
    let mut local = Vec::with_capacity(total_nodes);
    for (v, &gid) in indicator.iter().enumerate() {
        if gid == 0 || gid > num_graphs {
            return Err(DataError::Parse {
                path: ind_path.clone(),
                line: v + 1,
                message: format!("graph id {gid} outside 1..={num_graphs}"),
            });
        }
        local.push((gid - 1, members[gid - 1].len()));
        members[gid - 1].push(v);
    }

    let a_path = file(dir, name, "A");
    let a_lines = read_lines(&a_path)?;
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    let mut edge_index: Vec<HashMap<(usize, usize), usize>> = vec![HashMap::new(); num_graphs];
    // For each `_A.txt` line, the (graph, edge) it maps to; self-loops map to None.
    let mut line_edge: Vec<Option<(usize, usize)>> = Vec::with_capacity(a_lines.len());
    for (ln, text) in &a_lines {
        let pair: Vec<usize> = parse_fields(&a_path, *ln, text)?;
        if pair.len() != 2 {
            return Err(DataError::Parse {
                path: a_path.clone(),
                line: *ln,
                message: format!("expected two node indices, found {}", pair.len()),
            });
        }
        let mut ends = [(0, 0); 2];
        for (slot, &idx) in ends.iter_mut().zip(&pair) {
            if idx == 0 || idx > total_nodes {
                return Err(DataError::Parse {
                    path: a_path.clone(),
                    line: *ln,
                    message: format!("dangling node index {idx} (dataset has {total_nodes} nodes)"),
                });
            }
            *slot = local[idx - 1];
        }
        let [(ga, a), (gb, b)] = ends;
        if ga != gb {
            return Err(DataError::Parse {
                path: a_path.clone(),
                line: *ln,
                message: format!("edge joins graphs {} and {}", ga + 1, gb + 1),
            });
        }
        if a == b {
            line_edge.push(None);
            continue;
        }
        let key = (a.min(b), a.max(b));
        let next = edges[ga].len();
        let e = *edge_index[ga].entry(key).or_insert(next);
        if e == next {
            edges[ga].push(key);
        }
        line_edge.push(Some((ga, e)));
    }

    let node_labels_path = file(dir, name, "node_labels");
    let node_labels: Option<Vec<i64>> = if node_labels_path.exists() {
        Some(
            per_node_lines::<i64>(&node_labels_path, total_nodes)?
                .into_iter()
                .map(|mut v| v.swap_remove(0))
                .collect(),
        )
    } else {
        None
    };
    let attr_path = file(dir, name, "node_attributes");
    let attributes: Option<Vec<Vec<f64>>> = if attr_path.exists() {
        Some(per_node_lines(&attr_path, total_nodes)?)
    } else {
        None
    };
    let label_vocab: Vec<i64> = node_labels
        .as_ref()
        .map(|l| {
            l.iter()
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        })
        .unwrap_or_default();
    let attr_dim = attributes
        .as_ref()
        .map_or(0, |a| a.first().map_or(0, Vec::len));

    let node_mask_path = file(dir, name, "gt_node_mask");
    let node_mask: Option<Vec<bool>> = if node_mask_path.exists() {
        Some(
            per_node_lines::<u8>(&node_mask_path, total_nodes)?
                .into_iter()
                .map(|v| v.first() == Some(&1))
                .collect(),
        )
    } else {
        None
    };
    let edge_mask_path = file(dir, name, "gt_edge_mask");
    let edge_mask_lines: Option<Vec<bool>> = if edge_mask_path.exists() {
        let lines = read_lines(&edge_mask_path)?;
        if lines.len() != a_lines.len() {
            return Err(DataError::Parse {
                path: edge_mask_path.clone(),
                line: lines.last().map_or(0, |l| l.0),
                message: format!(
                    "expected {} edge lines, found {}",
                    a_lines.len(),
                    lines.len()
                ),
            });
        }
        Some(
            lines
                .iter()
                .map(|(ln, t)| parse_single::<u8>(&edge_mask_path, *ln, t).map(|v| v == 1))
                .collect::<Result<_, _>>()?,
        )
    } else {
        None
    };
    let mut edge_masks: Vec<Vec<bool>> = edges.iter().map(|e| vec![false; e.len()]).collect();
    if let Some(marks) = &edge_mask_lines {
        for (mark, slot) in marks.iter().zip(&line_edge) {
            if let (true, Some((g, e))) = (*mark, slot) {
                edge_masks[*g][*e] = true;
            }
        }
    }

    let mut out = Vec::with_capacity(num_graphs);
    for (gi, nodes) in members.iter().enumerate() {
        let n = nodes.len();
        let g_edges = std::mem::take(&mut edges[gi]);
        let features = if node_labels.is_none() && attributes.is_none() {
            degree_features(n, &g_edges)
        } else {
            let d = label_vocab.len() + attr_dim;
            let mut x = Tensor::zeros(n, d);
            for (lv, &v) in nodes.iter().enumerate() {
                if let Some(labels) = &node_labels {
                    let slot = label_vocab
                        .binary_search(&labels[v])
                        .expect("label in vocab");
                    x.set(lv, slot, 1.0);
                }
                if let Some(attrs) = &attributes {
                    if attrs[v].len() != attr_dim {
                        return Err(DataError::Parse {
                            path: attr_path.clone(),
                            line: v + 1,
                            message: format!(
                                "expected {attr_dim} attributes, found {}",
                                attrs[v].len()
                            ),
                        });
                    }
                    x.row_mut(lv)[label_vocab.len()..].copy_from_slice(&attrs[v]);
                }
            }
            x
        };
        let mut graph = Graph::new(n, g_edges, features)?;
        let class = classes[gi];
        if class == 0 || class == 1 {
            graph.label = Some(class as u8);
        }
        if let Some(mask) = &node_mask {
            let nm = nodes.iter().map(|&v| mask[v]).collect();
            let em = if edge_mask_lines.is_some() {
                std::mem::take(&mut edge_masks[gi])
            } else {
                vec![false; graph.num_edges()]
            };
            graph = graph.with_masks(nm, em)?;
        }
        out.push(LabeledGraph { graph, class });
    }
    Ok(out)
}

/// Reads a TU dataset and splits it into a normal-only training set and a
/// labeled test set.
pub fn load_tu_dataset(
    dir: &Path,
    name: &str,
    split: &TuSplit,
    seed: u64,
) -> Result<DatasetBundle, DataError> {
    let graphs = read_tu_graphs(dir, name)?;
    make_split(
        name,
        graphs,
        split.normal_class,
        split.test_fraction,
        split.anomaly_count,
        seed,
    )
}

/// Writes graphs in TU layout. Node features go to `_node_attributes.txt`;
/// masks are written only when every graph carries them. Graph classes are
/// the graph labels, with unlabeled graphs written as 0.
pub fn write_tu_dataset(dir: &Path, name: &str, graphs: &[Graph]) -> Result<(), DataError> {
    let io_err = |path: PathBuf| move |source| DataError::Io { path, source };
    fs::create_dir_all(dir).map_err(io_err(dir.to_path_buf()))?;
    let with_masks = !graphs.is_empty()
        && graphs
            .iter()
            .all(|g| g.gt_node_mask.is_some() && g.gt_edge_mask.is_some());

    let (mut a, mut ind, mut lab, mut attr, mut nmask, mut emask) = Default::default();
    let (a, ind, lab, attr, nmask, emask): (
        &mut String,
        &mut String,
        &mut String,
        &mut String,
        &mut String,
        &mut String,
    ) = (
        &mut a, &mut ind, &mut lab, &mut attr, &mut nmask, &mut emask,
    );
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        let _ = writeln!(lab, "{}", g.label.unwrap_or(0));
        for v in 0..g.num_nodes {
            let _ = writeln!(ind, "{}", gi + 1);
            let row: Vec<String> = g.node_features.row(v).iter().map(f64::to_string).collect();
            let _ = writeln!(attr, "{}", row.join(", "));
            if with_masks {
                let m = g.gt_node_mask.as_ref().expect("checked")[v];
                let _ = writeln!(nmask, "{}", u8::from(m));
            }
        }
        for (e, &(x, y)) in g.edges.iter().enumerate() {
            let (x, y) = (x + offset + 1, y + offset + 1);
            let _ = writeln!(a, "{x}, {y}");
            let _ = writeln!(a, "{y}, {x}");
            if with_masks {
                let m = u8::from(g.gt_edge_mask.as_ref().expect("checked")[e]);
                let _ = writeln!(emask, "{m}");
                let _ = writeln!(emask, "{m}");
            }
        }
        offset += g.num_nodes;
    }
    let mut files = vec![
        ("A", &*a),
        ("graph_indicator", &*ind),
        ("graph_labels", &*lab),
        ("node_attributes", &*attr),
    ];
    if with_masks {
        files.push(("gt_node_mask", &*nmask));
        files.push(("gt_edge_mask", &*emask));
    }
    for (suffix, body) in files {
        let path = file(dir, name, suffix);
        fs::write(&path, body).map_err(io_err(path.clone()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_synthetic, SyntheticVariant};

    fn write(dir: &Path, name: &str, suffix: &str, body: &str) {
        fs::write(file(dir, name, suffix), body).unwrap();
    }

    #[test]
    fn single_graph_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let b = gen_synthetic(SyntheticVariant::MotifType, 1, 1, 0.5, 2).unwrap();
        let g = b.test[0].clone();
        write_tu_dataset(dir.path(), "toy", std::slice::from_ref(&g)).unwrap();
        let back = read_tu_graphs(dir.path(), "toy").unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].graph, g);
        assert_eq!(back[0].class, 1);
    }

    #[test]
    fn parses_standard_layout_with_node_labels() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        // Graph 1: triangle on nodes 1..3; graph 2: single edge 4-5.
        write(
            d,
            "T",
            "A",
            "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n",
        );
        write(d, "T", "graph_indicator", "1\n1\n1\n2\n2\n");
        write(d, "T", "graph_labels", "-1\n1\n");
        write(d, "T", "node_labels", "0\n2\n2\n0\n5\n");
        let gs = read_tu_graphs(d, "T").unwrap();
        assert_eq!(gs.len(), 2);
        assert_eq!(gs[0].graph.edges, vec![(0, 1), (1, 2), (0, 2)]);
        assert_eq!(gs[0].class, -1);
        assert_eq!(gs[0].graph.label, None);
        assert_eq!(gs[1].graph.label, Some(1));
        assert_eq!(gs[0].graph.node_features.row(1), &[0.0, 1.0, 0.0]);
        assert_eq!(gs[1].graph.node_features.row(1), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "T", "graph_indicator", "1\n");
        let err = read_tu_graphs(dir.path(), "T").unwrap_err();
        assert!(err.to_string().contains("T_graph_labels.txt"), "{err}");
    }

    #[test]
    fn dangling_index_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        write(d, "T", "A", "1, 2\n2, 9\n");
        write(d, "T", "graph_indicator", "1\n1\n");
        write(d, "T", "graph_labels", "0\n");
        match read_tu_graphs(d, "T") {
            Err(DataError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("dangling"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_applies_split() {
        let dir = tempfile::tempdir().unwrap();
        let b = gen_synthetic(SyntheticVariant::MotifSize, 1, 20, 0.3, 6).unwrap();
        write_tu_dataset(dir.path(), "S", &b.test).unwrap();
        let split = TuSplit {
            normal_class: 0,
            test_fraction: 0.5,
            anomaly_count: Some(3),
        };
        let bundle = load_tu_dataset(dir.path(), "S", &split, 1).unwrap();
        assert_eq!(bundle.train.len(), 7);
        assert_eq!(bundle.test.len(), 10);
        bundle.validate(true).unwrap();
    }
}
