use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::RunError;
use crate::datasets::{
    gen_synthetic, read_tu_graphs, write_tu_dataset, DataError, SyntheticVariant,
};
use crate::evaluation::{ExplanationResult, ScoreTable};
use crate::graph::Graph;

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let io = |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

/// `graph_id,score,label`, 17 significant digits, empty label when unknown.
pub fn format_scores(table: &ScoreTable) -> String {
    let mut s = String::from("graph_id,score,label\n");
    for r in &table.rows {
        let label = r.label.map_or(String::new(), |l| l.to_string());
        let _ = writeln!(s, "{},{},{}", r.graph_id, sig17(r.score), label);
    }
    s
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(" ")
}

pub fn format_explanations(results: &[ExplanationResult]) -> String {
    let mut s = String::new();
    for r in results {
        let _ = writeln!(s, "graph {}", r.graph_id);
        let _ = writeln!(s, "nodes: {}", join(&r.node_probs, |p| sig17(*p)));
        let _ = writeln!(s, "edges: {}", join(&r.edge_probs, |p| sig17(*p)));
        let _ = writeln!(
            s,
            "selected_nodes: {}",
            join(&r.selected_nodes, usize::to_string)
        );
        let _ = writeln!(
            s,
            "selected_edges: {}",
            join(&r.selected_edges, usize::to_string)
        );
    }
    s
}

/// Generates a synthetic bundle and writes it as `<out>/train` and
/// `<out>/test`, both in TU layout with the variant name as file prefix.
pub fn write_synthetic_dataset(
    variant: SyntheticVariant,
    n_train: usize,
    n_test: usize,
    anomaly_ratio: f64,
    seed: u64,
    out: &Path,
) -> Result<(PathBuf, PathBuf), DataError> {
    let b = gen_synthetic(variant, n_train, n_test, anomaly_ratio, seed)?;
    let (train, test) = (out.join("train"), out.join("test"));
    write_tu_dataset(&train, variant.name(), &b.train)?;
    write_tu_dataset(&test, variant.name(), &b.test)?;
    Ok((train, test))
}

/// Reads the single TU dataset stored in `dir`, inferring its name from the
/// `<name>_A.txt` file.
pub fn read_graph_dir(dir: &Path) -> Result<(String, Vec<Graph>), DataError> {
    let entries = fs::read_dir(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut names: Vec<String> = entries
        .filter_map(Result::ok)
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix("_A.txt"))
                .map(str::to_string)
        })
        .collect();
    names.sort();
    match names.as_slice() {
        [name] => {
            let graphs = read_tu_graphs(dir, name)?;
            Ok((name.clone(), graphs.into_iter().map(|g| g.graph).collect()))
        }
        [] => Err(DataError::Argument(format!(
            "no <name>_A.txt file in {}",
            dir.display()
        ))),
        _ => Err(DataError::Argument(format!(
            "several datasets in {}: {}",
            dir.display(),
            names.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{ExplanationRule, ScoreRow};

    #[test]
    fn score_format() {
        let t = ScoreTable {
            rows: vec![
                ScoreRow {
                    graph_id: 0,
                    score: 0.1,
                    label: Some(1),
                },
                ScoreRow {
                    graph_id: 1,
                    score: -2.5,
                    label: None,
                },
            ],
            warnings: vec![],
        };
        let s = format_scores(&t);
        assert_eq!(
            s,
            "graph_id,score,label\n0,1.0000000000000001e-1,1\n1,-2.5000000000000000e0,\n"
        );
        let v: f64 = s
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap();
        assert_eq!(v, 0.1);
    }

    #[test]
    fn explanation_format_aligns_with_graph() {
        let r = ExplanationResult {
            graph_id: 3,
            node_probs: vec![0.5, 0.25, 1.0],
            edge_probs: vec![0.125, 0.25],
            selected_nodes: vec![0, 2],
            selected_edges: vec![],
            rule: ExplanationRule::default(),
        };
        let s = format_explanations(&[r]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "graph 3");
        assert_eq!(lines[1].split_whitespace().count(), 1 + 3);
        assert_eq!(lines[2].split_whitespace().count(), 1 + 2);
        assert_eq!(lines[3], "selected_nodes: 0 2");
        assert_eq!(lines[4], "selected_edges: ");
    }

    #[test]
    fn generated_dirs_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let (train, test) =
            write_synthetic_dataset(SyntheticVariant::MotifSize, 4, 6, 0.5, 1, dir.path()).unwrap();
        let (name, graphs) = read_graph_dir(&test).unwrap();
        assert_eq!(name, "BM-MS");
        let b = gen_synthetic(SyntheticVariant::MotifSize, 4, 6, 0.5, 1).unwrap();
        assert_eq!(graphs, b.test);
        assert_eq!(read_graph_dir(&train).unwrap().1, b.train);
        assert!(read_graph_dir(dir.path()).is_err());
    }
}
