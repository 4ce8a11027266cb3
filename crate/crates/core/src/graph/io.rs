use std::fs;
use std::path::{Path, PathBuf};

use super::{random_split, Graph, Split};
use crate::error::{KaaError, Result};
use crate::tensor::Tensor;

/// Locations of the four text files describing one graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub masks: Option<PathBuf>,
}

impl GraphPaths {
    /// `edges.txt`, `features.csv`, `labels.txt`, `masks.txt` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            edges: dir.join("edges.txt"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.txt"),
            masks: Some(dir.join("masks.txt")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadOptions {
    /// Each listed edge is stored in both directions.
    pub undirected: bool,
    /// Seed for the 60/20/20 split used when no mask file is given.
    pub split_seed: u64,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> KaaError {
    KaaError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn read_features(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, l) in content_lines(&text) {
        let row = l
            .split(',')
            .map(|v| {
                let v = v.trim();
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(path, line, format!("bad feature value `{v}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    line,
                    format!("{} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(KaaError::Consistency(format!(
            "{} has no feature rows",
            path.display()
        )));
    }
    Tensor::from_rows(&rows)
}

fn read_edges(path: &Path, n: usize, undirected: bool) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (line, l) in content_lines(&text) {
        let ids: Vec<&str> = l.split_whitespace().collect();
        if ids.len() != 2 {
            return Err(parse_err(
                path,
                line,
                format!("expected `src dst`, got `{l}`"),
            ));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, line, format!("bad node id `{s}`")))
        };
        let (s, t) = (parse(ids[0])?, parse(ids[1])?);
        if let Some(bad) = [s, t].into_iter().find(|&v| v >= n) {
            return Err(KaaError::Consistency(format!(
                "{}:{line}: node {bad} outside the {n} nodes in the feature file",
                path.display()
            )));
        }
        edges.push((s, t));
        if undirected {
            edges.push((t, s));
        }
    }
    Ok(edges)
}

fn read_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let labels = content_lines(&text)
        .map(|(line, l)| {
            l.parse::<usize>()
                .map_err(|_| parse_err(path, line, format!("bad label `{l}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if labels.len() != n {
        return Err(KaaError::Consistency(format!(
            "{} has {} labels for {n} nodes",
            path.display(),
            labels.len()
        )));
    }
    Ok(labels)
}

fn read_masks(path: &Path, n: usize) -> Result<Vec<Split>> {
    let text = fs::read_to_string(path)?;
    let splits = content_lines(&text)
        .map(|(line, l)| {
            Split::parse(l).ok_or_else(|| parse_err(path, line, format!("bad mask `{l}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if splits.len() != n {
        return Err(KaaError::Consistency(format!(
            "{} has {} entries for {n} nodes",
            path.display(),
            splits.len()
        )));
    }
    Ok(splits)
}

/// Loads a graph; the node count comes from the feature file.
pub fn load_graph(paths: &GraphPaths, opts: LoadOptions) -> Result<Graph> {
    let features = read_features(&paths.features)?;
    let n = features.rows();
    let edges = read_edges(&paths.edges, n, opts.undirected)?;
    let labels = read_labels(&paths.labels, n)?;
    let splits = match &paths.masks {
        Some(p) => read_masks(p, n)?,
        None => {
            let all: Vec<usize> = (0..n).collect();
            let mut splits = vec![Split::None; n];
            for (node, s) in random_split(&all, opts.split_seed) {
                splits[node] = s;
            }
            splits
        }
    };
    Graph::new(features, edges, labels, splits)
}

/// Writes the four files of `paths`; `masks` is written when present.
pub fn write_graph(g: &Graph, paths: &GraphPaths) -> Result<()> {
    let edges: String = g
        .edges()
        .iter()
        .map(|(s, t)| format!("{s} {t}\n"))
        .collect();
    fs::write(&paths.edges, edges)?;
    let feats: String = (0..g.num_nodes())
        .map(|i| {
            let row: Vec<String> = g
                .features()
                .row(i)
                .iter()
                .map(|v| format!("{v:?}"))
                .collect();
            row.join(",") + "\n"
        })
        .collect();
    fs::write(&paths.features, feats)?;
    let labels: String = g.labels().iter().map(|l| format!("{l}\n")).collect();
    fs::write(&paths.labels, labels)?;
    if let Some(p) = &paths.masks {
        let masks: String = g
            .splits()
            .iter()
            .map(|s| format!("{}\n", s.as_str()))
            .collect();
        fs::write(p, masks)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_files(dir: &Path, edges: &str, feats: &str, labels: &str) -> GraphPaths {
        let mut p = GraphPaths::in_dir(dir);
        fs::write(&p.edges, edges).unwrap();
        fs::write(&p.features, feats).unwrap();
        fs::write(&p.labels, labels).unwrap();
        p.masks = None;
        p
    }

    #[test]
    fn undirected_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(dir.path(), "# path\n0 1\n1 2\n", "0\n1\n2\n", "0\n1\n0\n");
        let g = load_graph(
            &p,
            LoadOptions {
                undirected: true,
                split_seed: 0,
            },
        )
        .unwrap();
        assert_eq!(g.num_edges(), 4);
        assert_eq!(g.edges(), &[(0, 1), (1, 0), (1, 2), (2, 1)]);
    }

    #[test]
    fn empty_edge_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(dir.path(), "", "1,0\n0,1\n1,1\n", "0\n1\n1\n");
        let g = load_graph(&p, LoadOptions::default()).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (3, 0));
    }

    #[test]
    fn edge_beyond_feature_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(
            dir.path(),
            "0 1\n2 7\n",
            "0\n0\n0\n0\n0\n",
            "0\n0\n0\n0\n0\n",
        );
        let err = load_graph(&p, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, KaaError::Consistency(_)), "{err}");
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn malformed_edge_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(dir.path(), "0 1\n\n1 x\n", "0\n0\n", "0\n0\n");
        match load_graph(&p, LoadOptions::default()).unwrap_err() {
            KaaError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn label_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_files(dir.path(), "", "0\n0\n", "0\n");
        assert!(matches!(
            load_graph(&p, LoadOptions::default()),
            Err(KaaError::Consistency(_))
        ));
    }

    #[test]
    fn generated_split_when_no_masks() {
        let dir = tempfile::tempdir().unwrap();
        let feats = "0\n".repeat(10);
        let labels = "0\n".repeat(10);
        let p = write_files(dir.path(), "", &feats, &labels);
        let opts = LoadOptions {
            undirected: false,
            split_seed: 4,
        };
        let a = load_graph(&p, opts).unwrap();
        let b = load_graph(&p, opts).unwrap();
        assert_eq!(a.splits(), b.splits());
        assert_eq!(a.split_indices(Split::Train).len(), 6);
        assert_eq!(a.split_indices(Split::Test).len(), 2);
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (1usize..8, 1usize..4).prop_flat_map(|(n, d)| {
            (
                prop::collection::vec(-1e6f64..1e6, n * d),
                prop::collection::vec((0..n, 0..n), 0..20),
                prop::collection::vec(0usize..5, n),
                prop::collection::vec(0usize..4, n),
            )
                .prop_map(move |(f, e, l, s)| {
                    let splits = s
                        .into_iter()
                        .map(|x| [Split::Train, Split::Val, Split::Test, Split::None][x])
                        .collect();
                    Graph::new(Tensor::new(&[n, d], f).unwrap(), e, l, splits).unwrap()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn write_then_load_round_trips(g in arb_graph()) {
            let dir = tempfile::tempdir().unwrap();
            let p = GraphPaths::in_dir(dir.path());
            write_graph(&g, &p).unwrap();
            let back = load_graph(&p, LoadOptions::default()).unwrap();
            prop_assert_eq!(back, g);
        }
    }
}
