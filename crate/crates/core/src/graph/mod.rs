//! Graph container, text-format IO, and synthetic generators.

mod generators;
mod io;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KaaError, Result};
use crate::tensor::Tensor;

pub use generators::{gen_dictionary_lookup, gen_dictionary_lookup_with, gen_sbm, SbmParams};
pub use io::{load_graph, write_graph, GraphPaths, LoadOptions};

/// Which evaluation split a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "none" => Some(Split::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    NodeClassification,
    LinkPrediction,
    GraphClassification,
}

/// Directed graph with dense node features, node labels and per-node splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Tensor,
    labels: Vec<usize>,
    graph_label: Option<usize>,
    splits: Vec<Split>,
}

impl Graph {
    /// Duplicate edges are dropped, keeping first occurrences in order.
    pub fn new(
        features: Tensor,
        edges: Vec<(usize, usize)>,
        labels: Vec<usize>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        if features.rank() != 2 {
            return Err(KaaError::Consistency(format!(
                "features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        let n = features.rows();
        if n == 0 {
            return Err(KaaError::Consistency("graph has no nodes".into()));
        }
        if labels.len() != n {
            return Err(KaaError::Consistency(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if splits.len() != n {
            return Err(KaaError::Consistency(format!(
                "{} split entries for {n} nodes",
                splits.len()
            )));
        }
        if let Some(&(s, t)) = edges.iter().find(|(s, t)| *s >= n || *t >= n) {
            return Err(KaaError::Consistency(format!(
                "edge ({s}, {t}) references a node outside 0..{n}"
            )));
        }
        Ok(Self {
            num_nodes: n,
            edges: dedup_edges(edges),
            features,
            labels,
            graph_label: None,
            splits,
        })
    }

    pub fn with_graph_label(mut self, label: usize) -> Self {
        self.graph_label = Some(label);
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn graph_label(&self) -> Option<usize> {
        self.graph_label
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Node indices assigned to `split`, ascending.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn with_splits(mut self, splits: Vec<Split>) -> Result<Self> {
        if splits.len() != self.num_nodes {
            return Err(KaaError::Consistency(format!(
                "{} split entries for {} nodes",
                splits.len(),
                self.num_nodes
            )));
        }
        self.splits = splits;
        Ok(self)
    }

    pub fn with_edges(mut self, edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = self.num_nodes;
        if let Some(&(s, t)) = edges.iter().find(|(s, t)| *s >= n || *t >= n) {
            return Err(KaaError::Consistency(format!(
                "edge ({s}, {t}) references a node outside 0..{n}"
            )));
        }
        self.edges = dedup_edges(edges);
        Ok(self)
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.edges.contains(&(src, dst))
    }

    /// Relabels node `i` as `perm[i]`, carrying features, labels, splits and edges.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes;
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(KaaError::Parameter(
                "node relabeling is not a permutation".into(),
            ));
        }
        let d = self.feature_dim();
        let mut feats = Tensor::zeros(&[n, d]);
        let mut labels = vec![0; n];
        let mut splits = vec![Split::None; n];
        for (old, &new) in perm.iter().enumerate() {
            feats.data_mut()[new * d..(new + 1) * d].copy_from_slice(self.features.row(old));
            labels[new] = self.labels[old];
            splits[new] = self.splits[old];
        }
        let edges = self
            .edges
            .iter()
            .map(|&(s, t)| (perm[s], perm[t]))
            .collect();
        let mut g = Graph::new(feats, edges, labels, splits)?;
        g.graph_label = self.graph_label;
        Ok(g)
    }
}

fn dedup_edges(edges: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    let mut seen = HashSet::with_capacity(edges.len());
    edges.into_iter().filter(|e| seen.insert(*e)).collect()
}

/// Adds `(i, i)` for every node that lacks it. Existing edges keep their order.
pub fn add_self_loops(g: &Graph) -> Graph {
    let mut out = g.clone();
    let present: HashSet<usize> = g
        .edges
        .iter()
        .filter(|(s, t)| s == t)
        .map(|(s, _)| *s)
        .collect();
    out.edges.extend(
        (0..g.num_nodes)
            .filter(|i| !present.contains(i))
            .map(|i| (i, i)),
    );
    out
}

/// Seeded 60/20/20 split over `items` (rounded, remainder to test).
pub fn random_split(items: &[usize], seed: u64) -> Vec<(usize, Split)> {
    let mut order = items.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    let n_train = (0.6 * n as f64).round() as usize;
    let n_val = ((0.2 * n as f64).round() as usize).min(n - n_train);
    order
        .into_iter()
        .enumerate()
        .map(|(rank, node)| {
            let split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            (node, split)
        })
        .collect()
}

/// A set of graphs with a shared feature width and a common task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphCollection {
    graphs: Vec<Graph>,
    task: Task,
}

impl GraphCollection {
    pub fn new(graphs: Vec<Graph>, task: Task) -> Result<Self> {
        let Some(first) = graphs.first() else {
            return Err(KaaError::Consistency("empty graph collection".into()));
        };
        let d = first.feature_dim();
        if let Some((i, g)) = graphs
            .iter()
            .enumerate()
            .find(|(_, g)| g.feature_dim() != d)
        {
            return Err(KaaError::Consistency(format!(
                "graph {i} has feature width {} but graph 0 has {d}",
                g.feature_dim()
            )));
        }
        if task == Task::GraphClassification {
            if let Some(i) = graphs.iter().position(|g| g.graph_label.is_none()) {
                return Err(KaaError::Consistency(format!(
                    "graph {i} has no graph label"
                )));
            }
        }
        Ok(Self { graphs, task })
    }

    pub fn single(graph: Graph, task: Task) -> Result<Self> {
        Self::new(vec![graph], task)
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs[0].feature_dim()
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        match self.task {
            Task::GraphClassification => self
                .graphs
                .iter()
                .filter_map(|g| g.graph_label)
                .max()
                .map_or(0, |m| m + 1),
            _ => self
                .graphs
                .iter()
                .map(Graph::num_classes)
                .max()
                .unwrap_or(0),
        }
    }

    pub fn map_graphs(self, f: impl Fn(&Graph) -> Graph) -> Result<Self> {
        let graphs = self.graphs.iter().map(f).collect();
        Self::new(graphs, self.task)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::new(
            Tensor::zeros(&[3, 1]),
            vec![(0, 1), (1, 0), (1, 2), (2, 1)],
            vec![0; 3],
            vec![Split::None; 3],
        )
        .unwrap()
    }

    #[test]
    fn self_loops_on_empty_graph() {
        let g = Graph::new(
            Tensor::zeros(&[3, 2]),
            vec![],
            vec![0; 3],
            vec![Split::None; 3],
        )
        .unwrap();
        let g = add_self_loops(&g);
        assert_eq!(g.edges(), &[(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn self_loops_on_path() {
        let g = add_self_loops(&path3());
        assert_eq!(g.num_edges(), 7);
        assert_eq!(&g.edges()[..4], path3().edges());
    }

    #[test]
    fn self_loops_idempotent() {
        let g = path3().with_edges(vec![(0, 0), (0, 1)]).unwrap();
        let once = add_self_loops(&g);
        assert_eq!(once.edges().iter().filter(|e| **e == (0, 0)).count(), 1);
        assert_eq!(add_self_loops(&once), once);
    }

    #[test]
    fn duplicate_edges_dropped() {
        let g = path3().with_edges(vec![(0, 1), (0, 1), (1, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn out_of_range_edge() {
        let err = path3().with_edges(vec![(0, 3)]).unwrap_err();
        assert!(matches!(err, KaaError::Consistency(_)));
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let items: Vec<usize> = (0..10).collect();
        let split = random_split(&items, 3);
        let count = |s| split.iter().filter(|(_, x)| *x == s).count();
        assert_eq!(
            (count(Split::Train), count(Split::Val), count(Split::Test)),
            (6, 2, 2)
        );
        let mut nodes: Vec<usize> = split.iter().map(|(n, _)| *n).collect();
        nodes.sort_unstable();
        assert_eq!(nodes, items);
    }

    #[test]
    fn collection_rejects_mixed_widths() {
        let a = path3();
        let b = Graph::new(
            Tensor::zeros(&[2, 4]),
            vec![],
            vec![0; 2],
            vec![Split::None; 2],
        )
        .unwrap();
        assert!(GraphCollection::new(vec![a, b], Task::NodeClassification).is_err());
    }

    #[test]
    fn permute_round_trip() {
        let g = gen_sbm(&SbmParams::new(2, 3, 0.9, 0.1), 5).unwrap();
        let perm = vec![3, 5, 0, 1, 4, 2];
        let mut inv = vec![0; 6];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let back = g.permute_nodes(&perm).unwrap().permute_nodes(&inv).unwrap();
        assert_eq!(back.features(), g.features());
        assert_eq!(back.labels(), g.labels());
        let mut a = back.edges().to_vec();
        let mut b = g.edges().to_vec();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }
}
