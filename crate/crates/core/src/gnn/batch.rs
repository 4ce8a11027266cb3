use std::rc::Rc;

use crate::error::{KaaError, Result};
use crate::graph::{GraphCollection, Split};
use crate::tensor::{Segments, Tensor};

/// A collection laid out as one disjoint-union graph, with a self-loop on
/// every node so that no attention segment is empty.
#[derive(Debug, Clone)]
pub struct Batch {
    features: Tensor,
    edges: Vec<(usize, usize)>,
    src: Rc<Vec<usize>>,
    dst: Rc<Vec<usize>>,
    segments: Rc<Segments>,
    labels: Vec<usize>,
    splits: Vec<Split>,
    graph_of: Rc<Segments>,
    offsets: Vec<usize>,
    graph_labels: Vec<Option<usize>>,
}

impl Batch {
    pub fn from_collection(data: &GraphCollection) -> Result<Self> {
        let n: usize = data.graphs().iter().map(|g| g.num_nodes()).sum();
        let d = data.feature_dim();
        let mut features = Vec::with_capacity(n * d);
        let mut edges = Vec::new();
        let mut labels = Vec::with_capacity(n);
        let mut splits = Vec::with_capacity(n);
        let mut graph_of = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(data.len() + 1);
        let mut graph_labels = Vec::with_capacity(data.len());
        let mut offset = 0;
        for (gi, g) in data.graphs().iter().enumerate() {
            offsets.push(offset);
            features.extend_from_slice(g.features().data());
            edges.extend(g.edges().iter().map(|&(s, t)| (s + offset, t + offset)));
            labels.extend_from_slice(g.labels());
            splits.extend_from_slice(g.splits());
            graph_of.extend(std::iter::repeat_n(gi, g.num_nodes()));
            graph_labels.push(g.graph_label());
            offset += g.num_nodes();
        }
        offsets.push(offset);
        let features = Tensor::new(&[n, d], features)?;
        let graph_of = Rc::new(Segments::new(graph_of, data.len())?);
        Self::assemble(
            features,
            edges,
            labels,
            splits,
            graph_of,
            offsets,
            graph_labels,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        features: Tensor,
        mut edges: Vec<(usize, usize)>,
        labels: Vec<usize>,
        splits: Vec<Split>,
        graph_of: Rc<Segments>,
        offsets: Vec<usize>,
        graph_labels: Vec<Option<usize>>,
    ) -> Result<Self> {
        let n = features.rows();
        let mut looped = vec![false; n];
        for &(s, t) in &edges {
            if s >= n || t >= n {
                return Err(KaaError::Consistency(format!(
                    "edge ({s}, {t}) outside {n} nodes"
                )));
            }
            if s == t {
                looped[s] = true;
            }
        }
        edges.extend((0..n).filter(|&i| !looped[i]).map(|i| (i, i)));
        let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
        let segments = Rc::new(Segments::new(dst.clone(), n)?);
        Ok(Self {
            features,
            edges,
            src: Rc::new(src),
            dst: Rc::new(dst),
            segments,
            labels,
            splits,
            graph_of,
            offsets,
            graph_labels,
        })
    }

    /// Same nodes with a different message-passing edge set (self-loops are
    /// re-added).
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::assemble(
            self.features.clone(),
            edges,
            self.labels.clone(),
            self.splits.clone(),
            Rc::clone(&self.graph_of),
            self.offsets.clone(),
            self.graph_labels.clone(),
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_graphs(&self) -> usize {
        self.graph_labels.len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Message edges `(source, destination)` including self-loops.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn src(&self) -> &Rc<Vec<usize>> {
        &self.src
    }

    pub fn dst(&self) -> &Rc<Vec<usize>> {
        &self.dst
    }

    /// Edges grouped by destination node.
    pub fn segments(&self) -> &Rc<Segments> {
        &self.segments
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Nodes grouped by graph.
    pub fn graph_segments(&self) -> &Rc<Segments> {
        &self.graph_of
    }

    /// Node range of graph `g`.
    pub fn graph_nodes(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    pub fn graph_labels(&self) -> &[Option<usize>] {
        &self.graph_labels
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }
}
