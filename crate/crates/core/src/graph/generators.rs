use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{random_split, Graph, GraphCollection, Split, Task};
use crate::error::{KaaError, Result};
use crate::tensor::{standard_normal, Tensor};

pub const DICTIONARY_GRAPHS: usize = 64;

/// Dictionary lookup with the default number of graphs.
pub fn gen_dictionary_lookup(k: usize, seed: u64) -> Result<GraphCollection> {
    gen_dictionary_lookup_with(k, DICTIONARY_GRAPHS, seed)
}

/// `num_graphs` independent lookup tables of `k` keys and `k` queries each.
///
/// Nodes `0..k` are keys and `k..2k` are queries. Features have width `2k`:
/// a key-id one-hot followed by a value one-hot. Key `i` holds id `i` and a
/// random value class; each query holds only the id of its designated key
/// and is labeled with that key's value. Every key-query pair is linked in
/// both directions. Queries are split 60/20/20; keys belong to no split.
pub fn gen_dictionary_lookup_with(
    k: usize,
    num_graphs: usize,
    seed: u64,
) -> Result<GraphCollection> {
    if k < 2 {
        return Err(KaaError::Parameter(format!(
            "dictionary lookup needs k >= 2, got {k}"
        )));
    }
    if num_graphs == 0 {
        return Err(KaaError::Parameter(
            "dictionary lookup needs at least one graph".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = (0..num_graphs)
        .map(|_| dictionary_graph(k, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    GraphCollection::new(graphs, Task::NodeClassification)
}

fn dictionary_graph(k: usize, rng: &mut ChaCha8Rng) -> Result<Graph> {
    let n = 2 * k;
    let width = 2 * k;
    let values: Vec<usize> = (0..k).map(|_| rng.gen_range(0..k)).collect();
    let mut designated: Vec<usize> = (0..k).collect();
    designated.shuffle(rng);

    let mut feats = Tensor::zeros(&[n, width]);
    let mut labels = vec![0; n];
    for key in 0..k {
        feats.set2(key, key, 1.0);
        feats.set2(key, k + values[key], 1.0);
        labels[key] = values[key];
    }
    for (q, &key) in designated.iter().enumerate() {
        feats.set2(k + q, key, 1.0);
        labels[k + q] = values[key];
    }

    let mut edges = Vec::with_capacity(2 * k * k);
    for q in k..n {
        for key in 0..k {
            edges.push((q, key));
            edges.push((key, q));
        }
    }

    let queries: Vec<usize> = (k..n).collect();
    let mut splits = vec![Split::None; n];
    for (node, s) in random_split(&queries, rng.gen()) {
        splits[node] = s;
    }
    Graph::new(feats, edges, labels, splits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub blocks: usize,
    pub per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Standard deviation of Gaussian noise added to the one-hot block features.
    pub feature_noise: f64,
}

impl SbmParams {
    pub fn new(blocks: usize, per_block: usize, p_in: f64, p_out: f64) -> Self {
        Self {
            blocks,
            per_block,
            p_in,
            p_out,
            feature_noise: 0.5,
        }
    }
}

/// Stochastic block model with undirected edges stored in both directions.
/// Node `i` belongs to block `i / per_block`; splits are a seeded 60/20/20.
pub fn gen_sbm(params: &SbmParams, seed: u64) -> Result<Graph> {
    let SbmParams {
        blocks,
        per_block,
        p_in,
        p_out,
        feature_noise,
    } = *params;
    if blocks == 0 || per_block == 0 {
        return Err(KaaError::Parameter(
            "SBM needs positive block count and size".into(),
        ));
    }
    if !(0.0..=1.0).contains(&p_out) || !(0.0..=1.0).contains(&p_in) || p_out >= p_in {
        return Err(KaaError::Parameter(format!(
            "SBM probabilities must satisfy 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}"
        )));
    }
    if !(feature_noise >= 0.0 && feature_noise.is_finite()) {
        return Err(KaaError::Parameter(format!(
            "bad feature noise {feature_noise}"
        )));
    }
    let n = blocks * per_block;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = |i: usize| i / per_block;

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if block(i) == block(j) { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
                edges.push((j, i));
            }
        }
    }

    let mut feats = Tensor::zeros(&[n, blocks]);
    for i in 0..n {
        for c in 0..blocks {
            let hot = if c == block(i) { 1.0 } else { 0.0 };
            feats.set2(i, c, hot + feature_noise * standard_normal(&mut rng));
        }
    }
    let labels: Vec<usize> = (0..n).map(block).collect();
    let all: Vec<usize> = (0..n).collect();
    let mut splits = vec![Split::None; n];
    for (node, s) in random_split(&all, rng.gen()) {
        splits[node] = s;
    }
    Graph::new(feats, edges, labels, splits)
}
