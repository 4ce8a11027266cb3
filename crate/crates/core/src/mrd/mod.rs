//! Ranking distances and maximum-ranking-distance (MRD) computations for
//! linear, MLP and KAN scoring over the circulant alignment matrix.
//!
//! MRD here is the score-equals-rank form: for a target ranking `π`, the
//! best a family can do is the least residual `‖s(P) − π⁻¹‖` over its
//! members, and MRD is the worst case of that over all targets.

mod bounds;
mod families;
mod lsq;
mod search;

use serde::{Deserialize, Serialize};

use crate::error::{KaaError, Result};
use crate::tensor::Tensor;

pub use bounds::{bound_lt, bound_lt_formula, bound_mlp, MlpBounds};
pub use families::{
    check_family_ordering, kaa_mrd, lt_rank_mrd_2d, lt_rank_mrd_2d_rows, mlp_upper_construction,
    mlp_worst_case, mrd_bruteforce_lt, uniform_front_target, Family, MlpConstruction, MrdReport,
    OrderingReport, RankMrd, SearchMode, MLP_LOWER_BOUND_LABEL,
};
pub use lsq::{least_squares, ls_min_residual, LeastSquares, LeastSquaresFit};
pub use search::EXHAUSTIVE_MAX_N;

/// A permutation of `1..=N` stored both ways: `order[r-1]` is the node with
/// rank `r`, `ranks[i-1]` is the rank of node `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ranking {
    order: Vec<usize>,
    ranks: Vec<usize>,
}

fn check_permutation(values: &[usize]) -> Result<()> {
    let n = values.len();
    let mut seen = vec![false; n + 1];
    for &v in values {
        if v == 0 || v > n || seen[v] {
            return Err(KaaError::Parameter(format!(
                "{values:?} is not a permutation of 1..={n}"
            )));
        }
        seen[v] = true;
    }
    Ok(())
}

fn invert(values: &[usize]) -> Vec<usize> {
    let mut out = vec![0; values.len()];
    for (i, &v) in values.iter().enumerate() {
        out[v - 1] = i + 1;
    }
    out
}

impl Ranking {
    /// From the rank of each node, `σ⁻¹`.
    pub fn from_ranks(ranks: Vec<usize>) -> Result<Self> {
        check_permutation(&ranks)?;
        Ok(Self {
            order: invert(&ranks),
            ranks,
        })
    }

    /// From the node at each rank, `σ`.
    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        check_permutation(&order)?;
        Ok(Self {
            ranks: invert(&order),
            order,
        })
    }

    pub fn identity(n: usize) -> Self {
        let v: Vec<usize> = (1..=n).collect();
        Self {
            order: v.clone(),
            ranks: v,
        }
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn ranks_f64(&self) -> Vec<f64> {
        self.ranks.iter().map(|&r| r as f64).collect()
    }
}

/// Ranks nodes by ascending score; equal scores go to the lower index first.
pub fn importance_ranking(scores: &[f64]) -> Result<Ranking> {
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(KaaError::Parameter(format!("score {i} is NaN")));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    Ranking::from_order(idx.into_iter().map(|i| i + 1).collect())
}

/// Euclidean distance between the rank vectors of two rankings.
pub fn ranking_distance(a: &Ranking, b: &Ranking) -> Result<f64> {
    if a.len() != b.len() {
        return Err(KaaError::Parameter(format!(
            "rankings of different sizes: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let sq: f64 = a
        .ranks
        .iter()
        .zip(&b.ranks)
        .map(|(&x, &y)| {
            let diff = x as f64 - y as f64;
            diff * diff
        })
        .sum();
    Ok(sq.sqrt())
}

/// The first `d` columns of the `N × N` circulant matrix on `1..=N`,
/// `N = d²`: entry `(j, k)` (1-based) is `((j + k − 2) mod N) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMatrixP {
    d: usize,
    values: Tensor,
}

impl AlignmentMatrixP {
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(KaaError::Parameter(format!(
                "alignment matrix needs d >= 2, got {d}"
            )));
        }
        let n = d * d;
        let data = (0..n)
            .flat_map(|j| (0..d).map(move |k| ((j + k) % n + 1) as f64))
            .collect();
        Ok(Self {
            d,
            values: Tensor::new(&[n, d], data)?,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.d * self.d
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// 1-based entry.
    pub fn entry(&self, j: usize, k: usize) -> usize {
        self.values.get2(j - 1, k - 1) as usize
    }
}

pub fn build_circulant_p(d: usize) -> Result<AlignmentMatrixP> {
    AlignmentMatrixP::new(d)
}
