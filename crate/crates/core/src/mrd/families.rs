use std::collections::BTreeSet;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::bounds::{bound_lt, bound_mlp};
use super::lsq::LeastSquares;
use super::search::{exhaustive_max, sampled_max, Worst};
use super::{importance_ranking, ranking_distance, AlignmentMatrixP, Ranking};
use crate::error::{KaaError, Result};
use crate::kan::kaa_exact_fit;
use crate::tensor::Tensor;

/// Label attached to the MLP lower bound, which no oracle certifies.
pub const MLP_LOWER_BOUND_LABEL: &str = "analytic, unverified";

const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Lt,
    Mlp,
    Kaa,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Lt => "lt",
            Family::Mlp => "mlp",
            Family::Kaa => "kaa",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lt" => Ok(Family::Lt),
            "mlp" => Ok(Family::Mlp),
            "kaa" => Ok(Family::Kaa),
            other => Err(KaaError::Parameter(format!(
                "unknown family {other:?} (expected lt, mlp or kaa)"
            ))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How targets are enumerated. A sampled maximum is only a lower bound on
/// the true maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchMode {
    Exhaustive,
    Sampled { samples: usize, seed: u64 },
}

impl SearchMode {
    fn label(self) -> &'static str {
        match self {
            SearchMode::Exhaustive => "exhaustive",
            SearchMode::Sampled { .. } => "sampled",
        }
    }

    fn run<F>(self, n: usize, objective: F) -> Result<Worst>
    where
        F: Fn(&[usize], &mut Vec<f64>) -> f64 + Sync,
    {
        match self {
            SearchMode::Exhaustive => exhaustive_max(n, objective),
            SearchMode::Sampled { samples, seed } => sampled_max(n, samples, seed, objective),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrdReport {
    pub family: Family,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    /// Worst residual over the searched targets.
    pub oracle: f64,
    pub lower_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_bound_label: Option<String>,
    pub upper_bound: Option<f64>,
    /// Target ranks `π⁻¹` attaining `oracle`.
    pub witness: Vec<usize>,
    pub elapsed_ms: f64,
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

impl MrdReport {
    fn new(
        family: Family,
        p: &AlignmentMatrixP,
        mode: SearchMode,
        worst: Worst,
        started: Instant,
    ) -> Self {
        Self {
            family,
            d: p.d(),
            n: p.n(),
            oracle: worst.value,
            lower_bound: 0.0,
            lower_bound_label: None,
            upper_bound: None,
            witness: worst.witness,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
            mode: mode.label().to_string(),
            samples: match mode {
                SearchMode::Exhaustive => None,
                SearchMode::Sampled { samples, .. } => Some(samples),
            },
        }
    }

    pub fn witness_ranking(&self) -> Result<Ranking> {
        Ranking::from_ranks(self.witness.clone())
    }
}

fn check_search_size(p: &AlignmentMatrixP, mode: SearchMode) -> Result<()> {
    if mode == SearchMode::Exhaustive && p.d() > 3 {
        return Err(KaaError::Size(format!(
            "exhaustive search at d = {} means {}! targets; pass a sample count to use sampled mode",
            p.d(),
            p.n()
        )));
    }
    Ok(())
}

/// Worst least-squares residual of linear scoring `P w` over target rankings.
pub fn mrd_bruteforce_lt(p: &AlignmentMatrixP, mode: SearchMode) -> Result<MrdReport> {
    check_search_size(p, mode)?;
    let started = Instant::now();
    let ls = LeastSquares::new(p.values())?;
    let worst = mode.run(p.n(), |ranks, scratch| ls.residual_of_ranks(ranks, scratch))?;
    let mut report = MrdReport::new(Family::Lt, p, mode, worst, started);
    report.lower_bound = bound_lt(p.n(), p.d())?;
    if mode == SearchMode::Exhaustive && report.oracle < report.lower_bound - BOUND_TOL {
        return Err(KaaError::TheoremCheck(format!(
            "linear MRD {} at d = {} is below the bound {}",
            report.oracle,
            p.d(),
            report.lower_bound
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankMrd {
    pub value: f64,
    /// Distinct orderings reachable by some `w`.
    pub achievable: Vec<Ranking>,
    pub witness: Ranking,
}

/// Ranking-level MRD of linear scoring on two-column inputs.
///
/// The ordering of `w · x_j` only changes when `w` crosses a direction
/// perpendicular to some `x_a − x_b`, so one direction per arc between
/// consecutive critical angles enumerates every achievable ordering.
pub fn lt_rank_mrd_2d_rows(rows: &Tensor) -> Result<RankMrd> {
    if rows.rank() != 2 || rows.cols() != 2 {
        return Err(KaaError::shape(
            "lt_rank_mrd_2d",
            rows.shape(),
            &[rows.rows(), 2],
        ));
    }
    let n = rows.rows();
    if !(2..=super::EXHAUSTIVE_MAX_N).contains(&n) {
        return Err(KaaError::Size(format!(
            "rank MRD needs 2 <= N <= 9, got {n}"
        )));
    }
    let mut critical = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let (dx, dy) = (
                rows.get2(a, 0) - rows.get2(b, 0),
                rows.get2(a, 1) - rows.get2(b, 1),
            );
            if dx == 0.0 && dy == 0.0 {
                return Err(KaaError::Degenerate(format!(
                    "rows {} and {} are identical",
                    a + 1,
                    b + 1
                )));
            }
            // w ⊥ (dx, dy) at two opposite angles
            let base = dy.atan2(dx) + std::f64::consts::FRAC_PI_2;
            for angle in [base, base + std::f64::consts::PI] {
                critical.push(angle.rem_euclid(std::f64::consts::TAU));
            }
        }
    }
    critical.sort_by(f64::total_cmp);
    critical.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let mut achievable = BTreeSet::new();
    for (i, &start) in critical.iter().enumerate() {
        let end = critical
            .get(i + 1)
            .copied()
            .unwrap_or(critical[0] + std::f64::consts::TAU);
        let mid = 0.5 * (start + end);
        let (wx, wy) = (mid.cos(), mid.sin());
        let scores: Vec<f64> = (0..n)
            .map(|j| wx * rows.get2(j, 0) + wy * rows.get2(j, 1))
            .collect();
        achievable.insert(importance_ranking(&scores)?.ranks().to_vec());
    }
    let achievable: Vec<Ranking> = achievable
        .into_iter()
        .map(Ranking::from_ranks)
        .collect::<Result<_>>()?;
    let worst = exhaustive_max(n, |ranks, _| {
        let target = Ranking::from_ranks(ranks.to_vec()).expect("search yields permutations");
        achievable
            .iter()
            .map(|r| ranking_distance(r, &target).expect("equal sizes"))
            .fold(f64::INFINITY, f64::min)
    })?;
    Ok(RankMrd {
        value: worst.value,
        witness: Ranking::from_ranks(worst.witness)?,
        achievable,
    })
}

pub fn lt_rank_mrd_2d(p: &AlignmentMatrixP) -> Result<RankMrd> {
    if p.d() != 2 {
        return Err(KaaError::Parameter(format!(
            "rank-level MRD is computed for d = 2 only, got d = {}",
            p.d()
        )));
    }
    lt_rank_mrd_2d_rows(p.values())
}

/// A width-`d` ReLU layer over `P` followed by a least-squares output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpConstruction {
    /// `d × d` first-layer weights, no bias.
    pub hidden_weights: Tensor,
    /// `ReLU(P · hidden_weights)`, `N × d`.
    pub hidden: Tensor,
    pub output_weights: Vec<f64>,
    pub scores: Vec<f64>,
    pub residual: f64,
}

/// First layer of the construction. Column operations take `P` to `P*`:
/// differences of adjacent columns, then for columns 3..d a second
/// difference scaled by `1/N`. The layer outputs
/// `[P*₂, P*₃, …, P*_d, −P*_d]` before the ReLU.
fn mlp_first_layer(p: &AlignmentMatrixP) -> Result<(Tensor, Tensor)> {
    let (d, n) = (p.d(), p.n());
    let mut first_diff = Tensor::identity(d);
    for k in 1..d {
        first_diff.set2(k - 1, k, -1.0);
    }
    let mut second_diff = Tensor::identity(d);
    for k in 2..d {
        second_diff.set2(k, k, 1.0 / n as f64);
        second_diff.set2(k - 1, k, -1.0 / n as f64);
    }
    let to_star = first_diff.matmul(&second_diff)?;
    let mut select = Tensor::zeros(&[d, d]);
    for k in 1..d {
        select.set2(k, k - 1, 1.0);
    }
    select.set2(d - 1, d - 1, -1.0);
    let weights = to_star.matmul(&select)?;
    let hidden = p.values().matmul(&weights)?.map(|v| v.max(0.0));
    check_lower_block(&hidden, d)?;
    Ok((weights, hidden))
}

/// The last `d − 1` rows restricted to columns `2..=d` must be invertible.
fn check_lower_block(hidden: &Tensor, d: usize) -> Result<()> {
    let n = hidden.rows();
    let m = d - 1;
    let mut block: Vec<Vec<f64>> = (n - m..n).map(|r| hidden.row(r)[1..].to_vec()).collect();
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&a, &b| block[a][col].abs().total_cmp(&block[b][col].abs()))
            .expect("non-empty range");
        if block[pivot][col].abs() < 1e-9 {
            return Err(KaaError::Internal(format!(
                "MLP construction block is rank deficient at d = {d}"
            )));
        }
        block.swap(col, pivot);
        for r in col + 1..m {
            let f = block[r][col] / block[col][col];
            for c in col..m {
                block[r][c] -= f * block[col][c];
            }
        }
    }
    Ok(())
}

pub fn mlp_upper_construction(p: &AlignmentMatrixP, target: &Ranking) -> Result<MlpConstruction> {
    if target.len() != p.n() {
        return Err(KaaError::Parameter(format!(
            "target has {} entries, P has {} rows",
            target.len(),
            p.n()
        )));
    }
    let (hidden_weights, hidden) = mlp_first_layer(p)?;
    let fit = LeastSquares::new(&hidden)?.fit(&target.ranks_f64())?;
    let scores: Vec<f64> = (0..p.n())
        .map(|r| {
            hidden
                .row(r)
                .iter()
                .zip(&fit.weights)
                .map(|(h, w)| h * w)
                .sum()
        })
        .collect();
    let upper = bound_mlp(p.n(), p.d())?.upper;
    if fit.residual > upper + BOUND_TOL {
        return Err(KaaError::TheoremCheck(format!(
            "MLP construction residual {} exceeds the upper bound {upper}",
            fit.residual
        )));
    }
    Ok(MlpConstruction {
        hidden_weights,
        hidden,
        output_weights: fit.weights,
        scores,
        residual: fit.residual,
    })
}

/// Worst residual of the MLP construction over target rankings.
pub fn mlp_worst_case(p: &AlignmentMatrixP, mode: SearchMode) -> Result<MrdReport> {
    check_search_size(p, mode)?;
    let started = Instant::now();
    let (_, hidden) = mlp_first_layer(p)?;
    let ls = LeastSquares::new(&hidden)?;
    let worst = mode.run(p.n(), |ranks, scratch| ls.residual_of_ranks(ranks, scratch))?;
    let bounds = bound_mlp(p.n(), p.d())?;
    let mut report = MrdReport::new(Family::Mlp, p, mode, worst, started);
    report.lower_bound = bounds.lower;
    report.lower_bound_label = Some(MLP_LOWER_BOUND_LABEL.to_string());
    report.upper_bound = Some(bounds.upper);
    if report.oracle > bounds.upper + BOUND_TOL {
        return Err(KaaError::TheoremCheck(format!(
            "MLP construction worst case {} exceeds the upper bound {}",
            report.oracle, bounds.upper
        )));
    }
    Ok(report)
}

/// Target whose first `N + 1 − d` nodes get the most spread ranks,
/// alternating `1, N, 2, N − 1, …`; the remaining ranks go to the last
/// `d − 1` nodes in increasing order.
pub fn uniform_front_target(d: usize) -> Result<Ranking> {
    let n = d * d;
    let front = n + 1 - d;
    let (mut lo, mut hi) = (1, n);
    let mut ranks = Vec::with_capacity(n);
    for i in 0..front {
        if i % 2 == 0 {
            ranks.push(lo);
            lo += 1;
        } else {
            ranks.push(hi);
            hi -= 1;
        }
    }
    ranks.extend(lo..=hi);
    Ranking::from_ranks(ranks)
}

/// Worst residual of the exact zero-order KAN fit over target rankings.
pub fn kaa_mrd(p: &AlignmentMatrixP, mode: SearchMode) -> Result<MrdReport> {
    if mode == SearchMode::Exhaustive && p.n() > super::EXHAUSTIVE_MAX_N {
        check_search_size(p, mode)?;
    }
    let started = Instant::now();
    let d = p.d();
    let worst = mode.run(p.n(), |ranks, _| {
        let kan = kaa_exact_fit(d, ranks).expect("search yields permutations of 1..=N");
        let scores = kan.score_matrix(p.values()).expect("P has d columns");
        scores
            .iter()
            .zip(ranks)
            .map(|(s, &r)| (s - r as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    })?;
    Ok(MrdReport::new(Family::Kaa, p, mode, worst, started))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub d: usize,
    pub kaa: f64,
    pub mlp: f64,
    pub lt: f64,
    pub holds: bool,
}

/// Exhaustive KAA, MLP-construction and linear MRD at `d ∈ {2, 3}`; an
/// ordering violation is an error.
pub fn check_family_ordering(d: usize) -> Result<OrderingReport> {
    if !(2..=3).contains(&d) {
        return Err(KaaError::Parameter(format!(
            "the ordering check runs exhaustively for d in {{2, 3}}, got {d}"
        )));
    }
    let p = AlignmentMatrixP::new(d)?;
    let kaa = kaa_mrd(&p, SearchMode::Exhaustive)?.oracle;
    let mlp = mlp_worst_case(&p, SearchMode::Exhaustive)?.oracle;
    let lt = mrd_bruteforce_lt(&p, SearchMode::Exhaustive)?.oracle;
    let holds = kaa <= mlp && mlp <= lt;
    if !holds {
        return Err(KaaError::TheoremCheck(format!(
            "ordering violated at d = {d}: kaa {kaa}, mlp {mlp}, lt {lt}"
        )));
    }
    Ok(OrderingReport {
        d,
        kaa,
        mlp,
        lt,
        holds,
    })
}
