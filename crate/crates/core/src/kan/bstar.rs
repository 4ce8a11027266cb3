//! Modified zero-order splines that fire only on the last unit of each cell,
//! and the single-layer KAN built from them over the circulant input family.

use serde::{Deserialize, Serialize};

use crate::error::{KaaError, Result};
use crate::tensor::Tensor;

/// Grid of `d` cells of width `d` covering `(0, d²]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroOrderBStarSpec {
    pub d: usize,
}

impl ZeroOrderBStarSpec {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(KaaError::Parameter("B* grid size must be positive".into()));
        }
        Ok(Self { d })
    }

    /// `B*_l(x)`: 1 on `(l·d − 1, l·d]`, 0 elsewhere (including the rest of
    /// cell `((l−1)·d, l·d]`).
    pub fn eval(&self, l: usize, x: f64) -> Result<f64> {
        bstar_eval(l, self.d, x)
    }
}

pub fn bstar_eval(l: usize, d: usize, x: f64) -> Result<f64> {
    if l == 0 || l > d {
        return Err(KaaError::Parameter(format!("B* index {l} outside 1..={d}")));
    }
    let top = (l * d) as f64;
    Ok(if top - 1.0 < x && x <= top { 1.0 } else { 0.0 })
}

/// Single-layer KAN `s(p) = Σ_k Σ_l c[k][l] · B*_l(p_k)` over `d` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BStarKan {
    spec: ZeroOrderBStarSpec,
    /// `[d × d]`, row `k−1` holds the `d` coefficients of input `k`.
    coefficients: Tensor,
}

impl BStarKan {
    pub fn new(d: usize, coefficients: Tensor) -> Result<Self> {
        if coefficients.shape() != [d, d] {
            return Err(KaaError::shape(
                "BStarKan::new",
                coefficients.shape(),
                &[d, d],
            ));
        }
        Ok(Self {
            spec: ZeroOrderBStarSpec::new(d)?,
            coefficients,
        })
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn coefficients(&self) -> &Tensor {
        &self.coefficients
    }

    /// 1-based accessor `c_{k,l}`.
    pub fn coefficient(&self, k: usize, l: usize) -> f64 {
        self.coefficients.get2(k - 1, l - 1)
    }

    pub fn num_params(&self) -> usize {
        self.coefficients.len()
    }

    pub fn score_row(&self, row: &[f64]) -> Result<f64> {
        let d = self.spec.d;
        if row.len() != d {
            return Err(KaaError::shape("BStarKan::score_row", &[row.len()], &[d]));
        }
        let mut s = 0.0;
        for (k, &x) in row.iter().enumerate() {
            for l in 1..=d {
                let b = bstar_eval(l, d, x)?;
                if b != 0.0 {
                    s += self.coefficients.get2(k, l - 1) * b;
                }
            }
        }
        Ok(s)
    }

    /// Scores every row of an `[N × d]` input.
    pub fn score_matrix(&self, inputs: &Tensor) -> Result<Vec<f64>> {
        if inputs.rank() != 2 || inputs.cols() != self.spec.d {
            return Err(KaaError::shape(
                "BStarKan::score_matrix",
                inputs.shape(),
                &[inputs.rows(), self.spec.d],
            ));
        }
        (0..inputs.rows())
            .map(|j| self.score_row(inputs.row(j)))
            .collect()
    }
}

/// Coefficients that make the B* KAN score row `j` of the circulant input
/// exactly `target_ranks[j]`.
///
/// Row `j = αd + β + 1` (1-based, `0 ≤ α, β < d`) holds the multiple
/// `(α+1)·d` in column `d − β`, so only `B*_{α+1}` on input `d − β` fires
/// and the score is `c_{d−β, α+1}`.
pub fn kaa_exact_fit(d: usize, target_ranks: &[usize]) -> Result<BStarKan> {
    let n = d * d;
    if d == 0 || target_ranks.len() != n {
        return Err(KaaError::Parameter(format!(
            "expected {n} target ranks for d = {d}, got {}",
            target_ranks.len()
        )));
    }
    let mut seen = vec![false; n + 1];
    for &r in target_ranks {
        if r == 0 || r > n || seen[r] {
            return Err(KaaError::Parameter(format!(
                "target ranks are not a permutation of 1..={n}"
            )));
        }
        seen[r] = true;
    }
    let mut c = Tensor::zeros(&[d, d]);
    for alpha in 0..d {
        for beta in 0..d {
            let j = alpha * d + beta; // 0-based row
            c.set2(d - beta - 1, alpha, target_ranks[j] as f64);
        }
    }
    BStarKan::new(d, c)
}
