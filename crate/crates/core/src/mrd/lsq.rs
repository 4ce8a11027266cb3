use super::AlignmentMatrixP;
use crate::error::{KaaError, Result};
use crate::tensor::Tensor;

const RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresFit {
    pub residual: f64,
    pub weights: Vec<f64>,
}

/// Normal-equation least squares `min_w ‖X w − t‖` for a fixed design `X`
/// (`n × m`, no bias column), with a `1e-12` ridge on `XᵀX`.
///
/// The residual projector `I − X (XᵀX + ρI)⁻¹ Xᵀ` is formed once so that
/// many targets can be scored cheaply.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    design: Tensor,
    /// `(XᵀX + ρI)⁻¹ Xᵀ`, `m × n`.
    pseudo_inverse: Vec<f64>,
    /// `n × n`, row-major.
    projector: Vec<f64>,
}

impl LeastSquares {
    pub fn new(design: &Tensor) -> Result<Self> {
        if design.rank() != 2 || design.rows() == 0 || design.cols() == 0 {
            return Err(KaaError::shape("least_squares", design.shape(), &[0, 0]));
        }
        let (n, m) = (design.rows(), design.cols());
        let x = design.data();
        let mut gram = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                gram[a * m + b] = (0..n).map(|r| x[r * m + a] * x[r * m + b]).sum();
            }
            gram[a * m + a] += RIDGE;
        }
        let chol = cholesky(&gram, m)?;
        // columns of Xᵀ solved one at a time
        let mut pseudo_inverse = vec![0.0; m * n];
        let mut rhs = vec![0.0; m];
        for r in 0..n {
            rhs.copy_from_slice(&x[r * m..(r + 1) * m]);
            let sol = cholesky_solve(&chol, m, &rhs);
            for a in 0..m {
                pseudo_inverse[a * n + r] = sol[a];
            }
        }
        let mut projector = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let hat: f64 = (0..m)
                    .map(|a| x[i * m + a] * pseudo_inverse[a * n + j])
                    .sum();
                projector[i * n + j] = if i == j { 1.0 } else { 0.0 } - hat;
            }
        }
        Ok(Self {
            design: design.clone(),
            pseudo_inverse,
            projector,
        })
    }

    pub fn rows(&self) -> usize {
        self.design.rows()
    }

    pub fn design(&self) -> &Tensor {
        &self.design
    }

    fn check_len(&self, target: &[f64]) -> Result<()> {
        if target.len() != self.rows() {
            return Err(KaaError::shape(
                "least_squares",
                &[target.len()],
                self.design.shape(),
            ));
        }
        Ok(())
    }

    /// Weights and the residual of the fitted values.
    pub fn fit(&self, target: &[f64]) -> Result<LeastSquaresFit> {
        self.check_len(target)?;
        let (n, m) = (self.rows(), self.design.cols());
        let weights: Vec<f64> = (0..m)
            .map(|a| {
                (0..n)
                    .map(|r| self.pseudo_inverse[a * n + r] * target[r])
                    .sum()
            })
            .collect();
        let x = self.design.data();
        let residual = (0..n)
            .map(|r| {
                let pred: f64 = (0..m).map(|a| x[r * m + a] * weights[a]).sum();
                (pred - target[r]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        Ok(LeastSquaresFit { residual, weights })
    }

    /// Residual norm only, through the precomputed projector.
    pub fn residual(&self, target: &[f64]) -> f64 {
        let n = self.rows();
        debug_assert_eq!(target.len(), n);
        let mut sq = 0.0;
        for i in 0..n {
            let row = &self.projector[i * n..(i + 1) * n];
            let r: f64 = row.iter().zip(target).map(|(p, t)| p * t).sum();
            sq += r * r;
        }
        sq.sqrt()
    }

    pub fn residual_of_ranks(&self, ranks: &[usize], scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.extend(ranks.iter().map(|&r| r as f64));
        self.residual(scratch)
    }
}

fn cholesky(a: &[f64], m: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * m + k] * l[j * m + k]).sum();
            if i == j {
                let v = a[i * m + i] - s;
                if v <= 0.0 {
                    return Err(KaaError::Degenerate(
                        "normal equations are not positive definite".into(),
                    ));
                }
                l[i * m + i] = v.sqrt();
            } else {
                l[i * m + j] = (a[i * m + j] - s) / l[j * m + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], m: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m];
    for i in 0..m {
        let s: f64 = (0..i).map(|k| l[i * m + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * m + i];
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|k| l[k * m + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * m + i];
    }
    x
}

/// One-off least squares on an arbitrary design.
pub fn least_squares(design: &Tensor, target: &[f64]) -> Result<LeastSquaresFit> {
    LeastSquares::new(design)?.fit(target)
}

/// Best linear (no bias) fit of `target` from the columns of `P`.
pub fn ls_min_residual(p: &AlignmentMatrixP, target: &[f64]) -> Result<LeastSquaresFit> {
    least_squares(p.values(), target)
}
