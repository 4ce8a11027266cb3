use serde::{Deserialize, Serialize};

use crate::error::{KaaError, Result};

fn cube(x: i128) -> i128 {
    x * x * x
}

/// `√((N³ − N − d³ + 3d² − 2d) / 12)` for any `N`, `d`, without the
/// `N = d²` check.
pub fn bound_lt_formula(n: usize, d: usize) -> f64 {
    let (n, d) = (n as i128, d as i128);
    let num = cube(n) - n - cube(d) + 3 * d * d - 2 * d;
    (num as f64 / 12.0).sqrt()
}

fn require_square(n: usize, d: usize) -> Result<()> {
    if d == 0 || n != d * d {
        return Err(KaaError::Parameter(format!(
            "bounds hold for N = d², got N = {n}, d = {d}"
        )));
    }
    Ok(())
}

/// Lower bound on the MRD of linear scoring over `P(d)`.
pub fn bound_lt(n: usize, d: usize) -> Result<f64> {
    require_square(n, d)?;
    Ok(bound_lt_formula(n, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Bounds on the MRD of a width-`d` two-layer ReLU MLP over `P(d)`, with
/// `λ = d³ − 3d² + 2d`.
pub fn bound_mlp(n: usize, d: usize) -> Result<MlpBounds> {
    require_square(n, d)?;
    if n <= d {
        return Err(KaaError::Parameter(format!(
            "MLP bounds need N > d, got N = {n}"
        )));
    }
    let (ni, di) = (n as i128, d as i128);
    let lambda = cube(di) - 3 * di * di + 2 * di;
    let upper = cube(ni) - ni - lambda;
    let m = ni - di;
    let lower = cube(m) - m - lambda;
    Ok(MlpBounds {
        lower: (lower as f64 / 12.0).sqrt(),
        upper: (upper as f64 / 12.0).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lt_examples() {
        assert!((bound_lt(4, 2).unwrap() - 5f64.sqrt()).abs() < 1e-15);
        assert!((bound_lt(9, 3).unwrap() - 59.5f64.sqrt()).abs() < 1e-15);
        assert!((bound_lt(4, 2).unwrap() - 2.23607).abs() < 1e-5);
        assert!((bound_lt(9, 3).unwrap() - 7.71362).abs() < 1e-5);
    }

    #[test]
    fn lt_rejects_non_square() {
        assert!(bound_lt(5, 2).is_err());
        assert!(bound_mlp(8, 3).is_err());
    }

    #[test]
    fn lt_formula_increasing_in_n() {
        for d in 2..=8 {
            let vals: Vec<f64> = (d * d..d * d + 50)
                .map(|n| bound_lt_formula(n, d))
                .collect();
            assert!(vals.windows(2).all(|w| w[1] > w[0]), "d = {d}");
        }
    }

    #[test]
    fn mlp_examples() {
        let b = bound_mlp(4, 2).unwrap();
        assert!((b.upper - 5f64.sqrt()).abs() < 1e-15);
        assert!((b.lower - 0.5f64.sqrt()).abs() < 1e-15);
        let b = bound_mlp(9, 3).unwrap();
        assert!((b.upper - 59.5f64.sqrt()).abs() < 1e-15);
        assert!((b.lower - 17f64.sqrt()).abs() < 1e-15);
        assert!((b.lower - 4.12311).abs() < 1e-5);
    }

    #[test]
    fn mlp_upper_equals_lt_exactly() {
        for d in 2..=8 {
            assert_eq!(
                bound_mlp(d * d, d).unwrap().upper,
                bound_lt(d * d, d).unwrap()
            );
        }
    }
}
