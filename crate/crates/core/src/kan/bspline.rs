use serde::{Deserialize, Serialize};

use crate::error::{KaaError, Result};

/// Uniform B-spline grid over `[range_min, range_max]`.
///
/// `grid_size` interior cells, spline `order` k, and `grid_size + 2k + 1`
/// knots extending `k` cells past each end of the range. Cells are half-open
/// on the left, `(t_i, t_{i+1}]`; the range minimum itself is assigned to the
/// first interior cell.
/// Highest supported spline order.
pub const MAX_ORDER: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BSplineGrid {
    range_min: f64,
    range_max: f64,
    grid_size: usize,
    order: usize,
}

impl BSplineGrid {
    pub fn new(range_min: f64, range_max: f64, grid_size: usize, order: usize) -> Result<Self> {
        if !(range_min < range_max) || !range_min.is_finite() || !range_max.is_finite() {
            return Err(KaaError::Parameter(format!(
                "grid range [{range_min}, {range_max}] is empty"
            )));
        }
        if grid_size == 0 {
            return Err(KaaError::Parameter("grid size must be positive".into()));
        }
        if order > MAX_ORDER {
            return Err(KaaError::Parameter(format!(
                "spline order {order} exceeds the maximum {MAX_ORDER}"
            )));
        }
        Ok(Self {
            range_min,
            range_max,
            grid_size,
            order,
        })
    }

    pub fn range_min(&self) -> f64 {
        self.range_min
    }

    pub fn range_max(&self) -> f64 {
        self.range_max
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_basis(&self) -> usize {
        self.grid_size + self.order
    }

    pub fn spacing(&self) -> f64 {
        (self.range_max - self.range_min) / self.grid_size as f64
    }

    pub fn knot(&self, i: usize) -> f64 {
        self.range_min + (i as f64 - self.order as f64) * self.spacing()
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..self.grid_size + 2 * self.order + 1)
            .map(|i| self.knot(i))
            .collect()
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.range_min, self.range_max)
    }

    /// Knot-interval index `c` (into the full knot vector) holding clamped `x`.
    fn cell(&self, x: f64) -> usize {
        let k = self.order;
        let h = self.spacing();
        let pos = (x - self.range_min) / h;
        // (t_c, t_{c+1}] → c = ceil(pos) - 1 + k, with the minimum mapped to cell k
        let interior = if pos <= 0.0 {
            0
        } else {
            (pos.ceil() as usize)
                .saturating_sub(1)
                .min(self.grid_size - 1)
        };
        interior + k
    }

    /// Evaluates the `order + 1` basis functions that can be non-zero at `x`
    /// and their derivatives. Returns the index of the first one.
    ///
    /// Inputs outside the range are clamped and report zero derivatives.
    pub fn local_basis(&self, x: f64, values: &mut [f64], derivs: &mut [f64]) -> usize {
        let k = self.order;
        debug_assert_eq!(values.len(), k + 1);
        let outside = x < self.range_min || x > self.range_max;
        let x = self.clamp(x);
        let c = self.cell(x);
        let h = self.spacing();

        // Triangular scheme; `prev` keeps the order k-1 values for derivatives.
        const W: usize = MAX_ORDER + 1;
        let mut n = [0.0; W];
        let mut prev = [0.0; W];
        n[0] = 1.0;
        let mut left = [0.0; W];
        let mut right = [0.0; W];
        for j in 1..=k {
            if j == k {
                prev[..k].copy_from_slice(&n[..k]);
            }
            left[j] = x - self.knot(c + 1 - j);
            right[j] = self.knot(c + j) - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        values.copy_from_slice(&n[..=k]);

        if k == 0 || outside {
            derivs.iter_mut().for_each(|d| *d = 0.0);
        } else {
            // B'_{i,k} = (B_{i,k-1} - B_{i+1,k-1}) / h on a uniform grid
            for (r, d) in derivs.iter_mut().enumerate() {
                let a = if r == 0 { 0.0 } else { prev[r - 1] };
                let b = if r == k { 0.0 } else { prev[r] };
                *d = (a - b) / h;
            }
        }
        c - k
    }

    /// Full basis vector of length `grid_size + order` at `x`.
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let k = self.order;
        let mut vals = vec![0.0; k + 1];
        let mut ders = vec![0.0; k + 1];
        let start = self.local_basis(x, &mut vals, &mut ders);
        let mut out = vec![0.0; self.num_basis()];
        out[start..start + k + 1].copy_from_slice(&vals);
        out
    }
}

/// Textbook Cox-de Boor recursion over the full knot vector.
///
/// Kept as an independent route to [`BSplineGrid::basis`]; it uses the same
/// clamping and cell conventions but none of the local triangular scheme.
pub fn bspline_basis(x: f64, grid: &BSplineGrid) -> Vec<f64> {
    let k = grid.order();
    let t = grid.knots();
    let x = grid.clamp(x);
    let n_cells = t.len() - 1;
    let mut b: Vec<f64> = (0..n_cells)
        .map(|i| {
            let active = if x <= grid.range_min() {
                i == k
            } else {
                t[i] < x && x <= t[i + 1]
            };
            if active {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for p in 1..=k {
        let next: Vec<f64> = (0..n_cells - p)
            .map(|i| {
                let a = (x - t[i]) / (t[i + p] - t[i]) * b[i];
                let c = (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * b[i + 1];
                a + c
            })
            .collect();
        b = next;
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn order_zero_indicator() {
        let g = BSplineGrid::new(0.0, 2.0, 2, 0).unwrap();
        assert_eq!(bspline_basis(0.5, &g), vec![1.0, 0.0]);
        assert_eq!(bspline_basis(1.5, &g), vec![0.0, 1.0]);
        // (a, b] cells: the shared knot belongs to the left cell
        assert_eq!(bspline_basis(1.0, &g), vec![1.0, 0.0]);
        assert_eq!(g.basis(0.0), vec![1.0, 0.0]);
        assert_eq!(g.basis(2.0), vec![0.0, 1.0]);
    }

    #[test]
    fn hat_at_interior_knot() {
        let g = BSplineGrid::new(0.0, 4.0, 4, 1).unwrap();
        // knots -1,0,1,2,3,4,5; hat i peaks at t_{i+1}
        let b = g.basis(2.0);
        assert_eq!(b.len(), 5);
        assert!((b[2] - 1.0).abs() < 1e-15);
        assert!(b[1].abs() < 1e-15 && b[3].abs() < 1e-15);
    }

    #[test]
    fn partition_of_unity_and_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for order in 1..=3 {
            for grid_size in [1, 2, 4, 8] {
                let g = BSplineGrid::new(-1.0, 1.0, grid_size, order).unwrap();
                for _ in 0..1000 {
                    let x = rng.gen_range(-1.0..=1.0);
                    let fast = g.basis(x);
                    let slow = bspline_basis(x, &g);
                    assert!((fast.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(fast.iter().all(|v| *v >= -1e-15));
                    for (a, b) in fast.iter().zip(&slow) {
                        assert!((a - b).abs() < 1e-12, "order {order} x {x}");
                    }
                }
            }
        }
    }

    #[test]
    fn clamping_outside_range() {
        let g = BSplineGrid::new(-1.0, 1.0, 4, 2).unwrap();
        assert_eq!(g.basis(-7.0), g.basis(-1.0));
        assert_eq!(g.basis(9.0), g.basis(1.0));
        let mut v = vec![0.0; 3];
        let mut d = vec![1.0; 3];
        g.local_basis(3.0, &mut v, &mut d);
        assert!(d.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for order in 1..=3 {
            let g = BSplineGrid::new(-1.0, 1.0, 4, order).unwrap();
            for _ in 0..200 {
                let x: f64 = rng.gen_range(-0.99..0.99);
                let knots = g.knots();
                if knots.iter().any(|t| (t - x).abs() < 1e-4) {
                    continue;
                }
                let mut v = vec![0.0; order + 1];
                let mut d = vec![0.0; order + 1];
                let s = g.local_basis(x, &mut v, &mut d);
                let bp = g.basis(x + 1e-6);
                let bm = g.basis(x - 1e-6);
                for r in 0..=order {
                    let fd = (bp[s + r] - bm[s + r]) / 2e-6;
                    assert!((fd - d[r]).abs() < 1e-5, "order {order} x {x}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(BSplineGrid::new(1.0, 1.0, 2, 1).is_err());
        assert!(BSplineGrid::new(0.0, 1.0, 0, 1).is_err());
    }
}
