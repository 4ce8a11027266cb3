use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BSplineGrid;
use crate::error::{KaaError, Result};
use crate::params::{Bound, ParamId, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{finite_diff_check_many, Activation, Tape, Tensor, Var, KINK_MARGIN};

/// Options that the trainable KAN exposes beyond its grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct KanOptions {
    /// Adds `Σ_i r_ij · silu(x_i)` to every output.
    pub residual: bool,
    /// Squashes inputs into the grid range with a scaled tanh instead of clamping.
    pub squash_inputs: bool,
}

/// One KAN layer: `out_j = Σ_i φ_ij(x_i)` with `φ_ij(x) = Σ_k c_ijk B_k(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub grid: BSplineGrid,
    pub options: KanOptions,
    /// `[n_in, n_out, grid_size + order]`
    pub coefficients: ParamId,
    /// `[n_in, n_out]`
    pub residual_weight: Option<ParamId>,
}

impl KanLayer {
    /// Coefficients uniform in `[-0.1, 0.1] / sqrt(n_in)`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        grid: BSplineGrid,
        options: KanOptions,
        rng: &mut R,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(KaaError::Parameter(format!(
                "KAN layer `{name}` needs positive widths, got {n_in}→{n_out}"
            )));
        }
        let bound = 0.1 / (n_in as f64).sqrt();
        let coef = Tensor::uniform(&[n_in, n_out, grid.num_basis()], bound, rng);
        let coefficients = store.add(format!("{name}.coef"), coef);
        let residual_weight = options.residual.then(|| {
            let b = 1.0 / (n_in as f64).sqrt();
            store.add(
                format!("{name}.residual"),
                Tensor::uniform(&[n_in, n_out], b, rng),
            )
        });
        Ok(Self {
            n_in,
            n_out,
            grid,
            options,
            coefficients,
            residual_weight,
        })
    }

    /// Layer with all-zero coefficients (and residual weights, if enabled).
    pub fn zeros(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        grid: BSplineGrid,
        options: KanOptions,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(KaaError::Parameter(format!(
                "KAN layer `{name}` needs positive widths, got {n_in}→{n_out}"
            )));
        }
        let coefficients = store.add(
            format!("{name}.coef"),
            Tensor::zeros(&[n_in, n_out, grid.num_basis()]),
        );
        let residual_weight = options
            .residual
            .then(|| store.add(format!("{name}.residual"), Tensor::zeros(&[n_in, n_out])));
        Ok(Self {
            n_in,
            n_out,
            grid,
            options,
            coefficients,
            residual_weight,
        })
    }

    pub fn num_params(&self) -> usize {
        let spline = self.n_in * self.n_out * self.grid.num_basis();
        spline + self.residual_weight.map_or(0, |_| self.n_in * self.n_out)
    }

    /// Records the layer on `tape` for a `[batch × n_in]` input.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.n_in {
            return Err(KaaError::shape(
                "kan_forward",
                &shape,
                &[shape[0], self.n_in],
            ));
        }
        let input = if self.options.squash_inputs {
            let mid = 0.5 * (self.grid.range_min() + self.grid.range_max());
            let half = 0.5 * (self.grid.range_max() - self.grid.range_min());
            let centred = tape.add_scalar(x, -mid);
            let scaled = tape.scale(centred, 1.0 / half);
            let squashed = tape.activation(scaled, Activation::Tanh);
            let back = tape.scale(squashed, half);
            tape.add_scalar(back, mid)
        } else {
            x
        };
        let spline = tape.kan(input, params.var(self.coefficients), &self.grid)?;
        match self.residual_weight {
            Some(r) => {
                let base = tape.silu(x);
                let res = tape.matmul(base, params.var(r))?;
                tape.add(spline, res)
            }
            None => Ok(spline),
        }
    }

    /// Untracked forward pass.
    pub fn eval(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let out = self.forward(&mut tape, &bound, xv)?;
        Ok(tape.value(out).clone())
    }
}

/// Sequential KAN layers with no activation in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanStack {
    pub layers: Vec<KanLayer>,
}

impl KanStack {
    pub fn new(layers: Vec<KanLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(KaaError::Parameter(
                "KAN stack needs at least one layer".into(),
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].n_out != pair[1].n_in {
                return Err(KaaError::LayerShape {
                    layer: i + 1,
                    expected: pair[1].n_in,
                    got: pair[0].n_out,
                });
            }
        }
        Ok(Self { layers })
    }

    /// Equal-width stack `n_in → hidden → … → n_out` with `depth` layers.
    #[allow(clippy::too_many_arguments)]
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        hidden: usize,
        n_out: usize,
        depth: usize,
        grid: BSplineGrid,
        options: KanOptions,
        rng: &mut R,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(KaaError::Parameter("KAN depth must be positive".into()));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let i = if l == 0 { n_in } else { hidden };
            let o = if l + 1 == depth { n_out } else { hidden };
            layers.push(KanLayer::new(
                store,
                &format!("{name}.{l}"),
                i,
                o,
                grid,
                options,
                rng,
            )?);
        }
        Self::new(layers)
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(KanLayer::num_params).sum()
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let width = tape.value(h).cols();
            if width != layer.n_in {
                return Err(KaaError::LayerShape {
                    layer: i,
                    expected: layer.n_in,
                    got: width,
                });
            }
            h = layer.forward(tape, params, h)?;
        }
        Ok(h)
    }

    pub fn eval(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let out = self.forward(&mut tape, &bound, xv)?;
        Ok(tape.value(out).clone())
    }
}

/// Finite-difference error of a `2 → 3` layer with residual weights on
/// `[-1, 1]`, checked against its coefficients, residual weights and inputs.
/// Inputs are drawn at least [`KINK_MARGIN`] away from every knot.
pub fn kan_layer_gradient_error(
    grid_size: usize,
    order: usize,
    num_points: usize,
    seed: u64,
) -> Result<f64> {
    let grid = BSplineGrid::new(-1.0, 1.0, grid_size, order)?;
    let h = grid.spacing();
    if h <= 2.0 * KINK_MARGIN {
        return Err(KaaError::Degenerate(format!(
            "knot spacing {h} leaves no point {KINK_MARGIN} away from every knot"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let options = KanOptions {
        residual: true,
        squash_inputs: false,
    };
    let layer = KanLayer::new(&mut store, "check", 2, 3, grid, options, &mut rng)?;
    let coef = Tensor::randn(store.get(layer.coefficients).shape(), 1.0, &mut rng);
    *store.get_mut(layer.coefficients) = coef;
    let x: Vec<f64> = (0..num_points * 2)
        .map(|_| {
            let cell = rng.gen_range(0..grid_size) as f64;
            -1.0 + cell * h + rng.gen_range(KINK_MARGIN..h - KINK_MARGIN)
        })
        .collect();
    let weights = Tensor::randn(&[num_points, 3], 1.0, &mut rng).into_data();
    let n_params = store.len();
    let mut xs = store.tensors().to_vec();
    xs.push(Tensor::new(&[num_points, 2], x)?);
    finite_diff_check_many(
        |tape, vars| {
            let bound = Bound::from_vars(vars[..n_params].to_vec());
            let y = layer.forward(tape, &bound, vars[n_params])?;
            let y = tape.mul_const(y, weights.clone())?;
            Ok(tape.sum(y))
        },
        &xs,
        1e-5,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{AdamConfig, AdamState};

    fn grid(order: usize, size: usize) -> BSplineGrid {
        BSplineGrid::new(-1.0, 1.0, size, order).unwrap()
    }

    #[test]
    fn zero_coefficients_give_zero() {
        let mut store = ParamStore::new();
        let opts = KanOptions {
            residual: true,
            ..KanOptions::default()
        };
        let layer = KanLayer::zeros(&mut store, "k", 3, 2, grid(2, 4), opts).unwrap();
        let x = Tensor::new(
            &[4, 3],
            vec![
                0.3, -0.2, 0.9, 0.1, 0.5, -0.7, 0.0, 0.0, 1.0, -1.0, 0.4, 0.2,
            ],
        )
        .unwrap();
        let y = layer.eval(&store, &x).unwrap();
        assert_eq!(y, Tensor::zeros(&[4, 2]));
    }

    #[test]
    fn single_order_zero_cell() {
        let mut store = ParamStore::new();
        let g = BSplineGrid::new(0.0, 4.0, 4, 0).unwrap();
        let layer = KanLayer::zeros(&mut store, "k", 1, 1, g, KanOptions::default()).unwrap();
        // weight 3 on the cell (1, 2]
        store.get_mut(layer.coefficients).data_mut()[1] = 3.0;
        let x = Tensor::new(&[4, 1], vec![1.5, 2.0, 0.5, 3.7]).unwrap();
        let y = layer.eval(&store, &x).unwrap();
        assert_eq!(y.data(), &[3.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = KanLayer::new(
            &mut store,
            "k",
            3,
            1,
            grid(1, 2),
            KanOptions::default(),
            &mut rng,
        )
        .unwrap();
        let x = Tensor::zeros(&[2, 4]);
        assert!(matches!(
            layer.eval(&store, &x),
            Err(KaaError::Shape { .. })
        ));
    }

    #[test]
    fn linear_in_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s1 = ParamStore::new();
        let l = KanLayer::new(
            &mut s1,
            "k",
            3,
            2,
            grid(3, 4),
            KanOptions::default(),
            &mut rng,
        )
        .unwrap();
        let mut s2 = ParamStore::new();
        KanLayer::new(
            &mut s2,
            "k",
            3,
            2,
            grid(3, 4),
            KanOptions::default(),
            &mut rng,
        )
        .unwrap();
        let mut s12 = s1.clone();
        let sum = s1
            .get(l.coefficients)
            .zip_map(s2.get(l.coefficients), |a, b| a + b)
            .unwrap();
        s12.set(l.coefficients, sum).unwrap();
        let x = Tensor::uniform(&[5, 3], 1.0, &mut rng);
        let y1 = l.eval(&s1, &x).unwrap();
        let y2 = l.eval(&s2, &x).unwrap();
        let y12 = l.eval(&s12, &x).unwrap();
        let sum = y1.zip_map(&y2, |a, b| a + b).unwrap();
        assert!(y12.max_abs_diff(&sum).unwrap() < 1e-12);
    }

    #[test]
    fn coefficient_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for order in 0..=3 {
            let mut store = ParamStore::new();
            let l = KanLayer::new(
                &mut store,
                "k",
                2,
                3,
                grid(order, 4),
                KanOptions::default(),
                &mut rng,
            )
            .unwrap();
            let x = Tensor::uniform(&[6, 2], 0.95, &mut rng);
            let coef = store.get(l.coefficients).clone();
            let err = finite_diff_check_many(
                |tape, v| {
                    let xv = tape.leaf(x.clone());
                    let y = tape.kan(xv, v[0], &l.grid)?;
                    let y = tape.silu(y);
                    Ok(tape.sum(y))
                },
                &[coef],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "order {order}: {err}");
        }
    }

    #[test]
    fn layer_gradients_hold_over_orders_and_grids() {
        for order in 0..=3 {
            for grid_size in 1..=8 {
                let err = kan_layer_gradient_error(grid_size, order, 20, 7).unwrap();
                assert!(err < 1e-4, "order {order} grid {grid_size}: {err}");
            }
        }
    }

    #[test]
    fn stack_rejects_mismatched_widths() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = KanLayer::new(
            &mut store,
            "a",
            2,
            3,
            grid(1, 2),
            KanOptions::default(),
            &mut rng,
        )
        .unwrap();
        let b = KanLayer::new(
            &mut store,
            "b",
            4,
            1,
            grid(1, 2),
            KanOptions::default(),
            &mut rng,
        )
        .unwrap();
        let err = KanStack::new(vec![a, b]).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn single_layer_stack_equals_layer() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let l = KanLayer::new(
            &mut store,
            "a",
            2,
            2,
            grid(2, 4),
            KanOptions::default(),
            &mut rng,
        )
        .unwrap();
        let stack = KanStack::new(vec![l.clone()]).unwrap();
        let x = Tensor::uniform(&[3, 2], 1.0, &mut rng);
        assert_eq!(stack.eval(&store, &x).unwrap(), l.eval(&store, &x).unwrap());
    }

    #[test]
    fn zero_second_layer_gives_zero() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = KanLayer::new(
            &mut store,
            "a",
            2,
            2,
            grid(2, 4),
            KanOptions::default(),
            &mut rng,
        )
        .unwrap();
        let b = KanLayer::zeros(&mut store, "b", 2, 1, grid(2, 4), KanOptions::default()).unwrap();
        let stack = KanStack::new(vec![a, b]).unwrap();
        let x = Tensor::uniform(&[3, 2], 1.0, &mut rng);
        assert_eq!(stack.eval(&store, &x).unwrap(), Tensor::zeros(&[3, 1]));
    }

    #[test]
    fn two_layer_stack_fits_smooth_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let g = BSplineGrid::new(-1.0, 1.0, 8, 3).unwrap();
        let stack = KanStack::build(
            &mut store,
            "f",
            1,
            4,
            1,
            2,
            g,
            KanOptions::default(),
            &mut rng,
        )
        .unwrap();
        let xs: Vec<f64> = (0..64).map(|i| -1.0 + 2.0 * i as f64 / 63.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin() + x * x).collect();
        let x = Tensor::new(&[64, 1], xs).unwrap();
        let y = Tensor::new(&[64, 1], ys).unwrap();
        let cfg = AdamConfig::new(1e-2, 0.0);
        let mut adam = AdamState::new(store.tensors(), &cfg);
        let mut mse = f64::INFINITY;
        for _ in 0..500 {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let xv = tape.leaf(x.clone());
            let yv = tape.leaf(y.clone());
            let pred = stack.forward(&mut tape, &bound, xv).unwrap();
            let diff = tape.sub(pred, yv).unwrap();
            let l = tape.sum_squares(diff);
            let l = tape.scale(l, 1.0 / 64.0);
            mse = tape.value(l).item().unwrap();
            let grads = tape.backward(l).unwrap();
            let g = store.collect_grads(&bound, &grads);
            store.adam_step(&mut adam, &g, cfg.lr, 0.0).unwrap();
        }
        assert!(mse < 1e-2, "mse = {mse}");
    }
}
