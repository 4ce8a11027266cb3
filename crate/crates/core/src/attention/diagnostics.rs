use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{score_pairs, Backbone, Scorer, ScoringConfig, Variant};
use crate::error::{KaaError, Result};
use crate::params::{Bound, ParamStore};
use crate::tensor::{finite_diff_check_many, Tape, Tensor, Var, KINK_MARGIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub backbone: Backbone,
    pub variant: Variant,
    pub samples: usize,
    /// Parameterizations whose best key is the same for every query.
    pub static_samples: usize,
    pub fraction: f64,
}

/// Samples `n_param_samples` fresh parameterizations of `cfg` and counts
/// those where every query picks the same highest-scoring key.
///
/// Ties go to the lowest key index.
pub fn static_attention_probe(
    cfg: &ScoringConfig,
    queries: &Tensor,
    keys: &Tensor,
    n_param_samples: usize,
    seed: u64,
) -> Result<ProbeReport> {
    if queries.rank() != 2 || keys.rank() != 2 || queries.cols() != keys.cols() {
        return Err(KaaError::shape(
            "static_attention_probe",
            queries.shape(),
            keys.shape(),
        ));
    }
    if n_param_samples == 0 {
        return Err(KaaError::Parameter(
            "probe needs at least one sample".into(),
        ));
    }
    let (m, n, d) = (queries.rows(), keys.rows(), keys.cols());
    let mut q_rows = Vec::with_capacity(m * n * d);
    let mut k_rows = Vec::with_capacity(m * n * d);
    for i in 0..m {
        for j in 0..n {
            q_rows.extend_from_slice(queries.row(i));
            k_rows.extend_from_slice(keys.row(j));
        }
    }
    let q_rows = Tensor::new(&[m * n, d], q_rows)?;
    let k_rows = Tensor::new(&[m * n, d], k_rows)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut static_samples = 0;
    for _ in 0..n_param_samples {
        let mut store = ParamStore::new();
        let scorer = Scorer::new(&mut store, "probe", cfg, d, &mut rng)?;
        let scores = score_pairs(&scorer, &store, &k_rows, &q_rows)?;
        let best: Vec<usize> = scores.data().chunks(n).map(argmax_lowest).collect();
        if best.windows(2).all(|w| w[0] == w[1]) {
            static_samples += 1;
        }
    }
    Ok(ProbeReport {
        backbone: cfg.backbone,
        variant: cfg.variant,
        samples: n_param_samples,
        static_samples,
        fraction: static_samples as f64 / n_param_samples as f64,
    })
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = j;
        }
    }
    best
}

/// Every backbone and variant, with KAA scorers at spline orders 1 to 3
/// for a single KAN layer and order 1 for a two-layer stack.
///
/// Stacked cubic splines put gradients of order 1e-9 on the tail basis
/// functions, where a central difference with step 1e-5 is dominated by
/// rounding, so stacks are checked at order 1.
pub fn gradient_check_configs() -> Vec<ScoringConfig> {
    let mut out = Vec::new();
    for backbone in Backbone::ALL {
        for variant in [Variant::Original, Variant::Kaa] {
            let mut cfg = ScoringConfig::new(backbone, variant);
            if cfg.validate().is_err() {
                continue;
            }
            cfg.proj_dim = 3;
            cfg.kan.grid_size = 4;
            // keeps 0, where small activations cluster, inside a cell
            cfg.kan.range_min = -2.5;
            cfg.kan.range_max = 1.5;
            if variant == Variant::Original {
                out.push(cfg);
                continue;
            }
            for (depth, order) in [(1, 1), (1, 2), (1, 3), (2, 1)] {
                cfg.kan.depth = depth;
                cfg.kan.order = order;
                out.push(cfg);
            }
        }
    }
    out
}

pub(crate) const MAX_DRAWS: usize = 1000;

/// Max relative error between analytic and central-difference gradients of
/// a random linear functional of the scores, over all scorer parameters and
/// both inputs, at one random point at least [`KINK_MARGIN`] from any kink.
pub fn scorer_gradient_error(
    cfg: &ScoringConfig,
    in_dim: usize,
    num_pairs: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_DRAWS {
        let mut store = ParamStore::new();
        let scorer = Scorer::new(&mut store, "check", cfg, in_dim, &mut rng)?;
        let query = Tensor::randn(&[num_pairs, in_dim], 0.6, &mut rng);
        let key = Tensor::randn(&[num_pairs, in_dim], 0.6, &mut rng);
        let weights = Tensor::randn(&[num_pairs], 1.0, &mut rng).into_data();
        let n_params = store.len();
        let mut xs = store.tensors().to_vec();
        xs.push(query);
        xs.push(key);
        let loss = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
            let bound = Bound::from_vars(vars[..n_params].to_vec());
            let s = scorer.score(tape, &bound, vars[n_params], vars[n_params + 1])?;
            let s = tape.mul_const(s, weights.clone())?;
            Ok(tape.sum(s))
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        loss(&mut tape, &vars)?;
        if tape.kink_margin() >= KINK_MARGIN {
            return finite_diff_check_many(loss, &xs, 1e-5);
        }
    }
    Err(KaaError::Degenerate(format!(
        "no point at least {KINK_MARGIN} from every kink in {MAX_DRAWS} draws"
    )))
}
