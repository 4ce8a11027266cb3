//! Attention scoring `s(h_i, h_j) = Ψ(AF(h_i, h_j))` for the GAT and
//! Transformer families, in original and KAN-mapped form.
//!
//! Throughout, the query is the central node `i` (the edge destination) and
//! the key is the neighbor `j` (the edge source).

mod diagnostics;

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KaaError, Result};
use crate::kan::{BSplineGrid, KanOptions, KanStack};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{segment_softmax_values, Segments, Tape, Tensor, Var};

pub use crate::tensor::KINK_MARGIN;
pub use diagnostics::{
    gradient_check_configs, scorer_gradient_error, static_attention_probe, ProbeReport,
};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Gat,
    GatModified,
    Glcn,
    Cfgat,
    Gt,
    San,
}

impl Backbone {
    pub const ALL: [Backbone; 6] = [
        Backbone::Gat,
        Backbone::GatModified,
        Backbone::Glcn,
        Backbone::Cfgat,
        Backbone::Gt,
        Backbone::San,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Backbone::Gat => "gat",
            Backbone::GatModified => "gat_modified",
            Backbone::Glcn => "glcn",
            Backbone::Cfgat => "cfgat",
            Backbone::Gt => "gt",
            Backbone::San => "san",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Original,
    Kaa,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Kaa => "kaa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "original" => Some(Variant::Original),
            "kaa" => Some(Variant::Kaa),
            _ => None,
        }
    }
}

/// Parameter-free pairing of query and key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlignmentKind {
    /// `[h_i ‖ h_j]`
    Concat,
    /// `|h_i − h_j|`
    AbsDiff,
    /// Both vectors kept for a cosine after mapping.
    PairCosine,
    /// Key only; the query enters through the mapping.
    KeyOnly,
    /// Key only, with an extra `1/(γ+1)` factor.
    KeyScaled { gamma: f64 },
}

impl AlignmentKind {
    pub fn output_dim(self, d: usize) -> usize {
        match self {
            AlignmentKind::Concat => 2 * d,
            _ => d,
        }
    }
}

/// Spline network used in place of the score mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KanSpec {
    pub grid_size: usize,
    pub order: usize,
    pub range_min: f64,
    pub range_max: f64,
    /// Number of stacked KAN layers.
    pub depth: usize,
    /// Width between stacked layers.
    pub hidden: usize,
    pub options: KanOptions,
}

impl Default for KanSpec {
    fn default() -> Self {
        Self {
            grid_size: 1,
            order: 1,
            range_min: -1.0,
            range_max: 1.0,
            depth: 1,
            hidden: 8,
            options: KanOptions::default(),
        }
    }
}

impl KanSpec {
    pub const GRID_SIZES: [usize; 4] = [1, 2, 4, 8];
    pub const ORDERS: [usize; 3] = [1, 2, 3];

    pub fn grid(&self) -> Result<BSplineGrid> {
        BSplineGrid::new(self.range_min, self.range_max, self.grid_size, self.order)
    }

    pub fn validate(&self) -> Result<()> {
        if !Self::GRID_SIZES.contains(&self.grid_size) {
            return Err(KaaError::Parameter(format!(
                "KAN grid size {} not in {:?}",
                self.grid_size,
                Self::GRID_SIZES
            )));
        }
        if !Self::ORDERS.contains(&self.order) {
            return Err(KaaError::Parameter(format!(
                "KAN spline order {} not in {:?}",
                self.order,
                Self::ORDERS
            )));
        }
        if self.depth == 0 || self.hidden == 0 {
            return Err(KaaError::Parameter(
                "KAN depth and hidden width must be positive".into(),
            ));
        }
        self.grid().map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub backbone: Backbone,
    pub variant: Variant,
    pub heads: usize,
    /// SAN's `γ`; ignored by other backbones.
    pub gamma: f64,
    /// Width of `W`, `W_q`, `W_k` in the original forms and of the shared
    /// KAN output for KAA-CFGAT.
    pub proj_dim: usize,
    pub kan: KanSpec,
}

impl ScoringConfig {
    pub fn new(backbone: Backbone, variant: Variant) -> Self {
        Self {
            backbone,
            variant,
            heads: 1,
            gamma: 1.0,
            proj_dim: 8,
            kan: KanSpec::default(),
        }
    }

    pub fn alignment(&self) -> AlignmentKind {
        match self.backbone {
            Backbone::Gat | Backbone::GatModified => AlignmentKind::Concat,
            Backbone::Glcn => AlignmentKind::AbsDiff,
            Backbone::Cfgat => AlignmentKind::PairCosine,
            Backbone::Gt => AlignmentKind::KeyOnly,
            Backbone::San => AlignmentKind::KeyScaled { gamma: self.gamma },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(KaaError::Parameter(
                "at least one attention head is required".into(),
            ));
        }
        if self.proj_dim == 0 {
            return Err(KaaError::Parameter(
                "projection width must be positive".into(),
            ));
        }
        if !(self.gamma.is_finite() && self.gamma > -1.0) {
            return Err(KaaError::Parameter(format!(
                "gamma must exceed -1, got {}",
                self.gamma
            )));
        }
        if self.variant == Variant::Kaa {
            if self.backbone == Backbone::GatModified {
                return Err(KaaError::Parameter(
                    "gat_modified has no KAA counterpart; use gat with variant kaa".into(),
                ));
            }
            self.kan.validate()?;
        }
        Ok(())
    }
}

/// Learnable part of a scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScoreMapping {
    /// `aᵀ[Wh_i ‖ Wh_j]` (GAT family) or `aᵀ|h_i − h_j|` (GLCN, no `W`).
    Linear {
        w: Option<ParamId>,
        a: ParamId,
    },
    /// Shared projection ahead of a cosine.
    Projection {
        w: ParamId,
    },
    /// `(W_q h_i)ᵀ W_k h_j`.
    QueryKey {
        wq: ParamId,
        wk: ParamId,
    },
    Kan(KanStack),
}

/// One attention head's scoring function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    backbone: Backbone,
    variant: Variant,
    alignment: AlignmentKind,
    in_dim: usize,
    mapping: ScoreMapping,
}

impl Scorer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &ScoringConfig,
        in_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if in_dim == 0 {
            return Err(KaaError::Parameter(
                "scorer input width must be positive".into(),
            ));
        }
        let d = in_dim;
        let p = cfg.proj_dim;
        let alignment = cfg.alignment();
        let mapping = match cfg.variant {
            Variant::Original => match cfg.backbone {
                Backbone::Gat | Backbone::GatModified => ScoreMapping::Linear {
                    w: Some(store.add(format!("{name}.w"), Tensor::glorot(d, p, rng))),
                    a: store.add(format!("{name}.a"), Tensor::glorot(2 * p, 1, rng)),
                },
                Backbone::Glcn => ScoreMapping::Linear {
                    w: None,
                    a: store.add(format!("{name}.a"), Tensor::glorot(d, 1, rng)),
                },
                Backbone::Cfgat => ScoreMapping::Projection {
                    w: store.add(format!("{name}.w"), Tensor::glorot(d, p, rng)),
                },
                Backbone::Gt | Backbone::San => ScoreMapping::QueryKey {
                    wq: store.add(format!("{name}.wq"), Tensor::glorot(d, p, rng)),
                    wk: store.add(format!("{name}.wk"), Tensor::glorot(d, p, rng)),
                },
            },
            Variant::Kaa => {
                let (n_in, n_out) = match cfg.backbone {
                    Backbone::Gat | Backbone::GatModified => (2 * d, 1),
                    Backbone::Glcn => (d, 1),
                    Backbone::Cfgat => (d, p),
                    Backbone::Gt | Backbone::San => (d, d),
                };
                let k = &cfg.kan;
                ScoreMapping::Kan(KanStack::build(
                    store,
                    &format!("{name}.kan"),
                    n_in,
                    k.hidden,
                    n_out,
                    k.depth,
                    k.grid()?,
                    k.options,
                    rng,
                )?)
            }
        };
        Ok(Self {
            backbone: cfg.backbone,
            variant: cfg.variant,
            alignment,
            in_dim,
            mapping,
        })
    }

    pub fn backbone(&self) -> Backbone {
        self.backbone
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn alignment(&self) -> AlignmentKind {
        self.alignment
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn mapping(&self) -> &ScoreMapping {
        &self.mapping
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match &self.mapping {
            ScoreMapping::Linear { w, a } => w.iter().copied().chain([*a]).collect(),
            ScoreMapping::Projection { w } => vec![*w],
            ScoreMapping::QueryKey { wq, wk } => vec![*wq, *wk],
            ScoreMapping::Kan(stack) => stack
                .layers
                .iter()
                .flat_map(|l| std::iter::once(l.coefficients).chain(l.residual_weight))
                .collect(),
        }
    }

    /// Sets every scoring parameter to zero.
    pub fn zero_params(&self, store: &mut ParamStore) {
        for id in self.param_ids() {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }

    fn scale(&self, key_dim: usize) -> f64 {
        let base = 1.0 / (key_dim as f64).sqrt();
        match self.alignment {
            AlignmentKind::KeyScaled { gamma } => base / (gamma + 1.0),
            _ => base,
        }
    }

    /// Raw scores `[E × 1]` for paired rows of `query` and `key`, both `[E × d]`.
    pub fn score(&self, tape: &mut Tape, params: &Bound, query: Var, key: Var) -> Result<Var> {
        let (qs, ks) = (
            tape.value(query).shape().to_vec(),
            tape.value(key).shape().to_vec(),
        );
        if qs.len() != 2 || qs != ks || qs[1] != self.in_dim {
            return Err(KaaError::shape("score_pairs", &qs, &ks));
        }
        match (&self.mapping, self.backbone) {
            (ScoreMapping::Linear { w: Some(w), a }, backbone) => {
                // aᵀ[Wh_i ‖ Wh_j] = a_qᵀ Wh_i + a_kᵀ Wh_j
                let w = params.var(*w);
                let a = params.var(*a);
                let p = tape.value(w).cols();
                let a_q = tape.slice_rows(a, 0, p)?;
                let a_k = tape.slice_rows(a, p, 2 * p)?;
                let wq = tape.matmul(query, w)?;
                let wk = tape.matmul(key, w)?;
                let sq = tape.matmul(wq, a_q)?;
                let sk = tape.matmul(wk, a_k)?;
                let e = tape.add(sq, sk)?;
                Ok(match backbone {
                    Backbone::GatModified => {
                        let e = tape.abs(e);
                        let e = tape.leaky_relu(e, LEAKY_SLOPE);
                        tape.neg(e)
                    }
                    _ => tape.leaky_relu(e, LEAKY_SLOPE),
                })
            }
            (ScoreMapping::Linear { w: None, a }, _) => {
                let diff = tape.sub(query, key)?;
                let diff = tape.abs(diff);
                let e = tape.matmul(diff, params.var(*a))?;
                Ok(tape.relu(e))
            }
            (ScoreMapping::Projection { w }, _) => {
                let w = params.var(*w);
                let q = tape.matmul(query, w)?;
                let k = tape.matmul(key, w)?;
                let c = tape.cosine_rows(q, k)?;
                Ok(tape.leaky_relu(c, LEAKY_SLOPE))
            }
            (ScoreMapping::QueryKey { wq, wk }, _) => {
                let q = tape.matmul(query, params.var(*wq))?;
                let k = tape.matmul(key, params.var(*wk))?;
                let dot = tape.row_dot(q, k)?;
                let key_dim = tape.value(k).cols();
                Ok(tape.scale(dot, self.scale(key_dim)))
            }
            (ScoreMapping::Kan(kan), _) => match self.alignment {
                AlignmentKind::Concat => {
                    let x = tape.concat_cols(&[query, key])?;
                    kan.forward(tape, params, x)
                }
                AlignmentKind::AbsDiff => {
                    let diff = tape.sub(query, key)?;
                    let diff = tape.abs(diff);
                    kan.forward(tape, params, diff)
                }
                AlignmentKind::PairCosine => {
                    let q = kan.forward(tape, params, query)?;
                    let k = kan.forward(tape, params, key)?;
                    tape.cosine_rows(q, k)
                }
                AlignmentKind::KeyOnly | AlignmentKind::KeyScaled { .. } => {
                    let q = kan.forward(tape, params, query)?;
                    let dot = tape.row_dot(q, key)?;
                    let key_dim = tape.value(key).cols();
                    Ok(tape.scale(dot, self.scale(key_dim)))
                }
            },
        }
    }
}

/// Untracked per-edge scores; `h_src` holds neighbors, `h_dst` central nodes.
pub fn score_pairs(
    scorer: &Scorer,
    store: &ParamStore,
    h_src: &Tensor,
    h_dst: &Tensor,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let q = tape.constant(h_dst.clone());
    let k = tape.constant(h_src.clone());
    let s = scorer.score(&mut tape, &bound, q, k)?;
    let s = tape.value(s).clone();
    let n = s.len();
    s.reshape(&[n])
}

/// Softmax of raw scores within each destination segment.
pub fn normalize(scores: &Tensor, dst_segments: &Segments) -> Result<Tensor> {
    segment_softmax_values(scores, dst_segments)
}

/// `K` independent scorers over the same inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadScorer {
    heads: Vec<Scorer>,
}

impl MultiHeadScorer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &ScoringConfig,
        in_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let heads = (0..cfg.heads)
            .map(|h| Scorer::new(store, &format!("{name}.head{h}"), cfg, in_dim, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { heads })
    }

    pub fn from_heads(heads: Vec<Scorer>) -> Result<Self> {
        if heads.is_empty() {
            return Err(KaaError::Parameter(
                "at least one attention head is required".into(),
            ));
        }
        Ok(Self { heads })
    }

    pub fn heads(&self) -> &[Scorer] {
        &self.heads
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Per-head attention weights `[E]` on the tape.
    pub fn attention(
        &self,
        tape: &mut Tape,
        params: &Bound,
        query: Var,
        key: Var,
        segments: &Rc<Segments>,
    ) -> Result<Vec<Var>> {
        self.heads
            .iter()
            .map(|h| {
                let s = h.score(tape, params, query, key)?;
                tape.segment_softmax(s, Rc::clone(segments))
            })
            .collect()
    }
}

/// Untracked per-head attention weights.
pub fn multi_head(
    heads: &MultiHeadScorer,
    store: &ParamStore,
    h_src: &Tensor,
    h_dst: &Tensor,
    dst_segments: &Segments,
) -> Result<Vec<Tensor>> {
    heads
        .heads()
        .iter()
        .map(|h| normalize(&score_pairs(h, store, h_src, h_dst)?, dst_segments))
        .collect()
}

#[cfg(test)]
mod tests;
