use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use crate::attention::{MultiHeadScorer, ScoringConfig};
use crate::error::{KaaError, Result};
use crate::graph::Task;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

pub const LAYER_CHOICES: [usize; 4] = [2, 3, 4, 5];
pub const HIDDEN_CHOICES: [usize; 6] = [8, 16, 32, 64, 128, 256];
pub const HEAD_CHOICES: [usize; 4] = [1, 2, 4, 8];
pub const DROPOUT_CHOICES: [f64; 5] = [0.0, 0.1, 0.3, 0.5, 0.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskHead {
    NodeSoftmax,
    LinkDot,
    GraphMeanpoolSoftmax,
}

impl TaskHead {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::NodeClassification => TaskHead::NodeSoftmax,
            Task::LinkPrediction => TaskHead::LinkDot,
            Task::GraphClassification => TaskHead::GraphMeanpoolSoftmax,
        }
    }

    pub fn task(self) -> Task {
        match self {
            TaskHead::NodeSoftmax => Task::NodeClassification,
            TaskHead::LinkDot => Task::LinkPrediction,
            TaskHead::GraphMeanpoolSoftmax => Task::GraphClassification,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskHead::NodeSoftmax => "node_softmax",
            TaskHead::LinkDot => "link_dot",
            TaskHead::GraphMeanpoolSoftmax => "graph_meanpool_softmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "node_softmax" | "node" => Some(TaskHead::NodeSoftmax),
            "link_dot" | "link" => Some(TaskHead::LinkDot),
            "graph_meanpool_softmax" | "graph" => Some(TaskHead::GraphMeanpoolSoftmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    /// Total width of hidden layers; each head gets `hidden_dim / heads`.
    pub hidden_dim: usize,
    /// Overrides `scoring.heads`.
    pub heads: usize,
    pub scoring: ScoringConfig,
    /// Feature dropout on every layer input while training.
    pub dropout: f64,
    /// Also drop attention weights while training.
    pub attention_dropout: bool,
    /// Learnable per-head value map `W_v` inside the aggregation. Without
    /// it, raw features are aggregated and a separate linear update follows.
    pub value_transform: bool,
    pub task_head: TaskHead,
}

impl ModelConfig {
    pub fn new(scoring: ScoringConfig, task_head: TaskHead) -> Self {
        Self {
            num_layers: 2,
            hidden_dim: 32,
            heads: 1,
            scoring,
            dropout: 0.0,
            attention_dropout: false,
            value_transform: true,
            task_head,
        }
    }

    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig {
            heads: self.heads,
            ..self.scoring
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 {
            return Err(KaaError::Parameter(
                "model has no learnable parameters (zero layers or zero width)".into(),
            ));
        }
        if !LAYER_CHOICES.contains(&self.num_layers) {
            return Err(KaaError::Parameter(format!(
                "num_layers {} not in {LAYER_CHOICES:?}",
                self.num_layers
            )));
        }
        if !HIDDEN_CHOICES.contains(&self.hidden_dim) {
            return Err(KaaError::Parameter(format!(
                "hidden_dim {} not in {HIDDEN_CHOICES:?}",
                self.hidden_dim
            )));
        }
        if !HEAD_CHOICES.contains(&self.heads) {
            return Err(KaaError::Parameter(format!(
                "heads {} not in {HEAD_CHOICES:?}",
                self.heads
            )));
        }
        if !DROPOUT_CHOICES.contains(&self.dropout) {
            return Err(KaaError::Parameter(format!(
                "dropout {} not in {DROPOUT_CHOICES:?}",
                self.dropout
            )));
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(KaaError::Parameter(format!(
                "hidden_dim {} is not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        self.scoring().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Affine {
    weight: ParamId,
    bias: ParamId,
}

impl Affine {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), Tensor::glorot(n_in, n_out, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, n_out])),
        }
    }

    fn apply(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, params.var(self.weight))?;
        tape.add_row_bias(y, params.var(self.bias))
    }
}

/// Whether a forward pass is for training (dropout on) or evaluation.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

/// One attentive message-passing layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnLayer {
    scorers: MultiHeadScorer,
    values: Vec<Affine>,
    update: Option<Affine>,
    concat_heads: bool,
    activate: bool,
}

impl GnnLayer {
    pub fn num_heads(&self) -> usize {
        self.scorers.num_heads()
    }

    pub fn scorers(&self) -> &MultiHeadScorer {
        &self.scorers
    }

    /// `h'_i = UPDATE(Σ_j α_ij W_v h_j)` over the batch's message edges.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Bound,
        h: Var,
        batch: &Batch,
        dropout: f64,
        attention_dropout: bool,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let h = feature_dropout(tape, h, dropout, mode)?;
        let query = tape.gather_rows(h, std::rc::Rc::clone(batch.dst()))?;
        let key = tape.gather_rows(h, std::rc::Rc::clone(batch.src()))?;
        let alphas = self
            .scorers
            .attention(tape, params, query, key, batch.segments())?;
        let mut heads = Vec::with_capacity(alphas.len());
        for (head, alpha) in alphas.into_iter().enumerate() {
            let alpha = if attention_dropout {
                feature_dropout(tape, alpha, dropout, mode)?
            } else {
                alpha
            };
            let values = match self.values.get(head) {
                Some(map) => map.apply(tape, params, h)?,
                None => h,
            };
            let per_edge = tape.gather_rows(values, std::rc::Rc::clone(batch.src()))?;
            heads.push(tape.segment_weighted_sum(
                alpha,
                per_edge,
                std::rc::Rc::clone(batch.segments()),
            )?);
        }
        let mut out = if heads.len() == 1 {
            heads[0]
        } else if self.concat_heads {
            tape.concat_cols(&heads)?
        } else {
            let mut acc = heads[0];
            for &x in &heads[1..] {
                acc = tape.add(acc, x)?;
            }
            tape.scale(acc, 1.0 / heads.len() as f64)
        };
        if let Some(update) = &self.update {
            out = update.apply(tape, params, out)?;
        }
        Ok(if self.activate { tape.elu(out) } else { out })
    }
}

fn feature_dropout(tape: &mut Tape, x: Var, p: f64, mode: &mut Mode<'_>) -> Result<Var> {
    match mode {
        Mode::Train(rng) if p > 0.0 => {
            let keep = 1.0 - p;
            let n = tape.value(x).len();
            let mask = (0..n)
                .map(|_| {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect();
            tape.mul_const(x, mask)
        }
        _ => Ok(x),
    }
}

/// A stack of [`GnnLayer`]s with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    config: ModelConfig,
    in_dim: usize,
    out_dim: usize,
    layers: Vec<GnnLayer>,
    params: ParamStore,
}

impl Model {
    /// Scorer parameters and the value/update maps draw from separate
    /// streams of `seed`, so models that differ only in scoring share their
    /// value and update weights.
    pub fn new(config: &ModelConfig, in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if in_dim == 0 || out_dim == 0 {
            return Err(KaaError::Parameter(format!(
                "model needs positive input and output widths, got {in_dim} and {out_dim}"
            )));
        }
        let mut value_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut score_rng = ChaCha8Rng::seed_from_u64(seed);
        score_rng.set_stream(1);
        let scoring = config.scoring();
        let heads = config.heads;
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(config.num_layers);
        let mut width = in_dim;
        for l in 0..config.num_layers {
            let last = l + 1 == config.num_layers;
            let name = format!("layer{l}");
            let scorers =
                MultiHeadScorer::new(&mut params, &name, &scoring, width, &mut score_rng)?;
            let (head_out, next) = if last {
                (out_dim, out_dim)
            } else {
                (config.hidden_dim / heads, config.hidden_dim)
            };
            let (values, update) = if config.value_transform {
                let values = (0..heads)
                    .map(|h| {
                        Affine::new(
                            &mut params,
                            &format!("{name}.value{h}"),
                            width,
                            head_out,
                            &mut value_rng,
                        )
                    })
                    .collect();
                (values, None)
            } else {
                let merged = if last { width } else { width * heads };
                let update = Affine::new(
                    &mut params,
                    &format!("{name}.update"),
                    merged,
                    next,
                    &mut value_rng,
                );
                (Vec::new(), Some(update))
            };
            layers.push(GnnLayer {
                scorers,
                values,
                update,
                concat_heads: !last,
                activate: !last,
            });
            width = next;
        }
        if params.num_scalars() == 0 {
            return Err(KaaError::Parameter(
                "model has no learnable parameters".into(),
            ));
        }
        Ok(Self {
            config: *config,
            in_dim,
            out_dim,
            layers,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn layers(&self) -> &[GnnLayer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Zeroes every attention-scoring parameter, which makes attention
    /// uniform over each neighborhood.
    pub fn zero_scoring_params(&mut self) {
        for layer in &self.layers {
            for head in layer.scorers.heads() {
                head.zero_params(&mut self.params);
            }
        }
    }

    /// Node outputs `[N × out_dim]` on the tape.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &Bound,
        batch: &Batch,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        if batch.features().cols() != self.in_dim {
            return Err(KaaError::shape(
                "model input",
                batch.features().shape(),
                &[batch.num_nodes(), self.in_dim],
            ));
        }
        let mut h = tape.constant(batch.features().clone());
        for layer in &self.layers {
            h = layer.forward(
                tape,
                params,
                h,
                batch,
                self.config.dropout,
                self.config.attention_dropout,
                mode,
            )?;
        }
        Ok(h)
    }

    /// Node outputs with dropout off.
    pub fn embed(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, batch, &mut Mode::Eval)?;
        Ok(tape.value(out).clone())
    }
}
