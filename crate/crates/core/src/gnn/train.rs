use std::collections::HashSet;
use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::metrics::{accuracy, roc_auc, Metrics};
use super::model::{Mode, Model, ModelConfig, TaskHead};
use crate::error::{KaaError, Result};
use crate::graph::{random_split, GraphCollection, Split, Task};
use crate::params::{Bound, ParamStore};
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            weight_decay: 0.0,
            epochs: 200,
            seed: 0,
            patience: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(KaaError::Parameter(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(KaaError::Parameter(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(KaaError::Parameter("at least one epoch is required".into()));
        }
        Ok(())
    }
}

/// Held-out positive and negative node pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub positive: Vec<(usize, usize)>,
    pub negative: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSplit {
    pub train: Vec<(usize, usize)>,
    pub val: PairSet,
    pub test: PairSet,
    /// Every linked unordered pair, for negative sampling.
    known: HashSet<(usize, usize)>,
}

fn unordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// A collection prepared for one task: the message-passing batch plus the
/// supervision targets of each split.
#[derive(Debug, Clone)]
pub struct Dataset {
    head: TaskHead,
    batch: Batch,
    num_classes: usize,
    graph_splits: Vec<Split>,
    links: Option<LinkSplit>,
}

impl Dataset {
    /// Link prediction splits the undirected edge set 70/10/20 and passes
    /// messages over training edges only; graph classification splits
    /// graphs 60/20/20. Both splits and negatives derive from `seed`.
    pub fn prepare(data: &GraphCollection, head: TaskHead, seed: u64) -> Result<Self> {
        if head.task() != data.task() {
            return Err(KaaError::Consistency(format!(
                "task head {} does not match a {:?} collection",
                head.as_str(),
                data.task()
            )));
        }
        let batch = Batch::from_collection(data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut graph_splits = Vec::new();
        let mut links = None;
        let batch = match head {
            TaskHead::NodeSoftmax => batch,
            TaskHead::GraphMeanpoolSoftmax => {
                let ids: Vec<usize> = (0..batch.num_graphs()).collect();
                graph_splits = vec![Split::None; ids.len()];
                for (g, s) in random_split(&ids, rng.gen()) {
                    graph_splits[g] = s;
                }
                batch
            }
            TaskHead::LinkDot => {
                let split = link_split(&batch, &mut rng)?;
                let message: Vec<(usize, usize)> = split
                    .train
                    .iter()
                    .flat_map(|&(a, b)| [(a, b), (b, a)])
                    .collect();
                let batch = batch.with_edges(message)?;
                links = Some(split);
                batch
            }
        };
        Ok(Self {
            head,
            num_classes: data.num_classes(),
            batch,
            graph_splits,
            links,
        })
    }

    pub fn head(&self) -> TaskHead {
        self.head
    }

    pub fn batch(&self) -> &Batch {
        &self.batch
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn links(&self) -> Option<&LinkSplit> {
        self.links.as_ref()
    }

    pub fn graph_splits(&self) -> &[Split] {
        &self.graph_splits
    }

    /// Output width the task head needs.
    pub fn output_dim(&self, cfg: &ModelConfig) -> usize {
        match self.head {
            TaskHead::LinkDot => cfg.hidden_dim,
            _ => self.num_classes,
        }
    }

    fn graphs_in(&self, split: Split) -> Vec<usize> {
        (0..self.graph_splits.len())
            .filter(|&g| self.graph_splits[g] == split)
            .collect()
    }

    fn labelled(&self, split: Split) -> (Vec<usize>, Vec<usize>) {
        match self.head {
            TaskHead::NodeSoftmax => {
                let rows = self.batch.nodes_in(split);
                let labels = rows.iter().map(|&i| self.batch.labels()[i]).collect();
                (rows, labels)
            }
            _ => {
                let rows = self.graphs_in(split);
                let labels = rows
                    .iter()
                    .map(|&g| self.batch.graph_labels()[g].expect("validated by the collection"))
                    .collect();
                (rows, labels)
            }
        }
    }
}

fn link_split(batch: &Batch, rng: &mut ChaCha8Rng) -> Result<LinkSplit> {
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for &(s, t) in batch.edges() {
        if s != t && seen.insert(unordered(s, t)) {
            pairs.push(unordered(s, t));
        }
    }
    if pairs.len() < 10 {
        return Err(KaaError::Parameter(format!(
            "link prediction needs at least 10 edges, got {}",
            pairs.len()
        )));
    }
    pairs.shuffle(rng);
    let n_train = (0.7 * pairs.len() as f64).round() as usize;
    let n_val = (0.1 * pairs.len() as f64).round() as usize;
    let test = pairs.split_off(n_train + n_val);
    let val = pairs.split_off(n_train);
    let known = seen;
    let mut taken = HashSet::new();
    let val_neg = sample_negatives(batch, &known, &mut taken, val.len(), rng)?;
    let test_neg = sample_negatives(batch, &known, &mut taken, test.len(), rng)?;
    Ok(LinkSplit {
        train: pairs,
        val: PairSet {
            positive: val,
            negative: val_neg,
        },
        test: PairSet {
            positive: test,
            negative: test_neg,
        },
        known,
    })
}

/// Uniform non-edges within a graph of the batch, none repeated across calls
/// sharing `taken`.
fn sample_negatives(
    batch: &Batch,
    known: &HashSet<(usize, usize)>,
    taken: &mut HashSet<(usize, usize)>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(count);
    let budget = 1000 * (count + 1);
    for _ in 0..budget {
        if out.len() == count {
            return Ok(out);
        }
        let range = batch.graph_nodes(rng.gen_range(0..batch.num_graphs()));
        if range.len() < 2 {
            continue;
        }
        let a = rng.gen_range(range.clone());
        let b = rng.gen_range(range);
        let pair = unordered(a, b);
        if a != b && !known.contains(&pair) && taken.insert(pair) {
            out.push(pair);
        }
    }
    if out.len() == count {
        return Ok(out);
    }
    Err(KaaError::Degenerate(format!(
        "could not sample {count} distinct non-edges; the graph is too dense"
    )))
}

fn pair_logits(tape: &mut Tape, emb: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let a = tape.gather_rows(emb, Rc::new(pairs.iter().map(|p| p.0).collect()))?;
    let b = tape.gather_rows(emb, Rc::new(pairs.iter().map(|p| p.1).collect()))?;
    tape.row_dot(a, b)
}

fn training_loss(
    model: &Model,
    data: &Dataset,
    tape: &mut Tape,
    params: &Bound,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let out = model.forward(tape, params, &data.batch, &mut Mode::Train(rng))?;
    match data.head {
        TaskHead::NodeSoftmax => {
            let (rows, labels) = data.labelled(Split::Train);
            if rows.is_empty() {
                return Err(KaaError::Parameter("no training nodes".into()));
            }
            tape.cross_entropy(out, Rc::new(rows), Rc::new(labels))
        }
        TaskHead::GraphMeanpoolSoftmax => {
            let (rows, labels) = data.labelled(Split::Train);
            if rows.is_empty() {
                return Err(KaaError::Parameter("no training graphs".into()));
            }
            let pooled = tape.segment_mean(out, Rc::clone(data.batch.graph_segments()))?;
            tape.cross_entropy(pooled, Rc::new(rows), Rc::new(labels))
        }
        TaskHead::LinkDot => {
            let links = data.links.as_ref().expect("prepared for links");
            let mut taken = HashSet::new();
            let negatives = sample_negatives(
                &data.batch,
                &links.known,
                &mut taken,
                links.train.len(),
                rng,
            )?;
            let pairs: Vec<(usize, usize)> =
                links.train.iter().chain(&negatives).copied().collect();
            let targets: Vec<f64> = (0..pairs.len())
                .map(|i| if i < links.train.len() { 1.0 } else { 0.0 })
                .collect();
            let logits = pair_logits(tape, out, &pairs)?;
            tape.bce_with_logits(logits, Rc::new(targets))
        }
    }
}

/// Metrics of `model` on one split, dropout off.
pub fn evaluate(model: &Model, data: &Dataset, split: Split) -> Result<Metrics> {
    let out = model.embed(&data.batch)?;
    match data.head {
        TaskHead::NodeSoftmax | TaskHead::GraphMeanpoolSoftmax => {
            let (rows, labels) = data.labelled(split);
            if rows.is_empty() {
                return Err(KaaError::Parameter(format!(
                    "the {} split is empty",
                    split.as_str()
                )));
            }
            let logits = if data.head == TaskHead::NodeSoftmax {
                out
            } else {
                mean_pool(&out, &data.batch)?
            };
            let predicted: Vec<usize> = rows.iter().map(|&r| argmax(logits.row(r))).collect();
            Ok(Metrics {
                accuracy: Some(accuracy(&predicted, &labels)?),
                ..Metrics::default()
            })
        }
        TaskHead::LinkDot => {
            let links = data.links.as_ref().expect("prepared for links");
            let set = match split {
                Split::Val => &links.val,
                Split::Test => &links.test,
                other => {
                    return Err(KaaError::Parameter(format!(
                        "link prediction evaluates val or test pairs, not {}",
                        other.as_str()
                    )))
                }
            };
            if set.positive.is_empty() {
                return Err(KaaError::Parameter(format!(
                    "the {} split is empty",
                    split.as_str()
                )));
            }
            let score = |p: &(usize, usize)| -> f64 {
                out.row(p.0)
                    .iter()
                    .zip(out.row(p.1))
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let pos: Vec<f64> = set.positive.iter().map(score).collect();
            let neg: Vec<f64> = set.negative.iter().map(score).collect();
            Ok(Metrics {
                roc_auc: Some(roc_auc(&pos, &neg)?),
                ..Metrics::default()
            })
        }
    }
}

fn mean_pool(out: &Tensor, batch: &Batch) -> Result<Tensor> {
    let c = out.cols();
    let mut data = Vec::with_capacity(batch.num_graphs() * c);
    for g in 0..batch.num_graphs() {
        let nodes = batch.graph_nodes(g);
        let inv = 1.0 / nodes.len() as f64;
        let mut acc = vec![0.0; c];
        for i in nodes {
            for (a, x) in acc.iter_mut().zip(out.row(i)) {
                *a += x;
            }
        }
        data.extend(acc.into_iter().map(|a| a * inv));
    }
    Tensor::new(&[batch.num_graphs(), c], data)
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Outcome of [`train`]: the best-validation model and its test metrics.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: Model,
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    pub epochs_run: usize,
    /// Test metrics of the returned model, with the per-epoch training loss.
    pub metrics: Metrics,
}

fn headline(m: &Metrics) -> Option<f64> {
    m.accuracy.or(m.roc_auc)
}

fn has_split(data: &Dataset, split: Split) -> bool {
    match data.head {
        TaskHead::LinkDot => data.links.as_ref().is_some_and(|l| match split {
            Split::Val => !l.val.positive.is_empty(),
            Split::Test => !l.test.positive.is_empty(),
            _ => false,
        }),
        _ => !data.labelled(split).0.is_empty(),
    }
}

/// Full-batch Adam on the task loss. Keeps the parameters of the epoch with
/// the best validation metric (the last epoch if there is no validation
/// split) and stops after `patience` epochs without improvement.
pub fn train_prepared(
    model_cfg: &ModelConfig,
    data: &Dataset,
    train_cfg: &TrainConfig,
) -> Result<TrainResult> {
    train_cfg.validate()?;
    if model_cfg.task_head != data.head {
        return Err(KaaError::Consistency(format!(
            "model head {} does not match dataset head {}",
            model_cfg.task_head.as_str(),
            data.head.as_str()
        )));
    }
    let in_dim = data.batch.features().cols();
    let mut model = Model::new(
        model_cfg,
        in_dim,
        data.output_dim(model_cfg),
        train_cfg.seed,
    )?;
    let mut adam = AdamState::new(
        model.params().tensors(),
        &AdamConfig::new(train_cfg.lr, train_cfg.weight_decay),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    rng.set_stream(3);
    let validate = has_split(data, Split::Val);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut loss_curve = Vec::with_capacity(train_cfg.epochs);
    let mut epochs_run = 0;
    for epoch in 0..train_cfg.epochs {
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let loss = training_loss(&model, data, &mut tape, &bound, &mut rng)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(KaaError::Training { epoch, loss: value });
        }
        loss_curve.push(value);
        let grads = tape.backward(loss)?;
        let grads = model.params().collect_grads(&bound, &grads);
        model
            .params_mut()
            .adam_step(&mut adam, &grads, train_cfg.lr, train_cfg.weight_decay)?;
        epochs_run = epoch + 1;
        if validate {
            let score = headline(&evaluate(&model, data, Split::Val)?).unwrap_or(f64::NEG_INFINITY);
            match &best {
                Some((b, at, _)) if score <= *b => {
                    if epoch - at >= train_cfg.patience {
                        break;
                    }
                }
                _ => best = Some((score, epoch, model.params().clone())),
            }
        }
    }
    let (best_val, best_epoch) = match best {
        Some((score, epoch, params)) => {
            *model.params_mut() = params;
            (Some(score), epoch)
        }
        None => (None, epochs_run - 1),
    };
    let mut metrics = if has_split(data, Split::Test) {
        evaluate(&model, data, Split::Test)?
    } else {
        Metrics::default()
    };
    metrics.loss_curve = loss_curve;
    Ok(TrainResult {
        model,
        best_epoch,
        best_val,
        epochs_run,
        metrics,
    })
}

/// Prepares `data` with the training seed and trains.
pub fn train(
    model_cfg: &ModelConfig,
    data: &GraphCollection,
    train_cfg: &TrainConfig,
) -> Result<TrainResult> {
    let prepared = Dataset::prepare(data, model_cfg.task_head, train_cfg.seed)?;
    train_prepared(model_cfg, &prepared, train_cfg)
}

/// JSON document describing one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: Task,
    pub seed: u64,
    pub num_parameters: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    pub loss_curve: Vec<f64>,
    pub test: Metrics,
    pub elapsed_ms: f64,
}

impl RunReport {
    pub fn new(
        model: &ModelConfig,
        train: &TrainConfig,
        task: Task,
        result: &TrainResult,
        started: Instant,
    ) -> Self {
        let mut test = result.metrics.clone();
        let loss_curve = std::mem::take(&mut test.loss_curve);
        Self {
            model: *model,
            train: *train,
            task,
            seed: train.seed,
            num_parameters: result.model.num_parameters(),
            epochs_run: result.epochs_run,
            best_epoch: result.best_epoch,
            best_val: result.best_val,
            loss_curve,
            test,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        }
    }

    /// The report with timing fields cleared, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            elapsed_ms: 0.0,
            ..self.clone()
        }
    }
}
