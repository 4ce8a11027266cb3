use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::attention::{Backbone, ScoringConfig, Variant};
use crate::error::KaaError;
use crate::graph::{
    gen_dictionary_lookup_with, gen_sbm, Graph, GraphCollection, SbmParams, Split, Task,
};
use crate::tensor::{Tape, Tensor};

fn gat() -> ScoringConfig {
    ScoringConfig::new(Backbone::Gat, Variant::Original)
}

fn kaa_gat() -> ScoringConfig {
    ScoringConfig::new(Backbone::Gat, Variant::Kaa)
}

fn node_cfg(scoring: ScoringConfig) -> ModelConfig {
    let mut cfg = ModelConfig::new(scoring, TaskHead::NodeSoftmax);
    cfg.hidden_dim = 8;
    cfg
}

fn sbm(seed: u64) -> Graph {
    gen_sbm(&SbmParams::new(3, 8, 0.5, 0.05), seed).unwrap()
}

fn param<'a>(model: &'a Model, name: &str) -> &'a Tensor {
    let store = model.params();
    let id = store.ids().find(|&id| store.name(id) == name).unwrap();
    store.get(id)
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let y = x.matmul(w).unwrap();
    let cols = y.cols();
    let data = y
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v + b.data()[i % cols])
        .collect();
    Tensor::new(y.shape(), data).unwrap()
}

/// Mean over in-neighbors (self-loop included) of each node.
fn neighbor_mean(x: &Tensor, batch: &Batch) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    let mut out = vec![0.0; n * d];
    let mut deg = vec![0.0; n];
    for &(s, t) in batch.edges() {
        deg[t] += 1.0;
        for c in 0..d {
            out[t * d + c] += x.get2(s, c);
        }
    }
    for i in 0..n {
        for c in 0..d {
            out[i * d + c] /= deg[i];
        }
    }
    Tensor::new(&[n, d], out).unwrap()
}

#[test]
fn config_grid_is_enforced() {
    let mut cfg = node_cfg(gat());
    cfg.validate().unwrap();
    cfg.hidden_dim = 0;
    assert!(matches!(cfg.validate(), Err(KaaError::Parameter(m)) if m.contains("no learnable")));
    let mut cfg = node_cfg(gat());
    cfg.num_layers = 0;
    assert!(cfg.validate().is_err());
    cfg.num_layers = 6;
    assert!(cfg.validate().is_err());
    let mut cfg = node_cfg(gat());
    cfg.dropout = 0.2;
    assert!(cfg.validate().is_err());
    let mut cfg = node_cfg(gat());
    cfg.heads = 3;
    assert!(cfg.validate().is_err());
}

#[test]
fn zero_scoring_gives_mean_aggregation() {
    let g = sbm(1);
    let data = GraphCollection::single(g, Task::NodeClassification).unwrap();
    let batch = Batch::from_collection(&data).unwrap();
    let mut model = Model::new(&node_cfg(kaa_gat()), batch.features().cols(), 3, 7).unwrap();
    model.zero_scoring_params();
    let out = model.embed(&batch).unwrap();

    let h = affine(
        batch.features(),
        param(&model, "layer0.value0.weight"),
        param(&model, "layer0.value0.bias"),
    );
    let h = neighbor_mean(&h, &batch).map(elu);
    let h = affine(
        &h,
        param(&model, "layer1.value0.weight"),
        param(&model, "layer1.value0.bias"),
    );
    let expect = neighbor_mean(&h, &batch);
    assert!(out.max_abs_diff(&expect).unwrap() < 1e-12);
}

#[test]
fn zero_scoring_makes_variants_agree() {
    let data = GraphCollection::single(sbm(2), Task::NodeClassification).unwrap();
    let batch = Batch::from_collection(&data).unwrap();
    let d = batch.features().cols();
    let mut outs = Vec::new();
    for scoring in [
        gat(),
        kaa_gat(),
        ScoringConfig::new(Backbone::Gt, Variant::Kaa),
    ] {
        let mut cfg = node_cfg(scoring);
        cfg.heads = 2;
        let mut model = Model::new(&cfg, d, 3, 11).unwrap();
        model.zero_scoring_params();
        outs.push(model.embed(&batch).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0], outs[2]);
}

#[test]
fn single_node_is_update_of_value() {
    let x = Tensor::matrix(1, 3, vec![0.3, -1.2, 0.8]).unwrap();
    let g = Graph::new(x.clone(), vec![], vec![0], vec![Split::Train]).unwrap();
    let data = GraphCollection::single(g, Task::NodeClassification).unwrap();
    let batch = Batch::from_collection(&data).unwrap();
    assert_eq!(batch.edges(), &[(0, 0)]);
    for scoring in [gat(), kaa_gat()] {
        let model = Model::new(&node_cfg(scoring), 3, 2, 5).unwrap();
        let out = model.embed(&batch).unwrap();
        let h = affine(
            &x,
            param(&model, "layer0.value0.weight"),
            param(&model, "layer0.value0.bias"),
        )
        .map(elu);
        let expect = affine(
            &h,
            param(&model, "layer1.value0.weight"),
            param(&model, "layer1.value0.bias"),
        );
        assert!(out.max_abs_diff(&expect).unwrap() < 1e-14);
    }
}

#[test]
fn layers_are_permutation_equivariant() {
    let g = sbm(3);
    let n = g.num_nodes();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let pg = g.permute_nodes(&perm).unwrap();
    for (scoring, heads, value_transform) in [
        (gat(), 2, true),
        (kaa_gat(), 1, true),
        (ScoringConfig::new(Backbone::Cfgat, Variant::Kaa), 2, false),
        (
            ScoringConfig::new(Backbone::San, Variant::Original),
            4,
            true,
        ),
    ] {
        let mut cfg = node_cfg(scoring);
        cfg.heads = heads;
        cfg.value_transform = value_transform;
        cfg.num_layers = 3;
        let model = Model::new(&cfg, g.feature_dim(), 3, 9).unwrap();
        let a = model
            .embed(
                &Batch::from_collection(
                    &GraphCollection::single(g.clone(), Task::NodeClassification).unwrap(),
                )
                .unwrap(),
            )
            .unwrap();
        let b = model
            .embed(
                &Batch::from_collection(
                    &GraphCollection::single(pg.clone(), Task::NodeClassification).unwrap(),
                )
                .unwrap(),
            )
            .unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for (x, y) in a.row(i).iter().zip(b.row(p)) {
                assert!((x - y).abs() < 1e-10, "{:?}", scoring.backbone);
            }
        }
    }
}

#[test]
fn attention_is_uniform_with_zero_scores() {
    let data = GraphCollection::single(sbm(5), Task::NodeClassification).unwrap();
    let batch = Batch::from_collection(&data).unwrap();
    let mut model = Model::new(&node_cfg(kaa_gat()), batch.features().cols(), 3, 1).unwrap();
    model.zero_scoring_params();
    let x = batch.features();
    let q = Tensor::from_rows(
        &batch
            .dst()
            .iter()
            .map(|&i| x.row(i).to_vec())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let k = Tensor::from_rows(
        &batch
            .src()
            .iter()
            .map(|&i| x.row(i).to_vec())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let alpha = crate::attention::multi_head(
        model.layers()[0].scorers(),
        model.params(),
        &k,
        &q,
        batch.segments(),
    )
    .unwrap();
    let sizes = batch.segments().sizes();
    for (e, &t) in batch.dst().iter().enumerate() {
        assert!((alpha[0].data()[e] - 1.0 / sizes[t] as f64).abs() < 1e-15);
    }
}

#[test]
fn early_loss_decreases_on_dictionary_lookup() {
    let mut mean_curve = vec![0.0; 10];
    for seed in 0..5 {
        let data = gen_dictionary_lookup_with(5, 16, seed).unwrap();
        let cfg = node_cfg(gat());
        let tc = TrainConfig {
            lr: 1e-3,
            epochs: 10,
            seed,
            ..TrainConfig::default()
        };
        let r = train(&cfg, &data, &tc).unwrap();
        for (m, l) in mean_curve.iter_mut().zip(&r.metrics.loss_curve) {
            *m += l / 5.0;
        }
    }
    for w in mean_curve.windows(2) {
        assert!(w[1] <= w[0], "{mean_curve:?}");
    }
}

#[test]
fn training_is_deterministic() {
    let data = gen_dictionary_lookup_with(4, 8, 2).unwrap();
    let mut cfg = node_cfg(kaa_gat());
    cfg.dropout = 0.1;
    cfg.attention_dropout = true;
    let tc = TrainConfig {
        epochs: 15,
        seed: 21,
        ..TrainConfig::default()
    };
    let started = std::time::Instant::now();
    let a = train(&cfg, &data, &tc).unwrap();
    let b = train(&cfg, &data, &tc).unwrap();
    assert_eq!(a.model, b.model);
    let ra = RunReport::new(&cfg, &tc, Task::NodeClassification, &a, started).without_timing();
    let rb = RunReport::new(&cfg, &tc, Task::NodeClassification, &b, started).without_timing();
    assert_eq!(
        serde_json::to_string(&ra).unwrap(),
        serde_json::to_string(&rb).unwrap()
    );

    let prepared = Dataset::prepare(&data, cfg.task_head, tc.seed).unwrap();
    let e1 = evaluate(&a.model, &prepared, Split::Test).unwrap();
    let e2 = evaluate(&a.model, &prepared, Split::Test).unwrap();
    assert_eq!(
        e1.accuracy.unwrap().to_bits(),
        e2.accuracy.unwrap().to_bits()
    );
    assert_eq!(
        a.model.embed(prepared.batch()).unwrap(),
        a.model.embed(prepared.batch()).unwrap()
    );
}

#[test]
fn best_validation_parameters_are_returned() {
    let data = gen_dictionary_lookup_with(4, 8, 3).unwrap();
    let cfg = node_cfg(gat());
    let tc = TrainConfig {
        epochs: 30,
        seed: 1,
        patience: 5,
        ..TrainConfig::default()
    };
    let r = train(&cfg, &data, &tc).unwrap();
    let prepared = Dataset::prepare(&data, cfg.task_head, tc.seed).unwrap();
    let val = evaluate(&r.model, &prepared, Split::Val).unwrap().accuracy;
    assert_eq!(val, r.best_val);
    assert!(r.epochs_run <= 30 && r.best_epoch < r.epochs_run);
    assert!(r.epochs_run == 30 || r.epochs_run - 1 - r.best_epoch >= 5);
}

#[test]
fn non_finite_loss_reports_epoch() {
    let mut x = Tensor::zeros(&[4, 2]);
    x.set2(1, 0, f64::NAN);
    let g = Graph::new(
        x,
        vec![(0, 1), (1, 2), (2, 3)],
        vec![0, 1, 0, 1],
        vec![Split::Train; 4],
    )
    .unwrap();
    let data = GraphCollection::single(g, Task::NodeClassification).unwrap();
    let err = train(&node_cfg(gat()), &data, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, KaaError::Training { epoch: 0, .. }), "{err}");
}

#[test]
fn empty_test_split_is_rejected() {
    let g = sbm(6);
    let n = g.num_nodes();
    let g = g.with_splits(vec![Split::Train; n]).unwrap();
    let data = GraphCollection::single(g, Task::NodeClassification).unwrap();
    let cfg = node_cfg(gat());
    let prepared = Dataset::prepare(&data, cfg.task_head, 0).unwrap();
    let model = Model::new(&cfg, data.feature_dim(), 3, 0).unwrap();
    assert!(matches!(
        evaluate(&model, &prepared, Split::Test),
        Err(KaaError::Parameter(_))
    ));
}

#[test]
fn link_prediction_runs() {
    let g = gen_sbm(&SbmParams::new(2, 15, 0.4, 0.02), 8).unwrap();
    let data = GraphCollection::single(g, Task::LinkPrediction).unwrap();
    let mut cfg = ModelConfig::new(gat(), TaskHead::LinkDot);
    cfg.hidden_dim = 16;
    let tc = TrainConfig {
        epochs: 60,
        seed: 3,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let prepared = Dataset::prepare(&data, cfg.task_head, tc.seed).unwrap();
    let links = prepared.links().unwrap();
    assert_eq!(links.test.positive.len(), links.test.negative.len());
    assert_eq!(links.val.positive.len(), links.val.negative.len());
    for &(a, b) in links.test.negative.iter().chain(&links.val.negative) {
        assert!(a != b && !data.graphs()[0].has_edge(a, b));
    }
    // held-out edges carry no messages
    for &(a, b) in &links.test.positive {
        assert!(!prepared.batch().edges().contains(&(a, b)));
    }
    let r = train_prepared(&cfg, &prepared, &tc).unwrap();
    let auc = r.metrics.roc_auc.unwrap();
    assert!(auc > 0.6, "{auc}");
    assert!(r.metrics.accuracy.is_none());
}

#[test]
fn graph_classification_runs() {
    let graphs: Vec<Graph> = (0..40)
        .map(|i| {
            let dense = i % 2 == 0;
            let p = if dense {
                SbmParams::new(1, 8, 0.9, 0.0)
            } else {
                SbmParams::new(1, 8, 0.15, 0.0)
            };
            let g = gen_sbm(&p, i).unwrap();
            let deg: Vec<f64> = (0..8)
                .map(|v| g.edges().iter().filter(|e| e.1 == v).count() as f64 / 8.0)
                .collect();
            Graph::new(
                Tensor::matrix(8, 1, deg).unwrap(),
                g.edges().to_vec(),
                vec![0; 8],
                vec![Split::None; 8],
            )
            .unwrap()
            .with_graph_label(usize::from(dense))
        })
        .collect();
    let data = GraphCollection::new(graphs, Task::GraphClassification).unwrap();
    let mut cfg = ModelConfig::new(gat(), TaskHead::GraphMeanpoolSoftmax);
    cfg.hidden_dim = 8;
    let tc = TrainConfig {
        epochs: 80,
        seed: 0,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let r = train(&cfg, &data, &tc).unwrap();
    assert!(
        r.metrics.accuracy.unwrap() >= 0.75,
        "{:?}",
        r.metrics.accuracy
    );
}

#[test]
fn head_must_match_task() {
    let data = GraphCollection::single(sbm(1), Task::NodeClassification).unwrap();
    assert!(Dataset::prepare(&data, TaskHead::LinkDot, 0).is_err());
}

#[test]
fn forward_shapes() {
    let data = gen_dictionary_lookup_with(5, 2, 0).unwrap();
    let batch = Batch::from_collection(&data).unwrap();
    assert_eq!(batch.num_nodes(), 20);
    assert_eq!(batch.edges().len(), 2 * 50 + 20);
    let mut cfg = node_cfg(kaa_gat());
    cfg.heads = 4;
    cfg.num_layers = 3;
    let model = Model::new(&cfg, 10, 5, 0).unwrap();
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let out = model
        .forward(&mut tape, &bound, &batch, &mut Mode::Eval)
        .unwrap();
    assert_eq!(tape.value(out).shape(), &[20, 5]);
    assert!(Model::new(&cfg, 11, 5, 0).unwrap().embed(&batch).is_err());
}
