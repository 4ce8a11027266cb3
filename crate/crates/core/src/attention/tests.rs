use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn scorer(cfg: &ScoringConfig, d: usize) -> (ParamStore, Scorer) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = Scorer::new(&mut store, "s", cfg, d, &mut rng).unwrap();
    (store, s)
}

fn set(store: &mut ParamStore, id: ParamId, rows: &[Vec<f64>]) {
    store.set(id, Tensor::from_rows(rows).unwrap()).unwrap();
}

fn col(v: &[f64]) -> Tensor {
    Tensor::new(&[v.len(), 1], v.to_vec()).unwrap()
}

#[test]
fn gat_scalar_examples() {
    let mut cfg = ScoringConfig::new(Backbone::Gat, Variant::Original);
    cfg.proj_dim = 1;
    let (mut store, s) = scorer(&cfg, 1);
    let ScoreMapping::Linear { w: Some(w), a } = s.mapping().clone() else {
        panic!()
    };
    set(&mut store, w, &[vec![1.0]]);
    set(&mut store, a, &[vec![1.0], vec![1.0]]);
    // h_i is the query (destination), h_j the key (source)
    let out = score_pairs(&s, &store, &col(&[-0.25, 0.0]), &col(&[0.5, -1.0])).unwrap();
    assert!((out.data()[0] - 0.25).abs() < 1e-15);
    assert!((out.data()[1] + 0.2).abs() < 1e-15);
}

#[test]
fn gat_modified_is_non_positive() {
    let cfg = ScoringConfig::new(Backbone::GatModified, Variant::Original);
    let (store, s) = scorer(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = Tensor::randn(&[20, 3], 1.0, &mut rng);
    let k = Tensor::randn(&[20, 3], 1.0, &mut rng);
    let out = score_pairs(&s, &store, &k, &q).unwrap();
    assert!(out.data().iter().all(|v| *v <= 0.0));
}

#[test]
fn glcn_example() {
    let cfg = ScoringConfig::new(Backbone::Glcn, Variant::Original);
    let (mut store, s) = scorer(&cfg, 2);
    let ScoreMapping::Linear { w: None, a } = s.mapping().clone() else {
        panic!()
    };
    set(&mut store, a, &[vec![1.0], vec![1.0]]);
    let hi = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
    let hj = Tensor::from_rows(&[vec![3.0, 1.0]]).unwrap();
    let out = score_pairs(&s, &store, &hj, &hi).unwrap();
    assert_eq!(out.data(), &[3.0]);
}

#[test]
fn gt_and_san_examples() {
    for (backbone, factor) in [(Backbone::Gt, 1.0), (Backbone::San, 0.5)] {
        let mut cfg = ScoringConfig::new(backbone, Variant::Original);
        cfg.proj_dim = 2;
        cfg.gamma = 1.0;
        let (mut store, s) = scorer(&cfg, 2);
        let ScoreMapping::QueryKey { wq, wk } = s.mapping().clone() else {
            panic!()
        };
        store.set(wq, Tensor::identity(2)).unwrap();
        store.set(wk, Tensor::identity(2)).unwrap();
        let hi = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let hj = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let out = score_pairs(&s, &store, &hj, &hi).unwrap();
        assert_eq!(out.data()[0], 0.0);
        assert!((out.data()[1] - factor / 2f64.sqrt()).abs() < 1e-15);
    }
}

#[test]
fn cfgat_zero_row_is_degenerate() {
    let cfg = ScoringConfig::new(Backbone::Cfgat, Variant::Original);
    let (store, s) = scorer(&cfg, 2);
    let z = Tensor::zeros(&[1, 2]);
    let x = Tensor::ones(&[1, 2]);
    assert!(matches!(
        score_pairs(&s, &store, &z, &x),
        Err(KaaError::Degenerate(_))
    ));
}

#[test]
fn kaa_dot_forms_use_square_kan() {
    for backbone in [Backbone::Gt, Backbone::San] {
        let cfg = ScoringConfig::new(backbone, Variant::Kaa);
        let (_, s) = scorer(&cfg, 5);
        let ScoreMapping::Kan(k) = s.mapping() else {
            panic!()
        };
        assert_eq!((k.n_in(), k.n_out()), (5, 5));
    }
    let cfg = ScoringConfig::new(Backbone::Gat, Variant::Kaa);
    let (_, s) = scorer(&cfg, 5);
    let ScoreMapping::Kan(k) = s.mapping() else {
        panic!()
    };
    assert_eq!((k.n_in(), k.n_out()), (10, 1));
}

#[test]
fn kaa_dot_matches_hand_evaluation() {
    let cfg = ScoringConfig::new(Backbone::San, Variant::Kaa);
    let (store, s) = scorer(&cfg, 3);
    let ScoreMapping::Kan(kan) = s.mapping() else {
        panic!()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = Tensor::randn(&[4, 3], 0.5, &mut rng);
    let k = Tensor::randn(&[4, 3], 0.5, &mut rng);
    let mapped = kan.eval(&store, &q).unwrap();
    let out = score_pairs(&s, &store, &k, &q).unwrap();
    for e in 0..4 {
        let dot: f64 = mapped.row(e).iter().zip(k.row(e)).map(|(a, b)| a * b).sum();
        let want = dot / 3f64.sqrt() / 2.0;
        assert!((out.data()[e] - want).abs() < 1e-14);
    }
}

#[test]
fn gat_modified_kaa_rejected() {
    let cfg = ScoringConfig::new(Backbone::GatModified, Variant::Kaa);
    assert!(matches!(cfg.validate(), Err(KaaError::Parameter(_))));
}

#[test]
fn width_mismatch_is_shape_error() {
    let cfg = ScoringConfig::new(Backbone::Gat, Variant::Original);
    let (store, s) = scorer(&cfg, 3);
    let a = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[2, 4]);
    assert!(matches!(
        score_pairs(&s, &store, &a, &b),
        Err(KaaError::Shape { .. })
    ));
}

#[test]
fn normalize_examples() {
    let seg = Segments::new(vec![0, 0, 0, 0, 1], 2).unwrap();
    let w = normalize(&Tensor::vector(vec![0.7; 5]), &seg).unwrap();
    for v in &w.data()[..4] {
        assert!((v - 0.25).abs() < 1e-15);
    }
    assert_eq!(w.data()[4], 1.0);
}

#[test]
fn normalize_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ids: Vec<usize> = (0..50).map(|e| e % 7).collect();
    let seg = Segments::new(ids.clone(), 7).unwrap();
    let s = Tensor::randn(&[50], 3.0, &mut rng);
    let shifts: Vec<f64> = (0..7).map(|i| 10.0 * i as f64 - 20.0).collect();
    let shifted = Tensor::vector(
        s.data()
            .iter()
            .zip(&ids)
            .map(|(v, &g)| v + shifts[g])
            .collect(),
    );
    let a = normalize(&s, &seg).unwrap();
    let b = normalize(&shifted, &seg).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
}

#[test]
fn single_head_matches_scorer() {
    let cfg = ScoringConfig::new(Backbone::Gat, Variant::Kaa);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mh = MultiHeadScorer::new(&mut store, "m", &cfg, 4, &mut rng).unwrap();
    assert_eq!(mh.num_heads(), 1);
    let x = Tensor::randn(&[6, 4], 1.0, &mut rng);
    let seg = Segments::new(vec![0, 0, 1, 1, 1, 2], 3).unwrap();
    let via_heads = multi_head(&mh, &store, &x, &x, &seg).unwrap();
    let direct = normalize(&score_pairs(&mh.heads()[0], &store, &x, &x).unwrap(), &seg).unwrap();
    assert_eq!(via_heads, vec![direct]);
}

#[test]
fn identical_heads_give_identical_weights() {
    let mut cfg = ScoringConfig::new(Backbone::Gt, Variant::Kaa);
    cfg.heads = 3;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mh = MultiHeadScorer::new(&mut store, "m", &cfg, 4, &mut rng).unwrap();
    let src: Vec<ParamId> = mh.heads()[0].param_ids();
    for h in &mh.heads()[1..] {
        for (a, b) in src.iter().zip(h.param_ids()) {
            let t = store.get(*a).clone();
            store.set(b, t).unwrap();
        }
    }
    let x = Tensor::randn(&[6, 4], 1.0, &mut rng);
    let seg = Segments::new(vec![0, 0, 1, 1, 1, 2], 3).unwrap();
    let w = multi_head(&mh, &store, &x, &x, &seg).unwrap();
    assert_eq!(w.len(), 3);
    assert_eq!(w[0], w[1]);
    assert_eq!(w[1], w[2]);
}

fn all_configs() -> Vec<ScoringConfig> {
    gradient_check_configs()
}

#[test]
fn check_configs_cover_every_variant() {
    let configs = all_configs();
    let mut pairs: Vec<(Backbone, Variant)> =
        configs.iter().map(|c| (c.backbone, c.variant)).collect();
    pairs.dedup();
    assert_eq!(pairs.len(), 11);
}

#[test]
fn every_variant_passes_gradient_check() {
    for cfg in all_configs() {
        for seed in 0..5 {
            let err = scorer_gradient_error(&cfg, 3, 4, seed).unwrap();
            assert!(
                err < 1e-4,
                "{}/{} order {} depth {} seed {seed}: {err}",
                cfg.backbone.as_str(),
                cfg.variant.as_str(),
                cfg.kan.order,
                cfg.kan.depth
            );
        }
    }
}

#[test]
fn deterministic_scores() {
    for cfg in all_configs() {
        let (store, s) = scorer(&cfg, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let y = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let a = score_pairs(&s, &store, &x, &y).unwrap();
        let b = score_pairs(&s, &store, &x, &y).unwrap();
        assert_eq!(a, b);
    }
}

fn probe_inputs(seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        Tensor::randn(&[8, 4], 1.0, &mut rng),
        Tensor::randn(&[8, 4], 1.0, &mut rng),
    )
}

#[test]
fn gat_probe_is_static() {
    let (q, k) = probe_inputs(10);
    let cfg = ScoringConfig::new(Backbone::Gat, Variant::Original);
    let r = static_attention_probe(&cfg, &q, &k, 200, 1).unwrap();
    assert_eq!(r.fraction, 1.0);
}

#[test]
fn gat_modified_probe_is_dynamic() {
    let (q, k) = probe_inputs(10);
    let cfg = ScoringConfig::new(Backbone::GatModified, Variant::Original);
    let r = static_attention_probe(&cfg, &q, &k, 200, 1).unwrap();
    assert!(r.fraction < 1.0, "{}", r.fraction);
}

#[test]
fn probe_single_query_key() {
    let (q, k) = probe_inputs(11);
    let q = Tensor::new(&[1, 4], q.row(0).to_vec()).unwrap();
    let k = Tensor::new(&[1, 4], k.row(0).to_vec()).unwrap();
    let cfg = ScoringConfig::new(Backbone::GatModified, Variant::Original);
    assert_eq!(
        static_attention_probe(&cfg, &q, &k, 10, 0)
            .unwrap()
            .fraction,
        1.0
    );
}
