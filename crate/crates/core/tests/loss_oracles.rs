mod common;

use avcoh_core::nn::Graph;
use avcoh_core::pretrain::{cross_modal_loss, soft_negative_weight};
use avcoh_grad::{Matrix, ParamStore};
use common::production::*;
use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn reconstruction_matches_nested_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let layers = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=6);
        let p = rng.gen_range(1..=8);
        let target = random_rows(&mut rng, k, p);
        let preds: Vec<_> = (0..layers).map(|_| random_rows(&mut rng, k, p)).collect();
        let (a, b) = (production_reconstruction(&preds, &target), oracle_reconstruction(&preds, &target));
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn contrastive_matches_nested_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    while checked < 20 {
        let b = rng.gen_range(1..=3);
        let t = rng.gen_range(1..=4);
        let dim = rng.gen_range(2..=8);
        let batch = random_batch(&mut rng, b, t, dim);
        if !usable(&batch) {
            continue;
        }
        for soft in [true, false] {
            let cfg = loss_cfg(soft, true);
            let got = production_contrastive(&batch, t, &cfg, 1.0);
            let want = oracle_contrastive(&batch, t, cfg.temperature, soft);
            assert!((got - want).abs() < 1e-10, "B={b} T={t} soft={soft}: {got} vs {want}");
        }
        checked += 1;
    }
}

#[test]
fn global_contrast_pools_each_sample_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let batch = random_batch(&mut rng, 3, 4, 6);
        let cfg = loss_cfg(true, false);
        let got = production_contrastive(&batch, 4, &cfg, 1.0);
        let pooled: Vec<OracleSample> = batch
            .iter()
            .map(|s| OracleSample {
                video: s.video.clone(),
                video_segments: vec![0; s.video.len()],
                audio: s.audio.clone(),
                audio_segments: vec![0; s.audio.len()],
            })
            .collect();
        let want = oracle_contrastive(&pooled, 1, cfg.temperature, true);
        assert!((got - want).abs() < 1e-10);
    }
}

#[test]
fn cross_modal_matches_nested_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let n = rng.gen_range(1..=12);
        let d = rng.gen_range(1..=8);
        let (p, t) = (random_rows(&mut rng, n, d), random_rows(&mut rng, n, d));
        assert!((production_cross(&p, &t) - oracle_cross(&p, &t)).abs() < 1e-10);
    }
}

#[test]
fn degenerate_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let single = vec![OracleSample {
        video: random_rows(&mut rng, 3, 4),
        video_segments: vec![0; 3],
        audio: random_rows(&mut rng, 2, 4),
        audio_segments: vec![0; 2],
    }];
    assert!(production_contrastive(&single, 1, &loss_cfg(true, true), 1.0).abs() < 1e-12);

    let target = random_rows(&mut rng, 5, 6);
    assert_eq!(production_reconstruction(&[target.clone(), target.clone()], &target), 0.0);
    assert_eq!(production_cross(&target, &target), 0.0);

    let c = vec![vec![0.25; 4]; 3];
    let d = vec![vec![-1.0; 4]; 3];
    assert!((production_reconstruction(&[c.clone(), c], &d) - 1.5625).abs() < 1e-15);
}

#[test]
fn cross_modal_rejects_trainable_target() {
    let mut store = ParamStore::new();
    let id = store.add("t", Matrix::zeros(2, 2), avcoh_grad::Stage::Shared);
    let mut g = Graph::new(&store);
    let pred = g.constant(Matrix::zeros(2, 2));
    let target = g.p(id);
    assert!(cross_modal_loss(&mut g, pred, target).is_err());
    let detached = g.detach(target);
    assert!(cross_modal_loss(&mut g, pred, detached).is_ok());
}

#[test]
fn soft_weight_matches_logistic_form() {
    for i in 0..3 {
        for j in 0..3 {
            for t in 0..8 {
                for t2 in 0..8 {
                    let (a, b) = (soft_negative_weight(i, j, t, t2), oracle_soft_weight(i, j, t, t2));
                    assert!((a - b).abs() < 1e-15);
                }
            }
        }
    }
    assert!((soft_negative_weight(0, 0, 3, 4) - 0.462117).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn soft_weight_bounded_and_monotone(d in 1usize..40) {
        let w = soft_negative_weight(0, 0, 0, d);
        prop_assert!(w > 0.0 && w <= 1.0);
        prop_assert!(soft_negative_weight(0, 0, 0, d + 1) >= w);
        prop_assert_eq!(soft_negative_weight(0, 0, d, 0), w);
    }

    #[test]
    fn contrast_is_scale_invariant_and_nonnegative(seed in any::<u64>(), b in 1usize..=3, t in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = random_batch(&mut rng, b, t, 5);
        prop_assume!(usable(&batch));
        let cfg = loss_cfg(true, true);
        let base = production_contrastive(&batch, t, &cfg, 1.0);
        let scaled = production_contrastive(&batch, t, &cfg, 3.7);
        prop_assert!((base - scaled).abs() < 1e-9);
        prop_assert!(base >= -1e-12);
    }

    #[test]
    fn squared_errors_ignore_masked_order(seed in any::<u64>(), k in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = random_rows(&mut rng, k, 4);
        let preds = vec![random_rows(&mut rng, k, 4), random_rows(&mut rng, k, 4)];
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        let pt: Vec<_> = perm.iter().map(|&i| target[i].clone()).collect();
        let pp: Vec<Vec<Vec<f64>>> = preds.iter().map(|l| perm.iter().map(|&i| l[i].clone()).collect()).collect();
        prop_assert!((production_reconstruction(&preds, &target) - production_reconstruction(&pp, &pt)).abs() < 1e-12);
        prop_assert!((production_cross(&preds[0], &target) - production_cross(&pp[0], &pt)).abs() < 1e-12);
    }
}
