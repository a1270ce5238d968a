//! Central-difference gradient checks on the tiny model.

use std::collections::BTreeMap;

use avcoh_core::data::{synth_fixture, ClassSpec, ClipSample};
use avcoh_core::model::{Model, SamplePlans};
use avcoh_core::nn::Graph;
use avcoh_grad::{Gradients, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tiny_config;

pub const H: f64 = 1e-5;
/// Denominator floor. Central differences on a loss of order 10 carry
/// roundoff near 1e-10, so gradients that are exactly zero (the key bias
/// under softmax) would otherwise fail on noise alone.
pub const FLOOR: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

pub fn group(name: &str) -> &'static str {
    if name.starts_with("embed.") {
        "tokenizer"
    } else if name.starts_with("enc_") {
        "encoder"
    } else if name.starts_with("inter.") {
        "interaction"
    } else if name.starts_with("dec_") {
        "decoder"
    } else if name.starts_with("cross_") {
        "cross_decoder"
    } else if name.ends_with(".alpha") {
        "alpha"
    } else if name.contains("scorer") {
        "scorer"
    } else if name.starts_with("head.") {
        "head"
    } else {
        panic!("unclassified parameter {name}")
    }
}

/// Worst relative error per parameter group, comparing the analytic
/// gradient at the largest-magnitude coordinate and one random coordinate
/// of every parameter against central differences.
pub fn check(model: &Model, grads: &Gradients, loss: impl Fn(&ParamStore) -> f64) -> BTreeMap<&'static str, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: BTreeMap<&'static str, f64> = BTreeMap::new();
    let mut store = model.store.clone();
    for id in model.store.ids() {
        let Some(g) = grads.get(id) else { continue };
        let name = model.store.entry(id).name.clone();
        let data = g.data();
        let top = (0..data.len()).max_by(|&a, &b| data[a].abs().total_cmp(&data[b].abs())).unwrap();
        for k in [top, rng.gen_range(0..data.len())] {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + H;
            let up = loss(&store);
            store.value_mut(id).data_mut()[k] = orig - H;
            let down = loss(&store);
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * H);
            let analytic = data[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            let e = worst.entry(group(&name)).or_insert(0.0);
            if rel > *e {
                *e = rel;
            }
            if rel >= TOL {
                eprintln!("{name}[{k}]: analytic {analytic:e}, numeric {numeric:e}");
            }
        }
    }
    worst
}

pub fn fixture(model: &Model, spec: &str) -> Vec<ClipSample> {
    synth_fixture(5, 2, &ClassSpec::parse(spec).unwrap(), &model.cfg.geometry).unwrap().1
}

pub fn pretraining() -> BTreeMap<&'static str, f64> {
    let model = Model::new(&tiny_config()).unwrap();
    let samples = fixture(&model, "real");
    let batch: Vec<&ClipSample> = samples.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let plans: Vec<SamplePlans> = batch.iter().map(|_| model.draw_plans(&mut rng).unwrap()).collect();
    // Targets are stop-gradient: perturbing a parameter must not move them.
    let targets = model.semantic_targets(&batch).unwrap();
    let loss = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let (l, _) = model.pretrain_loss_with(&mut g, &batch, &plans, Some(&targets)).unwrap();
        g.value(l).item()
    };
    let grads = {
        let mut g = Graph::new(&model.store);
        let (l, _) = model.pretrain_loss(&mut g, &batch, &plans).unwrap();
        g.backward(l)
    };
    check(&model, &grads, loss)
}

pub fn finetuning() -> BTreeMap<&'static str, f64> {
    let model = Model::new(&tiny_config()).unwrap();
    let samples = fixture(&model, "real,both-fake");
    let loss_of = |g: &mut Graph| {
        let parts: Vec<_> = samples.iter().map(|s| model.sample_finetune_loss(g, s).unwrap().0).collect();
        let c = g.concat_rows(&parts);
        g.sum(c)
    };
    let loss = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let l = loss_of(&mut g);
        g.value(l).item()
    };
    let grads = {
        let mut g = Graph::new(&model.store);
        let l = loss_of(&mut g);
        g.backward(l)
    };
    check(&model, &grads, loss)
}
