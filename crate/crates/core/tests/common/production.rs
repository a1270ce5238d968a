//! Production loss evaluations on plain row data.

use avcoh_core::config::LossConfig;
use avcoh_core::nn::Graph;
use avcoh_core::pretrain::{contrastive_loss, cross_modal_loss, reconstruction_loss, ContrastiveInput};
use avcoh_grad::{Matrix, ParamStore};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{random_rows, OracleSample};

pub fn loss_cfg(soft: bool, segments: bool) -> LossConfig {
    let mut c = avcoh_core::config::RunConfig::desk().loss;
    c.soft_negatives = soft;
    c.temporal_segments = segments;
    c
}

pub fn random_batch(rng: &mut ChaCha8Rng, b: usize, t: usize, dim: usize) -> Vec<OracleSample> {
    (0..b)
        .map(|_| {
            let nv = rng.gen_range(1..=2 * t);
            let na = rng.gen_range(1..=2 * t);
            OracleSample {
                video: random_rows(rng, nv, dim),
                video_segments: (0..nv).map(|_| rng.gen_range(0..t)).collect(),
                audio: random_rows(rng, na, dim),
                audio_segments: (0..na).map(|_| rng.gen_range(0..t)).collect(),
            }
        })
        .collect()
}

pub fn usable(batch: &[OracleSample]) -> bool {
    batch.iter().any(|s| s.video_segments.iter().any(|t| s.audio_segments.contains(t)))
}

pub fn production_contrastive(batch: &[OracleSample], segments: usize, cfg: &LossConfig, scale: f64) -> f64 {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let inputs: Vec<ContrastiveInput> = batch
        .iter()
        .map(|s| {
            let v = Matrix::from_rows(&s.video).map(|x| x * scale);
            let a = Matrix::from_rows(&s.audio).map(|x| x * scale);
            ContrastiveInput {
                video: g.constant(v),
                video_segments: s.video_segments.clone(),
                audio: g.constant(a),
                audio_segments: s.audio_segments.clone(),
            }
        })
        .collect();
    let l = contrastive_loss(&mut g, &inputs, segments, cfg).unwrap();
    g.value(l).item()
}

pub fn production_reconstruction(preds: &[Vec<Vec<f64>>], target: &[Vec<f64>]) -> f64 {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let p: Vec<_> = preds.iter().map(|l| g.constant(Matrix::from_rows(l))).collect();
    let l = reconstruction_loss(&mut g, &p, &Matrix::from_rows(target)).unwrap();
    g.value(l).item()
}

pub fn production_cross(pred: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let p = g.constant(Matrix::from_rows(pred));
    let t = g.constant(Matrix::from_rows(target));
    let l = cross_modal_loss(&mut g, p, t).unwrap();
    g.value(l).item()
}
