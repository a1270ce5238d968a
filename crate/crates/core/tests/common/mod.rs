//! Shared fixtures and brute-force reference implementations.
#![allow(dead_code)]

pub mod gradcheck;
pub mod production;

use avcoh_core::config::{ModelConfig, RunConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Two-layer, width-8 model on an 8-frame 32x32 clip: 64 video tokens and
/// 16 audio tokens.
pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig::desk();
    c.geometry.frames = 8;
    c.geometry.height = 32;
    c.geometry.width = 32;
    c.geometry.spec_frames = 64;
    c.geometry.mel_bins = 16;
    c.geometry.video_patch = [2, 8, 8];
    c.geometry.audio_patch = [8, 8];
    c.geometry.segments = 4;
    c.model = ModelConfig {
        dim: 8,
        layers: 2,
        heads: 2,
        taps: vec![1, 2],
        mlp_ratio: 2,
        interaction_cross_heads: 2,
        interaction_block_heads: 2,
        decoder_dim: 8,
        decoder_heads: 2,
        cross_decoder_heads: 2,
        scorer_hidden: 8,
        main_head_hidden: [16, 8],
        aux_head_hidden: [8, 4],
        ln_eps: 1e-6,
    };
    c.masking.video_ratio = 0.5;
    c.masking.audio_ratio = 0.5;
    c
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Mean over decoder layers of the per-element mean squared error.
pub fn oracle_reconstruction(preds: &[Vec<Vec<f64>>], target: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for layer in preds {
        let mut s = 0.0;
        let mut n = 0usize;
        for (row, trow) in layer.iter().zip(target) {
            for (p, t) in row.iter().zip(trow) {
                s += (p - t) * (p - t);
                n += 1;
            }
        }
        total += s / n as f64;
    }
    total / preds.len() as f64
}

pub fn oracle_cross(pred: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    oracle_reconstruction(&[pred.to_vec()], target)
}

pub fn oracle_soft_weight(i: usize, j: usize, t: usize, t2: usize) -> f64 {
    if i == j && t != t2 {
        let d = (t as f64 - t2 as f64).abs();
        let sigma = 1.0 / (1.0 + d.exp());
        1.0 - 2.0 * sigma
    } else {
        1.0
    }
}

/// One sample of token features with segment labels.
pub struct OracleSample {
    pub video: Vec<Vec<f64>>,
    pub video_segments: Vec<usize>,
    pub audio: Vec<Vec<f64>>,
    pub audio_segments: Vec<usize>,
}

fn segment_mean(rows: &[Vec<f64>], segs: &[usize], t: usize) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut n = 0;
    for (r, &s) in rows.iter().zip(segs) {
        if s == t {
            let a = acc.get_or_insert_with(|| vec![0.0; r.len()]);
            for (x, y) in a.iter_mut().zip(r) {
                *x += y;
            }
            n += 1;
        }
    }
    acc.map(|a| a.into_iter().map(|x| x / n as f64).collect())
}

/// Both directions of the segment contrastive loss by direct summation.
pub fn oracle_contrastive(batch: &[OracleSample], segments: usize, tau: f64, soft: bool) -> f64 {
    // (sample, segment, video mean, audio mean) for usable segments.
    let mut items = Vec::new();
    for (i, s) in batch.iter().enumerate() {
        for t in 0..segments {
            let v = segment_mean(&s.video, &s.video_segments, t);
            let a = segment_mean(&s.audio, &s.audio_segments, t);
            if let (Some(v), Some(a)) = (v, a) {
                items.push((i, t, v, a));
            }
        }
    }
    let u = items.len() as f64;
    let w = |i, j, t, t2| if soft { oracle_soft_weight(i, j, t, t2) } else { 1.0 };
    let mut va = 0.0;
    let mut av = 0.0;
    for (i, t, v, a) in &items {
        let num_va = (cosine(v, a) / tau).exp();
        let mut den_va = 0.0;
        let mut den_av = 0.0;
        for (j, t2, v2, a2) in &items {
            den_va += w(*i, *j, *t, *t2) * (cosine(v, a2) / tau).exp();
            den_av += w(*i, *j, *t, *t2) * (cosine(a, v2) / tau).exp();
        }
        va += -(num_va / den_va).ln();
        av += -(num_va / den_av).ln();
    }
    va / (2.0 * u) + av / (2.0 * u)
}

/// Pairwise Mann-Whitney AUC with ties at one half.
pub fn oracle_auc(scores: &[f64], pos: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// For each positive, the precision among items scoring at least as high.
pub fn oracle_ap(scores: &[f64], pos: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut p = 0;
    for i in 0..scores.len() {
        if !pos[i] {
            continue;
        }
        p += 1;
        let above: Vec<usize> = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).collect();
        let tp = above.iter().filter(|&&j| pos[j]).count();
        total += tp as f64 / above.len() as f64;
    }
    total / p as f64
}
