//! Pre-training and fine-tuning loops.

use std::f64::consts::PI;

use avcoh_grad::{AdamW, Gradients, Stage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointStage};
use crate::config::RunConfig;
use crate::data::{class_balanced_weights, load_clip, ClipSample, Label, ManifestEntry, WeightedSampler};
use crate::error::{Error, Result};
use crate::head::ClassifyMode;
use crate::model::Model;
use crate::nn::Graph;

const PRETRAIN_STREAM: u64 = 0x5052_4554;
const FINETUNE_STREAM: u64 = 0x4649_4E45;

/// Optimizer steps for a run over `n` samples.
pub fn step_budget(n: usize, batch: usize, epochs: usize, max_steps: usize) -> usize {
    let per_epoch = n.div_ceil(batch).max(1);
    let planned = (epochs * per_epoch).max(1);
    if max_steps > 0 {
        planned.min(max_steps)
    } else {
        planned
    }
}

/// Linear warmup over `warmup` steps, then cosine decay to zero at `total`.
pub fn warmup_cosine(step: usize, total: usize, warmup: usize, base: f64) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let t = ((step - warmup) as f64 / span as f64).min(1.0);
    base * 0.5 * (1.0 + (PI * t).cos())
}

/// Cosine annealing restarted every `cycle` steps.
pub fn cosine_restarts(step: usize, cycle: usize, base: f64) -> f64 {
    let cycle = cycle.max(1);
    let t = (step % cycle) as f64 / cycle as f64;
    base * 0.5 * (1.0 + (PI * t).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub step: usize,
    #[serde(rename = "L_rec_v")]
    pub rec_v: f64,
    #[serde(rename = "L_rec_a")]
    pub rec_a: f64,
    #[serde(rename = "L_cl")]
    pub cl: f64,
    #[serde(rename = "L_cross_v")]
    pub cross_v: f64,
    #[serde(rename = "L_cross_a")]
    pub cross_a: f64,
    #[serde(rename = "L_pt")]
    pub total: f64,
    pub lr: f64,
}

/// Pre-trains on authentic clips only.
pub fn pretrain(model: &mut Model, samples: &[ClipSample], mut on_step: impl FnMut(&PretrainRecord)) -> Result<Vec<PretrainRecord>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("pre-training needs at least one clip".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.label_overall != Label::Real) {
        return Err(Error::Validation(format!("pre-training uses authentic clips only; {} is labelled fake", s.clip_id)));
    }
    for s in samples {
        s.validate(&model.cfg.geometry)?;
    }
    let pc = model.cfg.pretrain.clone();
    let total = step_budget(samples.len(), pc.batch_size, pc.epochs, pc.max_steps);
    let warmup = ((total as f64) * pc.warmup_epochs as f64 / pc.epochs.max(1) as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(model.cfg.seed ^ PRETRAIN_STREAM);
    let mut opt = AdamW::new(&model.store, pc.weight_decay);
    let mut log = Vec::with_capacity(total);
    let mut order: Vec<usize> = Vec::new();
    for step in 0..total {
        if order.is_empty() {
            order = (0..samples.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let take = pc.batch_size.min(order.len());
        let idx: Vec<usize> = (0..take).filter_map(|_| order.pop()).collect();
        let batch: Vec<&ClipSample> = idx.iter().map(|&i| &samples[i]).collect();
        let plans = (0..batch.len()).map(|_| model.draw_plans(&mut rng)).collect::<Result<Vec<_>>>()?;
        let lr = warmup_cosine(step, total, warmup, pc.lr);
        let (grads, b) = {
            let mut g = Graph::new(&model.store);
            let (loss, b) = model.pretrain_loss(&mut g, &batch, &plans)?;
            (g.backward(loss), b)
        };
        opt.step(&mut model.store, &grads, |s| if s == Stage::FinetuneOnly { 0.0 } else { lr });
        let rec = PretrainRecord {
            step: step + 1,
            rec_v: b.rec_v,
            rec_a: b.rec_a,
            cl: b.cl,
            cross_v: b.cross_v,
            cross_a: b.cross_a,
            total: b.total,
            lr,
        };
        on_step(&rec);
        log.push(rec);
    }
    Ok(log)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub step: usize,
    pub loss: f64,
    /// Decision accuracy on this step's batch.
    pub batch_acc: f64,
    pub lr_pretrained: f64,
    pub lr_new: f64,
}

/// Gradients and loss of a set of samples, averaged. Samples run in
/// parallel; their gradients are summed in index order.
pub fn finetune_gradients(model: &Model, batch: &[&ClipSample]) -> Result<(Gradients, f64, usize)> {
    let per: Vec<Result<(Gradients, f64, bool)>> = batch
        .par_iter()
        .map(|s| {
            let mut g = Graph::new(&model.store);
            let (loss, logits) = model.sample_finetune_loss(&mut g, s)?;
            let d = g.value(logits.decision);
            let pred_fake = d.get(0, 1) > d.get(0, 0);
            let correct = pred_fake == (s.label_overall == Label::Fake);
            Ok((g.backward(loss), g.value(loss).item(), correct))
        })
        .collect();
    let mut grads = Gradients::default();
    let mut loss = 0.0;
    let mut correct = 0;
    for r in per {
        let (g, l, c) = r?;
        grads.accumulate(&g);
        loss += l;
        correct += c as usize;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((grads, loss / n, correct))
}

/// Checks that every level-weight vector lies on the simplex.
pub fn check_alpha_simplex(model: &Model) -> Result<()> {
    for agg in [&model.classifier.agg_v, &model.classifier.agg_a] {
        let a = agg.alpha_values(&model.store);
        let sum: f64 = a.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || a.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::NonFinite(format!("level weights left the simplex: {a:?}")));
        }
    }
    Ok(())
}

/// Fine-tunes with class-balanced sampling and two learning-rate groups.
pub fn finetune(model: &mut Model, samples: &[ClipSample], mut on_step: impl FnMut(&FinetuneRecord)) -> Result<Vec<FinetuneRecord>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("fine-tuning needs at least one clip".into()));
    }
    for s in samples {
        s.validate(&model.cfg.geometry)?;
    }
    let fc = model.cfg.finetune.clone();
    let labels: Vec<Label> = samples.iter().map(|s| s.label_overall).collect();
    let sampler = WeightedSampler::new(&class_balanced_weights(&labels)?)?;
    let per_epoch = samples.len().div_ceil(fc.batch_size).max(1);
    let total = step_budget(samples.len(), fc.batch_size, fc.epochs, fc.max_steps);
    let cycle = if fc.restart_epochs == 0 { total } else { fc.restart_epochs * per_epoch };
    let mut rng = ChaCha8Rng::seed_from_u64(model.cfg.seed ^ FINETUNE_STREAM);
    let mut opt = AdamW::new(&model.store, fc.weight_decay);
    let mut log = Vec::with_capacity(total);
    for step in 0..total {
        let batch: Vec<&ClipSample> = (0..fc.batch_size).map(|_| &samples[sampler.draw(&mut rng)]).collect();
        let lr_p = cosine_restarts(step, cycle, fc.lr_pretrained);
        let lr_n = cosine_restarts(step, cycle, fc.lr_new);
        let (grads, loss, correct) = finetune_gradients(model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("fine-tuning loss at step {}", step + 1)));
        }
        opt.step(&mut model.store, &grads, |s| match s {
            Stage::Shared => lr_p,
            Stage::FinetuneOnly => lr_n,
            Stage::PretrainOnly => 0.0,
        });
        check_alpha_simplex(model)?;
        let rec = FinetuneRecord { step: step + 1, loss, batch_acc: correct as f64 / batch.len() as f64, lr_pretrained: lr_p, lr_new: lr_n };
        on_step(&rec);
        log.push(rec);
    }
    Ok(log)
}

/// Decodes the first clip of every entry, in parallel, preserving order.
pub fn load_clips(entries: &[&ManifestEntry], cfg: &RunConfig) -> Result<Vec<ClipSample>> {
    entries.par_iter().map(|e| load_clip(e, cfg)).collect()
}

/// A model holding the parameters saved in `ckpt`.
pub fn model_from_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Model> {
    let mut model = Model::new(cfg)?;
    let stages: &[Stage] = match ckpt.meta.stage {
        CheckpointStage::Pretrained => &[Stage::Shared, Stage::PretrainOnly],
        CheckpointStage::Finetuned => &[Stage::Shared, Stage::FinetuneOnly],
    };
    ckpt.apply(&mut model.store, stages)?;
    Ok(model)
}

/// Builds a model from the pre-trained backbone in `pretrained` (or from
/// random initialization when `hcp_pretraining` is off) and fine-tunes it.
pub fn finetune_from_checkpoint(
    cfg: &RunConfig,
    pretrained: Option<&Checkpoint>,
    samples: &[ClipSample],
    on_step: impl FnMut(&FinetuneRecord),
) -> Result<(Model, Vec<FinetuneRecord>)> {
    let mut model = Model::new(cfg)?;
    if cfg.finetune.hcp_pretraining {
        let ck = pretrained.ok_or_else(|| {
            Error::Validation("no pre-trained checkpoint given; fine-tuning from random weights needs an explicit from-scratch override".into())
        })?;
        if ck.meta.stage != CheckpointStage::Pretrained {
            return Err(Error::Validation("expected a pre-trained checkpoint, got a fine-tuned one".into()));
        }
        ck.apply(&mut model.store, &[Stage::Shared])?;
    } else {
        log::warn!("pre-training disabled: fine-tuning a randomly initialized backbone");
    }
    let log = finetune(&mut model, samples, on_step)?;
    Ok((model, log))
}

/// Decision accuracy at a 0.5 fake-probability threshold.
pub fn accuracy(model: &Model, samples: &[ClipSample], mode: ClassifyMode) -> Result<f64> {
    let hits: Vec<Result<bool>> = samples
        .par_iter()
        .map(|s| {
            let l = model.window_logits(&s.frames, &s.spectrogram, mode)?;
            Ok((l[1] > l[0]) == (s.label_overall == Label::Fake))
        })
        .collect();
    let mut n = 0;
    for h in hits {
        n += h? as usize;
    }
    Ok(n as f64 / samples.len().max(1) as f64)
}
