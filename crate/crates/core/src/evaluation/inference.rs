use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{load_stream, Label, ManifestEntry};
use crate::error::{Error, Result};
use crate::head::ClassifyMode;
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    /// The clip was shorter than one window and is looped to fill it.
    pub padded: bool,
}

/// Window starts `k * step` for every window that fits inside `duration`.
/// A clip shorter than one window yields a single looped window at 0.
pub fn sliding_windows(duration: f64, window: f64, step: f64) -> Result<Vec<Window>> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    if !(window > 0.0 && step > 0.0) {
        return Err(Error::InvalidArgument("window and step must be positive".into()));
    }
    // Tolerance absorbs float error in values like (10.0 - 3.2) / 0.4.
    const EPS: f64 = 1e-9;
    if duration + EPS < window {
        return Ok(vec![Window { start: 0.0, padded: true }]);
    }
    let count = ((duration - window) / step + EPS).floor() as usize + 1;
    Ok((0..count).map(|k| Window { start: k as f64 * step, padded: false }).collect())
}

/// Softmax fake-class probability of the window-averaged logits.
pub fn video_score(window_logits: &[[f64; 2]]) -> Result<f64> {
    if window_logits.is_empty() {
        return Err(Error::InvalidArgument("no windows to score".into()));
    }
    let n = window_logits.len() as f64;
    let real = window_logits.iter().map(|l| l[0]).sum::<f64>() / n;
    let fake = window_logits.iter().map(|l| l[1]).sum::<f64>() / n;
    Ok(1.0 / (1.0 + (real - fake).exp()))
}

/// Per-video prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub clip_id: String,
    pub video_id: String,
    pub category: String,
    pub label: Label,
    pub windows: Vec<Window>,
    pub window_logits: Vec<[f64; 2]>,
    pub mean_logits: [f64; 2],
    pub score: f64,
    pub mode: String,
}

pub fn score_entry(model: &Model, entry: &ManifestEntry, mode: ClassifyMode) -> Result<EvalRecord> {
    let cfg: &RunConfig = &model.cfg;
    let stream = load_stream(entry, cfg)?;
    let windows = sliding_windows(stream.duration(&cfg.geometry), cfg.eval.window_seconds, cfg.eval.step_seconds)?;
    let mut logits = Vec::with_capacity(windows.len());
    for w in &windows {
        let (frames, spec) = stream.window(w.start, &cfg.geometry);
        logits.push(model.window_logits(&frames, &spec, mode)?);
    }
    let n = logits.len() as f64;
    let mean = [logits.iter().map(|l| l[0]).sum::<f64>() / n, logits.iter().map(|l| l[1]).sum::<f64>() / n];
    Ok(EvalRecord {
        clip_id: entry.clip_id.clone(),
        video_id: entry.video_id.clone(),
        category: entry.manipulation_category.clone(),
        label: entry.label_overall,
        windows,
        score: video_score(&logits)?,
        window_logits: logits,
        mean_logits: mean,
        mode: mode.tag().into(),
    })
}

/// Scores entries in parallel; output order follows `entries`.
pub fn score_entries(model: &Model, entries: &[&ManifestEntry], mode: ClassifyMode) -> Result<Vec<EvalRecord>> {
    entries.par_iter().map(|e| score_entry(model, e, mode)).collect()
}
