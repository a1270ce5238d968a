use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::inference::{score_entries, EvalRecord};
use super::metrics::{metrics, Metrics};
use crate::checkpoint::{Checkpoint, CheckpointStage};
use crate::config::{Aggregation, RunConfig};
use crate::data::{Label, Manifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::head::ClassifyMode;
use crate::train::{finetune_from_checkpoint, load_clips};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Video-disjoint train/test split of one manifest.
    Intra,
    /// Train on the `train` split, test on the `test` split.
    CrossDataset,
    /// One fine-tune per fake category, testing on that category alone.
    LeaveOneOut,
    /// Intra split, scored with the visual-only head.
    AudioMissing,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Intra => "intra",
            ProtocolKind::CrossDataset => "cross_dataset",
            ProtocolKind::LeaveOneOut => "leave_one_out",
            ProtocolKind::AudioMissing => "audio_missing",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "intra" => ProtocolKind::Intra,
            "cross_dataset" | "cross-dataset" => ProtocolKind::CrossDataset,
            "leave_one_out" | "leave-one-out" => ProtocolKind::LeaveOneOut,
            "audio_missing" | "audio-missing" => ProtocolKind::AudioMissing,
            other => return Err(Error::InvalidArgument(format!("unknown protocol {other:?}"))),
        })
    }

    pub fn mode(self) -> ClassifyMode {
        match self {
            ProtocolKind::AudioMissing => ClassifyMode::VisualOnly,
            _ => ClassifyMode::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    pub held_out_category: Option<String>,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    /// Held-out category, or `all`.
    pub subset: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub subset: String,
    pub runs: usize,
    pub acc: Stat,
    pub ap: Stat,
    pub auc: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub protocol: String,
    pub mode: String,
    /// Names the pre-training and fine-tuning ablation settings.
    pub tag: String,
    pub config_hash: String,
    pub checkpoint_stage: CheckpointStage,
    pub checkpoint_sha256: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
}

impl Report {
    pub fn has_undefined(&self) -> bool {
        self.runs.iter().any(|r| !r.metrics.is_complete())
    }
}

pub struct ProtocolOutput {
    pub report: Report,
    /// `(seed, subset, records)` for every evaluation run.
    pub records: Vec<(u64, String, Vec<EvalRecord>)>,
}

/// Short label for the ablation toggles in `cfg`.
pub fn ablation_tag(cfg: &RunConfig) -> String {
    let l = &cfg.loss;
    let f = &cfg.finetune;
    let mut losses: Vec<&str> = Vec::new();
    if l.use_rec {
        losses.push("rec");
    }
    if l.use_cl {
        losses.push("cl");
    }
    if l.use_cross {
        losses.push("cross");
    }
    let losses = if losses.is_empty() { "none".to_string() } else { losses.join("+") };
    format!(
        "pt[{}{},{},{}]-ft[{},{}]",
        if f.hcp_pretraining { "" } else { "scratch:" },
        losses,
        if l.temporal_segments { "segments" } else { "global" },
        if l.soft_negatives { "soft" } else { "hard" },
        match f.aggregation {
            Aggregation::Adaptive => "adaptive",
            Aggregation::Mean => "mean",
        },
        if f.auxiliary_heads { "aux" } else { "noaux" },
    )
}

/// Video-disjoint split: a `fraction` of the distinct video ids, chosen
/// with `seed`, goes to training.
pub fn split_by_video<'a>(entries: &[&'a ManifestEntry], fraction: f64, seed: u64) -> (Vec<&'a ManifestEntry>, Vec<&'a ManifestEntry>) {
    let mut ids: Vec<&str> = entries.iter().map(|e| e.video_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fraction * ids.len() as f64).round() as usize;
    let train: BTreeSet<&str> = ids[..n_train].iter().copied().collect();
    entries.iter().partition(|e| train.contains(e.video_id.as_str()))
}

fn stat(values: &[Option<f64>]) -> Stat {
    if values.is_empty() || values.iter().any(|v| v.is_none()) {
        return Stat { mean: None, std: None };
    }
    let xs: Vec<f64> = values.iter().map(|v| v.unwrap()).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    Stat { mean: Some(mean), std: Some(std) }
}

fn summarize(subset: &str, rows: &[&Metrics]) -> SummaryRow {
    SummaryRow {
        subset: subset.to_string(),
        runs: rows.len(),
        acc: stat(&rows.iter().map(|m| Some(m.acc)).collect::<Vec<_>>()),
        ap: stat(&rows.iter().map(|m| m.ap).collect::<Vec<_>>()),
        auc: stat(&rows.iter().map(|m| m.auc).collect::<Vec<_>>()),
    }
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<Option<f64>> = xs.collect();
    if v.is_empty() || v.iter().any(|x| x.is_none()) {
        return None;
    }
    Some(v.iter().map(|x| x.unwrap()).sum::<f64>() / v.len() as f64)
}

fn evaluate(model: &crate::model::Model, test: &[&ManifestEntry], mode: ClassifyMode, threshold: f64) -> Result<(Metrics, Vec<EvalRecord>)> {
    if test.is_empty() {
        return Err(Error::Validation("evaluation split is empty".into()));
    }
    let records = score_entries(model, test, mode)?;
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.label == Label::Fake).collect();
    Ok((metrics(&scores, &labels, threshold)?, records))
}

/// Train/test entry sets for one protocol, one per subset.
fn plan_subsets<'a>(spec: &ProtocolSpec, cfg: &RunConfig, manifest: &'a Manifest) -> Result<Vec<(String, Vec<&'a ManifestEntry>, Vec<&'a ManifestEntry>)>> {
    let all: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    if all.is_empty() {
        return Err(Error::Validation("manifest has no entries".into()));
    }
    let ev = &cfg.eval;
    Ok(match spec.kind {
        ProtocolKind::Intra | ProtocolKind::AudioMissing => {
            let (train, test) = split_by_video(&all, ev.intra_train_fraction, ev.split_seed);
            vec![("all".into(), train, test)]
        }
        ProtocolKind::CrossDataset => {
            let train = manifest.split(Split::Train);
            let test = manifest.split(Split::Test);
            if test.is_empty() {
                return Err(Error::Validation("cross-dataset protocol needs entries in the test split".into()));
            }
            vec![("all".into(), train, test)]
        }
        ProtocolKind::LeaveOneOut => {
            let cats: BTreeSet<&str> =
                all.iter().filter(|e| e.label_overall == Label::Fake).map(|e| e.manipulation_category.as_str()).collect();
            let chosen: Vec<&str> = match &spec.held_out_category {
                Some(c) => {
                    if !cats.contains(c.as_str()) {
                        return Err(Error::Validation(format!("category {c:?} does not occur among fake entries (have {cats:?})")));
                    }
                    vec![c.as_str()]
                }
                None => cats.into_iter().collect(),
            };
            if chosen.is_empty() {
                return Err(Error::Validation("leave-one-out needs fake entries".into()));
            }
            let reals: Vec<&ManifestEntry> = all.iter().copied().filter(|e| e.label_overall == Label::Real).collect();
            let (real_train, real_test) = split_by_video(&reals, ev.intra_train_fraction, ev.split_seed);
            chosen
                .into_iter()
                .map(|c| {
                    let mut train = real_train.clone();
                    train.extend(all.iter().filter(|e| e.label_overall == Label::Fake && e.manipulation_category != c));
                    let mut test = real_test.clone();
                    test.extend(all.iter().filter(|e| e.label_overall == Label::Fake && e.manipulation_category == c));
                    (c.to_string(), train, test)
                })
                .collect()
        }
    })
}

/// Runs a protocol. A pre-trained checkpoint is fine-tuned once per seed
/// and subset on the protocol's training entries; a fine-tuned checkpoint
/// is evaluated as is (every seed then yields the same row).
pub fn run_protocol(spec: &ProtocolSpec, cfg: &RunConfig, manifest: &Manifest, ckpt: &Checkpoint) -> Result<ProtocolOutput> {
    if spec.seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    if spec.kind == ProtocolKind::LeaveOneOut && ckpt.meta.stage != CheckpointStage::Pretrained {
        return Err(Error::Validation("leave-one-out fine-tunes per category and needs a pre-trained checkpoint".into()));
    }
    let subsets = plan_subsets(spec, cfg, manifest)?;
    let mode = spec.kind.mode();
    let mut runs = Vec::new();
    let mut records = Vec::new();
    for &seed in &spec.seeds {
        let mut c = cfg.clone();
        c.seed = seed;
        for (subset, train, test) in &subsets {
            let model = match ckpt.meta.stage {
                CheckpointStage::Finetuned => crate::train::model_from_checkpoint(&c, ckpt)?,
                CheckpointStage::Pretrained => {
                    if train.is_empty() {
                        return Err(Error::Validation(format!("subset {subset}: no training entries")));
                    }
                    let samples = load_clips(train, &c)?;
                    log::info!("seed {seed}, subset {subset}: fine-tuning on {} clips", samples.len());
                    finetune_from_checkpoint(&c, Some(ckpt), &samples, |_| {})?.0
                }
            };
            let (m, recs) = evaluate(&model, test, mode, c.eval.threshold)?;
            runs.push(RunRow { seed, subset: subset.clone(), metrics: m });
            records.push((seed, subset.clone(), recs));
        }
    }
    let mut summary = Vec::new();
    for (subset, _, _) in &subsets {
        let rows: Vec<&Metrics> = runs.iter().filter(|r| &r.subset == subset).map(|r| &r.metrics).collect();
        summary.push(summarize(subset, &rows));
    }
    if spec.kind == ProtocolKind::LeaveOneOut {
        let per_seed: Vec<Metrics> = spec
            .seeds
            .iter()
            .map(|&s| {
                let rs: Vec<&Metrics> = runs.iter().filter(|r| r.seed == s).map(|r| &r.metrics).collect();
                Metrics {
                    acc: rs.iter().map(|m| m.acc).sum::<f64>() / rs.len() as f64,
                    ap: mean_opt(rs.iter().map(|m| m.ap)),
                    auc: mean_opt(rs.iter().map(|m| m.auc)),
                    n: rs.iter().map(|m| m.n).sum(),
                    positives: rs.iter().map(|m| m.positives).sum(),
                }
            })
            .collect();
        summary.push(summarize("AVG", &per_seed.iter().collect::<Vec<_>>()));
    }
    let report = Report {
        protocol: spec.kind.name().into(),
        mode: mode.tag().into(),
        tag: ablation_tag(cfg),
        config_hash: cfg.hash(),
        checkpoint_stage: ckpt.meta.stage,
        checkpoint_sha256: ckpt.sha256(),
        seeds: spec.seeds.clone(),
        runs,
        summary,
    };
    Ok(ProtocolOutput { report, records })
}
