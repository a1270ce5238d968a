//! Run-directory commands behind the CLI.
//!
//! Each command writes into a fresh output directory: the fully
//! materialized `config.toml`, a `run_manifest.json` (command, config hash,
//! seed, code version, input digests) and the command's own artifacts.
//! A non-empty output directory is refused unless `force` is set.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, CheckpointMeta, CheckpointStage};
use crate::config::RunConfig;
use crate::data::{
    load_manifest, load_stream, synth_fixture, ClassSpec, Label, Manifest, ManifestEntry, Split,
};
use crate::error::{Error, Result};
use crate::evaluation::report::{load_report, render_markdown, write_report, REPORT_MD};
use crate::evaluation::{run_protocol, ProtocolKind, ProtocolSpec, Report};
use crate::model::Model;
use crate::train::{accuracy, finetune_from_checkpoint, load_clips, pretrain, FinetuneRecord, PretrainRecord};
use crate::CODE_VERSION;
use avcoh_grad::Stage;

pub const CONFIG_FILE: &str = "config.toml";
pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const PRETRAINED_CKPT: &str = "pretrained.ckpt";
pub const FINETUNED_CKPT: &str = "finetuned.ckpt";
pub const PRETRAIN_LOG: &str = "train_log.jsonl";
pub const FINETUNE_LOG: &str = "finetune_log.jsonl";

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    code_version: &'a str,
    /// Input name to SHA-256 of its bytes.
    inputs: BTreeMap<String, String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Creates `dir`, refusing a non-empty one unless `force`, in which case
/// its contents are removed first.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir).map_err(io_err(dir))?.next().is_some();
        if non_empty {
            if !force {
                return Err(Error::Validation(format!(
                    "output directory {} is not empty; pass --force to overwrite",
                    dir.display()
                )));
            }
            std::fs::remove_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_run_files(dir: &Path, command: &str, cfg: &RunConfig, inputs: &[(&str, &Path)]) -> Result<()> {
    let cfg_path = dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(io_err(&cfg_path))?;
    let mut digests = BTreeMap::new();
    for (name, p) in inputs {
        digests.insert(name.to_string(), sha256_file(p)?);
    }
    let m = RunManifest { command, config_hash: cfg.hash(), seed: cfg.seed, code_version: CODE_VERSION, inputs: digests };
    let path = dir.join(RUN_MANIFEST);
    let mut text = serde_json::to_string_pretty(&m).map_err(|e| Error::Validation(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(io_err(&path))
}

struct JsonLines {
    path: PathBuf,
    file: std::io::BufWriter<std::fs::File>,
}

impl JsonLines {
    fn create(path: PathBuf) -> Result<Self> {
        let file = std::fs::File::create(&path).map_err(io_err(&path))?;
        Ok(Self { file: std::io::BufWriter::new(file), path })
    }

    fn push<T: Serialize>(&mut self, v: &T) -> Result<()> {
        let line = serde_json::to_string(v).map_err(|e| Error::Validation(e.to_string()))?;
        writeln!(self.file, "{line}").map_err(io_err(&self.path))
    }

    fn finish(mut self) -> Result<()> {
        self.file.flush().map_err(io_err(&self.path))
    }
}

pub struct FixtureOptions {
    pub seed: u64,
    pub n_clips: usize,
    pub class_spec: ClassSpec,
    pub split: Split,
    /// Clip length in seconds; one model window when `None`.
    pub duration: Option<f64>,
    pub materialize: bool,
    pub force: bool,
}

/// Writes a fixture manifest. With `materialize`, each clip's frames and
/// spectrogram are also written as tensors under `clips/` and the manifest
/// points at them instead of at the fixture seed.
pub fn cmd_synth_fixture(cfg: &RunConfig, out: &Path, opts: &FixtureOptions) -> Result<Manifest> {
    let (manifest, _) = synth_fixture(opts.seed, opts.n_clips, &opts.class_spec, &cfg.geometry)?;
    prepare_out_dir(out, opts.force)?;
    let mut entries = manifest.entries;
    for e in &mut entries {
        e.split = opts.split;
        e.duration = opts.duration;
    }
    if opts.materialize {
        let clips = out.join("clips");
        std::fs::create_dir_all(&clips).map_err(io_err(&clips))?;
        for e in &mut entries {
            let stream = load_stream(e, cfg)?;
            let frames = PathBuf::from("clips").join(format!("{}.frames.avc", e.clip_id));
            let spec = PathBuf::from("clips").join(format!("{}.spec.avc", e.clip_id));
            stream.frames.save(&out.join(&frames))?;
            stream.spectrogram.save(&out.join(&spec))?;
            e.fixture_seed = None;
            e.frames_path = Some(frames);
            e.audio_path = Some(spec);
        }
    }
    let manifest = Manifest::new(entries)?;
    manifest.save(&out.join(MANIFEST_FILE))?;
    write_run_files(out, "synth-fixture", cfg, &[])?;
    Ok(manifest)
}

fn relative_to(entry_path: &Path, base: &Path) -> PathBuf {
    entry_path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| entry_path.to_path_buf())
}

/// Decodes every entry's media once (image directories, WAV to log-Mel)
/// and stores frames and spectrogram as tensors with a new manifest.
pub fn cmd_preprocess(cfg: &RunConfig, manifest_path: &Path, out: &Path, force: bool) -> Result<Manifest> {
    let manifest = load_manifest(manifest_path)?;
    prepare_out_dir(out, force)?;
    let clips = out.join("clips");
    std::fs::create_dir_all(&clips).map_err(io_err(&clips))?;
    let mut entries = Vec::with_capacity(manifest.len());
    for e in &manifest.entries {
        let stream = load_stream(e, cfg)?;
        let frames = clips.join(format!("{}.frames.avc", e.clip_id));
        let spec = clips.join(format!("{}.spec.avc", e.clip_id));
        stream.frames.save(&frames)?;
        stream.spectrogram.save(&spec)?;
        entries.push(ManifestEntry {
            frames_path: Some(relative_to(&frames, out)),
            audio_path: Some(relative_to(&spec, out)),
            fixture_seed: None,
            duration: None,
            ..e.clone()
        });
    }
    let m = Manifest::new(entries)?;
    m.save(&out.join(MANIFEST_FILE))?;
    write_run_files(out, "preprocess", cfg, &[("manifest", manifest_path)])?;
    Ok(m)
}

/// Training entries of a manifest: the `train` split, or every entry when
/// no split is marked `train`.
fn training_entries(m: &Manifest) -> Vec<&ManifestEntry> {
    let train = m.split(Split::Train);
    if train.is_empty() {
        m.entries.iter().collect()
    } else {
        train
    }
}

fn meta(cfg: &RunConfig, stage: CheckpointStage, steps: usize, pretrained_sha256: Option<String>) -> CheckpointMeta {
    CheckpointMeta {
        stage,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        steps,
        loss: Some(cfg.loss.clone()),
        pretrained_sha256,
        aggregation: (stage == CheckpointStage::Finetuned).then_some(cfg.finetune.aggregation),
        auxiliary_heads: (stage == CheckpointStage::Finetuned).then_some(cfg.finetune.auxiliary_heads),
        code_version: CODE_VERSION.into(),
    }
}

pub struct PretrainOutcome {
    pub checkpoint: PathBuf,
    pub log: Vec<PretrainRecord>,
}

/// Pre-trains on the manifest's training entries, all of which must be
/// authentic.
pub fn cmd_pretrain(cfg: &RunConfig, manifest_path: &Path, out: &Path, force: bool) -> Result<PretrainOutcome> {
    let manifest = load_manifest(manifest_path)?;
    let entries = training_entries(&manifest);
    let fakes: Vec<&str> = entries.iter().filter(|e| e.label_overall != Label::Real).map(|e| e.clip_id.as_str()).collect();
    if !fakes.is_empty() {
        return Err(Error::Validation(format!(
            "pre-training uses authentic clips only; {} fake entries, e.g. {}",
            fakes.len(),
            fakes[0]
        )));
    }
    let samples = load_clips(&entries, cfg)?;
    prepare_out_dir(out, force)?;
    write_run_files(out, "pretrain", cfg, &[("manifest", manifest_path)])?;
    let mut model = Model::new(cfg)?;
    let mut log_file = JsonLines::create(out.join(PRETRAIN_LOG))?;
    let mut write_err = None;
    let log = pretrain(&mut model, &samples, |r| {
        log::info!("step {} L_pt {:.5} lr {:.3e}", r.step, r.total, r.lr);
        if let Err(e) = log_file.push(r) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    log_file.finish()?;
    let ckpt = Checkpoint::from_store(
        &model.store,
        &[Stage::Shared, Stage::PretrainOnly],
        meta(cfg, CheckpointStage::Pretrained, log.len(), None),
    );
    let path = out.join(PRETRAINED_CKPT);
    ckpt.save(&path)?;
    Ok(PretrainOutcome { checkpoint: path, log })
}

pub struct FinetuneOutcome {
    pub checkpoint: PathBuf,
    pub log: Vec<FinetuneRecord>,
    pub train_accuracy: f64,
}

/// Fine-tunes from a pre-trained checkpoint, or from random initialization
/// when `pretrained` is `None` and `hcp_pretraining` is off.
pub fn cmd_finetune(
    cfg: &RunConfig,
    manifest_path: &Path,
    pretrained: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<FinetuneOutcome> {
    let manifest = load_manifest(manifest_path)?;
    let ckpt = pretrained.map(Checkpoint::load).transpose()?;
    if ckpt.is_some() && !cfg.finetune.hcp_pretraining {
        return Err(Error::Validation("a pre-trained checkpoint was given but hcp_pretraining is off".into()));
    }
    let samples = load_clips(&training_entries(&manifest), cfg)?;
    prepare_out_dir(out, force)?;
    let mut inputs: Vec<(&str, &Path)> = vec![("manifest", manifest_path)];
    if let Some(p) = pretrained {
        inputs.push(("pretrained", p));
    }
    write_run_files(out, "finetune", cfg, &inputs)?;
    let mut log_file = JsonLines::create(out.join(FINETUNE_LOG))?;
    let mut write_err = None;
    let (model, log) = finetune_from_checkpoint(cfg, ckpt.as_ref(), &samples, |r| {
        log::info!("step {} loss {:.5} batch acc {:.3}", r.step, r.loss, r.batch_acc);
        if let Err(e) = log_file.push(r) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    log_file.finish()?;
    let train_accuracy = accuracy(&model, &samples, crate::head::ClassifyMode::Full)?;
    let ck = Checkpoint::from_store(
        &model.store,
        &[Stage::Shared, Stage::FinetuneOnly],
        meta(cfg, CheckpointStage::Finetuned, log.len(), ckpt.as_ref().map(Checkpoint::sha256)),
    );
    let path = out.join(FINETUNED_CKPT);
    ck.save(&path)?;
    Ok(FinetuneOutcome { checkpoint: path, log, train_accuracy })
}

pub struct EvaluateOptions {
    pub protocol: ProtocolKind,
    pub held_out_category: Option<String>,
    /// Falls back to `eval.seeds` from the config when empty.
    pub seeds: Vec<u64>,
    pub plots: bool,
    pub allow_partial: bool,
    pub force: bool,
}

/// Runs a protocol and writes its report. Returns an error after writing
/// the report if any metric is undefined, unless `allow_partial`.
pub fn cmd_evaluate(cfg: &RunConfig, manifest_path: &Path, checkpoint: &Path, out: &Path, opts: &EvaluateOptions) -> Result<Report> {
    let manifest = load_manifest(manifest_path)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let seeds = if opts.seeds.is_empty() { cfg.eval.seeds.clone() } else { opts.seeds.clone() };
    let spec = ProtocolSpec { kind: opts.protocol, held_out_category: opts.held_out_category.clone(), seeds };
    let output = run_protocol(&spec, cfg, &manifest, &ckpt)?;
    prepare_out_dir(out, opts.force)?;
    write_run_files(out, "evaluate", cfg, &[("manifest", manifest_path), ("checkpoint", checkpoint)])?;
    write_report(out, &output, opts.plots)?;
    if output.report.has_undefined() && !opts.allow_partial {
        return Err(Error::Validation(format!(
            "some runs have undefined AP/AUC (single-class test set); report written to {}; pass --allow-partial to accept",
            out.display()
        )));
    }
    Ok(output.report)
}

/// Re-renders `report.md` of an evaluation directory and returns it.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let report = load_report(dir)?;
    let md = render_markdown(&report);
    let path = dir.join(REPORT_MD);
    std::fs::write(&path, &md).map_err(io_err(&path))?;
    Ok(md)
}
