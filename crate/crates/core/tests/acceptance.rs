//! Acceptance run: every criterion prints one PASS/FAIL line; the process
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use avcoh_core::config::{Aggregation, RunConfig};
use avcoh_core::data::fixture::{clip_seed, generate_stream};
use avcoh_core::data::{synth_fixture, ClassSpec, ClipSample, FixtureKind, Split};
use avcoh_core::evaluation::{auc, average_precision, metrics, sliding_windows, ProtocolKind};
use avcoh_core::head::{aggregate_level, mean_pool, ClassifyMode};
use avcoh_core::model::Model;
use avcoh_core::nn::Graph;
use avcoh_core::pipeline::{self, EvaluateOptions, FixtureOptions};
use avcoh_core::pretrain::soft_negative_weight;
use avcoh_core::tokenizer::{audio_patches, random_mask, tube_mask, video_patches, TokenGrid};
use avcoh_core::train;
use avcoh_grad::Matrix;
use common::production::*;
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(t: &Instant, secs: f64) -> Result<(), String> {
    let e = t.elapsed().as_secs_f64();
    ensure(e < secs, format!("took {e:.1} s, budget {secs} s"))
}

fn token_arithmetic() -> Check {
    let t = Instant::now();
    let g = RunConfig::paper().geometry;
    let (v, a) = (TokenGrid::video(&g).map_err(|e| e.to_string())?, TokenGrid::audio(&g).map_err(|e| e.to_string())?);
    ensure(v.len() == 1568 && a.len() == 512, format!("N_v={} N_a={}", v.len(), a.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let vp = tube_mask(&v, 0.9, &mut rng).unwrap();
    let ap = random_mask(&a, 0.8125, &mut rng).unwrap();
    ensure(vp.visible_idx.len() == 160, format!("{} visible video tokens", vp.visible_idx.len()))?;
    ensure(ap.masked_idx.len() == 416 && ap.visible_idx.len() == 96, "audio mask counts")?;
    within(&t, 1.0)?;
    Ok("N_v=1568 N_a=512, 160 visible video, 416/96 audio".into())
}

fn tube_property() -> Check {
    let t = Instant::now();
    let g = RunConfig::paper().geometry;
    let v = TokenGrid::video(&g).unwrap();
    let cells = v.cells();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..1000 {
        let plan = tube_mask(&v, 0.9, &mut rng).unwrap();
        let mut masked = vec![false; v.len()];
        for &i in &plan.masked_idx {
            masked[i] = true;
        }
        for i in 0..v.len() {
            ensure(masked[i] == masked[i % cells], format!("plan {k}: token {i} differs from its slice-0 cell"))?;
        }
    }
    within(&t, 10.0)?;
    Ok(format!("1000 plans, {} slices x {cells} cells", v.temporal()))
}

fn soft_negative_weights() -> Check {
    let t = Instant::now();
    ensure(soft_negative_weight(0, 1, 2, 5) == 1.0 && soft_negative_weight(1, 1, 3, 3) == 1.0, "unit weights")?;
    let w1 = soft_negative_weight(0, 0, 3, 4);
    ensure((w1 - 0.462117).abs() < 1e-6, format!("w(|dt|=1) = {w1}"))?;
    for d in 1..16 {
        ensure(soft_negative_weight(0, 0, 0, d + 1) >= soft_negative_weight(0, 0, 0, d), format!("not monotone at {d}"))?;
    }
    within(&t, 1.0)?;
    Ok(format!("w(|dt|=1) = {w1:.7}"))
}

fn loss_oracles() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (layers, k, p) = (rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=8));
        let target = random_rows(&mut rng, k, p);
        let preds: Vec<_> = (0..layers).map(|_| random_rows(&mut rng, k, p)).collect();
        worst = worst.max((production_reconstruction(&preds, &target) - oracle_reconstruction(&preds, &target)).abs());
        worst = worst.max((production_cross(&preds[0], &target) - oracle_cross(&preds[0], &target)).abs());
    }
    let mut n = 0;
    while n < 20 {
        let (b, segs, dim) = (rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(2..=8));
        let batch = random_batch(&mut rng, b, segs, dim);
        if !usable(&batch) {
            continue;
        }
        let cfg = loss_cfg(true, true);
        let got = production_contrastive(&batch, segs, &cfg, 1.0);
        worst = worst.max((got - oracle_contrastive(&batch, segs, cfg.temperature, true)).abs());
        n += 1;
    }
    ensure(worst < 1e-10, format!("max deviation {worst:e}"))?;
    within(&t, 30.0)?;
    Ok(format!("3 x 20 instances, max deviation {worst:.1e}"))
}

fn gradient_checks() -> Check {
    let t = Instant::now();
    let pre = gradcheck::pretraining();
    let fine = gradcheck::finetuning();
    for (stage, worst, groups) in [
        ("pre-training", &pre, &["tokenizer", "encoder", "interaction", "decoder", "cross_decoder"][..]),
        ("fine-tuning", &fine, &["tokenizer", "encoder", "interaction", "scorer", "alpha", "head"][..]),
    ] {
        for g in groups {
            ensure(worst.contains_key(g), format!("{stage}: group {g} not covered"))?;
        }
        for (g, e) in worst.iter() {
            ensure(*e < gradcheck::TOL, format!("{stage}: {g} relative error {e:e}"))?;
        }
    }
    within(&t, 300.0)?;
    let max = pre.values().chain(fine.values()).fold(0.0f64, |a, b| a.max(*b));
    Ok(format!("{} + {} groups, max relative error {max:.1e}", pre.len(), fine.len()))
}

fn degenerate_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let single = vec![OracleSample {
        video: random_rows(&mut rng, 4, 6),
        video_segments: vec![0; 4],
        audio: random_rows(&mut rng, 3, 6),
        audio_segments: vec![0; 3],
    }];
    let cl = production_contrastive(&single, 1, &loss_cfg(true, true), 1.0);
    ensure(cl.abs() < 1e-12, format!("L_cl(B=1,T=1) = {cl:e}"))?;
    let target = random_rows(&mut rng, 5, 7);
    ensure(production_reconstruction(&[target.clone(), target.clone()], &target) == 0.0, "L_rec of a perfect reconstruction")?;
    ensure(production_cross(&target, &target) == 0.0, "L_cross of decoder equal to target")?;

    let cfg = tiny_config();
    let mut model = Model::new(&cfg).unwrap();
    let last = model.classifier.agg_a.scorers[1].layers.last().unwrap().clone();
    model.store.value_mut(last.weight).data_mut().fill(0.0);
    model.store.value_mut(last.bias).data_mut().fill(1.3);
    let mut g = Graph::new(&model.store);
    let x = g.constant(Matrix::from_rows(&random_rows(&mut rng, 13, cfg.model.dim)));
    let pooled = aggregate_level(&mut g, x, &model.classifier.agg_a.scorers[1]).unwrap();
    let mean = mean_pool(&mut g, x).unwrap();
    let dev = g.value(pooled).data().iter().zip(g.value(mean).data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure(dev < 1e-9, format!("constant scorer deviates from mean by {dev:e}"))?;

    let mut cfg = tiny_config();
    cfg.finetune.max_steps = 100;
    cfg.finetune.batch_size = 2;
    let mut model = Model::new(&cfg).unwrap();
    let (_, clips) = synth_fixture(61, 4, &ClassSpec::parse("real,visual-fake").unwrap(), &cfg.geometry).unwrap();
    let log = train::finetune(&mut model, &clips, |_| {}).map_err(|e| e.to_string())?;
    ensure(log.len() == 100, format!("{} steps", log.len()))?;
    for agg in [&model.classifier.agg_v, &model.classifier.agg_a] {
        let alpha = agg.alpha_values(&model.store);
        ensure((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12 && alpha.iter().all(|&a| a > 0.0), format!("alpha {alpha:?}"))?;
    }
    Ok(format!("all zero / exact; scorer-vs-mean {dev:.1e}; alpha on simplex after 100 steps"))
}

fn stop_gradient() -> Check {
    let cfg = tiny_config();
    let model = Model::new(&cfg).unwrap();
    let (_, clips) = synth_fixture(70, 1, &ClassSpec::all(FixtureKind::Real), &cfg.geometry).unwrap();
    let s = &clips[0];
    let mut g = Graph::new(&model.store);
    let vp = video_patches(&s.frames, &cfg.geometry, &cfg.normalization).unwrap();
    let ap = audio_patches(&s.spectrogram, &cfg.geometry).unwrap();
    let vt = model.tokenizer.embed_video(&mut g, &vp).unwrap();
    let at = model.tokenizer.embed_audio(&mut g, &ap).unwrap();
    let (v_hg, a_hg) = model.backbone.global_semantic_targets(&mut g, vt.tokens, at.tokens).unwrap();
    let (sv, sa) = (g.sum(v_hg), g.sum(a_hg));
    let total = g.add(sv, sa);
    let norm = g.backward(total).norm();
    ensure(norm == 0.0, format!("gradient norm through targets {norm:e}"))?;
    let v = *model.backbone.enc_v.encode(&mut g, vt.tokens, None).unwrap().last().unwrap();
    let a = *model.backbone.enc_a.encode(&mut g, at.tokens, None).unwrap().last().unwrap();
    ensure(g.value(v) == g.value(v_hg) && g.value(a) == g.value(a_hg), "targets differ from the unmasked top level")?;
    Ok("gradient norm 0, targets equal unmasked top level".into())
}

fn smoothed(xs: &[f64], w: usize) -> Vec<f64> {
    xs.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

fn desk_training(trained: &mut Option<Model>) -> Check {
    let t = Instant::now();
    let mut cfg = RunConfig::desk();
    cfg.pretrain.max_steps = 50;
    cfg.finetune.max_steps = 200;
    let (_, real) = synth_fixture(1, 8, &ClassSpec::all(FixtureKind::Real), &cfg.geometry).unwrap();
    let mut model = Model::new(&cfg).unwrap();
    let log = train::pretrain(&mut model, &real, |_| {}).map_err(|e| e.to_string())?;
    ensure(log.len() == 50, format!("{} pre-training steps", log.len()))?;
    let totals: Vec<f64> = log.iter().map(|r| r.total).collect();
    let sm = smoothed(&totals, 10);
    let (first, last) = (sm[0], *sm.last().unwrap());
    ensure(last < first, format!("smoothed L_pt {first:.3} -> {last:.3}"))?;
    let pt_secs = t.elapsed().as_secs_f64();

    let (_, ft) = synth_fixture(2, 32, &ClassSpec::parse("real,audio-fake").unwrap(), &cfg.geometry).unwrap();
    let flog = train::finetune(&mut model, &ft, |_| {}).map_err(|e| e.to_string())?;
    let acc = train::accuracy(&model, &ft, ClassifyMode::Full).map_err(|e| e.to_string())?;
    ensure(flog.len() <= 200, format!("{} fine-tuning steps", flog.len()))?;
    ensure(acc >= 0.95, format!("train ACC {acc:.3} after {} steps", flog.len()))?;
    within(&t, 900.0)?;
    *trained = Some(model);
    Ok(format!(
        "smoothed L_pt {first:.2} -> {last:.2} ({pt_secs:.0} s); train ACC {acc:.3} after {} steps; {:.0} s total",
        flog.len(),
        t.elapsed().as_secs_f64()
    ))
}

fn window(seed: u64, kind: FixtureKind, cfg: &RunConfig) -> ClipSample {
    let g = &cfg.geometry;
    let (stream, _) = generate_stream(seed, kind, g.clip_seconds, g).unwrap();
    let (frames, spectrogram) = stream.window(0.0, g);
    let (o, a, v) = kind.labels();
    ClipSample {
        frames,
        spectrogram,
        label_overall: o,
        label_audio: a,
        label_visual: v,
        clip_id: String::new(),
        video_id: String::new(),
        source_tag: "fixture".into(),
    }
}

fn cross_modal_sensitivity(trained: &Option<Model>) -> Check {
    let model = trained.as_ref().ok_or("no desk-trained model (training criterion failed)")?;
    let (mut flips, mut correct) = (0, 0);
    for i in 0..50 {
        let seed = clip_seed(900, i);
        let decide = |kind| {
            let s = window(seed, kind, &model.cfg);
            let l = model.window_logits(&s.frames, &s.spectrogram, ClassifyMode::Full).unwrap();
            l[1] > l[0]
        };
        let (matched, shuffled) = (decide(FixtureKind::Real), decide(FixtureKind::AudioFake));
        flips += (matched != shuffled) as usize;
        correct += (!matched && shuffled) as usize;
    }
    let detail = format!("{flips}/50 pairs flip ({correct} to the correct labels)");
    ensure(flips * 100 > 80 * 50, detail.clone())?;
    Ok(detail)
}

fn metric_oracles() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let (s, y): (Vec<f64>, Vec<bool>) = loop {
            let s: Vec<f64> = (0..200).map(|_| if k % 2 == 0 { rng.gen_range(0..25) as f64 / 25.0 } else { rng.gen() }).collect();
            let y: Vec<bool> = (0..200).map(|_| rng.gen_bool(0.3)).collect();
            if y.iter().any(|&b| b) && y.iter().any(|&b| !b) {
                break (s, y);
            }
        };
        worst = worst.max((auc(&s, &y).unwrap() - oracle_auc(&s, &y)).abs());
        worst = worst.max((average_precision(&s, &y).unwrap() - oracle_ap(&s, &y)).abs());
    }
    ensure(worst < 1e-9, format!("max deviation {worst:e}"))?;
    let m = metrics(&[0.9, 0.8, 0.3, 0.2], &[true, false, true, false], 0.5).unwrap();
    let (a, p) = (m.auc.unwrap(), m.ap.unwrap());
    ensure((a - 0.75).abs() < 1e-12 && (p - 0.8333).abs() < 5e-5, format!("worked example AUC {a} AP {p}"))?;
    within(&t, 30.0)?;
    Ok(format!("100 fixtures, max deviation {worst:.1e}; worked example AUC {a:.4} AP {p:.4}"))
}

fn window_counts() -> Check {
    let c = |d| sliding_windows(d, 3.2, 0.4).unwrap();
    let (a, b, p) = (c(10.0), c(3.2), c(2.0));
    ensure(a.len() == 18, format!("10.0 s -> {}", a.len()))?;
    ensure(b.len() == 1 && !b[0].padded, "3.2 s")?;
    ensure(p.len() == 1 && p[0].padded, "2.0 s")?;
    Ok("18 / 1 / 1 padded".into())
}

/// A row of an ablation table: config edits plus the protocol it is scored under.
struct Row {
    name: &'static str,
    edit: fn(&mut RunConfig),
    protocol: ProtocolKind,
}

fn ablation_rows() -> Vec<Row> {
    use ProtocolKind::{AudioMissing, Intra};
    vec![
        Row { name: "full model", edit: |_| {}, protocol: Intra },
        Row { name: "w/o pre-training", edit: |c| c.finetune.hcp_pretraining = false, protocol: Intra },
        Row { name: "w/o L_rec", edit: |c| c.loss.use_rec = false, protocol: Intra },
        Row { name: "w/o L_cl", edit: |c| c.loss.use_cl = false, protocol: Intra },
        Row { name: "w/o L_cross", edit: |c| c.loss.use_cross = false, protocol: Intra },
        Row {
            name: "mean pooling, no auxiliary heads",
            edit: |c| {
                c.finetune.aggregation = Aggregation::Mean;
                c.finetune.auxiliary_heads = false;
            },
            protocol: Intra,
        },
        Row { name: "adaptive, no auxiliary heads", edit: |c| c.finetune.auxiliary_heads = false, protocol: Intra },
        Row { name: "mean pooling, auxiliary heads", edit: |c| c.finetune.aggregation = Aggregation::Mean, protocol: Intra },
        Row { name: "visual classifier, audio missing", edit: |_| {}, protocol: AudioMissing },
        Row { name: "w/o temporal segments", edit: |c| c.loss.temporal_segments = false, protocol: Intra },
        Row { name: "w/o soft negatives", edit: |c| c.loss.soft_negatives = false, protocol: Intra },
    ]
}

fn quick_config() -> RunConfig {
    let mut c = tiny_config();
    c.pretrain.max_steps = 3;
    c.finetune.max_steps = 3;
    c.eval.seeds = vec![0];
    c
}

fn run_rows(root: &Path) -> Result<Vec<(String, String, String)>, String> {
    let base = quick_config();
    let fx = |dir: &str, spec: &str, n| {
        let opts = FixtureOptions {
            seed: 12,
            n_clips: n,
            class_spec: ClassSpec::parse(spec).unwrap(),
            split: Split::Train,
            duration: None,
            materialize: false,
            force: false,
        };
        pipeline::cmd_synth_fixture(&base, &root.join(dir), &opts).map_err(|e| e.to_string())
    };
    fx("real", "real", 4)?;
    fx("mixed", "real,audio-fake,visual-fake,both-fake", 40)?;
    let (real, mixed) = (root.join("real/manifest.jsonl"), root.join("mixed/manifest.jsonl"));
    let mut out = Vec::new();
    for (i, row) in ablation_rows().iter().enumerate() {
        let mut cfg = base.clone();
        (row.edit)(&mut cfg);
        let dir = root.join(format!("row{i}"));
        let pretrained = if cfg.finetune.hcp_pretraining {
            Some(pipeline::cmd_pretrain(&cfg, &real, &dir.join("pt"), false).map_err(|e| format!("{}: {e}", row.name))?.checkpoint)
        } else {
            None
        };
        let ft = pipeline::cmd_finetune(&cfg, &mixed, pretrained.as_deref(), &dir.join("ft"), false)
            .map_err(|e| format!("{}: {e}", row.name))?;
        let opts = EvaluateOptions {
            protocol: row.protocol,
            held_out_category: None,
            seeds: vec![],
            plots: false,
            allow_partial: false,
            force: false,
        };
        let report = pipeline::cmd_evaluate(&cfg, &mixed, &ft.checkpoint, &dir.join("eval"), &opts)
            .map_err(|e| format!("{}: {e}", row.name))?;
        ensure(dir.join("eval/metrics.json").exists() && dir.join("eval/report.md").exists(), format!("{}: report files", row.name))?;
        out.push((report.protocol, report.mode, report.tag));
    }
    Ok(out)
}

fn ablations() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tags = run_rows(dir.path())?;
    let distinct: BTreeSet<_> = tags.iter().collect();
    ensure(distinct.len() == tags.len(), format!("duplicate tags among {tags:?}"))?;
    Ok(format!("{} rows, {} distinct (protocol, mode, tag)", tags.len(), distinct.len()))
}

fn pipeline_once(root: &Path) -> Result<(), String> {
    let cfg = quick_config();
    let e = |e: avcoh_core::Error| e.to_string();
    let mut opts = FixtureOptions {
        seed: 5,
        n_clips: 4,
        class_spec: ClassSpec::all(FixtureKind::Real),
        split: Split::Train,
        duration: None,
        materialize: false,
        force: false,
    };
    pipeline::cmd_synth_fixture(&cfg, &root.join("real"), &opts).map_err(e)?;
    opts.n_clips = 24;
    opts.class_spec = ClassSpec::parse("real,audio-fake,both-fake").unwrap();
    pipeline::cmd_synth_fixture(&cfg, &root.join("mixed"), &opts).map_err(e)?;
    let pt = pipeline::cmd_pretrain(&cfg, &root.join("real/manifest.jsonl"), &root.join("pt"), false).map_err(e)?;
    let mixed = root.join("mixed/manifest.jsonl");
    let ft = pipeline::cmd_finetune(&cfg, &mixed, Some(&pt.checkpoint), &root.join("ft"), false).map_err(e)?;
    let opts = EvaluateOptions {
        protocol: ProtocolKind::Intra,
        held_out_category: None,
        seeds: vec![0, 1],
        plots: true,
        allow_partial: false,
        force: false,
    };
    pipeline::cmd_evaluate(&cfg, &mixed, &ft.checkpoint, &root.join("eval"), &opts).map_err(e)?;
    pipeline::cmd_evaluate(&cfg, &mixed, &pt.checkpoint, &root.join("eval_pt"), &opts).map_err(e)?;
    Ok(())
}

fn determinism() -> Check {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    pipeline_once(a.path())?;
    pipeline_once(b.path())?;
    let files = [
        "pt/pretrained.ckpt",
        "pt/train_log.jsonl",
        "ft/finetuned.ckpt",
        "ft/finetune_log.jsonl",
        "eval/metrics.json",
        "eval/metrics.csv",
        "eval/records.jsonl",
        "eval/report.md",
        "eval/roc.svg",
        "eval/pr.svg",
        "eval/categories.svg",
        "eval_pt/metrics.json",
        "eval_pt/records.jsonl",
    ];
    for f in files {
        let x = std::fs::read(a.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read(b.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(x == y, format!("{f} differs between runs"))?;
    }
    Ok(format!("{} artifacts byte-identical", files.len()))
}

fn main() {
    // Positional arguments select criteria by name substring, as cargo test filters do.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut trained: Option<Model> = None;
    let (mut failed, mut ran) = (0, 0);
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Check| {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            return;
        }
        ran += 1;
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("PASS {id:>2} {name}: {d} [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {d} [{secs:.1} s]");
            }
        }
    };
    report(1, "token arithmetic", &mut token_arithmetic);
    report(2, "tube property", &mut tube_property);
    report(3, "soft-negative weight", &mut soft_negative_weights);
    report(4, "loss oracles", &mut loss_oracles);
    report(5, "gradient checks", &mut gradient_checks);
    report(6, "degenerate identities", &mut degenerate_identities);
    report(7, "stop-gradient contract", &mut stop_gradient);
    report(8, "desk training smoke", &mut || desk_training(&mut trained));
    report(9, "cross-modal sensitivity", &mut || cross_modal_sensitivity(&trained));
    report(10, "metric oracles", &mut metric_oracles);
    report(11, "sliding-window count", &mut window_counts);
    report(12, "ablation expressibility", &mut ablations);
    report(13, "determinism", &mut determinism);
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
