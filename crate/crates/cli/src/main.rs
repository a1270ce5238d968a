use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avcoh_core::config::{RunConfig, ScalePreset};
use avcoh_core::data::{ClassSpec, Split};
use avcoh_core::evaluation::ProtocolKind;
use avcoh_core::pipeline::{self, EvaluateOptions, FixtureOptions};
use avcoh_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Audio-visual deepfake detection: coherence pre-training, fine-tuning and
/// evaluation.
///
/// Exit codes: 0 success, 1 I/O or decode failure, 2 validation or
/// configuration error (including undefined metrics without
/// --allow-partial), 3 non-finite loss.
#[derive(Parser)]
#[command(name = "avcoh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; keys not given fall back to the preset defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Print the fully materialized default config of a preset.
    Config {
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
    },
    /// Write a synthetic fixture manifest.
    SynthFixture {
        #[command(flatten)]
        common: Common,
        /// Fixture seed (independent of the config seed).
        #[arg(long, default_value_t = 0)]
        fixture_seed: u64,
        #[arg(long, default_value_t = 8)]
        clips: usize,
        /// Comma-separated kinds cycled over clips: real, audio-fake,
        /// visual-fake, both-fake.
        #[arg(long, default_value = "real")]
        classes: String,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
        /// Clip length in seconds (one model window by default).
        #[arg(long)]
        duration: Option<f64>,
        /// Also write frames and spectrograms as tensor files.
        #[arg(long)]
        materialize: bool,
    },
    /// Decode media (image directories, WAV) into tensor files.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Self-supervised pre-training on authentic clips.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Fine-tune the classifier.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Pre-trained checkpoint.
        #[arg(long, required_unless_present = "from_scratch")]
        pretrained: Option<PathBuf>,
        /// Train from random initialization (sets hcp_pretraining = false).
        #[arg(long, conflicts_with = "pretrained")]
        from_scratch: bool,
    },
    /// Run an evaluation protocol and write a report directory.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Fine-tuned checkpoint (evaluated as is) or pre-trained
        /// checkpoint (fine-tuned per seed first).
        #[arg(long)]
        checkpoint: PathBuf,
        /// intra, cross_dataset, leave_one_out or audio_missing.
        #[arg(long, default_value = "intra")]
        protocol: String,
        /// Restrict leave_one_out to one fake category.
        #[arg(long)]
        held_out: Option<String>,
        /// Comma-separated seeds; defaults to eval.seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Write ROC, PR and per-category SVG plots.
        #[arg(long)]
        plots: bool,
        /// Exit 0 even if some AP/AUC values are undefined.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Re-render report.md of an evaluation directory and print it.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn preset(p: Preset) -> ScalePreset {
    match p {
        Preset::Desk => ScalePreset::Desk,
        Preset::Paper => ScalePreset::Paper,
    }
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::preset(preset(c.preset)),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn done(out: &Path) {
    println!("wrote {}", out.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Config { preset: p } => print!("{}", RunConfig::preset(preset(p)).to_toml_string()),
        Command::SynthFixture { common, fixture_seed, clips, classes, split, duration, materialize } => {
            let cfg = load_config(&common)?;
            let opts = FixtureOptions {
                seed: fixture_seed,
                n_clips: clips,
                class_spec: ClassSpec::parse(&classes)?,
                split: match split {
                    SplitArg::Train => Split::Train,
                    SplitArg::Val => Split::Val,
                    SplitArg::Test => Split::Test,
                },
                duration,
                materialize,
                force: common.force,
            };
            let m = pipeline::cmd_synth_fixture(&cfg, &common.out, &opts)?;
            println!("{} clips, categories {:?}", m.len(), m.category_histogram());
            done(&common.out);
        }
        Command::Preprocess { common, manifest } => {
            let cfg = load_config(&common)?;
            let m = pipeline::cmd_preprocess(&cfg, &manifest, &common.out, common.force)?;
            println!("{} clips", m.len());
            done(&common.out);
        }
        Command::Pretrain { common, manifest } => {
            let cfg = load_config(&common)?;
            let o = pipeline::cmd_pretrain(&cfg, &manifest, &common.out, common.force)?;
            if let Some(last) = o.log.last() {
                println!("{} steps, final L_pt {:.6}", o.log.len(), last.total);
            }
            done(&o.checkpoint);
        }
        Command::Finetune { common, manifest, pretrained, from_scratch } => {
            let mut cfg = load_config(&common)?;
            if from_scratch {
                cfg.finetune.hcp_pretraining = false;
            }
            let o = pipeline::cmd_finetune(&cfg, &manifest, pretrained.as_deref(), &common.out, common.force)?;
            println!("{} steps, train accuracy {:.4}", o.log.len(), o.train_accuracy);
            done(&o.checkpoint);
        }
        Command::Evaluate { common, manifest, checkpoint, protocol, held_out, seeds, plots, allow_partial } => {
            let cfg = load_config(&common)?;
            let opts = EvaluateOptions {
                protocol: ProtocolKind::parse(&protocol)?,
                held_out_category: held_out,
                seeds,
                plots,
                allow_partial,
                force: common.force,
            };
            let report = pipeline::cmd_evaluate(&cfg, &manifest, &checkpoint, &common.out, &opts)?;
            print!("{}", avcoh_core::evaluation::report::render_markdown(&report));
            done(&common.out);
        }
        Command::Report { dir } => print!("{}", pipeline::cmd_report(&dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code: i32 = Error::exit_code(&e);
            ExitCode::from(code as u8)
        }
    }
}
