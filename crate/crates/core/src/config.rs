//! Run configuration.
//!
//! A config file is TOML. Only `scale_preset` is needed; every other key
//! falls back to the preset's default and the fully materialized config is
//! written back into each run directory. See `docs/config.md` for the schema.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalePreset {
    /// Full-size model and input geometry.
    Paper,
    /// Laptop-sized model and inputs used by tests and acceptance runs.
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    /// Frames per clip (`t_v`).
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Spectrogram time frames per clip (`t_a`).
    pub spec_frames: usize,
    pub mel_bins: usize,
    /// Video patch as (time, height, width).
    pub video_patch: [usize; 3],
    /// Audio patch as (time, frequency).
    pub audio_patch: [usize; 2],
    /// Temporal segments used by the contrastive objective.
    pub segments: usize,
    pub clip_seconds: f64,
}

impl Geometry {
    pub fn video_fps(&self) -> f64 {
        self.frames as f64 / self.clip_seconds
    }

    pub fn spec_rate(&self) -> f64 {
        self.spec_frames as f64 / self.clip_seconds
    }

    pub fn video_patch_dim(&self) -> usize {
        self.video_patch.iter().product::<usize>() * 3
    }

    pub fn audio_patch_dim(&self) -> usize {
        self.audio_patch.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// 1-based encoder layers whose outputs form the feature hierarchy.
    pub taps: Vec<usize>,
    pub mlp_ratio: usize,
    pub interaction_cross_heads: usize,
    pub interaction_block_heads: usize,
    pub decoder_dim: usize,
    pub decoder_heads: usize,
    pub cross_decoder_heads: usize,
    pub scorer_hidden: usize,
    pub main_head_hidden: [usize; 2],
    pub aux_head_hidden: [usize; 2],
    pub ln_eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskingConfig {
    pub video_ratio: f64,
    pub audio_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_cl: f64,
    pub lambda_cross: f64,
    pub temperature: f64,
    pub use_rec: bool,
    pub use_cl: bool,
    pub use_cross: bool,
    /// Down-weight intra-sample cross-segment negatives by temporal distance.
    pub soft_negatives: bool,
    /// Segment-level contrast; when off, each modality is pooled globally.
    pub temporal_segments: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps; 0 means run all epochs.
    pub max_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Adaptive,
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Learning rate for parameters carried over from pre-training.
    pub lr_pretrained: f64,
    /// Learning rate for aggregation and classifier parameters.
    pub lr_new: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Length of the first cosine cycle (warm restarts), in epochs.
    pub restart_epochs: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub aggregation: Aggregation,
    pub auxiliary_heads: bool,
    pub aux_weight: f64,
    /// Start from a pre-trained checkpoint. When false the backbone is
    /// randomly initialized.
    pub hcp_pretraining: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub window_seconds: f64,
    pub step_seconds: f64,
    pub threshold: f64,
    pub seeds: Vec<u64>,
    /// Fraction of video ids used for training in the intra-dataset split.
    pub intra_train_fraction: f64,
    pub split_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_fft: usize,
    pub log_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationConfig {
    pub spec_mean: f64,
    pub spec_std: f64,
    pub frame_mean: [f64; 3],
    pub frame_std: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scale_preset: ScalePreset,
    pub geometry: Geometry,
    pub model: ModelConfig,
    pub masking: MaskingConfig,
    pub loss: LossConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    pub audio: AudioConfig,
    pub normalization: NormalizationConfig,
}

impl RunConfig {
    pub fn preset(preset: ScalePreset) -> Self {
        match preset {
            ScalePreset::Paper => Self::paper(),
            ScalePreset::Desk => Self::desk(),
        }
    }

    pub fn paper() -> Self {
        Self {
            seed: 0,
            scale_preset: ScalePreset::Paper,
            geometry: Geometry {
                frames: 16,
                height: 224,
                width: 224,
                spec_frames: 1024,
                mel_bins: 128,
                video_patch: [2, 16, 16],
                audio_patch: [16, 16],
                segments: 8,
                clip_seconds: 3.2,
            },
            model: ModelConfig {
                dim: 768,
                layers: 12,
                heads: 12,
                taps: vec![3, 6, 9, 12],
                mlp_ratio: 4,
                interaction_cross_heads: 8,
                interaction_block_heads: 8,
                decoder_dim: 384,
                decoder_heads: 6,
                cross_decoder_heads: 12,
                scorer_hidden: 128,
                main_head_hidden: [512, 128],
                aux_head_hidden: [256, 64],
                ln_eps: 1e-6,
            },
            masking: MaskingConfig { video_ratio: 0.90, audio_ratio: 0.8125 },
            loss: LossConfig {
                lambda_cl: 0.01,
                lambda_cross: 1.0,
                temperature: 0.07,
                use_rec: true,
                use_cl: true,
                use_cross: true,
                soft_negatives: true,
                temporal_segments: true,
            },
            pretrain: PretrainConfig {
                lr: 1.5e-4,
                weight_decay: 0.05,
                epochs: 200,
                warmup_epochs: 20,
                batch_size: 112,
                max_steps: 0,
            },
            finetune: FinetuneConfig {
                lr_pretrained: 1e-5,
                lr_new: 1e-4,
                weight_decay: 0.05,
                epochs: 50,
                restart_epochs: 10,
                batch_size: 32,
                max_steps: 0,
                aggregation: Aggregation::Adaptive,
                auxiliary_heads: true,
                aux_weight: 1.0,
                hcp_pretraining: true,
            },
            eval: EvalConfig {
                window_seconds: 3.2,
                step_seconds: 0.4,
                threshold: 0.5,
                seeds: vec![0, 1, 2, 3, 4],
                intra_train_fraction: 0.7,
                split_seed: 0,
            },
            audio: AudioConfig { sample_rate: 16_000, window_ms: 25.0, hop_ms: 10.0, n_fft: 512, log_floor: 1e-6 },
            normalization: NormalizationConfig {
                spec_mean: 0.0,
                spec_std: 1.0,
                frame_mean: [0.5, 0.5, 0.5],
                frame_std: [0.25, 0.25, 0.25],
            },
        }
    }

    pub fn desk() -> Self {
        let mut c = Self::paper();
        c.scale_preset = ScalePreset::Desk;
        c.geometry.height = 64;
        c.geometry.width = 64;
        c.geometry.spec_frames = 256;
        c.geometry.mel_bins = 64;
        c.model = ModelConfig {
            dim: 64,
            layers: 4,
            heads: 4,
            taps: vec![1, 2, 3, 4],
            mlp_ratio: 4,
            interaction_cross_heads: 4,
            interaction_block_heads: 4,
            decoder_dim: 32,
            decoder_heads: 2,
            cross_decoder_heads: 4,
            scorer_hidden: 128,
            main_head_hidden: [512, 128],
            aux_head_hidden: [256, 64],
            ln_eps: 1e-6,
        };
        c.pretrain.lr = 1e-3;
        c.pretrain.epochs = 50;
        c.pretrain.warmup_epochs = 5;
        c.pretrain.batch_size = 4;
        c.finetune.lr_pretrained = 1e-4;
        c.finetune.lr_new = 1e-3;
        c.finetune.epochs = 50;
        c.finetune.restart_epochs = 50;
        c.finetune.batch_size = 8;
        c.eval.seeds = vec![0, 1, 2];
        c
    }

    /// Parses TOML, filling unspecified keys from the named preset
    /// (`desk` when absent).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let preset = match user.get("scale_preset") {
            None => ScalePreset::Desk,
            Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
        };
        let base = toml::Value::try_from(Self::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, user);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the materialized TOML.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let g = &self.geometry;
        let m = &self.model;
        if m.taps.is_empty() || m.taps.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("taps must be strictly increasing, got {:?}", m.taps));
        }
        if *m.taps.last().unwrap() != m.layers || m.taps[0] == 0 {
            return bad(format!("taps {:?} must lie in 1..={} and end at the last layer", m.taps, m.layers));
        }
        for (name, d, h) in [
            ("encoder", m.dim, m.heads),
            ("interaction cross", m.dim, m.interaction_cross_heads),
            ("interaction block", m.dim, m.interaction_block_heads),
            ("decoder", m.decoder_dim, m.decoder_heads),
            ("cross decoder", m.dim, m.cross_decoder_heads),
        ] {
            if h == 0 || d % h != 0 {
                return bad(format!("{name}: dim {d} not divisible by {h} heads"));
            }
        }
        for (name, r) in [("video", self.masking.video_ratio), ("audio", self.masking.audio_ratio)] {
            if !(r > 0.0 && r < 1.0) {
                return bad(format!("{name} masking ratio must be in (0, 1), got {r}"));
            }
        }
        if g.segments == 0 {
            return bad("segments must be positive".into());
        }
        let l = &self.loss;
        if !(l.temperature > 0.0) || l.lambda_cl < 0.0 || l.lambda_cross < 0.0 {
            return bad("temperature must be positive and loss weights non-negative".into());
        }
        if self.pretrain.batch_size == 0 || self.finetune.batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if !(self.eval.step_seconds > 0.0 && self.eval.window_seconds > 0.0) {
            return bad("window and step must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.eval.intra_train_fraction) {
            return bad("intra_train_fraction must be in [0, 1]".into());
        }
        Ok(())
    }
}

fn merge(base: toml::Value, user: toml::Value) -> toml::Value {
    match (base, user) {
        (toml::Value::Table(mut b), toml::Value::Table(u)) => {
            for (k, v) in u {
                let merged = match b.remove(&k) {
                    Some(bv) => merge(bv, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            toml::Value::Table(b)
        }
        (_, u) => u,
    }
}
