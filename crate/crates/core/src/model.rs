//! Full model: tokenizer, backbone, pre-training decoders and classifier
//! sharing one parameter store.

use avcoh_grad::{Matrix, ParamStore, Stage, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::Backbone;
use crate::config::RunConfig;
use crate::data::{ClipSample, Tensor};
use crate::error::Result;
use crate::head::{finetune_loss, Classifier, ClassifyMode, Logits, Targets};
use crate::nn::{Graph, Init};
use crate::pretrain::{
    combine, contrastive_loss, cross_modal_loss, reconstruction_loss, ContrastiveInput, CrossModalDecoder, HierDecoder,
    LossBreakdown, LossTerms,
};
use crate::tokenizer::{audio_patches, random_mask, tube_mask, video_patches, MaskPlan, TokenGrid, Tokenizer};

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: RunConfig,
    pub store: ParamStore,
    pub tokenizer: Tokenizer,
    pub backbone: Backbone,
    pub dec_v: HierDecoder,
    pub dec_a: HierDecoder,
    /// Reconstructs video semantics from audio.
    pub cross_a2v: CrossModalDecoder,
    /// Reconstructs audio semantics from video.
    pub cross_v2a: CrossModalDecoder,
    pub classifier: Classifier,
}

/// Masking draws for one pre-training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlans {
    pub video: MaskPlan,
    pub audio: MaskPlan,
}

impl Model {
    /// Randomly initialized model; parameters are created in a fixed order
    /// from an RNG seeded with `cfg.seed`.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let g = &cfg.geometry;
        let m = &cfg.model;
        let (vg, ag) = (TokenGrid::video(g)?, TokenGrid::audio(g)?);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut init = Init::new(&mut store, &mut rng, Stage::Shared);
        let tokenizer = Tokenizer::new(&mut init, g, m.dim)?;
        let backbone = Backbone::new(&mut init, m);
        init.stage = Stage::PretrainOnly;
        let dec_v = HierDecoder::new(&mut init, "dec_v", m, &vg, g.video_patch_dim());
        let dec_a = HierDecoder::new(&mut init, "dec_a", m, &ag, g.audio_patch_dim());
        let cross_a2v = CrossModalDecoder::new(&mut init, "cross_a2v", m, &ag, &vg);
        let cross_v2a = CrossModalDecoder::new(&mut init, "cross_v2a", m, &vg, &ag);
        init.stage = Stage::FinetuneOnly;
        let classifier = Classifier::new(&mut init, m);
        Ok(Self { cfg: cfg.clone(), store, tokenizer, backbone, dec_v, dec_a, cross_a2v, cross_v2a, classifier })
    }

    pub fn draw_plans(&self, rng: &mut ChaCha8Rng) -> Result<SamplePlans> {
        Ok(SamplePlans {
            video: tube_mask(&self.tokenizer.video.grid, self.cfg.masking.video_ratio, rng)?,
            audio: random_mask(&self.tokenizer.audio.grid, self.cfg.masking.audio_ratio, rng)?,
        })
    }

    /// Pre-training loss on a batch with the given mask plans.
    pub fn pretrain_loss(
        &self,
        g: &mut Graph,
        batch: &[&ClipSample],
        plans: &[SamplePlans],
    ) -> Result<(Var, LossBreakdown)> {
        self.pretrain_loss_with(g, batch, plans, None)
    }

    /// Gradient-stopped cross-modal targets `(v_Hg, a_Hg)` of each sample.
    pub fn semantic_targets(&self, batch: &[&ClipSample]) -> Result<Vec<(Matrix, Matrix)>> {
        batch
            .iter()
            .map(|s| {
                let mut g = Graph::new(&self.store);
                let vp = video_patches(&s.frames, &self.cfg.geometry, &self.cfg.normalization)?;
                let ap = audio_patches(&s.spectrogram, &self.cfg.geometry)?;
                let vt = self.tokenizer.embed_video(&mut g, &vp)?;
                let at = self.tokenizer.embed_audio(&mut g, &ap)?;
                let (v, a) = self.backbone.global_semantic_targets(&mut g, vt.tokens, at.tokens)?;
                Ok((g.value(v).clone(), g.value(a).clone()))
            })
            .collect()
    }

    /// As [`Model::pretrain_loss`], with the cross-modal targets supplied
    /// instead of recomputed. Finite-difference checks use this to hold
    /// the targets fixed, which is what the stop-gradient means.
    pub fn pretrain_loss_with(
        &self,
        g: &mut Graph,
        batch: &[&ClipSample],
        plans: &[SamplePlans],
        targets: Option<&[(Matrix, Matrix)]>,
    ) -> Result<(Var, LossBreakdown)> {
        let cfg = &self.cfg;
        let lc = &cfg.loss;
        let mut rec_v = Vec::new();
        let mut rec_a = Vec::new();
        let mut cross_v = Vec::new();
        let mut cross_a = Vec::new();
        let mut contrast = Vec::new();
        for (k, (s, p)) in batch.iter().zip(plans).enumerate() {
            let vp = video_patches(&s.frames, &cfg.geometry, &cfg.normalization)?;
            let ap = audio_patches(&s.spectrogram, &cfg.geometry)?;
            let vt = self.tokenizer.embed_video(g, &vp)?;
            let at = self.tokenizer.embed_audio(g, &ap)?;
            let f = self.backbone.features(g, vt.tokens, at.tokens, Some(&p.video), Some(&p.audio))?;
            if lc.use_rec {
                let preds = self.dec_v.forward(g, f.v_inter, &f.v_levels, &p.video)?;
                let target = gather(&vp, &p.video.masked_idx);
                rec_v.push(reconstruction_loss(g, &preds, &target)?);
                let preds = self.dec_a.forward(g, f.a_inter, &f.a_levels, &p.audio)?;
                let target = gather(&ap, &p.audio.masked_idx);
                rec_a.push(reconstruction_loss(g, &preds, &target)?);
            }
            if lc.use_cross {
                let (v_hg, a_hg) = match targets {
                    Some(t) => (g.constant(t[k].0.clone()), g.constant(t[k].1.clone())),
                    None => self.backbone.global_semantic_targets(g, vt.tokens, at.tokens)?,
                };
                let v_hat = self.cross_a2v.forward(g, f.a_inter, &p.audio)?;
                cross_v.push(cross_modal_loss(g, v_hat, v_hg)?);
                let a_hat = self.cross_v2a.forward(g, f.v_inter, &p.video)?;
                cross_a.push(cross_modal_loss(g, a_hat, a_hg)?);
            }
            if lc.use_cl {
                contrast.push(ContrastiveInput {
                    video: f.v_top(),
                    video_segments: p.video.visible_segments(&vt.segment_index),
                    audio: f.a_top(),
                    audio_segments: p.audio.visible_segments(&at.segment_index),
                });
            }
        }
        let terms = LossTerms {
            rec_v: batch_mean(g, &rec_v),
            rec_a: batch_mean(g, &rec_a),
            cl: if lc.use_cl { Some(contrastive_loss(g, &contrast, cfg.geometry.segments, lc)?) } else { None },
            cross_v: batch_mean(g, &cross_v),
            cross_a: batch_mean(g, &cross_a),
        };
        combine(g, &terms, lc)
    }

    /// Logits for one clip window given as raw frames and spectrogram.
    pub fn classify(&self, g: &mut Graph, frames: &Tensor, spectrogram: &Tensor, mode: ClassifyMode) -> Result<Logits> {
        let cfg = &self.cfg;
        let agg = cfg.finetune.aggregation;
        let vp = video_patches(frames, &cfg.geometry, &cfg.normalization)?;
        let vt = self.tokenizer.embed_video(g, &vp)?;
        match mode {
            ClassifyMode::VisualOnly => {
                let levels = self.backbone.enc_v.encode(g, vt.tokens, None)?;
                self.classifier.forward_visual(g, &levels, agg)
            }
            ClassifyMode::Full => {
                let ap = audio_patches(spectrogram, &cfg.geometry)?;
                let at = self.tokenizer.embed_audio(g, &ap)?;
                let f = self.backbone.features(g, vt.tokens, at.tokens, None, None)?;
                self.classifier.forward(g, &f, agg)
            }
        }
    }

    /// Fine-tuning loss of one sample.
    pub fn sample_finetune_loss(&self, g: &mut Graph, s: &ClipSample) -> Result<(Var, Logits)> {
        let logits = self.classify(g, &s.frames, &s.spectrogram, ClassifyMode::Full)?;
        let t = Targets { overall: Some(s.label_overall), audio: s.label_audio, visual: s.label_visual };
        Ok((finetune_loss(g, &logits, &t, &self.cfg.finetune)?, logits))
    }

    /// Decision logits (real, fake) for one window.
    pub fn window_logits(&self, frames: &Tensor, spectrogram: &Tensor, mode: ClassifyMode) -> Result<[f64; 2]> {
        let mut g = Graph::new(&self.store);
        let l = self.classify(&mut g, frames, spectrogram, mode)?;
        let v = g.value(l.decision);
        Ok([v.get(0, 0), v.get(0, 1)])
    }
}

fn gather(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}

fn batch_mean(g: &mut Graph, xs: &[Var]) -> Option<Var> {
    match xs.len() {
        0 => None,
        1 => Some(xs[0]),
        _ => {
            let s = g.concat_rows(xs);
            Some(g.mean(s))
        }
    }
}
