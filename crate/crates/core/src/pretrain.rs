//! Self-supervised objectives: hierarchical masked reconstruction,
//! segment-level audio-visual contrast, and cross-modal reconstruction of
//! global semantic features.

use avcoh_grad::{Matrix, Var};

use crate::config::{LossConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{Block, CrossAttention, Graph, Init, Linear};
use crate::tokenizer::{sincos_embedding, MaskPlan, TokenGrid};

/// Places `visible` rows (in `plan.visible_idx` order) and copies of a
/// `1 x d` `fill` row into full token order.
pub fn pad_to_full(g: &mut Graph, visible: Var, fill: Var, plan: &MaskPlan) -> Var {
    let n_vis = plan.visible_idx.len();
    let n_mask = plan.masked_idx.len();
    let stacked = if n_mask == 0 {
        visible
    } else {
        let fills = g.gather_rows(fill, &vec![0; n_mask]);
        g.concat_rows(&[visible, fills])
    };
    let mut order = vec![0; plan.len()];
    for (k, &i) in plan.visible_idx.iter().enumerate() {
        order[i] = k;
    }
    for (k, &i) in plan.masked_idx.iter().enumerate() {
        order[i] = n_vis + k;
    }
    g.gather_rows(stacked, &order)
}

/// One decoder layer: cross-attention into a slice of the encoder
/// hierarchy, a transformer block, and its own reconstruction head.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub memory_proj: Linear,
    pub cross: CrossAttention,
    pub block: Block,
    pub head: Linear,
}

/// Per-modality hierarchical decoder. Layer `k` (1-based) attends to the
/// concatenation of encoder levels `1..=H-k+1`.
#[derive(Clone, Debug)]
pub struct HierDecoder {
    pub entry: Linear,
    pub mask_token: avcoh_grad::ParamId,
    pub pos: Matrix,
    pub layers: Vec<DecoderLayer>,
}

impl HierDecoder {
    pub fn new(init: &mut Init, name: &str, m: &ModelConfig, grid: &TokenGrid, patch_dim: usize) -> Self {
        let d = m.decoder_dim;
        let entry = Linear::new(init, &format!("{name}.entry"), m.dim, d);
        let mask_token = init.normal_ish(&format!("{name}.mask_token"), 1, d, 0.02);
        let layers = (0..m.taps.len())
            .map(|k| DecoderLayer {
                memory_proj: Linear::new(init, &format!("{name}.layer{k}.memory"), m.dim, d),
                cross: CrossAttention::new(init, &format!("{name}.layer{k}.cross"), d, m.decoder_heads, m.ln_eps),
                block: Block::new(init, &format!("{name}.layer{k}.block"), d, m.decoder_heads, m.mlp_ratio, m.ln_eps),
                head: Linear::new(init, &format!("{name}.layer{k}.head"), d, patch_dim),
            })
            .collect();
        Self { entry, mask_token, pos: sincos_embedding(grid, d), layers }
    }

    /// Per-layer predictions for the masked tokens, each `|masked| x patch_dim`.
    pub fn forward(&self, g: &mut Graph, inter: Var, levels: &[Var], plan: &MaskPlan) -> Result<Vec<Var>> {
        if levels.len() != self.layers.len() {
            return Err(Error::Shape(format!("{} hierarchy levels for {} decoder layers", levels.len(), self.layers.len())));
        }
        if plan.masked_idx.is_empty() {
            return Err(Error::InvalidArgument("reconstruction needs at least one masked token".into()));
        }
        let x = self.entry.forward(g, inter);
        let mask = g.p(self.mask_token);
        let x = pad_to_full(g, x, mask, plan);
        let pos = g.constant(self.pos.clone());
        let mut x = g.add(x, pos);
        let h = levels.len();
        let mut preds = Vec::with_capacity(h);
        for (k, layer) in self.layers.iter().enumerate() {
            let ctx = &levels[..h - k];
            let mem = if ctx.len() == 1 { ctx[0] } else { g.concat_rows(ctx) };
            let mem = layer.memory_proj.forward(g, mem);
            x = layer.cross.forward(g, x, mem);
            x = layer.block.forward(g, x);
            let masked = g.gather_rows(x, &plan.masked_idx);
            preds.push(layer.head.forward(g, masked));
        }
        Ok(preds)
    }
}

/// `(1/N_d) sum_l mean((pred_l - target)^2)`.
pub fn reconstruction_loss(g: &mut Graph, preds: &[Var], target: &Matrix) -> Result<Var> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no decoder predictions".into()));
    }
    let t = g.constant(target.clone());
    let mut terms = Vec::with_capacity(preds.len());
    for &p in preds {
        if g.shape(p) != target.shape() {
            return Err(Error::Shape(format!("prediction {:?} vs target {:?}", g.shape(p), target.shape())));
        }
        let d = g.sub(p, t);
        let sq = g.mul(d, d);
        terms.push(g.mean(sq));
    }
    let stacked = g.concat_rows(&terms);
    Ok(g.mean(stacked))
}

/// Decodes the counterpart modality's global semantic features from one
/// modality's interaction features.
#[derive(Clone, Debug)]
pub struct CrossModalDecoder {
    pub mask_token: avcoh_grad::ParamId,
    pub source_pos: Matrix,
    pub target_pos: Matrix,
    /// `N_target x N_source`, mixes token positions.
    pub token_proj: avcoh_grad::ParamId,
    pub block: Block,
}

impl CrossModalDecoder {
    pub fn new(init: &mut Init, name: &str, m: &ModelConfig, source: &TokenGrid, target: &TokenGrid) -> Self {
        let (ns, nt) = (source.len(), target.len());
        Self {
            mask_token: init.normal_ish(&format!("{name}.mask_token"), 1, m.dim, 0.02),
            source_pos: sincos_embedding(source, m.dim),
            target_pos: sincos_embedding(target, m.dim),
            token_proj: init.xavier(&format!("{name}.token_proj"), nt, ns),
            block: Block::new(init, &format!("{name}.block"), m.dim, m.cross_decoder_heads, m.mlp_ratio, m.ln_eps),
        }
    }

    pub fn target_len(&self) -> usize {
        self.target_pos.rows()
    }

    /// `source_inter` holds the visible source tokens in `plan` order.
    pub fn forward(&self, g: &mut Graph, source_inter: Var, plan: &MaskPlan) -> Result<Var> {
        if plan.len() != self.source_pos.rows() {
            return Err(Error::Shape(format!("plan covers {} tokens, source grid has {}", plan.len(), self.source_pos.rows())));
        }
        let mask = g.p(self.mask_token);
        let x = pad_to_full(g, source_inter, mask, plan);
        let sp = g.constant(self.source_pos.clone());
        let x = g.add(x, sp);
        let w = g.p(self.token_proj);
        let y = g.matmul(w, x);
        let tp = g.constant(self.target_pos.clone());
        let y = g.add(y, tp);
        Ok(self.block.forward(g, y))
    }
}

/// Mean squared error against a gradient-stopped target.
pub fn cross_modal_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    if g.requires_grad(target) {
        return Err(Error::InvalidArgument("cross-modal target must be gradient-stopped".into()));
    }
    if g.shape(pred) != g.shape(target) {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", g.shape(pred), g.shape(target))));
    }
    let d = g.sub(pred, target);
    let sq = g.mul(d, d);
    Ok(g.mean(sq))
}

/// Weight of the negative pair `(sample i, segment t)` / `(sample j, segment t')`.
pub fn soft_negative_weight(i: usize, j: usize, t: usize, t2: usize) -> f64 {
    if i == j && t != t2 {
        let d = (t as f64 - t2 as f64).abs();
        1.0 - 2.0 / (1.0 + d.exp())
    } else {
        1.0
    }
}

/// One sample's top-level features for the contrastive objective.
pub struct ContrastiveInput {
    /// Visible video features, `n_v x C`.
    pub video: Var,
    /// Segment id of every visible video row.
    pub video_segments: Vec<usize>,
    pub audio: Var,
    pub audio_segments: Vec<usize>,
}

fn segment_means(g: &mut Graph, x: Var, segs: &[usize], segments: usize) -> (Var, Vec<bool>) {
    let n = g.shape(x).0;
    let mut counts = vec![0usize; segments];
    for &s in segs {
        counts[s] += 1;
    }
    let mut avg = Matrix::zeros(segments, n);
    for (r, &s) in segs.iter().enumerate() {
        avg.set(s, r, 1.0 / counts[s] as f64);
    }
    let a = g.constant(avg);
    (g.matmul(a, x), counts.iter().map(|&c| c > 0).collect())
}

/// Symmetric segment-level contrastive loss, both directions summed.
///
/// A segment `(i, t)` takes part when both modalities have at least one
/// visible token in it. With `U` such segments each direction is
/// normalized by `1 / (2U)`. With `temporal_segments` off every sample is a
/// single segment; with `soft_negatives` off every negative weighs 1.
pub fn contrastive_loss(g: &mut Graph, batch: &[ContrastiveInput], segments: usize, cfg: &LossConfig) -> Result<Var> {
    let segments = if cfg.temporal_segments { segments } else { 1 };
    let mut vs = Vec::new();
    let mut as_ = Vec::new();
    let mut ids = Vec::new();
    for (i, s) in batch.iter().enumerate() {
        let vseg: Vec<usize> = if cfg.temporal_segments { s.video_segments.clone() } else { vec![0; s.video_segments.len()] };
        let aseg: Vec<usize> = if cfg.temporal_segments { s.audio_segments.clone() } else { vec![0; s.audio_segments.len()] };
        if vseg.iter().chain(&aseg).any(|&t| t >= segments) {
            return Err(Error::InvalidArgument(format!("segment id out of range 0..{segments}")));
        }
        let (vm, vok) = segment_means(g, s.video, &vseg, segments);
        let (am, aok) = segment_means(g, s.audio, &aseg, segments);
        let usable: Vec<usize> = (0..segments).filter(|&t| vok[t] && aok[t]).collect();
        if usable.is_empty() {
            continue;
        }
        vs.push(g.gather_rows(vm, &usable));
        as_.push(g.gather_rows(am, &usable));
        ids.extend(usable.iter().map(|&t| (i, t)));
    }
    let u = ids.len();
    if u == 0 {
        return Err(Error::InvalidArgument("no segment has visible tokens in both modalities".into()));
    }
    let v = if vs.len() == 1 { vs[0] } else { g.concat_rows(&vs) };
    let a = if as_.len() == 1 { as_[0] } else { g.concat_rows(&as_) };
    let v = g.normalize_rows(v);
    let a = g.normalize_rows(a);
    let sim = g.matmul_nt(v, a);
    let logits = g.scale(sim, 1.0 / cfg.temperature);

    let mut log_w = Matrix::zeros(u, u);
    if cfg.soft_negatives {
        for (r, &(i, t)) in ids.iter().enumerate() {
            for (c, &(j, t2)) in ids.iter().enumerate() {
                log_w.set(r, c, soft_negative_weight(i, j, t, t2).ln());
            }
        }
    }
    let log_w = g.constant(log_w);

    let pos = g.mul(v, a);
    let pos = g.row_sums(pos);
    let pos = g.scale(pos, 1.0 / cfg.temperature);
    let pos_total = g.sum(pos);

    let va = g.add(logits, log_w);
    let lse_va = g.logsumexp(va);
    let logits_t = g.transpose(logits);
    let av = g.add(logits_t, log_w);
    let lse_av = g.logsumexp(av);
    let l1 = g.sum(lse_va);
    let l2 = g.sum(lse_av);
    let both = g.add(l1, l2);
    let twice_pos = g.scale(pos_total, 2.0);
    let total = g.sub(both, twice_pos);
    Ok(g.scale(total, 1.0 / (2.0 * u as f64)))
}

/// Scalar values of every pre-training term for one step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub rec_v: f64,
    pub rec_a: f64,
    pub cl: f64,
    pub cross_v: f64,
    pub cross_a: f64,
    pub total: f64,
}

/// Graph nodes of each enabled term; disabled terms are `None`.
pub struct LossTerms {
    pub rec_v: Option<Var>,
    pub rec_a: Option<Var>,
    pub cl: Option<Var>,
    pub cross_v: Option<Var>,
    pub cross_a: Option<Var>,
}

/// `L_rec + lambda_cl * L_cl + lambda_cross * L_cross` over enabled terms.
pub fn combine(g: &mut Graph, terms: &LossTerms, cfg: &LossConfig) -> Result<(Var, LossBreakdown)> {
    let val = |g: &Graph, v: Option<Var>| v.map(|v| g.value(v).item()).unwrap_or(0.0);
    let mut b = LossBreakdown {
        rec_v: val(g, terms.rec_v),
        rec_a: val(g, terms.rec_a),
        cl: val(g, terms.cl),
        cross_v: val(g, terms.cross_v),
        cross_a: val(g, terms.cross_a),
        total: 0.0,
    };
    for (name, x) in [("L_rec_v", b.rec_v), ("L_rec_a", b.rec_a), ("L_cl", b.cl), ("L_cross_v", b.cross_v), ("L_cross_a", b.cross_a)] {
        if !x.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
    }
    let mut parts = Vec::new();
    for (v, w) in [
        (terms.rec_v, 1.0),
        (terms.rec_a, 1.0),
        (terms.cl, cfg.lambda_cl),
        (terms.cross_v, cfg.lambda_cross),
        (terms.cross_a, cfg.lambda_cross),
    ] {
        if let Some(v) = v {
            parts.push(g.scale(v, w));
        }
    }
    let total = match parts.len() {
        0 => g.constant(Matrix::scalar(0.0)),
        1 => parts[0],
        _ => {
            let s = g.concat_rows(&parts);
            g.sum(s)
        }
    };
    b.total = g.value(total).item();
    if !b.total.is_finite() {
        return Err(Error::NonFinite("L_pt".into()));
    }
    Ok((total, b))
}
