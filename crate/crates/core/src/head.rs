//! Adaptive feature aggregation and the main/auxiliary classifiers.

use avcoh_grad::{Matrix, ParamId, Var};

use crate::backbone::HierarchicalFeatures;
use crate::config::{Aggregation, FinetuneConfig, ModelConfig};
use crate::data::{Label, ModalityLabel};
use crate::error::{Error, Result};
use crate::nn::{Graph, Init, Mlp};

/// Softmax-weighted token pooling: `sum_i softmax(s)_i * token_i`.
pub fn aggregate_level(g: &mut Graph, tokens: Var, scorer: &Mlp) -> Result<Var> {
    if g.shape(tokens).0 == 0 {
        return Err(Error::InvalidArgument("cannot aggregate zero tokens".into()));
    }
    let s = scorer.forward(g, tokens);
    pool_with_scores(g, tokens, s)
}

/// Pools `tokens` (`N x C`) with per-token scores (`N x 1`).
pub fn pool_with_scores(g: &mut Graph, tokens: Var, scores: Var) -> Result<Var> {
    let n = g.shape(tokens).0;
    if g.shape(scores) != (n, 1) {
        return Err(Error::Shape(format!("scores {:?} for {n} tokens", g.shape(scores))));
    }
    let st = g.transpose(scores);
    let w = g.softmax(st);
    Ok(g.matmul(w, tokens))
}

/// Uniform mean over tokens.
pub fn mean_pool(g: &mut Graph, tokens: Var) -> Result<Var> {
    let n = g.shape(tokens).0;
    if n == 0 {
        return Err(Error::InvalidArgument("cannot aggregate zero tokens".into()));
    }
    let w = g.constant(Matrix::filled(1, n, 1.0 / n as f64));
    Ok(g.matmul(w, tokens))
}

/// `sum_l alpha_l * level_l` with `alpha = softmax(logits)`; `pooled` holds
/// one `1 x C` row per level.
pub fn combine_levels(g: &mut Graph, pooled: &[Var], alpha_logits: Var) -> Result<Var> {
    if g.shape(alpha_logits) != (1, pooled.len()) {
        return Err(Error::Shape(format!("{} levels but {:?} level weights", pooled.len(), g.shape(alpha_logits))));
    }
    if pooled.len() == 1 {
        return Ok(pooled[0]);
    }
    let alpha = g.softmax(alpha_logits);
    let stacked = g.concat_rows(pooled);
    Ok(g.matmul(alpha, stacked))
}

/// Scorers and level weights for one modality.
#[derive(Clone, Debug)]
pub struct LevelAggregator {
    pub scorers: Vec<Mlp>,
    pub alpha: ParamId,
}

impl LevelAggregator {
    fn new(init: &mut Init, name: &str, m: &ModelConfig) -> Self {
        let scorers = (0..m.taps.len())
            .map(|l| Mlp::new(init, &format!("{name}.scorer{l}"), &[m.dim, m.scorer_hidden, 1]))
            .collect();
        Self { scorers, alpha: init.constant(&format!("{name}.alpha"), 1, m.taps.len(), 0.0) }
    }

    pub fn forward(&self, g: &mut Graph, levels: &[Var], mode: Aggregation) -> Result<Var> {
        if levels.len() != self.scorers.len() {
            return Err(Error::Shape(format!("{} levels for {} scorers", levels.len(), self.scorers.len())));
        }
        let mut pooled = Vec::with_capacity(levels.len());
        for (&x, s) in levels.iter().zip(&self.scorers) {
            pooled.push(match mode {
                Aggregation::Adaptive => aggregate_level(g, x, s)?,
                Aggregation::Mean => mean_pool(g, x)?,
            });
        }
        let logits = match mode {
            Aggregation::Adaptive => g.p(self.alpha),
            Aggregation::Mean => g.constant(Matrix::zeros(1, levels.len())),
        };
        combine_levels(g, &pooled, logits)
    }

    /// Current level weights.
    pub fn alpha_values(&self, store: &avcoh_grad::ParamStore) -> Vec<f64> {
        let logits = store.value(self.alpha).data();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().map(|v| v / z).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifyMode {
    Full,
    /// Decide from the visual auxiliary head; audio is never read.
    VisualOnly,
}

impl ClassifyMode {
    pub fn tag(self) -> &'static str {
        match self {
            ClassifyMode::Full => "full",
            ClassifyMode::VisualOnly => "visual_only",
        }
    }
}

/// Logit pairs (`1 x 2`, real then fake) from each head.
#[derive(Clone, Copy, Debug)]
pub struct Logits {
    /// The head consulted for the decision.
    pub decision: Var,
    pub main: Option<Var>,
    pub aux_v: Var,
    pub aux_a: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Classifier {
    pub agg_v: LevelAggregator,
    pub agg_a: LevelAggregator,
    pub scorer_v_inter: Mlp,
    pub scorer_a_inter: Mlp,
    pub main: Mlp,
    pub aux_v: Mlp,
    pub aux_a: Mlp,
}

impl Classifier {
    pub fn new(init: &mut Init, m: &ModelConfig) -> Self {
        let c = m.dim;
        Self {
            agg_v: LevelAggregator::new(init, "agg_v", m),
            agg_a: LevelAggregator::new(init, "agg_a", m),
            scorer_v_inter: Mlp::new(init, "agg_v_inter.scorer", &[c, m.scorer_hidden, 1]),
            scorer_a_inter: Mlp::new(init, "agg_a_inter.scorer", &[c, m.scorer_hidden, 1]),
            main: Mlp::new(init, "head.main", &[4 * c, m.main_head_hidden[0], m.main_head_hidden[1], 2]),
            aux_v: Mlp::new(init, "head.aux_v", &[c, m.aux_head_hidden[0], m.aux_head_hidden[1], 2]),
            aux_a: Mlp::new(init, "head.aux_a", &[c, m.aux_head_hidden[0], m.aux_head_hidden[1], 2]),
        }
    }

    pub fn forward(&self, g: &mut Graph, f: &HierarchicalFeatures, mode: Aggregation) -> Result<Logits> {
        let v_agg = self.agg_v.forward(g, &f.v_levels, mode)?;
        let a_agg = self.agg_a.forward(g, &f.a_levels, mode)?;
        let (vi, ai) = match mode {
            Aggregation::Adaptive => {
                (aggregate_level(g, f.v_inter, &self.scorer_v_inter)?, aggregate_level(g, f.a_inter, &self.scorer_a_inter)?)
            }
            Aggregation::Mean => (mean_pool(g, f.v_inter)?, mean_pool(g, f.a_inter)?),
        };
        let joint = g.concat_cols(&[a_agg, v_agg, ai, vi]);
        let main = self.main.forward(g, joint);
        let aux_v = self.aux_v.forward(g, v_agg);
        let aux_a = self.aux_a.forward(g, a_agg);
        Ok(Logits { decision: main, main: Some(main), aux_v, aux_a: Some(aux_a) })
    }

    /// Visual-only path: pools the visual hierarchy and applies the visual
    /// auxiliary head.
    pub fn forward_visual(&self, g: &mut Graph, v_levels: &[Var], mode: Aggregation) -> Result<Logits> {
        let v_agg = self.agg_v.forward(g, v_levels, mode)?;
        let aux_v = self.aux_v.forward(g, v_agg);
        Ok(Logits { decision: aux_v, main: None, aux_v, aux_a: None })
    }
}

fn cross_entropy(g: &mut Graph, logits: Var, label: Label) -> Var {
    let ls = g.log_softmax(logits);
    let mut pick = Matrix::zeros(1, 2);
    pick.set(0, label.index(), -1.0);
    let pick = g.constant(pick);
    let x = g.mul(ls, pick);
    g.sum(x)
}

/// Labels supervising one sample.
#[derive(Clone, Copy, Debug)]
pub struct Targets {
    pub overall: Option<Label>,
    pub audio: ModalityLabel,
    pub visual: ModalityLabel,
}

/// `CE(main, overall) + w * (CE(aux_v, visual) + CE(aux_a, audio))`,
/// dropping terms whose label is unknown or whose head is disabled.
pub fn finetune_loss(g: &mut Graph, logits: &Logits, t: &Targets, cfg: &FinetuneConfig) -> Result<Var> {
    let mut terms = Vec::new();
    if let (Some(main), Some(l)) = (logits.main, t.overall) {
        terms.push(cross_entropy(g, main, l));
    }
    if cfg.auxiliary_heads {
        if let Some(l) = t.visual.known() {
            let ce = cross_entropy(g, logits.aux_v, l);
            terms.push(g.scale(ce, cfg.aux_weight));
        }
        if let (Some(aux_a), Some(l)) = (logits.aux_a, t.audio.known()) {
            let ce = cross_entropy(g, aux_a, l);
            terms.push(g.scale(ce, cfg.aux_weight));
        }
    }
    match terms.len() {
        0 => Err(Error::InvalidArgument("sample has no known label for any active head".into())),
        1 => Ok(terms[0]),
        _ => {
            let s = g.concat_rows(&terms);
            Ok(g.sum(s))
        }
    }
}
