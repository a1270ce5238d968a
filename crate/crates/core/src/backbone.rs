//! Dual encoders with hierarchical taps and the bidirectional interaction
//! module.

use avcoh_grad::Var;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Block, CrossAttention, Graph, Init};
use crate::tokenizer::MaskPlan;

/// A stack of transformer blocks whose outputs at `taps` (1-based) form the
/// feature hierarchy. The last tap is the raw output of the last block.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub blocks: Vec<Block>,
    pub taps: Vec<usize>,
    pub dim: usize,
}

impl Encoder {
    pub fn new(init: &mut Init, name: &str, m: &ModelConfig) -> Self {
        let blocks = (0..m.layers)
            .map(|i| Block::new(init, &format!("{name}.block{i}"), m.dim, m.heads, m.mlp_ratio, m.ln_eps))
            .collect();
        Self { blocks, taps: m.taps.clone(), dim: m.dim }
    }

    /// Runs the visible tokens (all tokens when `plan` is `None`) and returns
    /// one feature matrix per tap.
    pub fn encode(&self, g: &mut Graph, tokens: Var, plan: Option<&MaskPlan>) -> Result<Vec<Var>> {
        let (n, c) = g.shape(tokens);
        if c != self.dim {
            return Err(Error::Shape(format!("tokens have dim {c}, encoder expects {}", self.dim)));
        }
        let mut x = match plan {
            Some(p) => {
                if p.len() != n {
                    return Err(Error::Shape(format!("mask plan covers {} tokens, sequence has {n}", p.len())));
                }
                g.gather_rows(tokens, &p.visible_idx)
            }
            None => tokens,
        };
        let mut levels = Vec::with_capacity(self.taps.len());
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(g, x);
            if self.taps.contains(&(i + 1)) {
                levels.push(x);
            }
        }
        Ok(levels)
    }
}

/// Bidirectional cross-attention followed by a per-modality block:
/// `v_inter = Block_v(v_H + CrossAttn(LN v_H, LN a_H))` and symmetrically
/// for audio.
#[derive(Clone, Debug)]
pub struct Interaction {
    pub cross_v: CrossAttention,
    pub cross_a: CrossAttention,
    pub block_v: Block,
    pub block_a: Block,
}

impl Interaction {
    pub fn new(init: &mut Init, m: &ModelConfig) -> Self {
        Self {
            cross_v: CrossAttention::new(init, "inter.cross_v", m.dim, m.interaction_cross_heads, m.ln_eps),
            cross_a: CrossAttention::new(init, "inter.cross_a", m.dim, m.interaction_cross_heads, m.ln_eps),
            block_v: Block::new(init, "inter.block_v", m.dim, m.interaction_block_heads, m.mlp_ratio, m.ln_eps),
            block_a: Block::new(init, "inter.block_a", m.dim, m.interaction_block_heads, m.mlp_ratio, m.ln_eps),
        }
    }

    pub fn forward(&self, g: &mut Graph, v_h: Var, a_h: Var) -> Result<(Var, Var)> {
        let (dv, da) = (g.shape(v_h).1, g.shape(a_h).1);
        if dv != da {
            return Err(Error::Shape(format!("interaction inputs have dims {dv} (visual) and {da} (audio)")));
        }
        let v = self.cross_v.forward(g, v_h, a_h);
        let a = self.cross_a.forward(g, a_h, v_h);
        Ok((self.block_v.forward(g, v), self.block_a.forward(g, a)))
    }
}

/// Per-modality tapped features plus interaction outputs.
#[derive(Clone, Debug)]
pub struct HierarchicalFeatures {
    pub v_levels: Vec<Var>,
    pub a_levels: Vec<Var>,
    pub v_inter: Var,
    pub a_inter: Var,
}

impl HierarchicalFeatures {
    pub fn v_top(&self) -> Var {
        *self.v_levels.last().expect("at least one level")
    }

    pub fn a_top(&self) -> Var {
        *self.a_levels.last().expect("at least one level")
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub enc_v: Encoder,
    pub enc_a: Encoder,
    pub interaction: Interaction,
}

impl Backbone {
    pub fn new(init: &mut Init, m: &ModelConfig) -> Self {
        Self { enc_v: Encoder::new(init, "enc_v", m), enc_a: Encoder::new(init, "enc_a", m), interaction: Interaction::new(init, m) }
    }

    /// Encodes both modalities (visible tokens only when plans are given)
    /// and runs the interaction module on the top level.
    pub fn features(
        &self,
        g: &mut Graph,
        v_tokens: Var,
        a_tokens: Var,
        v_plan: Option<&MaskPlan>,
        a_plan: Option<&MaskPlan>,
    ) -> Result<HierarchicalFeatures> {
        let v_levels = self.enc_v.encode(g, v_tokens, v_plan)?;
        let a_levels = self.enc_a.encode(g, a_tokens, a_plan)?;
        let (v_inter, a_inter) = self.interaction.forward(g, *v_levels.last().unwrap(), *a_levels.last().unwrap())?;
        Ok(HierarchicalFeatures { v_levels, a_levels, v_inter, a_inter })
    }

    /// Final-layer features of the full sequences with gradient flow cut.
    pub fn global_semantic_targets(&self, g: &mut Graph, v_tokens: Var, a_tokens: Var) -> Result<(Var, Var)> {
        let v = *self.enc_v.encode(g, v_tokens, None)?.last().unwrap();
        let a = *self.enc_a.encode(g, a_tokens, None)?.last().unwrap();
        Ok((g.detach(v), g.detach(a)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use avcoh_grad::{Matrix, ParamStore, Stage};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        let mut m = crate::config::RunConfig::desk().model;
        m.dim = 8;
        m.layers = 2;
        m.heads = 2;
        m.taps = vec![1, 2];
        m.interaction_cross_heads = 2;
        m.interaction_block_heads = 2;
        m
    }

    #[test]
    fn encode_shapes_and_dim_check() {
        let m = tiny();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::new(&mut Init::new(&mut store, &mut rng, Stage::Shared), "e", &m);
        let mut g = Graph::new(&store);
        let x = g.constant(Matrix::filled(6, 8, 0.3));
        let levels = enc.encode(&mut g, x, None).unwrap();
        assert_eq!(levels.len(), 2);
        assert!(levels.iter().all(|&l| g.shape(l) == (6, 8)));
        let plan = MaskPlan { visible_idx: vec![1, 4], masked_idx: vec![0, 2, 3, 5], ratio: 0.6 };
        let levels = enc.encode(&mut g, x, Some(&plan)).unwrap();
        assert_eq!(g.shape(levels[1]), (2, 8));
        let bad = g.constant(Matrix::zeros(3, 5));
        assert!(enc.encode(&mut g, bad, None).is_err());
    }
}
