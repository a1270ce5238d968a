//! Transformer building blocks on top of the autodiff tape.

use std::ops::{Deref, DerefMut};

use avcoh_grad::{Matrix, ParamId, ParamStore, Stage, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A tape bound to the parameter store it reads from.
pub struct Graph<'a> {
    tape: Tape,
    store: &'a ParamStore,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self { tape: Tape::new(), store }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        let store = self.store;
        self.tape.param(store, id)
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }
}

impl Deref for Graph<'_> {
    type Target = Tape;
    fn deref(&self) -> &Tape {
        &self.tape
    }
}

impl DerefMut for Graph<'_> {
    fn deref_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }
}

/// Creates named parameters with a shared RNG.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    pub stage: Stage,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, stage: Stage) -> Self {
        Self { store, rng, stage }
    }

    /// Xavier-uniform `rows x cols`.
    pub fn xavier(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.gen_range(-a..a)).collect();
        self.store.add(name, Matrix::from_vec(rows, cols, data), self.stage)
    }

    pub fn normal_ish(&mut self, name: &str, rows: usize, cols: usize, scale: f64) -> ParamId {
        let data = (0..rows * cols).map(|_| self.rng.gen_range(-scale..scale)).collect();
        self.store.add(name, Matrix::from_vec(rows, cols, data), self.stage)
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.store.add(name, Matrix::filled(rows, cols, value), self.stage)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: init.xavier(&format!("{name}.weight"), fan_in, fan_out),
            bias: init.constant(&format!("{name}.bias"), 1, fan_out, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.p(self.weight);
        let b = g.p(self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, dim: usize, eps: f64) -> Self {
        Self {
            gain: init.constant(&format!("{name}.gain"), 1, dim, 1.0),
            bias: init.constant(&format!("{name}.bias"), 1, dim, 0.0),
            eps,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.layer_norm(x, self.eps);
        let gain = g.p(self.gain);
        let bias = g.p(self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }
}

/// Feed-forward stack with GELU between layers (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(init: &mut Init, name: &str, widths: &[usize]) -> Self {
        let layers = widths.windows(2).enumerate().map(|(i, w)| Linear::new(init, &format!("{name}.fc{i}"), w[0], w[1])).collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, x);
            if i < last {
                x = g.gelu(x);
            }
        }
        x
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim % heads == 0, "{name}: dim {dim} not divisible by {heads} heads");
        Self {
            q: Linear::new(init, &format!("{name}.q"), dim, dim),
            k: Linear::new(init, &format!("{name}.k"), dim, dim),
            v: Linear::new(init, &format!("{name}.v"), dim, dim),
            out: Linear::new(init, &format!("{name}.out"), dim, dim),
            heads,
        }
    }

    /// `query` is `n x d`, `memory` is `m x d`; returns `n x d`.
    pub fn forward(&self, g: &mut Graph, query: Var, memory: Var) -> Var {
        let q = self.q.forward(g, query);
        let k = self.k.forward(g, memory);
        let v = self.v.forward(g, memory);
        let dim = g.shape(q).1;
        let hd = dim / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * hd, (h + 1) * hd);
            let qh = g.slice_cols(q, a, b);
            let kh = g.slice_cols(k, a, b);
            let vh = g.slice_cols(v, a, b);
            let s = g.matmul_nt(qh, kh);
            let s = g.scale(s, scale);
            let p = g.softmax(s);
            outs.push(g.matmul(p, vh));
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.out.forward(g, merged)
    }
}

/// Pre-norm transformer block: self-attention then a GELU feed-forward.
#[derive(Clone, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize, mlp_ratio: usize, eps: f64) -> Self {
        Self {
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), dim, eps),
            attn: Attention::new(init, &format!("{name}.attn"), dim, heads),
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), dim, eps),
            mlp: Mlp::new(init, &format!("{name}.mlp"), &[dim, dim * mlp_ratio, dim]),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.ln1.forward(g, x);
        let a = self.attn.forward(g, h, h);
        let x = g.add(x, a);
        let h = self.ln2.forward(g, x);
        let m = self.mlp.forward(g, h);
        g.add(x, m)
    }
}

/// Residual cross-attention: `x + Attn(LN(x), LN(memory))`.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub ln_q: LayerNorm,
    pub ln_kv: LayerNorm,
    pub attn: Attention,
}

impl CrossAttention {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize, eps: f64) -> Self {
        Self {
            ln_q: LayerNorm::new(init, &format!("{name}.ln_q"), dim, eps),
            ln_kv: LayerNorm::new(init, &format!("{name}.ln_kv"), dim, eps),
            attn: Attention::new(init, &format!("{name}.attn"), dim, heads),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, memory: Var) -> Var {
        let q = self.ln_q.forward(g, x);
        let m = self.ln_kv.forward(g, memory);
        let a = self.attn.forward(g, q, m);
        g.add(x, a)
    }
}
