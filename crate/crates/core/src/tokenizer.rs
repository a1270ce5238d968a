//! Patch tokenization, positional embeddings and masking.
//!
//! Video tokens are ordered `(t, y, x)` over the patch grid and each video
//! patch vector is laid out `(dt, dy, dx, channel)`. Audio tokens are ordered
//! `(t, f)` with patch vectors laid out `(dt, df)`.

use avcoh_grad::{Matrix, Var};
use rand::seq::index::sample;
use rand::Rng;

use crate::config::{Geometry, NormalizationConfig};
use crate::data::{ClipSample, Tensor};
use crate::error::{Error, Result};
use crate::nn::{Graph, Init, Linear};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Visual,
    Audio,
}

/// Token lattice of one modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenGrid {
    Video { t: usize, h: usize, w: usize },
    Audio { t: usize, f: usize },
}

fn divide(what: &str, size: usize, patch: usize) -> Result<usize> {
    if patch == 0 || size % patch != 0 || size == 0 {
        return Err(Error::Shape(format!("{what} axis: size {size} is not divisible by patch size {patch}")));
    }
    Ok(size / patch)
}

impl TokenGrid {
    pub fn video(g: &Geometry) -> Result<Self> {
        let [pt, ph, pw] = g.video_patch;
        Ok(TokenGrid::Video {
            t: divide("video time", g.frames, pt)?,
            h: divide("video height", g.height, ph)?,
            w: divide("video width", g.width, pw)?,
        })
    }

    pub fn audio(g: &Geometry) -> Result<Self> {
        let [pt, pf] = g.audio_patch;
        Ok(TokenGrid::Audio { t: divide("audio time", g.spec_frames, pt)?, f: divide("audio frequency", g.mel_bins, pf)? })
    }

    pub fn len(&self) -> usize {
        self.temporal() * self.cells()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of slices along the temporal axis.
    pub fn temporal(&self) -> usize {
        match *self {
            TokenGrid::Video { t, .. } | TokenGrid::Audio { t, .. } => t,
        }
    }

    /// Tokens per temporal slice.
    pub fn cells(&self) -> usize {
        match *self {
            TokenGrid::Video { h, w, .. } => h * w,
            TokenGrid::Audio { f, .. } => f,
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            TokenGrid::Video { .. } => Modality::Visual,
            TokenGrid::Audio { .. } => Modality::Audio,
        }
    }

    fn axes(&self) -> Vec<usize> {
        match *self {
            TokenGrid::Video { t, h, w } => vec![t, h, w],
            TokenGrid::Audio { t, f } => vec![t, f],
        }
    }
}

/// Segment of temporal slice `slice` when `t_p` slices are split into
/// `segments` contiguous, maximally equal blocks.
pub fn segment_of(slice: usize, t_p: usize, segments: usize) -> usize {
    slice * segments / t_p
}

/// Per-token segment ids for `grid`.
pub fn segment_index(grid: &TokenGrid, segments: usize) -> Result<Vec<usize>> {
    let t_p = grid.temporal();
    if segments == 0 || segments > t_p {
        return Err(Error::InvalidArgument(format!(
            "{segments} temporal segments cannot partition {t_p} temporal slices"
        )));
    }
    Ok((0..grid.len()).map(|i| segment_of(i / grid.cells(), t_p, segments)).collect())
}

/// Temporal positions are expressed in units of this many steps per window,
/// for every modality.
pub const TIME_STEPS: f64 = 16.0;

/// Fixed sinusoidal embedding, separable per grid axis.
///
/// The first `2 * floor(dim / 6)` columns encode time for both modalities:
/// slice `k` of `t` sits at its centre, `(k + 0.5) / t * TIME_STEPS`, so
/// video and audio tokens covering the same instant share a temporal code.
/// The remaining axes split the rest into even-width blocks; leftover columns
/// are zero.
pub fn sincos_embedding(grid: &TokenGrid, dim: usize) -> Matrix {
    let axes = grid.axes();
    let t_block = 2 * (dim / 6);
    let s_block = 2 * ((dim - t_block) / (2 * (axes.len() - 1)));
    let n = grid.len();
    let mut out = Matrix::zeros(n, dim);
    for i in 0..n {
        let mut rem = i;
        let mut coords = vec![0; axes.len()];
        for a in (0..axes.len()).rev() {
            coords[a] = rem % axes[a];
            rem /= axes[a];
        }
        let row = out.row_mut(i);
        let t_pos = (coords[0] as f64 + 0.5) / axes[0] as f64 * TIME_STEPS;
        fill_sincos(&mut row[..t_block], t_pos);
        for (a, &pos) in coords.iter().enumerate().skip(1) {
            let at = t_block + (a - 1) * s_block;
            fill_sincos(&mut row[at..at + s_block], pos as f64);
        }
    }
    out
}

fn fill_sincos(block: &mut [f64], pos: f64) {
    let half = block.len() / 2;
    for k in 0..half {
        let freq = 1.0 / 10_000f64.powf(k as f64 / half as f64);
        block[k] = (pos * freq).sin();
        block[half + k] = (pos * freq).cos();
    }
}

/// Normalized video patches, one row per token.
pub fn video_patches(frames: &Tensor, g: &Geometry, norm: &NormalizationConfig) -> Result<Matrix> {
    let grid = TokenGrid::video(g)?;
    let TokenGrid::Video { t: gt, h: gh, w: gw } = grid else { unreachable!() };
    let s = frames.shape();
    if s != [g.frames, g.height, g.width, 3] {
        return Err(Error::Shape(format!("frames {s:?} do not match ({}, {}, {}, 3)", g.frames, g.height, g.width)));
    }
    let [pt, ph, pw] = g.video_patch;
    let d = frames.data();
    let mut out = Matrix::zeros(grid.len(), g.video_patch_dim());
    for ti in 0..gt {
        for yi in 0..gh {
            for xi in 0..gw {
                let row = out.row_mut((ti * gh + yi) * gw + xi);
                let mut k = 0;
                for dt in 0..pt {
                    for dy in 0..ph {
                        for dx in 0..pw {
                            let (f, y, x) = (ti * pt + dt, yi * ph + dy, xi * pw + dx);
                            let base = ((f * g.height + y) * g.width + x) * 3;
                            for c in 0..3 {
                                row[k] = (d[base + c] as f64 - norm.frame_mean[c]) / norm.frame_std[c];
                                k += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Spectrogram patches, one row per token.
pub fn audio_patches(spectrogram: &Tensor, g: &Geometry) -> Result<Matrix> {
    let grid = TokenGrid::audio(g)?;
    let TokenGrid::Audio { t: gt, f: gf } = grid else { unreachable!() };
    let s = spectrogram.shape();
    if s != [g.spec_frames, g.mel_bins] {
        return Err(Error::Shape(format!("spectrogram {s:?} does not match ({}, {})", g.spec_frames, g.mel_bins)));
    }
    let [pt, pf] = g.audio_patch;
    let d = spectrogram.data();
    let mut out = Matrix::zeros(grid.len(), g.audio_patch_dim());
    for ti in 0..gt {
        for fi in 0..gf {
            let row = out.row_mut(ti * gf + fi);
            let mut k = 0;
            for dt in 0..pt {
                for df in 0..pf {
                    row[k] = d[(ti * pt + dt) * g.mel_bins + fi * pf + df] as f64;
                    k += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Linear patch projection plus a fixed positional embedding.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub pos: Matrix,
    pub grid: TokenGrid,
}

impl PatchEmbed {
    pub fn new(init: &mut Init, name: &str, grid: TokenGrid, patch_dim: usize, dim: usize) -> Self {
        Self { proj: Linear::new(init, name, patch_dim, dim), pos: sincos_embedding(&grid, dim), grid }
    }

    pub fn forward(&self, g: &mut Graph, patches: &Matrix) -> Result<Var> {
        if patches.rows() != self.grid.len() {
            return Err(Error::Shape(format!("{} patches for a grid of {} tokens", patches.rows(), self.grid.len())));
        }
        let x = g.constant(patches.clone());
        let y = self.proj.forward(g, x);
        let pos = g.constant(self.pos.clone());
        Ok(g.add(y, pos))
    }
}

/// Embedded tokens of one modality.
#[derive(Clone, Debug)]
pub struct TokenSequence {
    /// `N x C`.
    pub tokens: Var,
    pub grid: TokenGrid,
    pub modality: Modality,
    pub segment_index: Vec<usize>,
}

/// Both token sequences of a clip, plus the raw patches used as
/// reconstruction targets.
pub struct Patchified {
    pub video: TokenSequence,
    pub audio: TokenSequence,
    pub video_patches: Matrix,
    pub audio_patches: Matrix,
}

#[derive(Clone, Debug)]
pub struct Tokenizer {
    pub video: PatchEmbed,
    pub audio: PatchEmbed,
    pub segments: usize,
}

impl Tokenizer {
    pub fn new(init: &mut Init, g: &Geometry, dim: usize) -> Result<Self> {
        segment_index(&TokenGrid::video(g)?, g.segments)?;
        segment_index(&TokenGrid::audio(g)?, g.segments)?;
        Ok(Self {
            video: PatchEmbed::new(init, "embed.video", TokenGrid::video(g)?, g.video_patch_dim(), dim),
            audio: PatchEmbed::new(init, "embed.audio", TokenGrid::audio(g)?, g.audio_patch_dim(), dim),
            segments: g.segments,
        })
    }

    pub fn embed_video(&self, g: &mut Graph, patches: &Matrix) -> Result<TokenSequence> {
        Ok(TokenSequence {
            tokens: self.video.forward(g, patches)?,
            grid: self.video.grid,
            modality: Modality::Visual,
            segment_index: segment_index(&self.video.grid, self.segments)?,
        })
    }

    pub fn embed_audio(&self, g: &mut Graph, patches: &Matrix) -> Result<TokenSequence> {
        Ok(TokenSequence {
            tokens: self.audio.forward(g, patches)?,
            grid: self.audio.grid,
            modality: Modality::Audio,
            segment_index: segment_index(&self.audio.grid, self.segments)?,
        })
    }
}

pub fn patchify(g: &mut Graph, tok: &Tokenizer, sample: &ClipSample, geom: &Geometry, norm: &NormalizationConfig) -> Result<Patchified> {
    let vp = video_patches(&sample.frames, geom, norm)?;
    let ap = audio_patches(&sample.spectrogram, geom)?;
    Ok(Patchified { video: tok.embed_video(g, &vp)?, audio: tok.embed_audio(g, &ap)?, video_patches: vp, audio_patches: ap })
}

/// Visible/masked partition of one modality's tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    pub visible_idx: Vec<usize>,
    pub masked_idx: Vec<usize>,
    pub ratio: f64,
}

impl MaskPlan {
    /// Plan with every token visible.
    pub fn none(n: usize) -> Self {
        Self { visible_idx: (0..n).collect(), masked_idx: Vec::new(), ratio: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.visible_idx.len() + self.masked_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Segment ids of the visible tokens, in visible order.
    pub fn visible_segments(&self, segment_index: &[usize]) -> Vec<usize> {
        self.visible_idx.iter().map(|&i| segment_index[i]).collect()
    }

    /// `true` for every segment with no visible token.
    pub fn empty_segments(&self, segment_index: &[usize], segments: usize) -> Vec<bool> {
        let mut empty = vec![true; segments];
        for &i in &self.visible_idx {
            empty[segment_index[i]] = false;
        }
        empty
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("mask ratio must be in (0, 1), got {ratio}")));
    }
    Ok(())
}

fn plan_from_masked(n: usize, masked: &[bool], ratio: f64) -> MaskPlan {
    let (mut visible_idx, mut masked_idx) = (Vec::new(), Vec::new());
    for (i, &m) in masked.iter().enumerate().take(n) {
        if m {
            masked_idx.push(i);
        } else {
            visible_idx.push(i);
        }
    }
    MaskPlan { visible_idx, masked_idx, ratio }
}

/// Masks `floor(ratio * cells)` spatial cells across every temporal slice.
pub fn tube_mask<R: Rng>(grid: &TokenGrid, ratio: f64, rng: &mut R) -> Result<MaskPlan> {
    check_ratio(ratio)?;
    let cells = grid.cells();
    let k = (ratio * cells as f64).floor() as usize;
    if k >= cells {
        return Err(Error::InvalidArgument(format!("ratio {ratio} masks all {cells} spatial cells")));
    }
    let mut cell_masked = vec![false; cells];
    for c in sample(rng, cells, k) {
        cell_masked[c] = true;
    }
    let masked: Vec<bool> = (0..grid.len()).map(|i| cell_masked[i % cells]).collect();
    Ok(plan_from_masked(grid.len(), &masked, ratio))
}

/// Masks `floor(ratio * N)` tokens drawn uniformly without replacement.
pub fn random_mask<R: Rng>(grid: &TokenGrid, ratio: f64, rng: &mut R) -> Result<MaskPlan> {
    check_ratio(ratio)?;
    let n = grid.len();
    let k = (ratio * n as f64).floor() as usize;
    if k >= n {
        return Err(Error::InvalidArgument(format!("ratio {ratio} masks all {n} tokens")));
    }
    let mut masked = vec![false; n];
    for i in sample(rng, n, k) {
        masked[i] = true;
    }
    Ok(plan_from_masked(n, &masked, ratio))
}
