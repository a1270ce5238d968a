//! Deterministic synthetic audio-visual clips.
//!
//! A smooth latent trajectory `z(t)` in `[0.2, 0.8]` drives both the
//! vertical position of a Gaussian blob in the frames and the centre
//! frequency of a band in the spectrogram. Manipulations break this:
//!
//! * audio fake: the band follows a second trajectory made orthogonal
//!   (over the frame times) to the blob's trajectory;
//! * visual fake: the blob carries a high-frequency checkerboard texture;
//! * both: the two combined.
//!
//! Clips are grouped by source: one pass through a class spec shares a
//! source seed, so a fake carries exactly the frames (or audio) of the
//! real clip it was derived from, and all of them share a `video_id`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::clip::{ClipSample, Label, MediaStream, ModalityLabel};
use super::container::Tensor;
use super::manifest::{Manifest, ManifestEntry, Split};
use crate::config::Geometry;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FixtureKind {
    Real,
    AudioFake,
    VisualFake,
    BothFake,
}

impl FixtureKind {
    pub fn labels(self) -> (Label, ModalityLabel, ModalityLabel) {
        use ModalityLabel as M;
        match self {
            FixtureKind::Real => (Label::Real, M::Real, M::Real),
            FixtureKind::AudioFake => (Label::Fake, M::Fake, M::Real),
            FixtureKind::VisualFake => (Label::Fake, M::Real, M::Fake),
            FixtureKind::BothFake => (Label::Fake, M::Fake, M::Fake),
        }
    }

    /// Category names follow the FakeAVCeleb scheme.
    pub fn category(self) -> &'static str {
        match self {
            FixtureKind::Real => "RVRA",
            FixtureKind::AudioFake => "RVFA",
            FixtureKind::VisualFake => "FVRA-WL",
            FixtureKind::BothFake => "FVFA-FS",
        }
    }

    /// Inverse of [`FixtureKind::labels`]; unknown modality labels read as real.
    pub fn from_labels(audio: ModalityLabel, visual: ModalityLabel) -> Self {
        match (audio == ModalityLabel::Fake, visual == ModalityLabel::Fake) {
            (false, false) => FixtureKind::Real,
            (true, false) => FixtureKind::AudioFake,
            (false, true) => FixtureKind::VisualFake,
            (true, true) => FixtureKind::BothFake,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(FixtureKind::Real),
            "audio-fake" => Ok(FixtureKind::AudioFake),
            "visual-fake" => Ok(FixtureKind::VisualFake),
            "both-fake" => Ok(FixtureKind::BothFake),
            _ => Err(Error::InvalidArgument(format!(
                "unknown fixture class `{s}` (expected real, audio-fake, visual-fake, both-fake)"
            ))),
        }
    }
}

/// Kinds assigned to clips in order, cycling.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec(pub Vec<FixtureKind>);

impl ClassSpec {
    pub fn all(kind: FixtureKind) -> Self {
        Self(vec![kind])
    }

    /// Comma-separated kinds, e.g. `real,audio-fake`.
    pub fn parse(s: &str) -> Result<Self> {
        let kinds = s.split(',').map(|p| FixtureKind::parse(p.trim())).collect::<Result<Vec<_>>>()?;
        Ok(Self(kinds))
    }

    pub fn kind_at(&self, i: usize) -> FixtureKind {
        self.0[i % self.0.len()]
    }
}

/// The generated trajectories, kept for inspection and tests.
#[derive(Clone, Debug)]
pub struct FixtureLatents {
    /// Blob trajectory at frame times.
    pub visual: Vec<f64>,
    /// Band trajectory at frame times.
    pub audio: Vec<f64>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of clip `index` in a fixture generated from `seed`.
pub fn clip_seed(seed: u64, index: usize) -> u64 {
    splitmix(seed ^ splitmix(index as u64 + 1))
}

fn smooth_trajectory(rng: &mut ChaCha8Rng, times: &[f64]) -> Vec<f64> {
    let f1 = rng.gen_range(0.25..0.6);
    let f2 = rng.gen_range(0.6..1.2);
    let p1 = rng.gen_range(0.0..std::f64::consts::TAU);
    let p2 = rng.gen_range(0.0..std::f64::consts::TAU);
    let c2 = rng.gen_range(0.2..0.5);
    times
        .iter()
        .map(|&t| (std::f64::consts::TAU * f1 * t + p1).sin() + c2 * (std::f64::consts::TAU * f2 * t + p2).sin())
        .collect()
}

fn centred(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

/// Rescales a zero-mean trajectory to peak deviation 0.3 around 0.5.
fn to_unit_range(x: &[f64]) -> Vec<f64> {
    let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-9);
    x.iter().map(|v| 0.5 + 0.3 * v / peak).collect()
}

fn trajectories(rng: &mut ChaCha8Rng, n_frames: usize, fps: f64, kind: FixtureKind) -> FixtureLatents {
    let times: Vec<f64> = (0..n_frames).map(|k| k as f64 / fps).collect();
    let base = centred(&smooth_trajectory(rng, &times));
    let mut other = centred(&smooth_trajectory(rng, &times));
    // Orthogonalize against the base trajectory so the two are uncorrelated.
    let bb: f64 = base.iter().map(|v| v * v).sum();
    if bb > 1e-12 {
        let ob: f64 = other.iter().zip(&base).map(|(a, b)| a * b).sum();
        for (o, b) in other.iter_mut().zip(&base) {
            *o -= ob / bb * b;
        }
    }
    let other = centred(&other);
    let visual = to_unit_range(&base);
    let audio = match kind {
        FixtureKind::AudioFake | FixtureKind::BothFake => to_unit_range(&other),
        FixtureKind::Real | FixtureKind::VisualFake => visual.clone(),
    };
    FixtureLatents { visual, audio }
}

fn interp(knots: &[f64], pos: f64) -> f64 {
    let p = pos.clamp(0.0, (knots.len() - 1) as f64);
    let i0 = p.floor() as usize;
    let i1 = (i0 + 1).min(knots.len() - 1);
    let t = p - i0 as f64;
    knots[i0] * (1.0 - t) + knots[i1] * t
}

/// Generates a stream of `duration` seconds for one clip seed.
pub fn generate_stream(seed: u64, kind: FixtureKind, duration: f64, g: &Geometry) -> Result<(MediaStream, FixtureLatents)> {
    if !(duration > 0.0) {
        return Err(Error::InvalidArgument(format!("fixture duration must be positive, got {duration}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fps = g.video_fps();
    let n_frames = ((duration * fps).round() as usize).max(1);
    let n_spec = ((duration * g.spec_rate()).round() as usize).max(1);
    let lat = trajectories(&mut rng, n_frames, fps, kind);

    let (h, w) = (g.height, g.width);
    let cx = rng.gen_range(0.35..0.65) * w as f64;
    let sigma = h as f64 / 8.0;
    let bg: [f64; 3] = [rng.gen_range(0.05..0.2), rng.gen_range(0.05..0.2), rng.gen_range(0.05..0.2)];
    let amp: [f64; 3] = [rng.gen_range(0.5..0.8), rng.gen_range(0.5..0.8), rng.gen_range(0.5..0.8)];
    let textured = matches!(kind, FixtureKind::VisualFake | FixtureKind::BothFake);

    let mut frames = Vec::with_capacity(n_frames * h * w * 3);
    for &z in &lat.visual {
        let cy = z * h as f64;
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                let mut blob = (-d2 / (2.0 * sigma * sigma)).exp();
                if textured {
                    let checker = if (x / 2 + y / 2) % 2 == 0 { 1.0 } else { -1.0 };
                    blob *= 1.0 + 0.6 * checker;
                }
                for c in 0..3 {
                    let noise = rng.gen_range(-0.03..0.03);
                    frames.push((bg[c] + amp[c] * blob + noise).clamp(0.0, 1.0) as f32);
                }
            }
        }
    }

    let bins = g.mel_bins;
    let band_sigma = bins as f64 / 12.0;
    let mut spec = Vec::with_capacity(n_spec * bins);
    for r in 0..n_spec {
        let t = r as f64 / g.spec_rate();
        let z = interp(&lat.audio, t * fps);
        let centre = (1.0 - z) * bins as f64;
        for f in 0..bins {
            let band = (-(f as f64 + 0.5 - centre).powi(2) / (2.0 * band_sigma * band_sigma)).exp();
            let noise = rng.gen_range(-0.1..0.1);
            spec.push((-0.5 + 2.0 * band + noise) as f32);
        }
    }

    let stream = MediaStream {
        frames: Tensor::new(vec![n_frames, h, w, 3], frames)?,
        spectrogram: Tensor::new(vec![n_spec, bins], spec)?,
    };
    Ok((stream, lat))
}

/// One manifest entry per clip, backed by the seed of its source.
pub fn fixture_entry(seed: u64, index: usize, source: usize, kind: FixtureKind, duration: Option<f64>) -> ManifestEntry {
    let (overall, audio, visual) = kind.labels();
    ManifestEntry {
        clip_id: format!("fx{seed}-{index:04}"),
        video_id: format!("fx{seed}-src{source:04}"),
        frames_path: None,
        audio_path: None,
        fixture_seed: Some(clip_seed(seed, source)),
        duration,
        label_overall: overall,
        label_audio: audio,
        label_visual: visual,
        split: Split::Train,
        manipulation_category: kind.category().to_string(),
    }
}

/// Clip sample for the first window of a fixture entry's stream.
pub fn materialize(entry: &ManifestEntry, g: &Geometry) -> Result<ClipSample> {
    let seed = entry
        .fixture_seed
        .ok_or_else(|| Error::InvalidArgument(format!("entry {} has no fixture_seed", entry.clip_id)))?;
    let kind = FixtureKind::from_labels(entry.label_audio, entry.label_visual);
    let (stream, _) = generate_stream(seed, kind, entry.duration.unwrap_or(g.clip_seconds), g)?;
    let (frames, spectrogram) = stream.window(0.0, g);
    Ok(ClipSample {
        frames,
        spectrogram,
        label_overall: entry.label_overall,
        label_audio: entry.label_audio,
        label_visual: entry.label_visual,
        clip_id: entry.clip_id.clone(),
        video_id: entry.video_id.clone(),
        source_tag: "fixture".into(),
    })
}

/// `n_clips` synthetic clips with kinds cycling through `class_spec`;
/// clip `i` comes from source `i / class_spec.len()`.
pub fn synth_fixture(seed: u64, n_clips: usize, class_spec: &ClassSpec, g: &Geometry) -> Result<(Manifest, Vec<ClipSample>)> {
    if n_clips == 0 {
        return Err(Error::InvalidArgument("n_clips must be at least 1".into()));
    }
    if class_spec.0.is_empty() {
        return Err(Error::InvalidArgument("class spec is empty".into()));
    }
    let entries: Vec<ManifestEntry> =
        (0..n_clips).map(|i| fixture_entry(seed, i, i / class_spec.0.len(), class_spec.kind_at(i), None)).collect();
    let samples = entries.iter().map(|e| materialize(e, g)).collect::<Result<Vec<_>>>()?;
    Ok((Manifest::new(entries)?, samples))
}
