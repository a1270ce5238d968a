//! Media decoding.
//!
//! Frames come either as an `AVC1` tensor `(n, h, w, 3)` or as a directory of
//! pre-cropped PNG/JPEG images, sorted by file name and resized to the
//! configured frame size. Audio comes either as an `AVC1` spectrogram
//! `(n, mel_bins)` already at the model's spectrogram frame rate, or as a
//! 16 kHz WAV file that is converted here.

use std::path::Path;

use image::imageops::FilterType;

use super::clip::{ClipSample, MediaStream};
use super::container::Tensor;
use super::fixture::{generate_stream, FixtureKind};
use super::manifest::ManifestEntry;
use super::mel::compute_log_mel;
use crate::config::RunConfig;
use crate::error::{Error, Result};

fn is_tensor_file(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "avc")
}

pub fn load_frames(path: &Path, cfg: &RunConfig) -> Result<Tensor> {
    let g = &cfg.geometry;
    if is_tensor_file(path) {
        let t = Tensor::load(path)?;
        let s = t.shape();
        if s.len() != 4 || s[1] != g.height || s[2] != g.width || s[3] != 3 || s[0] == 0 {
            return Err(Error::Shape(format!("{}: frames tensor {s:?} does not match ({}, {}, 3)", path.display(), g.height, g.width)));
        }
        return Ok(t);
    }
    if !path.is_dir() {
        return Err(Error::Decode(format!("{}: expected a .avc tensor or a directory of images", path.display())));
    }
    let mut files: Vec<_> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| matches!(e.to_str(), Some("png" | "jpg" | "jpeg"))))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Decode(format!("{}: no frame images", path.display())));
    }
    let mut data = Vec::with_capacity(files.len() * g.height * g.width * 3);
    for f in &files {
        let img = image::open(f).map_err(|e| Error::Decode(format!("{}: {e}", f.display())))?.to_rgb8();
        let img = image::imageops::resize(&img, g.width as u32, g.height as u32, FilterType::Triangle);
        data.extend(img.as_raw().iter().map(|&b| b as f32 / 255.0));
    }
    Tensor::new(vec![files.len(), g.height, g.width, 3], data)
}

pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader.samples::<i32>().map(|s| s.map(|v| v as f32 / scale)).collect::<Result<_, _>>()
        }
    }
    .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    let mono = samples.chunks(channels).map(|c| c.iter().sum::<f32>() / channels as f32).collect();
    Ok((mono, spec.sample_rate))
}

pub fn load_spectrogram(path: &Path, cfg: &RunConfig) -> Result<Tensor> {
    let g = &cfg.geometry;
    if is_tensor_file(path) {
        let t = Tensor::load(path)?;
        if t.shape().len() != 2 || t.shape()[1] != g.mel_bins || t.shape()[0] == 0 {
            return Err(Error::Shape(format!("{}: spectrogram {:?} does not have {} mel bins", path.display(), t.shape(), g.mel_bins)));
        }
        return Ok(t);
    }
    let (wave, sr) = read_wav(path)?;
    let duration = wave.len() as f64 / sr as f64;
    let target = ((duration * g.spec_rate()).round() as usize).max(1);
    compute_log_mel(&wave, sr, &cfg.audio, g.mel_bins, target, &cfg.normalization)
}

/// Decodes the media behind one manifest entry.
pub fn load_stream(entry: &ManifestEntry, cfg: &RunConfig) -> Result<MediaStream> {
    if let Some(seed) = entry.fixture_seed {
        let kind = FixtureKind::from_labels(entry.label_audio, entry.label_visual);
        let duration = entry.duration.unwrap_or(cfg.geometry.clip_seconds);
        return Ok(generate_stream(seed, kind, duration, &cfg.geometry)?.0);
    }
    let (Some(fp), Some(ap)) = (&entry.frames_path, &entry.audio_path) else {
        return Err(Error::InvalidArgument(format!("entry {} has no media source", entry.clip_id)));
    };
    Ok(MediaStream { frames: load_frames(fp, cfg)?, spectrogram: load_spectrogram(ap, cfg)? })
}

/// The first clip-length window of an entry's media, looped if shorter.
pub fn load_clip(entry: &ManifestEntry, cfg: &RunConfig) -> Result<ClipSample> {
    let stream = load_stream(entry, cfg)?;
    let (frames, spectrogram) = stream.window(0.0, &cfg.geometry);
    let s = ClipSample {
        frames,
        spectrogram,
        label_overall: entry.label_overall,
        label_audio: entry.label_audio,
        label_visual: entry.label_visual,
        clip_id: entry.clip_id.clone(),
        video_id: entry.video_id.clone(),
        source_tag: entry.manipulation_category.clone(),
    };
    s.validate(&cfg.geometry)?;
    Ok(s)
}
