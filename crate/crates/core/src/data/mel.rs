//! Log-Mel filterbank features.
//!
//! Framing has no centre padding: a waveform of `n` samples yields
//! `floor((n - window) / hop) + 1` frames. Frames are Hann-windowed
//! (periodic), zero-padded to `n_fft`, and reduced to power spectra. Mel
//! filters are HTK-scale triangles spanning 0 Hz to Nyquist. The log uses
//! `ln(energy + log_floor)`.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::container::Tensor;
use crate::config::{AudioConfig, NormalizationConfig};
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Samples per analysis window and per hop.
pub fn window_and_hop(cfg: &AudioConfig) -> (usize, usize) {
    let sr = cfg.sample_rate as f64;
    ((sr * cfg.window_ms / 1000.0).round() as usize, (sr * cfg.hop_ms / 1000.0).round() as usize)
}

pub fn frame_count(n_samples: usize, cfg: &AudioConfig) -> usize {
    let (win, hop) = window_and_hop(cfg);
    if n_samples < win {
        0
    } else {
        (n_samples - win) / hop + 1
    }
}

/// `n_mels x (n_fft / 2 + 1)` triangular filter weights.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| lo + (hi - lo) * i as f64 / (n_mels + 1) as f64).collect();
    (0..n_mels)
        .map(|m| {
            let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|b| {
                    let mel = hz_to_mel(b as f64 * sample_rate as f64 / n_fft as f64);
                    if mel <= left || mel >= right {
                        0.0
                    } else if mel <= centre {
                        (mel - left) / (centre - left)
                    } else {
                        (right - mel) / (right - centre)
                    }
                })
                .collect()
        })
        .collect()
}

/// Raw log-Mel matrix, one row per frame, `n_mels` columns.
pub fn log_mel_frames(waveform: &[f32], sample_rate: u32, cfg: &AudioConfig, n_mels: usize) -> Result<Vec<Vec<f64>>> {
    if sample_rate != cfg.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "sample rate {sample_rate} Hz, expected {} Hz",
            cfg.sample_rate
        )));
    }
    let (win, hop) = window_and_hop(cfg);
    if waveform.len() < win {
        return Err(Error::WaveformTooShort { got: waveform.len(), required: win });
    }
    if cfg.n_fft < win {
        return Err(Error::InvalidArgument(format!("n_fft {} shorter than window {win}", cfg.n_fft)));
    }
    let hann: Vec<f64> = (0..win).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos()).collect();
    let bank = mel_filterbank(n_mels, cfg.n_fft, sample_rate);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let n_bins = cfg.n_fft / 2 + 1;

    let frames = frame_count(waveform.len(), cfg);
    let mut out = Vec::with_capacity(frames);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    for f in 0..frames {
        let start = f * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < win { Complex::new(waveform[start + i] as f64 * hann[i], 0.0) } else { Complex::new(0.0, 0.0) };
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        out.push(
            bank.iter()
                .map(|filt| {
                    let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                    (e + cfg.log_floor).ln()
                })
                .collect(),
        );
    }
    Ok(out)
}

/// Linear interpolation along time with half-pixel centres (the
/// `align_corners = false` convention); frequency is untouched.
pub fn resize_time(rows: &[Vec<f64>], target: usize) -> Vec<Vec<f64>> {
    let n = rows.len();
    if n == target {
        return rows.to_vec();
    }
    let scale = n as f64 / target as f64;
    (0..target)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            let t = src - i0 as f64;
            rows[i0].iter().zip(&rows[i1]).map(|(a, b)| a * (1.0 - t) + b * t).collect()
        })
        .collect()
}

/// Log-Mel spectrogram of `waveform`, resized to `target_frames` rows and
/// normalized with the configured dataset statistics.
pub fn compute_log_mel(
    waveform: &[f32],
    sample_rate: u32,
    cfg: &AudioConfig,
    n_mels: usize,
    target_frames: usize,
    norm: &NormalizationConfig,
) -> Result<Tensor> {
    let raw = log_mel_frames(waveform, sample_rate, cfg, n_mels)?;
    let resized = resize_time(&raw, target_frames);
    let data: Vec<f32> =
        resized.iter().flatten().map(|v| ((v - norm.spec_mean) / norm.spec_std) as f32).collect();
    let t = Tensor::new(vec![target_frames, n_mels], data)?;
    if !t.is_finite() {
        return Err(Error::NonFinite("log-Mel spectrogram".into()));
    }
    Ok(t)
}
