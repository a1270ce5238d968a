use serde::{Deserialize, Serialize};

use super::container::Tensor;
use crate::config::Geometry;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Class index used by every classifier: real = 0, fake = 1.
    pub fn index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityLabel {
    Real,
    Fake,
    Unknown,
}

impl ModalityLabel {
    pub fn known(self) -> Option<Label> {
        match self {
            ModalityLabel::Real => Some(Label::Real),
            ModalityLabel::Fake => Some(Label::Fake),
            ModalityLabel::Unknown => None,
        }
    }
}

/// Checks that the overall label is fake exactly when a known modality
/// label is fake. Passes vacuously when either modality label is unknown.
pub fn labels_consistent(overall: Label, audio: ModalityLabel, visual: ModalityLabel) -> bool {
    match (audio.known(), visual.known()) {
        (Some(a), Some(v)) => (overall == Label::Fake) == (a == Label::Fake || v == Label::Fake),
        (Some(Label::Fake), None) | (None, Some(Label::Fake)) => overall == Label::Fake,
        _ => true,
    }
}

/// One preprocessed audio-visual clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    /// `(t_v, h, w, 3)`, values in `[0, 1]`.
    pub frames: Tensor,
    /// `(t_a, mel_bins)` normalized log-Mel spectrogram.
    pub spectrogram: Tensor,
    pub label_overall: Label,
    pub label_audio: ModalityLabel,
    pub label_visual: ModalityLabel,
    pub clip_id: String,
    pub video_id: String,
    pub source_tag: String,
}

impl ClipSample {
    pub fn validate(&self, g: &Geometry) -> Result<()> {
        let fs = self.frames.shape();
        if fs.len() != 4 || fs[3] != 3 {
            return Err(Error::Shape(format!("frames must be (t, h, w, 3), got {fs:?}")));
        }
        let ss = self.spectrogram.shape();
        if ss.len() != 2 {
            return Err(Error::Shape(format!("spectrogram must be (t_a, L), got {ss:?}")));
        }
        if fs[..3] != [g.frames, g.height, g.width] || ss != [g.spec_frames, g.mel_bins] {
            return Err(Error::Shape(format!(
                "clip {}: frames {fs:?} / spectrogram {ss:?} do not match geometry ({}, {}, {}, 3) / ({}, {})",
                self.clip_id, g.frames, g.height, g.width, g.spec_frames, g.mel_bins
            )));
        }
        if !self.frames.is_finite() || !self.spectrogram.is_finite() {
            return Err(Error::NonFinite(format!("clip {} media", self.clip_id)));
        }
        if !labels_consistent(self.label_overall, self.label_audio, self.label_visual) {
            return Err(Error::Validation(format!("clip {}: inconsistent labels", self.clip_id)));
        }
        Ok(())
    }
}

/// A decoded video of arbitrary length: frames at the clip frame rate and a
/// spectrogram already at the model's spectrogram frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct MediaStream {
    /// `(n_frames, h, w, 3)`.
    pub frames: Tensor,
    /// `(n_spec, mel_bins)`.
    pub spectrogram: Tensor,
}

impl MediaStream {
    pub fn duration(&self, g: &Geometry) -> f64 {
        self.frames.shape()[0] as f64 / g.video_fps()
    }

    /// Cuts one clip starting at `start` seconds. Indices past the end of the
    /// stream wrap around, which loops streams shorter than one clip.
    pub fn window(&self, start: f64, g: &Geometry) -> (Tensor, Tensor) {
        let n_frames = self.frames.shape()[0];
        let frame_len = g.height * g.width * 3;
        let f0 = (start * g.video_fps()).round() as usize;
        let mut frames = Vec::with_capacity(g.frames * frame_len);
        for k in 0..g.frames {
            let src = (f0 + k) % n_frames;
            frames.extend_from_slice(&self.frames.data()[src * frame_len..(src + 1) * frame_len]);
        }
        let n_spec = self.spectrogram.shape()[0];
        let bins = self.spectrogram.shape()[1];
        let s0 = (start * g.spec_rate()).round() as usize;
        let mut spec = Vec::with_capacity(g.spec_frames * bins);
        for k in 0..g.spec_frames {
            let src = (s0 + k) % n_spec;
            spec.extend_from_slice(&self.spectrogram.data()[src * bins..(src + 1) * bins]);
        }
        (
            Tensor::new(vec![g.frames, g.height, g.width, 3], frames).expect("window shape"),
            Tensor::new(vec![g.spec_frames, bins], spec).expect("window shape"),
        )
    }
}
