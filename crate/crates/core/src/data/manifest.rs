//! Line-delimited JSON dataset manifests.
//!
//! One object per line with the fields of [`ManifestEntry`]. Media is given
//! either by `frames_path` + `audio_path` (relative paths resolve against the
//! manifest's directory) or by `fixture_seed` for synthetic clips.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::clip::{labels_consistent, Label, ModalityLabel};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_seed: Option<u64>,
    /// Seconds; only read for fixture entries (defaults to one clip).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    pub label_overall: Label,
    pub label_audio: ModalityLabel,
    pub label_visual: ModalityLabel,
    pub split: Split,
    pub manipulation_category: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.clip_id.as_str()) {
                return Err(Error::DuplicateClip(e.clip_id.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn category_histogram(&self) -> BTreeMap<String, usize> {
        let mut h = BTreeMap::new();
        for e in &self.entries {
            *h.entry(e.manipulation_category.clone()).or_insert(0) += 1;
        }
        h
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a manifest. Relative media paths are resolved
/// against the manifest's directory and must exist.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let err = |line: usize, message: String| Error::Manifest { path: path.to_path_buf(), line, message };

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry = serde_json::from_str(raw).map_err(|e| err(line, e.to_string()))?;
        if e.clip_id.is_empty() || e.video_id.is_empty() {
            return Err(err(line, "clip_id and video_id must be non-empty".into()));
        }
        if !seen.insert(e.clip_id.clone()) {
            return Err(Error::DuplicateClip(e.clip_id));
        }
        if !labels_consistent(e.label_overall, e.label_audio, e.label_visual) {
            return Err(err(line, format!("label_overall {:?} contradicts modality labels", e.label_overall)));
        }
        match (&e.frames_path, &e.audio_path, e.fixture_seed) {
            (Some(_), Some(_), None) => {
                for p in [e.frames_path.as_mut().unwrap(), e.audio_path.as_mut().unwrap()] {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                    if !p.exists() {
                        return Err(err(line, format!("missing media file {}", p.display())));
                    }
                }
            }
            (None, None, Some(_)) => {}
            _ => return Err(err(line, "give either frames_path + audio_path or fixture_seed".into())),
        }
        if let Some(d) = e.duration {
            if !(d > 0.0) {
                return Err(err(line, format!("duration must be positive, got {d}")));
            }
        }
        entries.push(e);
    }
    Ok(Manifest { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, cat: &str, overall: &str, audio: &str, visual: &str) -> String {
        format!(
            r#"{{"clip_id":"{id}","video_id":"v{id}","fixture_seed":1,"label_overall":"{overall}","label_audio":"{audio}","label_visual":"{visual}","split":"train","manipulation_category":"{cat}"}}"#
        )
    }

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    #[test]
    fn empty_file_has_no_entries() {
        let (_d, p) = write("");
        assert!(load_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn duplicate_clip_id_is_named() {
        let text = format!("{}\n{}\n", line("a", "RVRA", "real", "real", "real"), line("a", "RVRA", "real", "real", "real"));
        let (_d, p) = write(&text);
        let e = load_manifest(&p).unwrap_err();
        assert!(matches!(&e, Error::DuplicateClip(id) if id == "a"), "{e}");
    }

    #[test]
    fn four_category_histogram() {
        let text = [
            line("a", "RVRA", "real", "real", "real"),
            line("b", "RVFA", "fake", "fake", "real"),
            line("c", "FVRA-WL", "fake", "real", "fake"),
            line("d", "FVFA-FS", "fake", "fake", "fake"),
        ]
        .join("\n");
        let (_d, p) = write(&text);
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.len(), 4);
        let h = m.category_histogram();
        assert_eq!(h.len(), 4);
        assert!(h.values().all(|&c| c == 1));
    }

    #[test]
    fn schema_error_reports_line() {
        let text = format!("{}\n{{\"clip_id\": 3}}\n", line("a", "RVRA", "real", "real", "real"));
        let (_d, p) = write(&text);
        match load_manifest(&p).unwrap_err() {
            Error::Manifest { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn inconsistent_labels_rejected() {
        let (_d, p) = write(&line("a", "RVFA", "real", "fake", "real"));
        assert!(matches!(load_manifest(&p).unwrap_err(), Error::Manifest { line: 1, .. }));
    }

    #[test]
    fn missing_media_and_missing_manifest() {
        let text = r#"{"clip_id":"a","video_id":"v","frames_path":"nope.avc","audio_path":"nope2.avc","label_overall":"real","label_audio":"real","label_visual":"real","split":"test","manipulation_category":"RVRA"}"#;
        let (_d, p) = write(text);
        let msg = load_manifest(&p).unwrap_err().to_string();
        assert!(msg.contains("nope.avc"), "{msg}");
        let e = load_manifest(Path::new("/definitely/not/here.jsonl")).unwrap_err();
        assert!(e.to_string().contains("/definitely/not/here.jsonl"));
    }
}
