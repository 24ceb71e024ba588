//! JSON-lines corpus manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::read_wav;
use crate::conditioning::load_precomputed_features;
use crate::data::Source;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    #[default]
    Speech,
    Noise,
}

impl EntryKind {
    fn is_speech(&self) -> bool {
        *self == EntryKind::Speech
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub audio: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    pub text: String,
    pub duration: f64,
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    #[serde(default, skip_serializing_if = "EntryKind::is_speech")]
    pub kind: EntryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_times: Option<Vec<(f64, f64)>>,
}

impl ManifestEntry {
    /// Identifier derived from the audio file stem.
    pub fn id(&self) -> String {
        self.audio.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }

    /// Reads the audio and features this entry points to.
    pub fn load(&self, fps: f64) -> Result<Source> {
        let wav = read_wav(&self.audio)?;
        let features = self.features.as_ref().map(load_precomputed_features).transpose()?;
        Ok(Source {
            id: self.id(),
            speaker: self.speaker.clone(),
            audio: wav.samples,
            sample_rate: wav.sample_rate,
            features,
            fps,
            text: (!self.text.is_empty()).then(|| self.text.clone()),
            word_times: self.word_times.clone(),
        })
    }
}

/// Parses manifest text; relative paths are resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry = serde_json::from_str(line)
            .map_err(|err| CoreError::Format(format!("manifest line {}: {err}", n + 1)))?;
        if !(e.duration > 0.0 && e.duration.is_finite()) {
            return Err(CoreError::Format(format!("manifest line {}: duration must be positive, got {}", n + 1, e.duration)));
        }
        e.audio = base.join(&e.audio);
        e.features = e.features.map(|p| base.join(p));
        out.push(e);
    }
    Ok(out)
}

/// Loads a manifest and checks that every referenced file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, base)?;
    for (n, e) in entries.iter().enumerate() {
        for p in std::iter::once(&e.audio).chain(e.features.as_ref()) {
            if !p.is_file() {
                return Err(CoreError::InvalidInput(format!("manifest entry {}: missing file {}", n + 1, p.display())));
            }
        }
    }
    Ok(entries)
}

/// Writes entries as JSON lines, paths as given.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e).map_err(|err| CoreError::Format(err.to_string()))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    f.write_all(&out).map_err(|e| CoreError::io(path, e))
}
