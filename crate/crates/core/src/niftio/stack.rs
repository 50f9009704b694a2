//! Multi-channel stacks stored as one NIfTI file per channel plus a JSON
//! manifest listing channel order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_nifti, write_nifti, NiftiType};
use crate::error::{Error, Result};
use crate::volgrid::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelFile {
    pub name: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackManifest {
    /// Free-form tag such as `logits`, `probabilities` or `posteriors`.
    pub kind: String,
    pub channels: Vec<ChannelFile>,
    #[serde(default)]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

impl StackManifest {
    pub fn names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }
}

fn file_stem_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Writes each channel next to `manifest_path` as
/// `<manifest stem>_<index>_<name>.nii[.gz]` and then the manifest itself.
pub fn write_stack(
    manifest_path: &Path,
    kind: &str,
    names: &[String],
    volumes: &[Volume],
    metadata: serde_json::Map<String, serde_json::Value>,
    gzip: bool,
) -> Result<StackManifest> {
    if names.len() != volumes.len() || names.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} names for {} channels",
            names.len(),
            volumes.len()
        )));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("stack");
    let ext = if gzip { "nii.gz" } else { "nii" };
    let mut channels = Vec::with_capacity(names.len());
    for (i, (name, vol)) in names.iter().zip(volumes).enumerate() {
        let file = format!("{stem}_{i}_{}.{ext}", file_stem_safe(name));
        write_nifti(vol, dir.join(&file), NiftiType::Float32)?;
        channels.push(ChannelFile {
            name: name.clone(),
            path: PathBuf::from(file),
        });
    }
    let manifest = StackManifest {
        kind: kind.to_owned(),
        channels,
        metadata,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest)
}

pub fn read_manifest(manifest_path: &Path) -> Result<StackManifest> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: StackManifest = serde_json::from_str(&text)?;
    if m.channels.is_empty() {
        return Err(Error::Empty(format!("{} lists no channels", manifest_path.display())));
    }
    Ok(m)
}

/// Reads every channel listed in the manifest; all must share one grid.
pub fn read_stack(manifest_path: &Path) -> Result<(StackManifest, Vec<Volume>)> {
    let m = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut vols: Vec<Volume> = Vec::with_capacity(m.channels.len());
    for c in &m.channels {
        let p = if c.path.is_absolute() {
            c.path.clone()
        } else {
            dir.join(&c.path)
        };
        let (v, _) = read_nifti(&p)?;
        if let Some(first) = vols.first() {
            first.ensure_same_grid(&v, &format!("channel `{}`", c.name))?;
        }
        vols.push(v);
    }
    Ok((m, vols))
}
