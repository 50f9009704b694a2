//! Line-delimited JSON manifests of healthy posterior stacks, lesion masks
//! and real image/label pairs.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::BinaryMask;
use crate::niftio::{read_nifti, stack::read_stack};
use crate::volgrid::{tissue, LabelVolume, PosteriorStack, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    PosteriorStack,
    LesionMask,
    Image,
    Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankEntry {
    pub id: String,
    pub path: PathBuf,
    pub kind: EntryKind,
    /// Stack channel name -> tissue class name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_map: Option<BTreeMap<String, String>>,
    /// For `image` entries: id of the matching `label` entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_id: Option<String>,
}

fn manifest_err(id: &str, message: impl Into<String>) -> Error {
    Error::Manifest {
        id: id.to_owned(),
        message: message.into(),
    }
}

/// Parses a manifest; relative paths are resolved against its directory.
/// Blank lines and lines starting with `#` are skipped.
pub fn load_manifest(path: &Path) -> Result<Vec<BankEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut out: Vec<BankEntry> = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut e: BankEntry = serde_json::from_str(line).map_err(|err| {
            manifest_err(&format!("{}:{}", path.display(), n + 1), err.to_string())
        })?;
        if !seen.insert(e.id.clone()) {
            return Err(manifest_err(&e.id, "duplicate id"));
        }
        if e.path.is_relative() {
            e.path = dir.join(&e.path);
        }
        if !e.path.exists() {
            return Err(manifest_err(&e.id, format!("file not found: {}", e.path.display())));
        }
        e.path = std::fs::canonicalize(&e.path).map_err(|err| Error::io(&e.path, err))?;
        out.push(e);
    }
    Ok(out)
}

/// Entries of `kind`, failing if any entry has a different kind.
pub fn expect_kind(entries: &[BankEntry], kind: EntryKind) -> Result<()> {
    for e in entries {
        if e.kind != kind {
            return Err(manifest_err(&e.id, format!("expected kind {kind:?}, found {:?}", e.kind)));
        }
    }
    Ok(())
}

pub fn load_posterior_stack(e: &BankEntry) -> Result<PosteriorStack> {
    let wrap = |err: Error| manifest_err(&e.id, err.to_string());
    let (m, vols) = read_stack(&e.path).map_err(wrap)?;
    let classes: Vec<String> = m
        .channels
        .iter()
        .map(|c| match &e.class_map {
            Some(map) => map.get(&c.name).cloned().unwrap_or_else(|| c.name.clone()),
            None => c.name.clone(),
        })
        .collect();
    if classes.len() != tissue::HEALTHY_CLASS_COUNT {
        return Err(manifest_err(
            &e.id,
            format!("{} classes; expected {}", classes.len(), tissue::HEALTHY_CLASS_COUNT),
        ));
    }
    for b in tissue::BRAIN {
        if !classes.iter().any(|c| c == b) {
            return Err(manifest_err(&e.id, format!("missing brain class `{b}`")));
        }
    }
    PosteriorStack::new(classes, vols).map_err(wrap)
}

pub fn load_mask(e: &BankEntry) -> Result<BinaryMask> {
    let (v, _) = read_nifti(&e.path).map_err(|err| manifest_err(&e.id, err.to_string()))?;
    Ok(v.map(|x| x > 0.5))
}

pub fn load_image(e: &BankEntry) -> Result<Volume> {
    Ok(read_nifti(&e.path).map_err(|err| manifest_err(&e.id, err.to_string()))?.0)
}

pub fn load_label(e: &BankEntry) -> Result<LabelVolume> {
    let v = load_image(e)?;
    Ok(v.map(|x| x.round().max(0.0) as u32))
}

/// Lazily loaded, shared bank contents.
pub struct Lazy<T> {
    entries: Vec<BankEntry>,
    cells: Vec<OnceLock<std::result::Result<Arc<T>, String>>>,
    load: fn(&BankEntry) -> Result<T>,
}

impl<T> Lazy<T> {
    pub fn new(entries: Vec<BankEntry>, load: fn(&BankEntry) -> Result<T>) -> Self {
        let cells = entries.iter().map(|_| OnceLock::new()).collect();
        Self {
            entries,
            cells,
            load,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, i: usize) -> &BankEntry {
        &self.entries[i]
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> Result<Arc<T>> {
        let e = &self.entries[i];
        self.cells[i]
            .get_or_init(|| (self.load)(e).map(Arc::new).map_err(|err| err.to_string()))
            .clone()
            .map_err(|m| manifest_err(&e.id, m))
    }
}

/// Real image entries paired with their label entries.
pub fn real_pairs(entries: &[BankEntry]) -> Result<Vec<(BankEntry, BankEntry)>> {
    let labels: BTreeMap<&str, &BankEntry> = entries
        .iter()
        .filter(|e| e.kind == EntryKind::Label)
        .map(|e| (e.id.as_str(), e))
        .collect();
    let mut out = Vec::new();
    for e in entries {
        match e.kind {
            EntryKind::Image => {
                let lid = e
                    .label_id
                    .as_deref()
                    .ok_or_else(|| manifest_err(&e.id, "image entry needs `label_id`"))?;
                let l = labels
                    .get(lid)
                    .ok_or_else(|| manifest_err(&e.id, format!("label `{lid}` not in manifest")))?;
                out.push((e.clone(), (*l).clone()));
            }
            EntryKind::Label => {}
            k => return Err(manifest_err(&e.id, format!("unexpected kind {k:?} in real manifest"))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.nii"), b"x").unwrap();
        let m = dir.path().join("m.jsonl");
        std::fs::write(
            &m,
            "# bank\n{\"id\":\"l1\",\"path\":\"a.nii\",\"kind\":\"lesion_mask\"}\n\n",
        )
        .unwrap();
        let e = load_manifest(&m).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].path, std::fs::canonicalize(dir.path().join("a.nii")).unwrap());

        std::fs::write(&m, "{\"id\":\"l2\",\"path\":\"missing.nii\",\"kind\":\"lesion_mask\"}\n").unwrap();
        let err = load_manifest(&m).unwrap_err().to_string();
        assert!(err.contains("l2"), "{err}");

        std::fs::write(
            &m,
            "{\"id\":\"d\",\"path\":\"a.nii\",\"kind\":\"image\"}\n{\"id\":\"d\",\"path\":\"a.nii\",\"kind\":\"image\"}\n",
        )
        .unwrap();
        assert!(load_manifest(&m).unwrap_err().to_string().contains("duplicate"));
    }
}
