use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{encode_pcvd, load_pcv, PointCloudVideo};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub video: PointCloudVideo,
    pub split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    path: String,
    label: usize,
    split: Split,
}

/// Writes one `.pcvd` per sample plus `manifest.jsonl`.
pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    let mut manifest = std::fs::File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
    for s in samples {
        let file = format!("{}.pcvd", s.video.sample_id);
        crate::io::write_file(&dir.join(&file), &encode_pcvd(&s.video))?;
        let row = ManifestRow {
            id: s.video.sample_id.clone(),
            path: file,
            label: s.video.label,
            split: s.split,
        };
        let line = serde_json::to_string(&row).expect("manifest row serializes");
        writeln!(manifest, "{line}").map_err(|e| Error::io(&mpath, e))?;
    }
    Ok(())
}

/// Loads a dataset directory in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let mpath = dir.join(MANIFEST_FILE);
    let f = std::fs::File::open(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in std::io::BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(&mpath, e))?;
        let len = line.len() as u64 + 1;
        if !line.trim().is_empty() {
            let row: ManifestRow = serde_json::from_str(&line)
                .map_err(|e| Error::format(offset, format!("{}: {e}", mpath.display())))?;
            let video = load_pcv(&dir.join(&row.path))?;
            if video.sample_id != row.id || video.label != row.label {
                return Err(Error::Data(format!(
                    "manifest entry {} (label {}) disagrees with file {} ({}, label {})",
                    row.id, row.label, row.path, video.sample_id, video.label
                )));
            }
            out.push(Sample { video, split: row.split });
        }
        offset += len;
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{} lists no samples", mpath.display())));
    }
    Ok(out)
}

/// SHA-256 over the manifest and every referenced file, in manifest order.
pub fn dataset_checksum(dir: &Path) -> Result<String> {
    let mpath = dir.join(MANIFEST_FILE);
    let manifest = crate::io::read_file(&mpath)?;
    let mut h = Sha256::new();
    h.update(&manifest);
    for line in manifest.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
        let row: ManifestRow =
            serde_json::from_slice(line).map_err(|e| Error::format(0, format!("{}: {e}", mpath.display())))?;
        h.update(crate::io::read_file(&dir.join(&row.path))?);
    }
    Ok(hex::encode(h.finalize()))
}
