//! On-disk datasets: one PPM per frame plus a JSON-lines manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Result, SceneError};
use crate::label::{Label, LabeledFrame};
use crate::pnm;

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Image path relative to the dataset directory.
    pub path: String,
    pub label: Label,
    pub trace_id: u32,
    pub index: u32,
    pub flipped: bool,
}

/// Writes `frames` under `dir` (created if needed) in order.
pub fn write_dataset(dir: &Path, frames: &[LabeledFrame]) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    let manifest_path = dir.join(MANIFEST);
    let mut manifest = Vec::new();
    for (n, f) in frames.iter().enumerate() {
        let rel = format!("images/{n:06}.ppm");
        pnm::write_ppm(&dir.join(&rel), &f.image)?;
        let rec = ManifestRecord {
            path: rel,
            label: f.label,
            trace_id: f.trace_id,
            index: f.index,
            flipped: f.flipped,
        };
        serde_json::to_writer(&mut manifest, &rec).expect("manifest records serialize");
        manifest.push(b'\n');
    }
    let mut file = fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    file.write_all(&manifest).map_err(io_err(&manifest_path))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRecord>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| SceneError::Manifest {
                path: path.clone(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn read_dataset(dir: &Path) -> Result<Vec<LabeledFrame>> {
    read_manifest(dir)?
        .into_iter()
        .map(|rec| {
            let image = pnm::read_ppm(&resolve(dir, &rec.path))?;
            Ok(LabeledFrame {
                image,
                label: rec.label,
                trace_id: rec.trace_id,
                index: rec.index,
                flipped: rec.flipped,
            })
        })
        .collect()
}

fn resolve(dir: &Path, rel: &str) -> PathBuf {
    dir.join(rel)
}
