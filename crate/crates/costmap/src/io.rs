//! Map export as a binary PGM plus a metadata text file.

use std::path::{Path, PathBuf};

use gonogo_scene::pnm::{read_pgm, write_pgm, GrayImage};

use crate::error::{CostmapError, Result};
use crate::grid::{Costmap, LETHAL};

/// Written into the PGM header.
pub const PGM_CONVENTION: &str = "pixel = 254 - cost: free 254 (white), lethal 0 (black)";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapMeta {
    pub resolution: f64,
    pub origin: (f64, f64),
    pub lethal_cutoff: u8,
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(ext);
    PathBuf::from(s)
}

pub fn map_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    (with_ext(prefix, ".pgm"), with_ext(prefix, ".txt"))
}

/// Writes `<prefix>.pgm` and `<prefix>.txt`. Rows are written top row first
/// with the map's last row at the top, so the image reads like a plan view.
pub fn export_map(map: &Costmap, prefix: &Path, lethal_cutoff: u8) -> Result<(PathBuf, PathBuf)> {
    let (pgm, meta) = map_paths(prefix);
    let (w, h) = (map.width(), map.height());
    let mut pixels = Vec::with_capacity(w * h);
    for row in (0..h).rev() {
        pixels.extend(map.costs()[row * w..(row + 1) * w].iter().map(|&c| LETHAL - c));
    }
    let img = GrayImage {
        width: w,
        height: h,
        pixels,
    };
    write_pgm(&pgm, &img, Some(PGM_CONVENTION))?;
    let (ox, oy) = map.origin();
    let text = format!(
        "resolution: {:?}\norigin: {:?} {:?}\nlethal_cutoff: {lethal_cutoff}\n",
        map.resolution(),
        ox,
        oy
    );
    std::fs::write(&meta, text).map_err(|source| CostmapError::Io {
        path: meta.clone(),
        source,
    })?;
    Ok((pgm, meta))
}

fn parse_meta(path: &Path, text: &str) -> Result<MapMeta> {
    let bad = |reason: String| CostmapError::Format {
        path: path.to_path_buf(),
        reason,
    };
    let (mut resolution, mut origin, mut cutoff) = (None, None, None);
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| bad(format!("line {}: expected `key: value`", n + 1)))?;
        let value = value.trim();
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", n + 1)));
        match key.trim() {
            "resolution" => resolution = Some(num(value)?),
            "origin" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 2 {
                    return Err(bad(format!("line {}: origin needs two numbers", n + 1)));
                }
                origin = Some((num(parts[0])?, num(parts[1])?));
            }
            "lethal_cutoff" => {
                cutoff = Some(value.parse::<u8>().map_err(|e| bad(format!("line {}: {e}", n + 1)))?)
            }
            other => return Err(bad(format!("line {}: unknown key {other:?}", n + 1))),
        }
    }
    Ok(MapMeta {
        resolution: resolution.ok_or_else(|| bad("missing resolution".into()))?,
        origin: origin.ok_or_else(|| bad("missing origin".into()))?,
        lethal_cutoff: cutoff.ok_or_else(|| bad("missing lethal_cutoff".into()))?,
    })
}

pub fn import_map(prefix: &Path) -> Result<(Costmap, MapMeta)> {
    let (pgm, meta_path) = map_paths(prefix);
    let text = std::fs::read_to_string(&meta_path).map_err(|source| CostmapError::Io {
        path: meta_path.clone(),
        source,
    })?;
    let meta = parse_meta(&meta_path, &text)?;
    let img = read_pgm(&pgm)?;
    let (w, h) = (img.width, img.height);
    let mut costs = Vec::with_capacity(w * h);
    for row in (0..h).rev() {
        for &p in &img.pixels[row * w..(row + 1) * w] {
            if p > LETHAL {
                return Err(CostmapError::Format {
                    path: pgm.clone(),
                    reason: format!("pixel value {p} above {LETHAL}"),
                });
            }
            costs.push(LETHAL - p);
        }
    }
    let map = Costmap::from_costs(w, h, meta.resolution, meta.origin, costs)?;
    Ok((map, meta))
}
