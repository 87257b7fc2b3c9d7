use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use tempfile::NamedTempFile;

use uavloc_core::cloud_io::{parse_manifest, read_pcd_file, ManifestEntry};
use uavloc_core::geometry::parse_estimates;
use uavloc_core::{PointCloud, PositionEstimate};

use crate::failure::{Result, Tag};

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .other()?;
    let mut tmp = NamedTempFile::new_in(&dir)
        .with_context(|| format!("temporary file in {}", dir.display()))
        .other()?;
    tmp.write_all(bytes).and_then(|_| tmp.flush()).other()?;
    tmp.persist(path)
        .map_err(|e| e.error)
        .with_context(|| format!("writing {}", path.display()))
        .other()?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .data()
}

/// Manifest entries with their paths resolved against the manifest's folder.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = parse_manifest(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .data()?;
    for e in &mut entries {
        e.path = base.join(&e.path);
    }
    Ok(entries)
}

/// Reads one scan; the manifest timestamp wins over any in the file.
pub fn load_cloud(entry: &ManifestEntry) -> Result<PointCloud> {
    let mut cloud = read_pcd_file(&entry.path)
        .with_context(|| format!("reading {}", entry.path.display()))
        .data()?;
    cloud.timestamp = entry.timestamp;
    Ok(cloud)
}

pub fn load_estimates(path: &Path) -> Result<Vec<PositionEstimate>> {
    let text = read_text(path)?;
    let mut v = parse_estimates(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .data()?;
    v.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(v)
}

/// Index of the sample whose key is nearest `t` within `tol`, earlier on ties.
pub fn nearest_within<T>(items: &[T], key: impl Fn(&T) -> f64, t: f64, tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, item) in items.iter().enumerate() {
        let d = (key(item) - t).abs();
        if d <= tol && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(anyhow!("{what} {} does not exist", path.display())).data()
    }
}
