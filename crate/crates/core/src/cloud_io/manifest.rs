//! Dataset manifest: one `<relative_pcd_path>,<timestamp_seconds>` record per scan.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::text::{records, FormatError};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub timestamp: f64,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, FormatError> {
    records(text)
        .map(|rec| {
            rec.expect_len(2)?;
            if rec.fields[0].is_empty() {
                return Err(FormatError::new(rec.line, "empty path"));
            }
            Ok(ManifestEntry {
                path: PathBuf::from(rec.fields[0]),
                timestamp: rec.finite(1, "timestamp")?,
            })
        })
        .collect()
}

pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        writeln!(out, "{},{}", e.path.display(), e.timestamp).unwrap();
    }
    out
}
