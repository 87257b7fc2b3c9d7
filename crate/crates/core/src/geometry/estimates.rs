//! Estimate CSV: `<timestamp>,<x>,<y>,<z>,<source>`. Truth files use the same
//! schema with `source = truth`.

use std::fmt::Write as _;

use super::{PositionEstimate, Source};
use crate::text::{records, FormatError};

pub fn parse_estimates(text: &str) -> Result<Vec<PositionEstimate>, FormatError> {
    records(text)
        .map(|rec| {
            rec.expect_len(5)?;
            Ok(PositionEstimate {
                timestamp: rec.finite(0, "timestamp")?,
                x: rec.finite(1, "x")?,
                y: rec.finite(2, "y")?,
                z: rec.finite(3, "z")?,
                source: rec.parse::<Source>(4, "source")?,
            })
        })
        .collect()
}

/// `header` lines are emitted as `#` comments before the rows.
pub fn write_estimates(estimates: &[PositionEstimate], header: &[String]) -> String {
    let mut out = String::new();
    for h in header {
        writeln!(out, "# {h}").unwrap();
    }
    for e in estimates {
        writeln!(out, "{},{},{},{},{}", e.timestamp, e.x, e.y, e.z, e.source).unwrap();
    }
    out
}
