//! Label CSV: `<timestamp>,<x_ctr>,<y_ctr>,<z_ctr>,<x_len>,<y_len>,<z_len>,<x_rot>,<y_rot>,<z_rot>`.
//!
//! Rotations are radians unless the file carries a `# rotation_units=degrees`
//! directive (or the caller asks for degrees); they are always radians in memory.

use std::fmt::Write as _;

use super::Cuboid;
use crate::text::{directive, records, FormatError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AngleUnit {
    #[default]
    Radians,
    Degrees,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRow {
    pub timestamp: f64,
    pub cuboid: Cuboid,
}

/// Parses a label file. A directive in the file overrides `default_unit`.
pub fn parse_labels(text: &str, default_unit: AngleUnit) -> Result<Vec<LabelRow>, FormatError> {
    let unit = match directive(text, "rotation_units") {
        None => default_unit,
        Some("radians") => AngleUnit::Radians,
        Some("degrees") => AngleUnit::Degrees,
        Some(other) => return Err(FormatError::new(0, format!("unknown rotation_units {other:?}"))),
    };
    records(text)
        .map(|rec| {
            rec.expect_len(10)?;
            let mut v = [0.0; 9];
            for (i, slot) in v.iter_mut().enumerate() {
                *slot = rec.finite(i + 1, "cuboid component")?;
            }
            if unit == AngleUnit::Degrees {
                for a in &mut v[6..] {
                    *a = a.to_radians();
                }
            }
            Ok(LabelRow {
                timestamp: rec.finite(0, "timestamp")?,
                cuboid: Cuboid::from_array(v),
            })
        })
        .collect()
}

/// Writes radians and says so in a directive line.
pub fn write_labels(rows: &[LabelRow]) -> String {
    let mut out = String::from("# rotation_units=radians\n");
    for r in rows {
        write!(out, "{}", r.timestamp).unwrap();
        for v in r.cuboid.to_array() {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}
