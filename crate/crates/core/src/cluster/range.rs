//! Range series CSV: `<timestamp>,<range_m>`.

use std::fmt::Write as _;

use crate::text::{records, FormatError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeSample {
    pub timestamp: f64,
    pub range: f64,
}

pub fn parse_ranges(text: &str) -> Result<Vec<RangeSample>, FormatError> {
    records(text)
        .map(|rec| {
            rec.expect_len(2)?;
            Ok(RangeSample {
                timestamp: rec.finite(0, "timestamp")?,
                range: rec.finite(1, "range")?,
            })
        })
        .collect()
}

pub fn write_ranges(samples: &[RangeSample]) -> String {
    let mut out = String::new();
    for s in samples {
        writeln!(out, "{},{}", s.timestamp, s.range).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let s = vec![
            RangeSample {
                timestamp: 0.1,
                range: 9.75,
            },
            RangeSample {
                timestamp: 0.2,
                range: 10.0,
            },
        ];
        assert_eq!(parse_ranges(&write_ranges(&s)).unwrap(), s);
        assert!(parse_ranges("0.1,inf\n").is_err());
    }
}
