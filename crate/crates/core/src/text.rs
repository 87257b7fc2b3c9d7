//! Line-oriented comma-separated records shared by the manifest, label,
//! range and estimate formats.
//!
//! Blank lines and lines starting with `#` are skipped. Fields are trimmed.

use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

impl FormatError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

/// One data line, 1-based line number plus its trimmed fields.
pub struct Record<'a> {
    pub line: usize,
    pub fields: Vec<&'a str>,
}

impl<'a> Record<'a> {
    pub fn expect_len(&self, n: usize) -> Result<(), FormatError> {
        if self.fields.len() != n {
            return Err(FormatError::new(
                self.line,
                format!("expected {n} fields, found {}", self.fields.len()),
            ));
        }
        Ok(())
    }

    pub fn parse<T>(&self, idx: usize, what: &str) -> Result<T, FormatError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self
            .fields
            .get(idx)
            .ok_or_else(|| FormatError::new(self.line, format!("missing {what}")))?;
        raw.parse::<T>()
            .map_err(|e| FormatError::new(self.line, format!("bad {what} {raw:?}: {e}")))
    }

    /// Like [`Record::parse`] for `f64`, additionally rejecting NaN and infinities.
    pub fn finite(&self, idx: usize, what: &str) -> Result<f64, FormatError> {
        let v: f64 = self.parse(idx, what)?;
        if !v.is_finite() {
            return Err(FormatError::new(self.line, format!("{what} is not finite")));
        }
        Ok(v)
    }
}

pub fn records(text: &str) -> impl Iterator<Item = Record<'_>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        Some(Record {
            line: i + 1,
            fields: line.split(',').map(str::trim).collect(),
        })
    })
}

/// Value of a `# key=value` directive line, if present.
pub fn directive<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|raw| {
        let body = raw.trim().strip_prefix('#')?.trim();
        let (k, v) = body.split_once('=')?;
        (k.trim() == key).then(|| v.trim())
    })
}
