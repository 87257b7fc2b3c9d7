//! PCD v0.7 reader and writer, ASCII and binary bodies.
//!
//! Only `x`, `y`, `z` and the optional `intensity` field are extracted; any
//! other declared fields are skipped. PCD has no standard timestamp, so the
//! writer stores `timestamp` and `frame_id` in comment lines which the reader
//! picks up when present.

use std::fmt;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::{LidarPoint, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcdEncoding {
    Ascii,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyUnit {
    Bytes,
    Records,
}

impl fmt::Display for BodyUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BodyUnit::Bytes => "bytes",
            BodyUnit::Records => "records",
        })
    }
}

#[derive(Debug, Error)]
pub enum PcdError {
    #[error("malformed header at line {line} ({content:?}): {message}")]
    Header {
        line: usize,
        content: String,
        message: String,
    },
    #[error("header is missing required field {0:?}")]
    MissingField(&'static str),
    #[error("malformed data record at line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("truncated body: expected {expected} {unit}, found {actual}")]
    Truncated { expected: u64, actual: u64, unit: BodyUnit },
    #[error("unsupported PCD feature: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    F32,
    F64,
    I8,
    I16,
    I32,
    I64,
    U8,
    U16,
    U32,
    U64,
}

impl Scalar {
    fn from_header(kind: &str, size: usize) -> Option<Self> {
        Some(match (kind, size) {
            ("F", 4) => Scalar::F32,
            ("F", 8) => Scalar::F64,
            ("I", 1) => Scalar::I8,
            ("I", 2) => Scalar::I16,
            ("I", 4) => Scalar::I32,
            ("I", 8) => Scalar::I64,
            ("U", 1) => Scalar::U8,
            ("U", 2) => Scalar::U16,
            ("U", 4) => Scalar::U32,
            ("U", 8) => Scalar::U64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::F32 | Scalar::I32 | Scalar::U32 => 4,
            Scalar::F64 | Scalar::I64 | Scalar::U64 => 8,
        }
    }

    /// Little-endian decode. `F32` is returned without a round trip through
    /// `f64` so NaN payloads survive bit-for-bit.
    fn decode(self, b: &[u8]) -> f32 {
        match self {
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]),
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()) as f32,
            Scalar::I8 => b[0] as i8 as f32,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f32,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f32,
            Scalar::I64 => i64::from_le_bytes(b[..8].try_into().unwrap()) as f32,
            Scalar::U8 => b[0] as f32,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f32,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f32,
            Scalar::U64 => u64::from_le_bytes(b[..8].try_into().unwrap()) as f32,
        }
    }
}

#[derive(Debug)]
struct Field {
    name: String,
    kind: Scalar,
    count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum DataKind {
    Ascii,
    Binary,
}

#[derive(Debug)]
struct Header {
    fields: Vec<Field>,
    points: u64,
    data: DataKind,
    timestamp: f64,
    frame_id: String,
}

/// Column positions of the fields we extract: (element offset, scalar type).
struct Layout {
    x: (usize, Scalar),
    y: (usize, Scalar),
    z: (usize, Scalar),
    r: Option<(usize, Scalar)>,
    /// Byte offset of each element within a binary record.
    byte_offsets: Vec<usize>,
    record_bytes: usize,
    elements: usize,
}

impl Layout {
    fn new(fields: &[Field]) -> Result<Self, PcdError> {
        let mut byte_offsets = Vec::new();
        let mut by_name = std::collections::HashMap::new();
        let mut elem = 0usize;
        let mut bytes = 0usize;
        for f in fields {
            by_name.entry(f.name.as_str()).or_insert((elem, f.kind));
            for _ in 0..f.count {
                byte_offsets.push(bytes);
                bytes += f.kind.size();
                elem += 1;
            }
        }
        let get = |name: &'static str| by_name.get(name).copied().ok_or(PcdError::MissingField(name));
        Ok(Self {
            x: get("x")?,
            y: get("y")?,
            z: get("z")?,
            r: by_name.get("intensity").copied(),
            byte_offsets,
            record_bytes: bytes,
            elements: elem,
        })
    }
}

fn header_err(line: usize, content: &str, message: impl Into<String>) -> PcdError {
    PcdError::Header {
        line,
        content: content.to_string(),
        message: message.into(),
    }
}

/// Splits the header off `bytes`. Returns the header and the byte offset
/// where the body starts.
fn parse_header(bytes: &[u8]) -> Result<(Header, usize), PcdError> {
    let mut pos = 0usize;
    let mut line_no = 0usize;

    let mut names: Option<Vec<String>> = None;
    let mut sizes: Option<Vec<usize>> = None;
    let mut types: Option<Vec<String>> = None;
    let mut counts: Option<Vec<usize>> = None;
    let mut width: Option<u64> = None;
    let mut height: Option<u64> = None;
    let mut points: Option<u64> = None;
    let mut timestamp = 0.0;
    let mut frame_id = String::new();

    loop {
        if pos >= bytes.len() {
            return Err(header_err(line_no + 1, "", "header ended before DATA line"));
        }
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |i| pos + i);
        let raw = &bytes[pos..end];
        pos = (end + 1).min(bytes.len());
        line_no += 1;

        let text = std::str::from_utf8(raw)
            .map_err(|_| header_err(line_no, &String::from_utf8_lossy(raw), "header line is not UTF-8"))?;
        let line = text.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("timestamp ") {
                timestamp = v
                    .trim()
                    .parse()
                    .map_err(|_| header_err(line_no, line, "bad timestamp comment"))?;
            } else if let Some(v) = comment.strip_prefix("frame_id ") {
                frame_id = v.trim().to_string();
            }
            continue;
        }

        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let values: Vec<&str> = parts.collect();
        let nums = |what: &str| -> Result<Vec<usize>, PcdError> {
            values
                .iter()
                .map(|v| {
                    v.parse::<usize>()
                        .map_err(|_| header_err(line_no, line, format!("bad {what} value {v:?}")))
                })
                .collect()
        };
        let single = |what: &str| -> Result<u64, PcdError> {
            match values.as_slice() {
                [v] => v
                    .parse::<u64>()
                    .map_err(|_| header_err(line_no, line, format!("bad {what} value {v:?}"))),
                _ => Err(header_err(line_no, line, format!("{what} takes exactly one value"))),
            }
        };

        match key {
            "VERSION" => {
                if !matches!(values.as_slice(), ["0.7"] | [".7"]) {
                    return Err(header_err(line_no, line, "only PCD v0.7 is supported"));
                }
            }
            "FIELDS" => names = Some(values.iter().map(|s| s.to_string()).collect()),
            "SIZE" => sizes = Some(nums("SIZE")?),
            "TYPE" => types = Some(values.iter().map(|s| s.to_string()).collect()),
            "COUNT" => counts = Some(nums("COUNT")?),
            "WIDTH" => width = Some(single("WIDTH")?),
            "HEIGHT" => height = Some(single("HEIGHT")?),
            "POINTS" => points = Some(single("POINTS")?),
            "VIEWPOINT" => {
                if values.len() != 7 || values.iter().any(|v| v.parse::<f64>().is_err()) {
                    return Err(header_err(line_no, line, "VIEWPOINT takes seven numbers"));
                }
            }
            "DATA" => {
                let data = match values.as_slice() {
                    ["ascii"] => DataKind::Ascii,
                    ["binary"] => DataKind::Binary,
                    ["binary_compressed"] => return Err(PcdError::Unsupported("binary_compressed data".into())),
                    _ => return Err(header_err(line_no, line, "unknown DATA encoding")),
                };
                let fields = assemble_fields(names, sizes, types, counts, line_no, line)?;
                let points = match (points, width, height) {
                    (Some(p), _, _) => p,
                    (None, Some(w), Some(h)) => w
                        .checked_mul(h)
                        .ok_or_else(|| header_err(line_no, line, "WIDTH * HEIGHT overflows"))?,
                    _ => return Err(PcdError::MissingField("POINTS")),
                };
                let header = Header {
                    fields,
                    points,
                    data,
                    timestamp,
                    frame_id,
                };
                return Ok((header, pos));
            }
            _ => return Err(header_err(line_no, line, format!("unknown header key {key:?}"))),
        }
    }
}

fn assemble_fields(
    names: Option<Vec<String>>,
    sizes: Option<Vec<usize>>,
    types: Option<Vec<String>>,
    counts: Option<Vec<usize>>,
    line_no: usize,
    line: &str,
) -> Result<Vec<Field>, PcdError> {
    let names = names.ok_or(PcdError::MissingField("FIELDS"))?;
    let sizes = sizes.ok_or(PcdError::MissingField("SIZE"))?;
    let types = types.ok_or(PcdError::MissingField("TYPE"))?;
    let counts = counts.unwrap_or_else(|| vec![1; names.len()]);
    if sizes.len() != names.len() || types.len() != names.len() || counts.len() != names.len() {
        return Err(header_err(
            line_no,
            line,
            format!(
                "FIELDS/SIZE/TYPE/COUNT lengths disagree ({}/{}/{}/{})",
                names.len(),
                sizes.len(),
                types.len(),
                counts.len()
            ),
        ));
    }
    names
        .into_iter()
        .zip(sizes)
        .zip(types)
        .zip(counts)
        .map(|(((name, size), ty), count)| {
            let kind = Scalar::from_header(&ty, size).ok_or_else(|| {
                header_err(
                    line_no,
                    line,
                    format!("unsupported TYPE {ty} with SIZE {size} for {name}"),
                )
            })?;
            if count == 0 || count > 4096 {
                return Err(header_err(line_no, line, format!("bad COUNT {count} for {name}")));
            }
            Ok(Field { name, kind, count })
        })
        .collect()
}

/// Parse a PCD v0.7 byte stream. NaN points are preserved; a missing
/// `intensity` field yields `r = 0`.
pub fn parse_pcd(bytes: &[u8]) -> Result<PointCloud, PcdError> {
    let (header, body_start) = parse_header(bytes)?;
    let layout = Layout::new(&header.fields)?;
    let body = &bytes[body_start..];
    let points = match header.data {
        DataKind::Binary => parse_binary(body, &layout, header.points)?,
        DataKind::Ascii => {
            let header_lines = bytes[..body_start].iter().filter(|&&b| b == b'\n').count();
            parse_ascii(body, &layout, header.points, header_lines)?
        }
    };
    Ok(PointCloud {
        points,
        timestamp: header.timestamp,
        frame_id: header.frame_id,
    })
}

fn parse_binary(body: &[u8], layout: &Layout, count: u64) -> Result<Vec<LidarPoint>, PcdError> {
    let expected = count.checked_mul(layout.record_bytes as u64);
    let actual = body.len() as u64;
    match expected {
        Some(e) if e <= actual => {}
        _ => {
            return Err(PcdError::Truncated {
                expected: expected.unwrap_or(u64::MAX),
                actual,
                unit: BodyUnit::Bytes,
            })
        }
    }
    // x, y and z are mandatory, so records are never empty
    debug_assert!(layout.record_bytes > 0);
    let read = |rec: &[u8], (elem, kind): (usize, Scalar)| {
        let off = layout.byte_offsets[elem];
        kind.decode(&rec[off..off + kind.size()])
    };
    Ok(body
        .chunks_exact(layout.record_bytes)
        .take(count as usize)
        .map(|rec| LidarPoint {
            x: read(rec, layout.x),
            y: read(rec, layout.y),
            z: read(rec, layout.z),
            r: layout.r.map_or(0.0, |f| read(rec, f)),
        })
        .collect())
}

fn parse_ascii(body: &[u8], layout: &Layout, count: u64, header_lines: usize) -> Result<Vec<LidarPoint>, PcdError> {
    let mut points = Vec::with_capacity(count.min(1 << 20) as usize);
    for (i, raw) in body.split(|&b| b == b'\n').enumerate() {
        if points.len() as u64 == count {
            break;
        }
        let line_no = header_lines + i + 1;
        let text = std::str::from_utf8(raw).map_err(|_| PcdError::Record {
            line: line_no,
            message: "not UTF-8".into(),
        })?;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.len() != layout.elements {
            return Err(PcdError::Record {
                line: line_no,
                message: format!("expected {} values, found {}", layout.elements, tokens.len()),
            });
        }
        let value = |(elem, kind): (usize, Scalar)| -> Result<f32, PcdError> {
            let tok = tokens[elem];
            let parsed = match kind {
                Scalar::F32 => tok.parse::<f32>().ok().or_else(|| nan_with_payload(tok)),
                Scalar::F64 => tok
                    .parse::<f64>()
                    .ok()
                    .map(|v| v as f32)
                    .or_else(|| nan_with_payload(tok)),
                _ => tok.parse::<i128>().ok().map(|v| v as f32),
            };
            parsed.ok_or_else(|| PcdError::Record {
                line: line_no,
                message: format!("bad value {tok:?}"),
            })
        };
        points.push(LidarPoint {
            x: value(layout.x)?,
            y: value(layout.y)?,
            z: value(layout.z)?,
            r: match layout.r {
                Some(f) => value(f)?,
                None => 0.0,
            },
        });
    }
    if (points.len() as u64) < count {
        return Err(PcdError::Truncated {
            expected: count,
            actual: points.len() as u64,
            unit: BodyUnit::Records,
        });
    }
    Ok(points)
}

pub fn read_pcd_file(path: impl AsRef<Path>) -> Result<PointCloud, PcdError> {
    let bytes = std::fs::read(path)?;
    parse_pcd(&bytes)
}

/// Write `cloud` as PCD v0.7 with fields `x y z intensity`, all `F 4`.
pub fn write_pcd<W: Write>(cloud: &PointCloud, encoding: PcdEncoding, mut out: W) -> io::Result<()> {
    let n = cloud.points.len();
    writeln!(out, "# .PCD v0.7 - Point Cloud Data file format")?;
    writeln!(out, "# timestamp {}", cloud.timestamp)?;
    let frame_id: String = cloud
        .frame_id
        .chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .collect();
    if !frame_id.trim().is_empty() {
        writeln!(out, "# frame_id {}", frame_id.trim())?;
    }
    writeln!(out, "VERSION 0.7")?;
    writeln!(out, "FIELDS x y z intensity")?;
    writeln!(out, "SIZE 4 4 4 4")?;
    writeln!(out, "TYPE F F F F")?;
    writeln!(out, "COUNT 1 1 1 1")?;
    writeln!(out, "WIDTH {n}")?;
    writeln!(out, "HEIGHT 1")?;
    writeln!(out, "VIEWPOINT 0 0 0 1 0 0 0")?;
    writeln!(out, "POINTS {n}")?;
    match encoding {
        PcdEncoding::Ascii => {
            writeln!(out, "DATA ascii")?;
            for p in &cloud.points {
                writeln!(out, "{} {} {} {}", Ascii(p.x), Ascii(p.y), Ascii(p.z), Ascii(p.r))?;
            }
        }
        PcdEncoding::Binary => {
            writeln!(out, "DATA binary")?;
            let mut buf = Vec::with_capacity(n * 16);
            for p in &cloud.points {
                for v in [p.x, p.y, p.z, p.r] {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            out.write_all(&buf)?;
        }
    }
    Ok(())
}

/// ASCII form of one value. Display is the shortest representation that
/// round-trips; NaNs other than the default one are written as
/// `nan(0x<bits>)` so their payload and sign survive.
struct Ascii(f32);

impl fmt::Display for Ascii {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.0;
        if !v.is_nan() {
            write!(f, "{v}")
        } else if v.to_bits() == f32::NAN.to_bits() {
            f.write_str("nan")
        } else {
            write!(f, "nan(0x{:08x})", v.to_bits())
        }
    }
}

/// Reads the `nan(0x<bits>)` form written for NaNs with a payload.
fn nan_with_payload(tok: &str) -> Option<f32> {
    let hex = tok.strip_prefix("nan(0x")?.strip_suffix(')')?;
    let v = f32::from_bits(u32::from_str_radix(hex, 16).ok()?);
    v.is_nan().then_some(v)
}

pub fn to_pcd_bytes(cloud: &PointCloud, encoding: PcdEncoding) -> Vec<u8> {
    let mut buf = Vec::new();
    write_pcd(cloud, encoding, &mut buf).expect("writing to a Vec cannot fail");
    buf
}
