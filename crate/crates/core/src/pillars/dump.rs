//! Little-endian binary dump of a [`PillarTensor`].
//!
//! Layout: `b"PPTD"`, u32 version, u32 P, u32 N, u32 x_n, u32 y_n, u64 seed,
//! then P·N·9 f64 features, P (u32 row, u32 col) pairs and P u32 counts.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{PillarTensor, POINT_FEATURES};

const MAGIC: &[u8; 4] = b"PPTD";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("not a pillar dump (bad magic)")]
    BadMagic,
    #[error("unsupported pillar dump version {0}")]
    Version(u32),
    #[error("pillar dump is inconsistent: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_pillar_dump<W: Write>(t: &PillarTensor, mut w: W) -> io::Result<()> {
    w.write_all(MAGIC)?;
    for v in [
        VERSION,
        t.num_pillars() as u32,
        t.max_points as u32,
        t.x_n as u32,
        t.y_n as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&t.seed.to_le_bytes())?;
    for v in &t.features {
        w.write_all(&v.to_le_bytes())?;
    }
    for &(r, c) in &t.indices {
        w.write_all(&r.to_le_bytes())?;
        w.write_all(&c.to_le_bytes())?;
    }
    for c in &t.counts {
        w.write_all(&c.to_le_bytes())?;
    }
    w.flush()
}

fn u32_at<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn u64_at<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_pillar_dump<R: Read>(mut r: R) -> Result<PillarTensor, DumpError> {
    let mut magic = [0; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DumpError::BadMagic);
    }
    let version = u32_at(&mut r)?;
    if version != VERSION {
        return Err(DumpError::Version(version));
    }
    let p = u32_at(&mut r)? as usize;
    let n = u32_at(&mut r)? as usize;
    let x_n = u32_at(&mut r)? as usize;
    let y_n = u32_at(&mut r)? as usize;
    let seed = u64_at(&mut r)?;
    let len = p
        .checked_mul(n)
        .and_then(|v| v.checked_mul(POINT_FEATURES))
        .ok_or_else(|| DumpError::Invalid("size overflow".into()))?;
    let mut features = Vec::new();
    for _ in 0..len {
        features.push(f64::from_bits(u64_at(&mut r)?));
    }
    let mut indices = Vec::with_capacity(p);
    for _ in 0..p {
        let row = u32_at(&mut r)?;
        let col = u32_at(&mut r)?;
        if row as usize >= y_n || col as usize >= x_n {
            return Err(DumpError::Invalid(format!("cell ({row}, {col}) outside {y_n} x {x_n}")));
        }
        indices.push((row, col));
    }
    let mut counts = Vec::with_capacity(p);
    for _ in 0..p {
        let c = u32_at(&mut r)?;
        if c as usize > n {
            return Err(DumpError::Invalid(format!("pillar count {c} exceeds {n} slots")));
        }
        counts.push(c);
    }
    Ok(PillarTensor {
        features,
        indices,
        counts,
        max_points: n,
        x_n,
        y_n,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud_io::{LidarPoint, PointCloud};
    use crate::pillars::{encode_pillars, GridConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_and_rejects() {
        let g = GridConfig::desk().params().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = (0..500)
            .map(|_| LidarPoint::new(rng.random_range(0.0..20.0), rng.random_range(-10.0..10.0), 0.0, 3.0))
            .collect();
        let t = encode_pillars(&PointCloud::new(pts, 0.0, ""), &g, 4000, 16, 9).unwrap();
        let mut buf = Vec::new();
        write_pillar_dump(&t, &mut buf).unwrap();
        assert_eq!(read_pillar_dump(&buf[..]).unwrap(), t);
        assert!(read_pillar_dump(&buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(matches!(read_pillar_dump(&buf[..]), Err(DumpError::BadMagic)));
    }
}
