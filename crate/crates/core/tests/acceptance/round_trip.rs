use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uavloc_core::cloud_io::{parse_pcd, to_pcd_bytes, PcdEncoding};
use uavloc_core::detector::{ModelWeights, NetworkConfig};
use uavloc_core::geometry::{parse_labels, write_labels, AngleUnit, LabelRow};
use uavloc_core::pillars::{encode_pillars, read_pillar_dump, write_pillar_dump, GridConfig};
use uavloc_core::{Cuboid, LidarPoint, PointCloud};

use crate::Verdict;

const FUZZ_TIME: Duration = Duration::from_secs(60);

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            // arbitrary bit patterns as well as ordinary coordinates
            if rng.random_bool(0.1) {
                LidarPoint::new(
                    f32::from_bits(rng.random()),
                    f32::from_bits(rng.random()),
                    f32::from_bits(rng.random()),
                    f32::from_bits(rng.random()),
                )
            } else {
                LidarPoint::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(0.0..255.0),
                )
            }
        })
        .collect();
    PointCloud::new(
        pts,
        rng.random_range(0.0..1e5),
        format!("frame_{}", rng.random_range(0..1000)),
    )
}

fn pcd(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    for k in 0..50 {
        let n = rng.random_range(0..2000);
        let cloud = random_cloud(rng, n);
        for enc in [PcdEncoding::Ascii, PcdEncoding::Binary] {
            let back = parse_pcd(&to_pcd_bytes(&cloud, enc)).map_err(|e| format!("cloud {k} {enc:?}: {e}"))?;
            if !back.bitwise_eq(&cloud) {
                return Err(format!("cloud {k} {enc:?} changed"));
            }
        }
    }
    Ok(50)
}

fn labels(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let rows: Vec<LabelRow> = (0..500)
        .map(|i| LabelRow {
            timestamp: i as f64 * 0.1 + rng.random_range(0.0..0.01),
            cuboid: Cuboid::from_array(std::array::from_fn(|_| rng.random_range(-10.0..10.0))),
        })
        .collect();
    let back = parse_labels(&write_labels(&rows), AngleUnit::Degrees).map_err(|e| e.to_string())?;
    let bits = |r: &LabelRow| (r.timestamp.to_bits(), r.cuboid.to_array().map(f64::to_bits));
    if back.iter().map(bits).eq(rows.iter().map(bits)) {
        Ok(rows.len())
    } else {
        Err("label rows changed".into())
    }
}

fn weights() -> Result<usize, String> {
    let mut w = ModelWeights::<f32>::init(&NetworkConfig::desk(), 4).map_err(|e| e.to_string())?;
    w.metadata.insert("seed".into(), "4".into());
    let mut bytes = Vec::new();
    w.write_to(&mut bytes).map_err(|e| e.to_string())?;
    let back = ModelWeights::<f32>::read_from(&bytes[..]).map_err(|e| e.to_string())?;
    let same = back.config == w.config
        && back.metadata == w.metadata
        && back.params.len() == w.params.len()
        && back.params.iter().zip(&w.params).all(|(a, b)| {
            a.name == b.name
                && a.shape == b.shape
                && a.trainable == b.trainable
                && a.data
                    .iter()
                    .map(|v| v.to_bits())
                    .eq(b.data.iter().map(|v| v.to_bits()))
        });
    if same {
        Ok(w.num_values())
    } else {
        Err("weights changed".into())
    }
}

fn pillar_dump(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let g = GridConfig::desk().params().unwrap();
    let pts = (0..3000)
        .map(|_| {
            LidarPoint::new(
                rng.random_range(0.0..19.9),
                rng.random_range(-9.9..9.9),
                rng.random_range(-1.9..3.9),
                rng.random_range(0.0..100.0),
            )
        })
        .collect();
    let t = encode_pillars(&PointCloud::new(pts, 0.0, ""), &g, 1000, 4, 7).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    write_pillar_dump(&t, &mut bytes).map_err(|e| e.to_string())?;
    let back = read_pillar_dump(&bytes[..]).map_err(|e| e.to_string())?;
    let same = back.indices == t.indices
        && back.counts == t.counts
        && (back.max_points, back.x_n, back.y_n, back.seed) == (t.max_points, t.x_n, t.y_n, t.seed)
        && back
            .features
            .iter()
            .map(|v| v.to_bits())
            .eq(t.features.iter().map(|v| v.to_bits()));
    if same {
        Ok(t.num_pillars())
    } else {
        Err("pillar tensor changed".into())
    }
}

fn mutate(rng: &mut ChaCha8Rng, seed: &[u8]) -> Vec<u8> {
    let mut b = seed.to_vec();
    for _ in 0..rng.random_range(1..8) {
        if b.is_empty() {
            b.push(rng.random());
            continue;
        }
        let at = rng.random_range(0..b.len());
        match rng.random_range(0..6) {
            0 => b[at] ^= 1 << rng.random_range(0..8),
            1 => b[at] = rng.random(),
            2 => b.truncate(at),
            3 => b.insert(at, rng.random()),
            4 => {
                // swap a header digit for a large number
                let tail = b.split_off(at);
                b.extend_from_slice(["4294967295", "-1", "0", "1e308", "nan"][rng.random_range(0..5)].as_bytes());
                b.extend_from_slice(&tail);
            }
            _ => {
                let len = rng.random_range(0..(b.len() - at).min(64) + 1);
                b.drain(at..at + len);
            }
        }
    }
    b
}

fn fuzz(rng: &mut ChaCha8Rng) -> Result<(usize, usize), String> {
    let seeds: Vec<Vec<u8>> = (0..8)
        .flat_map(|_| {
            let n = rng.random_range(0..40);
            let c = random_cloud(rng, n);
            [
                to_pcd_bytes(&c, PcdEncoding::Ascii),
                to_pcd_bytes(&c, PcdEncoding::Binary),
            ]
        })
        .collect();
    let start = Instant::now();
    let (mut runs, mut accepted) = (0, 0);
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failure = None;
    while start.elapsed() < FUZZ_TIME {
        let pick = rng.random_range(0..seeds.len());
        let input = mutate(rng, &seeds[pick]);
        match catch_unwind(AssertUnwindSafe(|| parse_pcd(&input))) {
            Ok(r) => accepted += r.is_ok() as usize,
            Err(_) => {
                failure = Some(format!(
                    "parser panicked on a {}-byte input after {runs} runs",
                    input.len()
                ));
                break;
            }
        }
        runs += 1;
    }
    std::panic::set_hook(hook);
    match failure {
        Some(f) => Err(f),
        None => Ok((runs, accepted)),
    }
}

pub fn all() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let result = (|| {
        let clouds = pcd(&mut rng)?;
        let rows = labels(&mut rng)?;
        let values = weights()?;
        let pillars = pillar_dump(&mut rng)?;
        let (runs, accepted) = fuzz(&mut rng)?;
        Ok::<_, String>(format!(
            "{clouds} clouds x 2 encodings, {rows} labels, {values} weights, {pillars} pillars bitwise; \
             {runs} fuzz inputs in {} s without a panic ({accepted} parsed)",
            FUZZ_TIME.as_secs()
        ))
    })();
    match result {
        Ok(d) => Verdict::new(true, d),
        Err(e) => Verdict::new(false, e),
    }
}
