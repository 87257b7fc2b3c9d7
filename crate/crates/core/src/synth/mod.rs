//! Synthetic tunnel flights with exact ground truth.
//!
//! The sensor sits at the origin looking down +x along a box-shaped tunnel.
//! Each frame samples the floor, ceiling and side walls, a drone shell around
//! the trajectory position and any static clutter blobs, then adds isotropic
//! Gaussian noise. A frame depends only on the spec and its timestamp.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud_io::{to_pcd_bytes, write_manifest, LidarPoint, ManifestEntry, PcdEncoding, PointCloud};
use crate::cluster::{write_ranges, RangeSample};
use crate::geometry::{write_estimates, write_labels, Cuboid, LabelRow, PositionEstimate, Source};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunnelSpec {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Floor height in the sensor frame.
    pub floor_z: f64,
    /// Points per square meter of surface.
    pub wall_density: f64,
}

impl Default for TunnelSpec {
    fn default() -> Self {
        Self {
            length: 19.5,
            width: 6.0,
            height: 4.0,
            floor_z: -0.8,
            wall_density: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroneSpec {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Even; points come in pairs mirrored through the center.
    pub points: usize,
}

impl Default for DroneSpec {
    fn default() -> Self {
        Self {
            length: 0.5,
            width: 0.5,
            height: 0.3,
            points: 60,
        }
    }
}

/// Static boxes of random size scattered through the tunnel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClutterSpec {
    pub count: usize,
    pub size_min: f64,
    pub size_max: f64,
    pub points: usize,
}

impl Default for ClutterSpec {
    fn default() -> Self {
        Self {
            count: 0,
            size_min: 0.2,
            size_max: 0.8,
            points: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub tunnel: TunnelSpec,
    pub drone: DroneSpec,
    pub clutter: ClutterSpec,
    /// Point noise standard deviation, meters.
    pub noise_sigma: f64,
    /// Range measurement noise standard deviation, meters.
    pub range_noise_sigma: f64,
    pub frame_rate: f64,
    /// Training fraction.
    pub split: f64,
    pub waypoints: Vec<Waypoint>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl SceneSpec {
    /// 20 s out-and-back flight through a 19.5 m tunnel at 10 Hz.
    pub fn desk() -> Self {
        let wp = |t: f64, x: f64, y: f64, z: f64| Waypoint { t, position: [x, y, z] };
        Self {
            seed: 0,
            tunnel: TunnelSpec::default(),
            drone: DroneSpec::default(),
            clutter: ClutterSpec::default(),
            noise_sigma: 0.01,
            range_noise_sigma: 0.0,
            frame_rate: 10.0,
            split: 0.75,
            waypoints: vec![
                wp(0.0, 3.0, -1.5, 0.7),
                wp(5.0, 9.5, 1.2, 1.3),
                wp(10.0, 16.5, -0.8, 0.9),
                wp(15.0, 11.0, 1.5, 1.2),
                wp(20.0, 4.0, 0.3, 0.8),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        let t = &self.tunnel;
        let d = &self.drone;
        let positive = [
            ("tunnel.length", t.length),
            ("tunnel.width", t.width),
            ("tunnel.height", t.height),
            ("drone.length", d.length),
            ("drone.width", d.width),
            ("drone.height", d.height),
            ("frame_rate", self.frame_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(t.wall_density >= 0.0) || !(self.noise_sigma >= 0.0) || !(self.range_noise_sigma >= 0.0) {
            return bad("densities and noise must be non-negative".into());
        }
        if d.points % 2 != 0 {
            return bad(format!("drone.points must be even, got {}", d.points));
        }
        let c = &self.clutter;
        if c.count > 0 && !(0.0 < c.size_min && c.size_min <= c.size_max) {
            return bad("clutter sizes must satisfy 0 < size_min <= size_max".into());
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad(format!("split must lie in (0, 1), got {}", self.split));
        }
        if self.waypoints.len() < 2 {
            return bad("at least two waypoints are required".into());
        }
        if self.waypoints.windows(2).any(|w| !(w[0].t < w[1].t)) {
            return bad("waypoint times must be strictly increasing".into());
        }
        if self
            .waypoints
            .iter()
            .any(|w| !w.t.is_finite() || w.position.iter().any(|v| !v.is_finite()))
        {
            return bad("waypoints must be finite".into());
        }
        Ok(())
    }

    pub fn start_time(&self) -> f64 {
        self.waypoints.first().map_or(0.0, |w| w.t)
    }

    pub fn duration(&self) -> f64 {
        match (self.waypoints.first(), self.waypoints.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// `floor(frame_rate * duration)` frames starting at the first waypoint.
    pub fn frame_times(&self) -> Vec<f64> {
        let n = (self.frame_rate * self.duration() + 1e-9).floor() as usize;
        (0..n).map(|i| self.start_time() + i as f64 / self.frame_rate).collect()
    }

    /// Linear interpolation between waypoints.
    pub fn position_at(&self, t: f64) -> Result<[f64; 3], SynthError> {
        let (first, last) = (self.start_time(), self.start_time() + self.duration());
        if !(t >= first && t <= last) {
            return Err(SynthError::Contract(format!(
                "t = {t} outside trajectory [{first}, {last}]"
            )));
        }
        let i = self
            .waypoints
            .partition_point(|w| w.t <= t)
            .clamp(1, self.waypoints.len() - 1);
        let (a, b) = (&self.waypoints[i - 1], &self.waypoints[i]);
        let s = (t - a.t) / (b.t - a.t);
        Ok(std::array::from_fn(|k| {
            a.position[k] + s * (b.position[k] - a.position[k])
        }))
    }
}

/// One synthetic scan with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub cloud: PointCloud,
    pub truth_box: Cuboid,
    pub truth: PositionEstimate,
    /// Simulated UWB range: distance from the sensor to the drone center.
    pub range: f64,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn frame_rng(seed: u64, t: f64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(t.to_bits())))
}

/// Uniform point on the surface of an axis-aligned box, as an offset from
/// its center.
fn on_box_surface(half: [f64; 3], rng: &mut impl Rng) -> [f64; 3] {
    let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
    let pick = rng.random_range(0.0..areas.iter().sum::<f64>());
    let axis = if pick < areas[0] {
        0
    } else if pick < areas[0] + areas[1] {
        1
    } else {
        2
    };
    let mut p: [f64; 3] = std::array::from_fn(|k| rng.random_range(-half[k]..=half[k]));
    p[axis] = if rng.random_bool(0.5) { half[axis] } else { -half[axis] };
    p
}

fn point(p: [f64; 3], r: f64) -> LidarPoint {
    LidarPoint::new(p[0] as f32, p[1] as f32, p[2] as f32, r as f32)
}

fn clutter_boxes(spec: &SceneSpec) -> Vec<Cuboid> {
    let c = &spec.clutter;
    let t = &spec.tunnel;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed ^ 0xc1u64));
    (0..c.count)
        .map(|_| {
            let lens: [f64; 3] = std::array::from_fn(|_| rng.random_range(c.size_min..=c.size_max));
            let center = [
                rng.random_range(1.0..t.length.max(1.5)),
                rng.random_range(-t.width / 2.0 + lens[1] / 2.0..=t.width / 2.0 - lens[1] / 2.0),
                rng.random_range(t.floor_z + lens[2] / 2.0..=t.floor_z + t.height - lens[2] / 2.0),
            ];
            Cuboid::new(center, lens, 0.0)
        })
        .collect()
}

pub fn generate_frame(spec: &SceneSpec, t: f64) -> Result<Frame, SynthError> {
    spec.validate()?;
    let center = spec.position_at(t)?;
    let mut rng = frame_rng(spec.seed, t);
    let d = &spec.drone;
    let truth_box = Cuboid::new(center, [d.length, d.width, d.height], 0.0);
    let keep_out = truth_box.inflated(0.1);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| SynthError::Spec(e.to_string()))?;
    let jitter = |p: [f64; 3], rng: &mut ChaCha8Rng| -> [f64; 3] {
        if spec.noise_sigma > 0.0 {
            p.map(|v| v + noise.sample(rng))
        } else {
            p
        }
    };
    let mut points = Vec::new();

    let tn = &spec.tunnel;
    let (hw, z0, z1) = (tn.width / 2.0, tn.floor_z, tn.floor_z + tn.height);
    // (area, sampler) for floor, ceiling and the two side walls
    let surfaces: [(f64, Box<dyn Fn(&mut ChaCha8Rng) -> [f64; 3]>); 4] = [
        (
            tn.length * tn.width,
            Box::new(|r| [r.random_range(0.0..tn.length), r.random_range(-hw..hw), z0]),
        ),
        (
            tn.length * tn.width,
            Box::new(|r| [r.random_range(0.0..tn.length), r.random_range(-hw..hw), z1]),
        ),
        (
            tn.length * tn.height,
            Box::new(|r| [r.random_range(0.0..tn.length), -hw, r.random_range(z0..z1)]),
        ),
        (
            tn.length * tn.height,
            Box::new(|r| [r.random_range(0.0..tn.length), hw, r.random_range(z0..z1)]),
        ),
    ];
    for (area, sample) in &surfaces {
        let n = (area * tn.wall_density).round() as usize;
        for _ in 0..n {
            let p = jitter(sample(&mut rng), &mut rng);
            if !keep_out.contains(p) {
                points.push(point(p, rng.random_range(10.0..60.0)));
            }
        }
    }

    for blob in clutter_boxes(spec) {
        let half = [blob.x_len / 2.0, blob.y_len / 2.0, blob.z_len / 2.0];
        for _ in 0..spec.clutter.points {
            let o = on_box_surface(half, &mut rng);
            let p = jitter(std::array::from_fn(|k| blob.center()[k] + o[k]), &mut rng);
            if !keep_out.contains(p) {
                points.push(point(p, rng.random_range(40.0..120.0)));
            }
        }
    }

    // shrink the shell a hair so f32 rounding cannot push a point outside the box
    let half = [d.length, d.width, d.height].map(|l| l / 2.0 - 1e-5);
    for _ in 0..d.points / 2 {
        let o = on_box_surface(half, &mut rng);
        for sign in [1.0, -1.0] {
            let p = jitter(std::array::from_fn(|k| center[k] + sign * o[k]), &mut rng);
            points.push(point(p, rng.random_range(80.0..160.0)));
        }
    }

    let mut range = (center[0] * center[0] + center[1] * center[1] + center[2] * center[2]).sqrt();
    if spec.range_noise_sigma > 0.0 {
        range += Normal::new(0.0, spec.range_noise_sigma)
            .map_err(|e| SynthError::Spec(e.to_string()))?
            .sample(&mut rng);
    }
    Ok(Frame {
        cloud: PointCloud::new(points, t, "sensor"),
        truth_box,
        truth: PositionEstimate::new(center, t, Source::Truth),
        range,
    })
}

/// Every frame of the flight plus a seeded train/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    /// Frame indices, ascending.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n`, first `round(split * n)` to train; both halves
/// returned in ascending order.
pub fn split_indices(n: usize, split: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed ^ 0x5b1)));
    let k = (split * n as f64).round() as usize;
    let (mut train, mut test) = (order[..k].to_vec(), order[k..].to_vec());
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

pub fn generate_dataset(spec: &SceneSpec) -> Result<Dataset, SynthError> {
    spec.validate()?;
    let frames = spec
        .frame_times()
        .into_iter()
        .map(|t| generate_frame(spec, t))
        .collect::<Result<Vec<_>, _>>()?;
    let (train, test) = split_indices(frames.len(), spec.split, spec.seed);
    Ok(Dataset { frames, train, test })
}

/// File names inside a dataset directory.
pub mod files {
    pub const MANIFEST: &str = "manifest.csv";
    pub const TRAIN_MANIFEST: &str = "train_manifest.csv";
    pub const TEST_MANIFEST: &str = "test_manifest.csv";
    pub const LABELS: &str = "labels.csv";
    pub const TRUTH: &str = "truth.csv";
    pub const RANGE: &str = "range.csv";
    pub const CLOUDS: &str = "clouds";
}

/// Serialized dataset: relative path and contents of every file.
pub fn dataset_files(spec: &SceneSpec, data: &Dataset) -> Vec<(PathBuf, Vec<u8>)> {
    let seed_line = format!("# seed={}\n", spec.seed);
    let mut out = Vec::new();
    let entries: Vec<ManifestEntry> = data
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| ManifestEntry {
            path: Path::new(files::CLOUDS).join(format!("frame_{i:05}.pcd")),
            timestamp: f.cloud.timestamp,
        })
        .collect();
    for (e, f) in entries.iter().zip(&data.frames) {
        out.push((e.path.clone(), to_pcd_bytes(&f.cloud, PcdEncoding::Binary)));
    }
    let manifest = |idx: &mut dyn Iterator<Item = usize>| {
        let subset: Vec<ManifestEntry> = idx.map(|i| entries[i].clone()).collect();
        format!("{seed_line}{}", write_manifest(&subset)).into_bytes()
    };
    out.push((files::MANIFEST.into(), manifest(&mut (0..entries.len()))));
    out.push((files::TRAIN_MANIFEST.into(), manifest(&mut data.train.iter().copied())));
    out.push((files::TEST_MANIFEST.into(), manifest(&mut data.test.iter().copied())));
    let labels: Vec<LabelRow> = data
        .frames
        .iter()
        .map(|f| LabelRow {
            timestamp: f.cloud.timestamp,
            cuboid: f.truth_box,
        })
        .collect();
    out.push((
        files::LABELS.into(),
        format!("{seed_line}{}", write_labels(&labels)).into_bytes(),
    ));
    let truth: Vec<PositionEstimate> = data.frames.iter().map(|f| f.truth).collect();
    out.push((
        files::TRUTH.into(),
        write_estimates(&truth, &[format!("seed={}", spec.seed)]).into_bytes(),
    ));
    let ranges: Vec<RangeSample> = data
        .frames
        .iter()
        .map(|f| RangeSample {
            timestamp: f.cloud.timestamp,
            range: f.range,
        })
        .collect();
    out.push((
        files::RANGE.into(),
        format!("{seed_line}{}", write_ranges(&ranges)).into_bytes(),
    ));
    out
}

/// Writes [`dataset_files`] under `dir`, creating directories as needed.
pub fn write_dataset(spec: &SceneSpec, data: &Dataset, dir: &Path) -> Result<(), SynthError> {
    for (rel, bytes) in dataset_files(spec, data) {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)?;
    }
    Ok(())
}
