use std::time::Instant;

use uavloc_core::cluster::{localize_clustering, ShellParams};
use uavloc_core::config::Preset;
use uavloc_core::detector::{train, Detector, TrainSample};
use uavloc_core::eval::{classify, evaluate_method, Outcome};
use uavloc_core::synth::{generate_dataset, Dataset, Frame, SceneSpec};
use uavloc_core::PositionEstimate;

use crate::Verdict;

/// Range noise for the degraded clustering run, meters.
const DEGRADED_RANGE_SIGMA: f64 = 3.0;

fn cluster_frames<'a>(frames: impl Iterator<Item = &'a Frame>) -> Vec<PositionEstimate> {
    let cfg = Preset::Desk.cluster();
    frames
        .filter_map(|f| {
            let shell = ShellParams::new(f.range.max(1e-3), cfg.shell_margin).ok()?;
            localize_clustering(&f.cloud, &shell, &cfg.heuristics, &cfg.clustering)
        })
        .collect()
}

pub fn clustering() -> Verdict {
    let spec = SceneSpec::desk();
    let data = generate_dataset(&spec).unwrap();
    let bounds = Preset::Desk.grid().params().unwrap().crop_bounds();
    let in_bounds: Vec<&Frame> = data
        .frames
        .iter()
        .filter(|f| {
            let [x, y, z] = f.truth.xyz();
            (bounds.x_min..bounds.x_max).contains(&x)
                && (bounds.y_min..bounds.y_max).contains(&y)
                && (bounds.z_min..bounds.z_max).contains(&z)
        })
        .collect();
    let est = cluster_frames(in_bounds.iter().copied());
    let truth: Vec<PositionEstimate> = in_bounds.iter().map(|f| f.truth).collect();
    let report = evaluate_method("clustering", &est, &truth, 0.0, [0.0; 3]).unwrap();
    let rate = est.len() as f64 / in_bounds.len() as f64;
    let rms = report.rms_3d().unwrap_or(f64::INFINITY);
    let ok = data.frames.len() == 200 && rate >= 0.95 && rms < 0.10;
    Verdict::new(
        ok,
        format!(
            "{} of {} in-bounds frames updated ({:.1}% ≥ 95%), 3D RMS {rms:.4} m (< 0.10)",
            est.len(),
            in_bounds.len(),
            100.0 * rate
        ),
    )
}

fn samples(data: &Dataset, idx: &[usize]) -> Vec<TrainSample> {
    idx.iter()
        .map(|&i| TrainSample {
            cloud: data.frames[i].cloud.clone(),
            truths: vec![data.frames[i].truth_box],
        })
        .collect()
}

pub fn detector() -> Verdict {
    let preset = Preset::Desk;
    let spec = SceneSpec::desk();
    let data = generate_dataset(&spec).unwrap();
    if data.train.len() != 150 || data.test.len() != 50 {
        return Verdict::new(false, format!("split {} / {}", data.train.len(), data.test.len()));
    }
    let grid = preset.grid();
    let start = Instant::now();
    let trained = match train(&samples(&data, &data.train), &grid, &preset.network(), &preset.train()) {
        Ok(t) => t,
        Err(e) => return Verdict::new(false, format!("training failed: {e}")),
    };
    let train_secs = start.elapsed().as_secs_f64();
    let det = Detector::new(trained.weights, &grid).unwrap();
    let mut rp = 0;
    let mut updates = 0;
    for &i in &data.test {
        let f = &data.frames[i];
        let est = det.detect(&f.cloud).unwrap().estimate;
        updates += est.is_some() as usize;
        if classify(est.as_ref(), &f.truth) == Outcome::Rp {
            rp += 1;
        }
    }

    let degraded_spec = SceneSpec {
        range_noise_sigma: DEGRADED_RANGE_SIGMA,
        ..spec
    };
    let degraded = generate_dataset(&degraded_spec).unwrap();
    let baseline = cluster_frames(degraded.test.iter().map(|&i| &degraded.frames[i])).len();

    let rate = rp as f64 / data.test.len() as f64;
    let ok = rate >= 0.90 && updates as f64 >= 1.5 * baseline as f64;
    Verdict::new(
        ok,
        format!(
            "RP on {rp} of 50 held-out frames ({:.0}% ≥ 90%), {updates} updates vs {baseline} from clustering \
             with {DEGRADED_RANGE_SIGMA} m range noise (≥ 1.5x), training {train_secs:.0} s",
            100.0 * rate
        ),
    )
}
