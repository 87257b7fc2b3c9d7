use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use uavloc_core::detector::{assign_targets, gradient_check as check, AnchorGrid, ModelWeights, NetworkConfig};
use uavloc_core::eval::{align_nearest, apply_offset, classify, error_stats, fit_z_offset, ErrorMode, Outcome};
use uavloc_core::pillars::{encode_pillars, pseudo_image_dims as dims, GridConfig, PillarTensor};
use uavloc_core::{Cuboid, LidarPoint, PointCloud, PositionEstimate, Source};

use crate::Verdict;

pub fn pseudo_image_dims() -> Verdict {
    let got = dims(&GridConfig::tunnel());
    Verdict::new(matches!(got, Ok((438, 496))), format!("{got:?}"))
}

pub fn outcome_thresholds() -> Verdict {
    let truth = PositionEstimate::new([4.0, -1.0, 0.5], 1.0, Source::Truth);
    let at = |d: f64| PositionEstimate::new([4.0 + d, -1.0, 0.5], 1.0, Source::Network);
    let cases = [
        (Some(0.15), Outcome::Rp),
        (Some(0.30), Outcome::Cp),
        (Some(0.50), Outcome::Wp),
        (None, Outcome::Np),
    ];
    let mut bad = Vec::new();
    for (d, want) in cases {
        let est = d.map(at);
        let got = classify(est.as_ref(), &truth);
        if got != want {
            bad.push(format!("{d:?} -> {got} (want {want})"));
        }
    }
    let ok = bad.is_empty();
    Verdict::new(
        ok,
        if ok {
            "0.15 RP, 0.30 CP, 0.50 WP, absent NP".into()
        } else {
            bad.join(", ")
        },
    )
}

fn scene(seed: u64, center: [f64; 3]) -> PillarTensor {
    let g = GridConfig::desk().params().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<LidarPoint> = (0..300)
        .map(|_| {
            LidarPoint::new(
                rng.random_range(0.0..20.0),
                rng.random_range(-3.0..3.0),
                -0.8,
                rng.random_range(0.0..5.0),
            )
        })
        .collect();
    for _ in 0..60 {
        pts.push(LidarPoint::new(
            (center[0] + rng.random_range(-0.25..0.25)) as f32,
            (center[1] + rng.random_range(-0.25..0.25)) as f32,
            (center[2] + rng.random_range(-0.15..0.15)) as f32,
            rng.random_range(0.0..5.0),
        ));
    }
    encode_pillars(&PointCloud::new(pts, 0.0, ""), &g, 4000, 16, seed).unwrap()
}

pub fn gradient_check() -> Verdict {
    let net = NetworkConfig::desk();
    let g = GridConfig::desk().params().unwrap();
    let anchors = AnchorGrid::new(&g, &net).unwrap();
    let centers = [[7.3, 0.4, 1.0], [12.1, -1.2, 1.1]];
    let samples: Vec<PillarTensor> = centers.iter().enumerate().map(|(i, &c)| scene(i as u64, c)).collect();
    let targets: Vec<_> = centers
        .iter()
        .map(|&c| assign_targets(&anchors.anchors, &[Cuboid::new(c, [0.5, 0.5, 0.3], 0.0)], &net).unwrap())
        .collect();
    // off the init point so empty cells are not sitting on ReLU kinks
    let mut weights = ModelWeights::<f64>::init(&net, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for p in &mut weights.params {
        if p.name == "head.cls.bias" {
            continue;
        }
        if p.name.ends_with("bias") || p.name.ends_with("beta") {
            p.data.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        } else if p.name.ends_with("gamma") {
            p.data.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        }
    }
    let batch: Vec<&PillarTensor> = samples.iter().collect();
    let tref: Vec<_> = targets.iter().collect();
    let report = match check(&weights, &batch, &tref, &anchors, 4, 1e-5, 1e-6, 5) {
        Ok(r) => r,
        Err(e) => return Verdict::new(false, e.to_string()),
    };
    let groups = weights.params.iter().filter(|p| p.trainable).count();
    let worst = report
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("at least one group");
    let entries: usize = report.iter().map(|r| r.entries).sum();
    let ok = report.len() == groups && report.iter().all(|r| r.entries > 0 && r.max_rel_error < 1e-4);
    Verdict::new(
        ok,
        format!(
            "{} of {groups} groups, {entries} entries, worst {:.2e} in {} (< 1e-4)",
            report.len(),
            worst.max_rel_error,
            worst.name
        ),
    )
}

pub fn z_offset() -> Verdict {
    const BIAS: f64 = 2.42;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise = Normal::new(0.0, 0.15).unwrap();
    let mut truth = Vec::new();
    let mut est = Vec::new();
    for i in 0..265 {
        let t = i as f64 * 0.1;
        let p = [
            rng.random_range(2.0..18.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(0.5..1.5),
        ];
        truth.push(PositionEstimate::new(p, t, Source::Truth));
        // the estimates sit BIAS below the truth frame
        est.push(PositionEstimate::new(
            [p[0], p[1], p[2] - BIAS + noise.sample(&mut rng)],
            t,
            Source::Network,
        ));
    }
    let pairs = align_nearest(&est, &truth, 0.0).unwrap();
    let fit = fit_z_offset(&pairs).unwrap();
    let corrected = apply_offset(&est, [0.0, 0.0, fit]);
    let residual = corrected.iter().zip(&truth).map(|(e, t)| t.z - e.z).sum::<f64>() / 265.0;
    let ok = pairs.len() == 265 && (fit - BIAS).abs() <= 0.03 && residual.abs() <= 1e-9;
    Verdict::new(
        ok,
        format!("fit {fit:.4} m (2.42 ± 0.03), mean residual {residual:.1e} (|.| ≤ 1e-9)"),
    )
}

/// Two-pass textbook formulas, written out independently of the library.
fn oracle(errors: &[f64], signed: bool) -> [f64; 4] {
    let n = errors.len() as f64;
    let vals: Vec<f64> = errors.iter().map(|&e| if signed { e } else { e.abs() }).collect();
    let mean = vals.iter().sum::<f64>() / n;
    let rms = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let std = if errors.len() < 2 {
        0.0
    } else {
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let max = errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    [rms, mean, std, max]
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn statistics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_identity = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=300);
        let scale = 10f64.powf(rng.random_range(-3.0..2.0));
        let shift = rng.random_range(-1.0..1.0) * scale;
        let errors: Vec<f64> = (0..n).map(|_| shift + scale * rng.random_range(-1.0..1.0)).collect();
        for (mode, signed) in [(ErrorMode::Absolute, false), (ErrorMode::Signed, true)] {
            let s = error_stats(&errors, mode).unwrap();
            let nf = n as f64;
            let lhs = s.rms * s.rms;
            let rhs = s.mean * s.mean + s.std * s.std * (nf - 1.0) / nf;
            worst_identity = worst_identity.max(rel(lhs, rhs));
            let o = oracle(&errors, signed);
            for (got, want) in [s.rms, s.mean, s.std, s.max].into_iter().zip(o) {
                worst_oracle = worst_oracle.max(rel(got, want));
            }
            if s.n != n {
                return Verdict::new(false, format!("n {} for a series of {n}", s.n));
            }
        }
    }
    let ok = worst_identity <= 1e-9 && worst_oracle <= 1e-9;
    Verdict::new(
        ok,
        format!("identity worst rel {worst_identity:.1e}, oracle worst rel {worst_oracle:.1e} (≤ 1e-9)"),
    )
}
