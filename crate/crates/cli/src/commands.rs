use std::fs;
use std::io::BufReader;
use std::path::Path;

use anyhow::{anyhow, Context};
use log::{info, warn};

use uavloc_core::cluster::{localize_clustering, parse_ranges, GateDecision, ShellParams, VelocityGateState};
use uavloc_core::config::{load_over, ClusterConfig, Preset};
use uavloc_core::detector::{encode_for_grid, train_with_progress, Detector, ModelWeights, TrainSample};
use uavloc_core::eval::{align_nearest, evaluate_method, fit_z_offset, render_csv, render_text, MethodReport};
use uavloc_core::geometry::{parse_labels, write_estimates, AngleUnit};
use uavloc_core::pillars::{write_pillar_dump, GridConfig};
use uavloc_core::synth::{dataset_files, generate_dataset};
use uavloc_core::PositionEstimate;

use crate::data::{load_cloud, load_estimates, load_manifest, nearest_within, read_text, require_file, write_atomic};
use crate::failure::{Failure, Result, Tag};
use crate::{Cli, ClusterArgs, Command, DetectArgs, EncodeArgs, EvaluateArgs, SynthArgs, TrainArgs, ZOffset};

/// Label and truth rows carry the scan timestamps, so a match is exact up to
/// float formatting.
const LABEL_TOLERANCE: f64 = 1e-6;

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth(a) => synth(a, g.preset, g.seed),
        Command::Cluster(a) => cluster(a, g.preset, g.seed),
        Command::Encode(a) => encode(a, g.preset, g.seed),
        Command::Train(a) => train(a, g.preset, g.seed),
        Command::Detect(a) => detect(a, g.preset, g.seed),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn grid_config(base: GridConfig, path: Option<&Path>) -> Result<GridConfig> {
    let grid = match path {
        Some(p) => load_over(&base, p)?,
        None => base,
    };
    grid.params().context("grid config").config()?;
    Ok(grid)
}

fn synth(a: &SynthArgs, preset: Preset, seed: Option<u64>) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => load_over(&preset.scene(), p)?,
        None => preset.scene(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().context("scene spec").config()?;
    let data = generate_dataset(&spec).context("generating scenes").data()?;
    for (rel, bytes) in dataset_files(&spec, &data) {
        write_atomic(&a.out.join(rel), &bytes)?;
    }
    println!(
        "{} frames ({} train, {} test) in {}",
        data.frames.len(),
        data.train.len(),
        data.test.len(),
        a.out.display()
    );
    Ok(())
}

fn estimates_header(seed: u64, updates: usize, scans: usize) -> Vec<String> {
    vec![format!("seed={seed}"), format!("updates={updates} scans={scans}")]
}

fn cluster(a: &ClusterArgs, preset: Preset, seed: Option<u64>) -> Result<()> {
    let mut cfg: ClusterConfig = match &a.cluster_config {
        Some(p) => load_over(&preset.cluster(), p)?,
        None => preset.cluster(),
    };
    if let Some(s) = seed {
        cfg.clustering.seed = s;
    }
    cfg.validate()?;
    if !(a.range_tolerance >= 0.0) {
        return Err(anyhow!("range tolerance must be non-negative")).config();
    }
    let entries = load_manifest(&a.manifest)?;
    let ranges = parse_ranges(&read_text(&a.range)?)
        .with_context(|| format!("parsing {}", a.range.display()))
        .data()?;
    let mut gate = a.velocity_gate.then(|| VelocityGateState::new(cfg.max_speed));
    let mut out = Vec::new();
    for e in &entries {
        let Some(ri) = nearest_within(&ranges, |r| r.timestamp, e.timestamp, a.range_tolerance) else {
            warn!(
                "no range within {} s of scan at {}; skipped",
                a.range_tolerance, e.timestamp
            );
            continue;
        };
        let cloud = load_cloud(e)?;
        let shell = ShellParams::new(ranges[ri].range, cfg.shell_margin)
            .with_context(|| format!("range sample at {}", ranges[ri].timestamp))
            .data()?;
        let Some(est) = localize_clustering(&cloud, &shell, &cfg.heuristics, &cfg.clustering) else {
            continue;
        };
        if let Some(g) = gate.as_mut() {
            if g.offer(est).data()? == GateDecision::Reject {
                info!("gate rejected estimate at {}", est.timestamp);
                continue;
            }
        }
        out.push(est);
    }
    write_atomic(
        &a.out,
        write_estimates(&out, &estimates_header(cfg.clustering.seed, out.len(), entries.len())).as_bytes(),
    )?;
    println!("clustering: updates {} / scans {}", out.len(), entries.len());
    Ok(())
}

fn encode(a: &EncodeArgs, preset: Preset, seed: Option<u64>) -> Result<()> {
    let grid = grid_config(preset.grid(), a.grid_config.as_deref())?;
    let entries = load_manifest(&a.manifest)?;
    for e in &entries {
        let cloud = load_cloud(e)?;
        let tensor = encode_for_grid(&cloud, &grid, seed.unwrap_or(0))?;
        let mut bytes = Vec::new();
        write_pillar_dump(&tensor, &mut bytes).other()?;
        let stem = e.path.file_stem().unwrap_or_default().to_string_lossy();
        write_atomic(&a.out.join(format!("{stem}.pptd")), &bytes)?;
    }
    println!("{} pillar tensors in {}", entries.len(), a.out.display());
    Ok(())
}

fn train(a: &TrainArgs, preset: Preset, seed: Option<u64>) -> Result<()> {
    let grid = grid_config(preset.grid(), a.grid_config.as_deref())?;
    let net = match &a.net_config {
        Some(p) => load_over(&preset.network(), p)?,
        None => preset.network(),
    };
    let mut cfg = match &a.train_config {
        Some(p) => load_over(&preset.train(), p)?,
        None => preset.train(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    net.validate()?;
    let entries = load_manifest(&a.manifest)?;
    let labels = parse_labels(&read_text(&a.labels)?, AngleUnit::Radians)
        .with_context(|| format!("parsing {}", a.labels.display()))
        .data()?;
    let mut samples = Vec::new();
    for e in &entries {
        let truths: Vec<_> = labels
            .iter()
            .filter(|l| (l.timestamp - e.timestamp).abs() <= LABEL_TOLERANCE)
            .map(|l| l.cuboid)
            .collect();
        if truths.is_empty() {
            warn!("no label for scan at {}; skipped", e.timestamp);
            continue;
        }
        samples.push(TrainSample {
            cloud: load_cloud(e)?,
            truths,
        });
    }
    info!(
        "training on {} of {} scans for {} epochs",
        samples.len(),
        entries.len(),
        cfg.epochs
    );
    let out = train_with_progress(&samples, &grid, &net, &cfg, |epoch, loss| {
        info!("epoch {epoch}: loss {loss:.5}");
    })?;
    let mut weights = out.weights;
    weights.metadata.insert("grid".into(), toml::to_string(&grid).other()?);
    weights.metadata.insert("preset".into(), preset.to_string());
    let mut bytes = Vec::new();
    weights.write_to(&mut bytes)?;
    write_atomic(&a.out, &bytes)?;
    let mut trace = format!("# seed={}\nepoch,loss\n", cfg.seed);
    for (i, l) in out.loss_trace.iter().enumerate() {
        trace.push_str(&format!("{i},{l}\n"));
    }
    let trace_path = a.loss_trace.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    write_atomic(&trace_path, trace.as_bytes())?;
    let last = out.loss_trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} epochs on {} scans; final loss {last:.5}",
        cfg.epochs,
        samples.len()
    );
    Ok(())
}

fn load_weights(path: &Path) -> Result<ModelWeights<f32>> {
    require_file(path, "weights file")?;
    let file = fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .other()?;
    ModelWeights::read_from(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))
        .data()
}

fn detect(a: &DetectArgs, preset: Preset, seed: Option<u64>) -> Result<()> {
    let weights = load_weights(&a.weights)?;
    let stored = match weights.metadata.get("grid") {
        Some(text) => toml::from_str(text).context("grid stored with the weights").data()?,
        None => preset.grid(),
    };
    let grid = grid_config(stored, a.grid_config.as_deref())?;
    let mut detector = Detector::new(weights, &grid)?;
    detector.encode_seed = seed.unwrap_or(0);
    let entries = load_manifest(&a.manifest)?;
    let mut out = Vec::new();
    for e in &entries {
        let cloud = load_cloud(e)?;
        if let Some(est) = detector.detect(&cloud)?.estimate {
            out.push(est);
        }
    }
    write_atomic(
        &a.out,
        write_estimates(&out, &estimates_header(detector.encode_seed, out.len(), entries.len())).as_bytes(),
    )?;
    println!("network: updates {} / scans {}", out.len(), entries.len());
    Ok(())
}

fn method_name(path: &Path, estimates: &[PositionEstimate], taken: &[MethodReport]) -> String {
    let base = match estimates.first() {
        Some(e) if estimates.iter().all(|x| x.source == e.source) => e.source.to_string(),
        _ => path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
    };
    let mut name = base.clone();
    let mut k = 2;
    while taken.iter().any(|r| r.method == name) {
        name = format!("{base}_{k}");
        k += 1;
    }
    name
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    if !(a.max_dt >= 0.0) {
        return Err(anyhow!("max-dt must be non-negative")).config();
    }
    let mut truth = load_estimates(&a.truth)?;
    if let Some(m) = &a.manifest {
        let entries = load_manifest(m)?;
        truth.retain(|t| {
            entries
                .iter()
                .any(|e| (e.timestamp - t.timestamp).abs() <= LABEL_TOLERANCE)
        });
        if truth.len() != entries.len() {
            warn!("{} of {} scans have a truth sample", truth.len(), entries.len());
        }
    }
    let mut reports: Vec<MethodReport> = Vec::new();
    for path in &a.estimates {
        let est = load_estimates(path)?;
        let dz = match a.z_offset {
            None => 0.0,
            Some(ZOffset::Fixed(v)) => v,
            Some(ZOffset::Fit) => {
                let pairs = align_nearest(&est, &truth, a.max_dt).data()?;
                if pairs.is_empty() {
                    warn!("{}: nothing aligned with the truth; z offset left at 0", path.display());
                    0.0
                } else {
                    fit_z_offset(&pairs).data()?
                }
            }
        };
        let name = method_name(path, &est, &reports);
        reports.push(evaluate_method(&name, &est, &truth, a.max_dt, [0.0, 0.0, dz]).data()?);
    }
    let text = render_text(&reports);
    print!("{text}");
    if let Some(dir) = &a.out {
        write_atomic(&dir.join("report.csv"), render_csv(&reports).as_bytes())?;
        write_atomic(&dir.join("report.txt"), text.as_bytes())?;
    }
    if let Some(ceiling) = a.rms_ceiling {
        let over: Vec<String> = reports
            .iter()
            .filter(|r| r.rms_3d().is_none_or(|v| v > ceiling))
            .map(|r| match r.rms_3d() {
                Some(v) => format!("{} 3D RMS {v:.4} m", r.method),
                None => format!("{} has no aligned estimates", r.method),
            })
            .collect();
        if !over.is_empty() {
            return Err(Failure::Gate(format!("ceiling {ceiling} m: {}", over.join("; "))));
        }
    }
    Ok(())
}
