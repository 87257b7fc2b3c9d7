//! Scoring position estimates against a reference trajectory: per-frame
//! outcome categories, per-axis error statistics, nearest-epoch alignment
//! and a constant offset correction.

mod report;

use std::fmt;

use thiserror::Error;

use crate::geometry::{position_error, PositionEstimate};

pub use report::{evaluate_method, render_csv, render_text, MethodReport, OutcomeCounts};

/// Upper bound (exclusive) of a right prediction, meters.
pub const RIGHT_BOUND: f64 = 0.20;
/// Upper bound (inclusive) of a close prediction, meters.
pub const CLOSE_BOUND: f64 = 0.40;
/// Default alignment window, seconds.
pub const DEFAULT_MAX_DT: f64 = 0.15;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    /// No prediction.
    Np,
    /// Wrong: farther than 0.40 m.
    Wp,
    /// Close: 0.20 m to 0.40 m, both ends included.
    Cp,
    /// Right: closer than 0.20 m.
    Rp,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [Outcome::Np, Outcome::Wp, Outcome::Cp, Outcome::Rp];

    pub fn from_distance(d: f64) -> Self {
        if d < RIGHT_BOUND {
            Outcome::Rp
        } else if d <= CLOSE_BOUND {
            Outcome::Cp
        } else {
            // NaN lands here too
            Outcome::Wp
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Np => "NP",
            Outcome::Wp => "WP",
            Outcome::Cp => "CP",
            Outcome::Rp => "RP",
        })
    }
}

pub fn classify(prediction: Option<&PositionEstimate>, truth: &PositionEstimate) -> Outcome {
    match prediction {
        None => Outcome::Np,
        Some(p) => Outcome::from_distance(position_error(p, truth)),
    }
}

/// Whether statistics see `|e|` or the signed residual `e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorMode {
    #[default]
    Absolute,
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub rms: f64,
    pub mean: f64,
    /// Sample standard deviation (divides by `n - 1`); 0 for a single value.
    pub std: f64,
    /// Largest magnitude.
    pub max: f64,
    pub n: usize,
}

/// Statistics of one error series.
pub fn error_stats(errors: &[f64], mode: ErrorMode) -> Result<ErrorStats, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Contract("statistics of an empty series".into()));
    }
    let n = errors.len() as f64;
    let v = |e: f64| match mode {
        ErrorMode::Absolute => e.abs(),
        ErrorMode::Signed => e,
    };
    let mean = errors.iter().map(|&e| v(e)).sum::<f64>() / n;
    let rms = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let std = if errors.len() > 1 {
        (errors.iter().map(|&e| (v(e) - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let max = errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    Ok(ErrorStats {
        rms,
        mean,
        std,
        max,
        n: errors.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisStats {
    pub x: ErrorStats,
    pub y: ErrorStats,
    pub z: ErrorStats,
    /// Euclidean distance.
    pub d3: ErrorStats,
}

/// Per-axis residuals `truth - estimate` and 3D distances of aligned pairs.
pub fn axis_stats(pairs: &[AlignedPair], mode: ErrorMode) -> Result<AxisStats, EvalError> {
    let axis = |k: usize| -> Vec<f64> { pairs.iter().map(|p| p.truth.xyz()[k] - p.estimate.xyz()[k]).collect() };
    let dist: Vec<f64> = pairs.iter().map(|p| position_error(&p.estimate, &p.truth)).collect();
    Ok(AxisStats {
        x: error_stats(&axis(0), mode)?,
        y: error_stats(&axis(1), mode)?,
        z: error_stats(&axis(2), mode)?,
        d3: error_stats(&dist, ErrorMode::Absolute)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedPair {
    pub estimate: PositionEstimate,
    pub truth: PositionEstimate,
    /// `|t_estimate - t_truth|`, seconds.
    pub dt: f64,
}

fn check_sorted(series: &[PositionEstimate], what: &str) -> Result<(), EvalError> {
    match series.windows(2).position(|w| !(w[0].timestamp <= w[1].timestamp)) {
        Some(i) => Err(EvalError::Contract(format!(
            "{what} not time-sorted at index {}: {} after {}",
            i + 1,
            series[i + 1].timestamp,
            series[i].timestamp
        ))),
        None => Ok(()),
    }
}

/// Index of the sample nearest to `t` in a sorted series, earlier on ties.
fn nearest(series: &[PositionEstimate], t: f64) -> Option<usize> {
    let after = series.partition_point(|s| s.timestamp < t);
    let before = after.checked_sub(1);
    match (before, (after < series.len()).then_some(after)) {
        (Some(b), Some(a)) => {
            if t - series[b].timestamp <= series[a].timestamp - t {
                Some(b)
            } else {
                Some(a)
            }
        }
        (b, a) => b.or(a),
    }
}

/// Pairs each estimate with its nearest truth sample, dropping pairs more
/// than `max_dt` apart.
pub fn align_nearest(
    estimates: &[PositionEstimate],
    truth: &[PositionEstimate],
    max_dt: f64,
) -> Result<Vec<AlignedPair>, EvalError> {
    check_sorted(estimates, "estimates")?;
    check_sorted(truth, "truth")?;
    Ok(estimates
        .iter()
        .filter_map(|e| {
            let t = truth[nearest(truth, e.timestamp)?];
            let dt = (e.timestamp - t.timestamp).abs();
            (dt <= max_dt).then_some(AlignedPair {
                estimate: *e,
                truth: t,
                dt,
            })
        })
        .collect())
}

pub fn apply_offset(estimates: &[PositionEstimate], offset: [f64; 3]) -> Vec<PositionEstimate> {
    estimates
        .iter()
        .map(|e| PositionEstimate {
            x: e.x + offset[0],
            y: e.y + offset[1],
            z: e.z + offset[2],
            ..*e
        })
        .collect()
}

/// Least-squares constant z correction: mean of `z_truth - z_estimate`.
pub fn fit_z_offset(pairs: &[AlignedPair]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Contract("cannot fit an offset without pairs".into()));
    }
    Ok(pairs.iter().map(|p| p.truth.z - p.estimate.z).sum::<f64>() / pairs.len() as f64)
}
