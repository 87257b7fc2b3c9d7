use std::fmt::Write as _;

use super::{
    align_nearest, apply_offset, axis_stats, classify, nearest, AxisStats, ErrorMode, ErrorStats, EvalError, Outcome,
};
use crate::geometry::PositionEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OutcomeCounts {
    pub np: usize,
    pub wp: usize,
    pub cp: usize,
    pub rp: usize,
}

impl OutcomeCounts {
    pub fn add(&mut self, o: Outcome) {
        *self.slot(o) += 1;
    }

    pub fn get(&self, o: Outcome) -> usize {
        match o {
            Outcome::Np => self.np,
            Outcome::Wp => self.wp,
            Outcome::Cp => self.cp,
            Outcome::Rp => self.rp,
        }
    }

    fn slot(&mut self, o: Outcome) -> &mut usize {
        match o {
            Outcome::Np => &mut self.np,
            Outcome::Wp => &mut self.wp,
            Outcome::Cp => &mut self.cp,
            Outcome::Rp => &mut self.rp,
        }
    }

    pub fn total(&self) -> usize {
        self.np + self.wp + self.cp + self.rp
    }
}

/// One row group of the report: a localizer scored against the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: String,
    /// Estimates the method emitted.
    pub updates: usize,
    /// Evaluated frames, one per truth sample.
    pub scans: usize,
    pub outcomes: OutcomeCounts,
    /// Absent when no estimate aligned with the truth.
    pub stats: Option<AxisStats>,
    /// Offset added to every estimate before scoring.
    pub offset: [f64; 3],
}

impl MethodReport {
    pub fn rms_3d(&self) -> Option<f64> {
        self.stats.map(|s| s.d3.rms)
    }
}

/// Scores `estimates` against `truth` (both time-sorted).
///
/// Statistics use every estimate paired with its nearest truth sample within
/// `max_dt`. Each truth sample is one frame; its outcome comes from the
/// nearest estimate within `max_dt`, or NP without one.
pub fn evaluate_method(
    method: &str,
    estimates: &[PositionEstimate],
    truth: &[PositionEstimate],
    max_dt: f64,
    offset: [f64; 3],
) -> Result<MethodReport, EvalError> {
    let shifted = apply_offset(estimates, offset);
    let pairs = align_nearest(&shifted, truth, max_dt)?;
    let stats = if pairs.is_empty() {
        None
    } else {
        Some(axis_stats(&pairs, ErrorMode::Absolute)?)
    };
    let mut outcomes = OutcomeCounts::default();
    for t in truth {
        let pred = nearest(&shifted, t.timestamp)
            .map(|i| &shifted[i])
            .filter(|e| (e.timestamp - t.timestamp).abs() <= max_dt);
        outcomes.add(classify(pred, t));
    }
    Ok(MethodReport {
        method: method.to_string(),
        updates: estimates.len(),
        scans: truth.len(),
        outcomes,
        stats,
        offset,
    })
}

const AXES: [&str; 4] = ["x", "y", "z", "3d"];

fn axes(s: &AxisStats) -> [ErrorStats; 4] {
    [s.x, s.y, s.z, s.d3]
}

/// One row per method and axis; statistics are blank when nothing aligned.
pub fn render_csv(reports: &[MethodReport]) -> String {
    let mut out = String::from("method,updates,scans,np,wp,cp,rp,z_offset,axis,n,rms,mean,std,max\n");
    for r in reports {
        let o = &r.outcomes;
        for (i, axis) in AXES.iter().enumerate() {
            write!(
                out,
                "{},{},{},{},{},{},{},{},{axis},",
                r.method, r.updates, r.scans, o.np, o.wp, o.cp, o.rp, r.offset[2]
            )
            .unwrap();
            match &r.stats {
                Some(s) => {
                    let e = axes(s)[i];
                    writeln!(out, "{},{},{},{},{}", e.n, e.rms, e.mean, e.std, e.max).unwrap();
                }
                None => out.push_str("0,,,,\n"),
            }
        }
    }
    out
}

/// Summary table, per-axis statistics and an outcome histogram per method.
pub fn render_text(reports: &[MethodReport]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<12} {:>9} {:>8} {:>10}",
        "method", "# updates", "# scans", "RMS 3D (m)"
    )
    .unwrap();
    for r in reports {
        let rms = r.rms_3d().map_or("-".to_string(), |v| format!("{v:.3}"));
        writeln!(out, "{:<12} {:>9} {:>8} {:>10}", r.method, r.updates, r.scans, rms).unwrap();
    }
    for r in reports {
        writeln!(out).unwrap();
        if r.offset != [0.0; 3] {
            writeln!(
                out,
                "{} (offset {:+.3}, {:+.3}, {:+.3} m)",
                r.method, r.offset[0], r.offset[1], r.offset[2]
            )
            .unwrap();
        } else {
            writeln!(out, "{}", r.method).unwrap();
        }
        writeln!(
            out,
            "  {:<4} {:>6} {:>8} {:>8} {:>8} {:>8}",
            "axis", "n", "RMS(m)", "mean(m)", "std(m)", "max(m)"
        )
        .unwrap();
        match &r.stats {
            Some(s) => {
                for (axis, e) in AXES.iter().zip(axes(s)) {
                    writeln!(
                        out,
                        "  {:<4} {:>6} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
                        axis, e.n, e.rms, e.mean, e.std, e.max
                    )
                    .unwrap();
                }
            }
            None => writeln!(out, "  no aligned estimates").unwrap(),
        }
        let total = r.outcomes.total().max(1);
        for o in Outcome::ALL {
            let c = r.outcomes.get(o);
            let bar = "#".repeat((c * 40).div_ceil(total));
            writeln!(out, "  {o} {c:>6} {:>5.1}% {bar}", 100.0 * c as f64 / total as f64).unwrap();
        }
    }
    out
}
