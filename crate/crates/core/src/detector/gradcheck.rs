//! Central-difference check of the analytic gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::anchors::{AnchorGrid, RegressionTargets};
use super::network::{loss_and_gradients, training_loss};
use super::weights::ModelWeights;
use super::DetectorError;
use crate::pillars::PillarTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub entries: usize,
    /// Candidates rejected because the stencil crossed a ReLU, max-pool or
    /// smooth-L1 branch, where central differences are not meaningful.
    pub skipped: usize,
    /// `(entry, analytic, numeric)` of the largest relative error.
    pub worst: Option<(usize, f64, f64)>,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
}

/// Compares analytic gradients of the training loss with central differences
/// on up to `per_group` seeded entries of every trainable tensor.
///
/// An entry is only scored when the loss at `w - step`, `w` and `w + step`
/// takes the same branch everywhere; otherwise another entry is drawn.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    weights: &ModelWeights<f64>,
    batch: &[&PillarTensor],
    targets: &[&RegressionTargets],
    anchors: &AnchorGrid,
    per_group: usize,
    step: f64,
    floor: f64,
    seed: u64,
) -> Result<Vec<GroupCheck>, DetectorError> {
    let (_, analytic, _) = loss_and_gradients(weights, batch, targets, anchors)?;
    let (_, base_sig) = training_loss(weights, batch, targets, anchors)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = weights.clone();
    let mut out = Vec::new();
    for (pi, p) in weights.params.iter().enumerate() {
        if !p.trainable {
            continue;
        }
        let mut order: Vec<usize> = (0..p.data.len()).collect();
        order.shuffle(&mut rng);
        let mut check = GroupCheck {
            name: p.name.clone(),
            entries: 0,
            skipped: 0,
            worst: None,
            max_rel_error: 0.0,
        };
        for e in order {
            if check.entries == per_group {
                break;
            }
            let orig = p.data[e];
            let mut values = [0.0; 2];
            let mut crossed = false;
            for (v, k) in values.iter_mut().zip([-1.0, 1.0]) {
                probe.params[pi].data[e] = orig + k * step;
                let (loss, sig) = training_loss(&probe, batch, targets, anchors)?;
                *v = loss;
                crossed |= sig != base_sig;
            }
            probe.params[pi].data[e] = orig;
            if crossed {
                check.skipped += 1;
                continue;
            }
            let numeric = (values[1] - values[0]) / (2.0 * step);
            let a = analytic[pi][e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if check.worst.is_none() || rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst = Some((e, a, numeric));
            }
            check.entries += 1;
        }
        out.push(check);
    }
    Ok(out)
}
