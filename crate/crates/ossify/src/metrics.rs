//! Many-label segmentation metrics and the cross-entropy + soft-Dice loss.
//!
//! The metric family follows the usual bone-segmentation evaluation
//! recipe: per-class Dice scores (classes absent from both volumes are
//! omitted rather than scored), a merged-foreground Dice, the fraction of
//! scored classes that were detected at all, and robust distribution
//! summaries (median with 16th/84th percentiles).  The loss consumes
//! ground truth in sparse integer-label form — with over a hundred classes,
//! materialising one-hot tensors would dwarf the image data itself.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::LabelVolume;

/// Smoothing constant for soft Dice (numerator and denominator alike);
/// also the predicted-mass threshold above which an absent-from-gt class
/// still gets scored.
pub const DICE_EPSILON: f64 = 1e-5;

/// Probability floor inside the cross-entropy logarithm.
pub const XENT_FLOOR: f64 = 1e-12;

fn check_dims(what: &str, a: [usize; 3], b: [usize; 3]) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch(format!("{what}: dims {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Per-class Dice similarity coefficients.
///
/// For every class with at least one voxel in either volume,
/// `DSC_c = 2·|pred_c ∩ gt_c| / (|pred_c| + |gt_c|)`; classes absent from
/// both are omitted from the map entirely.  `exclude_background` drops
/// class 0 from the result.
pub fn dsc_per_class(
    pred: &LabelVolume,
    gt: &LabelVolume,
    exclude_background: bool,
) -> Result<BTreeMap<u16, f64>> {
    check_dims("dsc_per_class", pred.dims, gt.dims)?;
    if pred.num_classes != gt.num_classes {
        return Err(Error::InvalidArgument(format!(
            "dsc_per_class: class counts differ ({} vs {})",
            pred.num_classes, gt.num_classes
        )));
    }
    let nc = pred.num_classes as usize;
    let mut inter = vec![0u64; nc];
    let mut p_count = vec![0u64; nc];
    let mut g_count = vec![0u64; nc];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        p_count[p as usize] += 1;
        g_count[g as usize] += 1;
        if p == g {
            inter[p as usize] += 1;
        }
    }
    let mut out = BTreeMap::new();
    for c in 0..nc {
        if exclude_background && c == 0 {
            continue;
        }
        let denom = p_count[c] + g_count[c];
        if denom > 0 {
            out.insert(c as u16, 2.0 * inter[c] as f64 / denom as f64);
        }
    }
    Ok(out)
}

/// Dice of the merged foreground: background complements on both sides,
/// intersected voxel-wise.  Errors when both volumes are entirely
/// background (the score would be 0/0).
pub fn dsc_foreground(pred: &LabelVolume, gt: &LabelVolume) -> Result<f64> {
    check_dims("dsc_foreground", pred.dims, gt.dims)?;
    let mut inter = 0u64;
    let mut p_fg = 0u64;
    let mut g_fg = 0u64;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let pf = p != 0;
        let gf = g != 0;
        p_fg += pf as u64;
        g_fg += gf as u64;
        inter += (pf && gf) as u64;
    }
    if p_fg + g_fg == 0 {
        return Err(Error::InvalidArgument(
            "undefined foreground DSC: both volumes are entirely background".into(),
        ));
    }
    Ok(2.0 * inter as f64 / (p_fg + g_fg) as f64)
}

/// Fraction of scored classes whose score is strictly positive.
pub fn detection_ratio(scores: &BTreeMap<u16, f64>) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("detection_ratio: empty score map".into()));
    }
    let detected = scores.values().filter(|&&v| v > 0.0).count();
    Ok(detected as f64 / scores.len() as f64)
}

/// Aggregate segmentation scores for one (prediction, ground-truth) pair.
/// Background is excluded from the per-class map and the detection ratio.
#[derive(Debug, Clone, Serialize)]
pub struct ClassScores {
    pub dsc_per_class: BTreeMap<u16, f64>,
    pub present_in_gt: BTreeSet<u16>,
    pub detection_ratio: f64,
    pub dsc_fg: f64,
}

/// Evaluate one prediction against ground truth: per-class Dice (background
/// excluded), detection ratio over the scored classes, and foreground Dice.
pub fn class_scores(pred: &LabelVolume, gt: &LabelVolume) -> Result<ClassScores> {
    let dsc = dsc_per_class(pred, gt, true)?;
    let detection = detection_ratio(&dsc)?;
    let fg = dsc_foreground(pred, gt)?;
    let present = gt.present_classes().into_iter().filter(|&c| c != 0).collect();
    Ok(ClassScores {
        dsc_per_class: dsc,
        present_in_gt: present,
        detection_ratio: detection,
        dsc_fg: fg,
    })
}

/// Median and 16th/84th percentiles of a score distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryStats {
    pub median: f64,
    pub lower_16: f64,
    pub upper_84: f64,
    /// Number of values the summary was computed over (after any
    /// zero-dropping).
    pub n: usize,
}

/// Percentile by linear interpolation between closest order statistics:
/// rank = p/100 · (n−1), interpolating between the flanking values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Summarise a score list.  With `drop_zeros`, exact zeros (undetected
/// classes) are excluded before ranking; an empty remainder is an error.
pub fn summarize(scores: &[f64], drop_zeros: bool) -> Result<SummaryStats> {
    let mut values: Vec<f64> = scores
        .iter()
        .copied()
        .filter(|&v| !(drop_zeros && v == 0.0))
        .collect();
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "no detected classes: score list is empty after filtering".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finiteness checked"));
    Ok(SummaryStats {
        median: percentile(&values, 50.0),
        lower_16: percentile(&values, 16.0),
        upper_84: percentile(&values, 84.0),
        n: values.len(),
    })
}

/// How per-class soft-Dice losses are combined into the dice term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiceReduction {
    /// Average over scored classes — keeps the term's scale independent of
    /// how many classes the task has.
    #[default]
    Mean,
    /// Plain sum over scored classes.
    Sum,
}

/// Dense per-voxel class probabilities, voxel-major: the probability of
/// class `c` at linear voxel `v` lives at `probs[v·num_classes + c]`.
#[derive(Debug, Clone)]
pub struct SoftPrediction {
    pub dims: [usize; 3],
    pub num_classes: u16,
    probs: Vec<f32>,
}

impl SoftPrediction {
    /// Validates shape and the probability invariant: entries finite and
    /// non-negative, per-voxel sums within 1e-5 of one.
    pub fn new(dims: [usize; 3], num_classes: u16, probs: Vec<f32>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be at least 1".into()));
        }
        let n_vox = crate::volume::voxel_count(dims)?;
        let expect = n_vox
            .checked_mul(num_classes as usize)
            .ok_or_else(|| Error::InvalidArgument("probability tensor too large".into()))?;
        if probs.len() != expect {
            return Err(Error::InvalidArgument(format!(
                "probability tensor has {} entries, dims {dims:?} × {num_classes} classes need {expect}",
                probs.len()
            )));
        }
        let nc = num_classes as usize;
        for v in 0..n_vox {
            let row = &probs[v * nc..(v + 1) * nc];
            let mut sum = 0.0f64;
            for &p in row {
                if !(p.is_finite() && p >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "probability {p} at voxel {v} is not a finite non-negative value"
                    )));
                }
                sum += p as f64;
            }
            if (sum - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidArgument(format!(
                    "probabilities at voxel {v} sum to {sum}, expected 1 within 1e-5"
                )));
            }
        }
        Ok(Self { dims, num_classes, probs })
    }

    #[inline]
    pub fn prob(&self, voxel: usize, class: u16) -> f32 {
        self.probs[voxel * self.num_classes as usize + class as usize]
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }
}

/// Combined cross-entropy + soft-Dice loss against sparse integer labels.
///
/// Returns `(total, xent, dice_term)` where
/// * `xent` is the mean over voxels of `−ln(p(gt label))`, probabilities
///   floored at 1e-12;
/// * `dice_term` combines `1 − softDSC_c` over the scored classes (those
///   present in the ground truth or carrying predicted mass above
///   [`DICE_EPSILON`]), averaged or summed per `reduction`;
/// * `total = xent + dice_term`.
///
/// Soft Dice per class: `(2·Σ p_c·[gt=c] + ε) / (Σ p_c + |gt_c| + ε)`.
pub fn xent_dice_loss(
    pred: &SoftPrediction,
    gt: &LabelVolume,
    reduction: DiceReduction,
) -> Result<(f64, f64, f64)> {
    check_dims("xent_dice_loss", pred.dims, gt.dims)?;
    if gt.num_classes > pred.num_classes {
        // The prediction must cover every class the labels can contain.
        if let Some(&max_label) = gt.present_classes().last() {
            if max_label >= pred.num_classes {
                return Err(Error::InvalidArgument(format!(
                    "ground truth contains class {max_label} but the prediction has only {} classes",
                    pred.num_classes
                )));
            }
        }
    }
    let nc = pred.num_classes as usize;
    let n_vox = gt.num_voxels();

    let mut xent_sum = 0.0f64;
    let mut pred_mass = vec![0.0f64; nc];
    let mut inter = vec![0.0f64; nc];
    let mut gt_count = vec![0u64; nc];
    for (v, &g) in gt.data().iter().enumerate() {
        let row = &pred.probs[v * nc..(v + 1) * nc];
        let g = g as usize;
        for (c, &p) in row.iter().enumerate() {
            pred_mass[c] += p as f64;
        }
        inter[g] += row[g] as f64;
        gt_count[g] += 1;
        xent_sum -= (row[g] as f64).max(XENT_FLOOR).ln();
    }
    let xent = xent_sum / n_vox as f64;

    let mut dice_sum = 0.0f64;
    let mut scored = 0usize;
    for c in 0..nc {
        if gt_count[c] == 0 && pred_mass[c] <= DICE_EPSILON {
            continue;
        }
        let soft_dsc = (2.0 * inter[c] + DICE_EPSILON)
            / (pred_mass[c] + gt_count[c] as f64 + DICE_EPSILON);
        dice_sum += 1.0 - soft_dsc;
        scored += 1;
    }
    let dice_term = match reduction {
        DiceReduction::Mean => dice_sum / scored as f64,
        DiceReduction::Sum => dice_sum,
    };
    Ok((xent + dice_term, xent, dice_term))
}
