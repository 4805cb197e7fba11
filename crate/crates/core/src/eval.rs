//! Test-set IOU and severity histograms.
//!
//! The IOU metric matches predictions to ground truths one-to-one, greedily
//! in descending IOU order, ignoring categories. Each ground truth scores
//! the IOU of its match, or 0 if it stays unmatched; the metric is the mean
//! over all ground truths. Surplus predictions (false positives) do not
//! lower the score.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox};
use crate::SEVERITY_LEVELS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("mean IOU is undefined without ground-truth boxes")]
    NoGroundTruth,
    #[error("{predictions} prediction list(s) for {truths} image(s)")]
    Misaligned { predictions: usize, truths: usize },
}

/// Matched IOU of every ground truth in one image, in input order.
pub fn matched_ious(predictions: &[BBox], truths: &[BBox]) -> Vec<f64> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (g, gt) in truths.iter().enumerate() {
        for (p, pred) in predictions.iter().enumerate() {
            let v = iou(pred, gt);
            if v > 0.0 {
                pairs.push((v, g, p));
            }
        }
    }
    // Highest IOU first; index order breaks ties.
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut scores = vec![0.0; truths.len()];
    let mut gt_used = vec![false; truths.len()];
    let mut pred_used = vec![false; predictions.len()];
    for (v, g, p) in pairs {
        if !gt_used[g] && !pred_used[p] {
            gt_used[g] = true;
            pred_used[p] = true;
            scores[g] = v;
        }
    }
    scores
}

pub fn mean_test_iou(predictions: &[Vec<BBox>], truths: &[Vec<BBox>]) -> Result<f64, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::Misaligned {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, t) in predictions.iter().zip(truths) {
        for v in matched_ious(p, t) {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityHistogram {
    pub counts: [usize; SEVERITY_LEVELS],
    /// Counts over total; all zero when `empty`.
    pub densities: [f64; SEVERITY_LEVELS],
    pub empty: bool,
}

impl SeverityHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Histogram of severity categories. Categories outside `0..3` are ignored.
pub fn severity_distribution(categories: impl IntoIterator<Item = usize>) -> SeverityHistogram {
    let mut counts = [0usize; SEVERITY_LEVELS];
    for c in categories {
        if let Some(slot) = counts.get_mut(c) {
            *slot += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let mut densities = [0.0; SEVERITY_LEVELS];
    if total > 0 {
        for (d, &c) in densities.iter_mut().zip(&counts) {
            *d = c as f64 / total as f64;
        }
    }
    SeverityHistogram {
        counts,
        densities,
        empty: total == 0,
    }
}

/// Two histograms as an aligned text table, one row per severity.
pub fn side_by_side(left_title: &str, left: &SeverityHistogram, right_title: &str, right: &SeverityHistogram) -> String {
    const NAMES: [&str; SEVERITY_LEVELS] = ["low", "middle", "high"];
    let mut out = String::new();
    writeln!(out, "{:<8} {:>22} {:>22}", "severity", left_title, right_title).unwrap();
    for (l, name) in NAMES.iter().enumerate() {
        writeln!(
            out,
            "{:<8} {:>13} ({:.4}) {:>13} ({:.4})",
            name, left.counts[l], left.densities[l], right.counts[l], right.densities[l]
        )
        .unwrap();
    }
    writeln!(
        out,
        "{:<8} {:>13} ({:.4}) {:>13} ({:.4})",
        "total",
        left.total(),
        left.densities.iter().sum::<f64>(),
        right.total(),
        right.densities.iter().sum::<f64>()
    )
    .unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox { cx, cy, w, h }
    }

    #[test]
    fn identical_predictions_score_one() {
        let gts = vec![vec![b(0.2, 0.2, 0.1, 0.1), b(0.7, 0.6, 0.2, 0.1)]];
        assert_eq!(mean_test_iou(&gts, &gts).unwrap(), 1.0);
    }

    #[test]
    fn no_predictions_score_zero() {
        let gts = vec![vec![b(0.2, 0.2, 0.1, 0.1)]];
        assert_eq!(mean_test_iou(&[vec![]], &gts).unwrap(), 0.0);
    }

    #[test]
    fn empty_ground_truth_is_undefined() {
        assert_eq!(mean_test_iou(&[vec![]], &[vec![]]), Err(EvalError::NoGroundTruth));
    }

    #[test]
    fn one_prediction_matches_one_truth() {
        // Both truths overlap the single prediction; only the better one keeps it.
        let p = vec![vec![b(0.5, 0.5, 0.2, 0.2)]];
        let t = vec![vec![b(0.5, 0.5, 0.2, 0.2), b(0.52, 0.5, 0.2, 0.2)]];
        assert_eq!(matched_ious(&p[0], &t[0])[1], 0.0);
        assert_eq!(mean_test_iou(&p, &t).unwrap(), 0.5);
    }

    #[test]
    fn histogram_counts_and_densities() {
        let h = severity_distribution([0, 0, 1, 2, 2, 2]);
        assert_eq!(h.counts, [2, 1, 3]);
        assert_eq!(h.densities, [2.0 / 6.0, 1.0 / 6.0, 3.0 / 6.0]);
        assert!(!h.empty);
        let e = severity_distribution([]);
        assert_eq!(e.counts, [0, 0, 0]);
        assert!(e.empty);
    }
}
