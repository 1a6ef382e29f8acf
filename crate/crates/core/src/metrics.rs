//! Positive-class detection metrics: confusion counts, precision,
//! recall, F1, precision-recall curves, and distance-stratified recall.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize, threshold: f64) -> Metrics {
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        Metrics {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1: f1_score(precision, recall),
            threshold,
        }
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Confusion counts at a fixed threshold. A sample is called positive
/// when its score strictly exceeds the threshold, so a maximally
/// uncertain score of exactly 0.5 is not a detection at the default
/// threshold.
pub fn evaluate_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Metrics> {
    check_lengths("evaluate_scores", scores.len(), labels.len())?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_, tn, threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PRCurve {
    /// Points sorted by threshold; recall is non-increasing along the
    /// list and each recall level appears once, at its best precision.
    pub points: Vec<PRPoint>,
}

/// Sweeps every distinct score as a threshold (a sample counts as
/// positive when its score is >= the threshold, so the lowest threshold
/// reaches recall 1) and keeps, for each achieved recall level, the
/// point with the highest precision, breaking ties toward the larger
/// threshold.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<PRCurve> {
    check_lengths("pr_curve", scores.len(), labels.len())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let total_pos = labels.iter().filter(|&&l| l == 1).count();

    // walk thresholds from low to high, removing samples below the
    // threshold from the predicted-positive set
    let mut tp = total_pos;
    let mut pp = scores.len();
    let mut raw = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let precision = if pp == 0 { 0.0 } else { tp as f64 / pp as f64 };
        let recall = if total_pos == 0 {
            0.0
        } else {
            tp as f64 / total_pos as f64
        };
        raw.push(PRPoint {
            threshold: t,
            precision,
            recall,
        });
        while i < order.len() && scores[order[i]] == t {
            pp -= 1;
            if labels[order[i]] == 1 {
                tp -= 1;
            }
            i += 1;
        }
    }

    let mut points: Vec<PRPoint> = Vec::with_capacity(raw.len());
    for p in raw {
        match points.last_mut() {
            Some(last) if last.recall == p.recall => {
                if p.precision >= last.precision {
                    *last = p;
                }
            }
            _ => points.push(p),
        }
    }
    Ok(PRCurve { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRecall {
    /// Band covers distances in [lo, hi), meters.
    pub lo: f64,
    pub hi: f64,
    pub positives: usize,
    pub detected: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBandReport {
    pub bands: Vec<BandRecall>,
    /// Positives whose distance falls outside every band; reported so
    /// they are never silently dropped.
    pub out_of_band_positives: usize,
}

/// Recall among positives, stratified by walker-sensor distance into
/// contiguous disjoint bands starting at 0.
pub fn distance_stratified_recall(
    predictions: &[u8],
    labels: &[u8],
    distances: &[f64],
    bands: &[(f64, f64)],
) -> Result<DistanceBandReport> {
    check_lengths("distance_stratified_recall", predictions.len(), labels.len())?;
    check_lengths("distance_stratified_recall", predictions.len(), distances.len())?;
    if bands.is_empty() {
        return Err(Error::precondition(
            "distance_stratified_recall",
            "need at least one band",
        ));
    }
    let mut prev_hi = 0.0;
    for &(lo, hi) in bands {
        if lo != prev_hi || hi <= lo {
            return Err(Error::precondition(
                "distance_stratified_recall",
                format!("bands must be contiguous from 0 and nonempty, got [{lo}, {hi}) after {prev_hi}"),
            ));
        }
        prev_hi = hi;
    }

    let mut positives = vec![0usize; bands.len()];
    let mut detected = vec![0usize; bands.len()];
    let mut out_of_band = 0usize;
    for ((&pred, &label), &d) in predictions.iter().zip(labels).zip(distances) {
        if label != 1 {
            continue;
        }
        match bands.iter().position(|&(lo, hi)| d >= lo && d < hi) {
            Some(b) => {
                positives[b] += 1;
                if pred == 1 {
                    detected[b] += 1;
                }
            }
            None => out_of_band += 1,
        }
    }
    let bands = bands
        .iter()
        .zip(positives.iter().zip(&detected))
        .map(|(&(lo, hi), (&p, &d))| BandRecall {
            lo,
            hi,
            positives: p,
            detected: d,
            recall: if p == 0 { 0.0 } else { d as f64 / p as f64 },
        })
        .collect();
    Ok(DistanceBandReport {
        bands,
        out_of_band_positives: out_of_band,
    })
}

fn check_lengths(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("parallel slices of length {a} vs {b}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_give_table_metrics() {
        let m = Metrics::from_counts(6, 2, 4, 0, 0.5);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.6);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn f1_of_96_precision_97_recall_rounds_to_965() {
        let f1 = f1_score(0.96, 0.97);
        assert!((f1 - 0.965).abs() < 5e-4);
        assert_eq!(format!("{:.2}", f1), "0.96");
    }

    #[test]
    fn all_negative_predictions_are_zero_by_convention() {
        let m = evaluate_scores(&[0.1, 0.2, 0.3], &[1, 1, 0], 0.5).unwrap();
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f1, 0.0);
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (0, 0, 2, 1));
    }

    #[test]
    fn threshold_is_strict() {
        let m = evaluate_scores(&[0.5, 0.50001], &[1, 1], 0.5).unwrap();
        assert_eq!(m.tp, 1);
        assert_eq!(m.fn_, 1);
    }

    #[test]
    fn perfectly_separated_curve_has_precision_one() {
        let scores = [0.1, 0.2, 0.3, 0.8, 0.9];
        let labels = [0, 0, 0, 1, 1];
        let curve = pr_curve(&scores, &labels).unwrap();
        assert!(curve.points.iter().all(|p| p.precision == 1.0));
        assert_eq!(curve.points.first().unwrap().recall, 1.0);
    }

    #[test]
    fn constant_scores_give_single_base_rate_point() {
        let scores = [0.5; 8];
        let labels = [1, 0, 0, 1, 0, 0, 0, 0];
        let curve = pr_curve(&scores, &labels).unwrap();
        assert_eq!(curve.points.len(), 1);
        let p = curve.points[0];
        assert_eq!(p.threshold, 0.5);
        assert_eq!(p.precision, 0.25);
        assert_eq!(p.recall, 1.0);
    }

    #[test]
    fn curve_recall_non_increasing_in_threshold() {
        let scores = [0.9, 0.1, 0.4, 0.4, 0.7, 0.2, 0.55];
        let labels = [1, 0, 1, 0, 1, 1, 0];
        let curve = pr_curve(&scores, &labels).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[0].threshold < w[1].threshold);
            assert!(w[0].recall >= w[1].recall);
        }
    }

    #[test]
    fn one_positive_per_band_all_detected() {
        let bands = [(0.0, 5.0), (5.0, 10.0), (10.0, 15.0)];
        let report = distance_stratified_recall(
            &[1, 1, 1],
            &[1, 1, 1],
            &[2.0, 7.0, 12.0],
            &bands,
        )
        .unwrap();
        assert!(report.bands.iter().all(|b| b.recall == 1.0));
        assert_eq!(report.out_of_band_positives, 0);
    }

    #[test]
    fn missed_far_band_leaves_others_unaffected() {
        let bands = [(0.0, 5.0), (5.0, 10.0), (10.0, 15.0)];
        let report = distance_stratified_recall(
            &[1, 1, 0, 0],
            &[1, 1, 1, 1],
            &[2.0, 7.0, 11.0, 14.0],
            &bands,
        )
        .unwrap();
        assert_eq!(report.bands[0].recall, 1.0);
        assert_eq!(report.bands[1].recall, 1.0);
        assert_eq!(report.bands[2].recall, 0.0);
    }

    #[test]
    fn hand_built_twelve_sample_case() {
        let bands = [(0.0, 5.0), (5.0, 10.0), (10.0, 15.0)];
        // band 0: 2 positives, both detected; band 1: 3 positives, 2
        // detected; band 2: 4 positives, 1 detected; 1 positive at 16 m
        // out of band; 2 negatives ignored
        let labels = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0];
        let preds = [1, 1, 1, 1, 0, 1, 0, 0, 0, 1, 1, 0];
        let dists = [1.0, 4.0, 5.0, 6.0, 9.0, 10.0, 11.0, 12.0, 14.0, 16.0, 3.0, 8.0];
        let report = distance_stratified_recall(&preds, &labels, &dists, &bands).unwrap();
        assert_eq!(report.bands[0].positives, 2);
        assert_eq!(report.bands[0].recall, 1.0);
        assert_eq!(report.bands[1].positives, 3);
        assert!((report.bands[1].recall - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.bands[2].positives, 4);
        assert_eq!(report.bands[2].recall, 0.25);
        assert_eq!(report.out_of_band_positives, 1);
    }

    #[test]
    fn bands_with_gap_or_overlap_rejected() {
        let gap = [(0.0, 5.0), (6.0, 10.0)];
        assert!(distance_stratified_recall(&[1], &[1], &[2.0], &gap).is_err());
        let overlap = [(0.0, 5.0), (4.0, 10.0)];
        assert!(distance_stratified_recall(&[1], &[1], &[2.0], &overlap).is_err());
    }
}
