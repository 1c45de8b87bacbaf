//! Confusion matrices and precision/recall/F1 reports.
//!
//! Every ratio with an empty denominator is reported as 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NUM_DETAILS;

pub const DETAIL_NAMES: [&str; NUM_DETAILS] = ["illumination", "clarity", "contrast"];

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Each nonempty row divided by its sum; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter().map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 }).collect()
            })
            .collect()
    }

    pub fn to_csv(&self, normalized: bool) -> String {
        let c = self.num_classes();
        let mut out = String::from("truth");
        for j in 0..c {
            out.push_str(&format!(",pred_{j}"));
        }
        out.push('\n');
        let norm = self.row_normalized();
        for i in 0..c {
            out.push_str(&i.to_string());
            for j in 0..c {
                if normalized {
                    out.push_str(&format!(",{:.6}", norm[i][j]));
                } else {
                    out.push_str(&format!(",{}", self.counts[i][j]));
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::invalid(format!("{} truth labels vs {} predictions", truth.len(), pred.len())));
    }
    if num_classes == 0 {
        return Err(Error::invalid("confusion matrix needs at least one class"));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::invalid(format!("label pair ({t}, {p}) out of range for {num_classes} classes")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl BinaryScores {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        Self {
            precision,
            recall,
            f1,
            support: tp + fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// One-vs-all scores per class.
    pub per_class: Vec<BinaryScores>,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub n: u64,
    /// For two-class problems, the scores of the bad-quality class (0).
    pub positive: Option<BinaryScores>,
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let c = cm.num_classes();
    let per_class: Vec<BinaryScores> = (0..c)
        .map(|k| {
            let tp = cm.counts[k][k];
            let fp = (0..c).filter(|&i| i != k).map(|i| cm.counts[i][k]).sum();
            let fn_ = cm.support(k) - tp;
            BinaryScores::from_counts(tp, fp, fn_)
        })
        .collect();
    let macro_f1 = per_class.iter().map(|s| s.f1).sum::<f64>() / c as f64;
    let trace: u64 = (0..c).map(|k| cm.counts[k][k]).sum();
    MetricsReport {
        positive: (c == 2).then(|| per_class[0]),
        macro_f1,
        accuracy: ratio(trace, cm.total()),
        n: cm.total(),
        per_class,
    }
}

/// Macro-F1 straight from labels, for model selection and bootstrap loops.
pub fn macro_f1(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<f64> {
    Ok(classification_metrics(&confusion_matrix(truth, pred, num_classes)?).macro_f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailReport {
    pub threshold: f64,
    /// Scores with good (label 1) as the positive class.
    pub details: Vec<BinaryScores>,
    pub prevalence: Vec<f64>,
    pub mean_f1: f64,
    pub n: u64,
}

/// Per-detail binary scores; `p >= threshold` predicts good.
pub fn detail_metrics(truth: &[[u8; NUM_DETAILS]], probs: &[[f64; NUM_DETAILS]], threshold: f64) -> Result<DetailReport> {
    if truth.len() != probs.len() {
        return Err(Error::invalid(format!("{} detail label rows vs {} probability rows", truth.len(), probs.len())));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut details = Vec::with_capacity(NUM_DETAILS);
    let mut prevalence = Vec::with_capacity(NUM_DETAILS);
    for j in 0..NUM_DETAILS {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (t, p) in truth.iter().zip(probs) {
            if t[j] > 1 {
                return Err(Error::invalid(format!("detail label {} is not binary", t[j])));
            }
            match (t[j] == 1, p[j] >= threshold) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        let s = BinaryScores::from_counts(tp, fp, fn_);
        prevalence.push(ratio(s.support, truth.len() as u64));
        details.push(s);
    }
    Ok(DetailReport {
        threshold,
        mean_f1: details.iter().map(|s| s.f1).sum::<f64>() / NUM_DETAILS as f64,
        details,
        prevalence,
        n: truth.len() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_confusion_matrix() {
        let cm = confusion_matrix(&[0, 1, 2], &[0, 2, 2], 3).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 0, 1], vec![0, 0, 1]]);
        let r = classification_metrics(&cm);
        let f1: Vec<f64> = r.per_class.iter().map(|s| s.f1).collect();
        assert_eq!(f1[0], 1.0);
        assert_eq!(f1[1], 0.0);
        assert!((f1[2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.macro_f1 - 5.0 / 9.0).abs() < 1e-12);
        assert!(confusion_matrix(&[3], &[0], 3).is_err());
        assert_eq!(confusion_matrix(&[], &[], 2).unwrap().total(), 0);
    }

    #[test]
    fn empty_class_counts_as_zero() {
        let cm = confusion_matrix(&[0, 1, 0], &[0, 1, 0], 3).unwrap();
        let r = classification_metrics(&cm);
        assert_eq!(r.per_class[2].f1, 0.0);
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(cm.row_normalized()[2], vec![0.0; 3]);
    }

    #[test]
    fn binary_reports_bad_class() {
        let cm = confusion_matrix(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        let pos = classification_metrics(&cm).positive.unwrap();
        assert_eq!((pos.precision, pos.recall), (1.0, 0.5));
    }

    #[test]
    fn detail_threshold_boundary() {
        let truth = [[1, 0, 1], [0, 0, 1], [1, 1, 1], [0, 0, 0]];
        let r = detail_metrics(&truth, &[[0.5; 3]; 4], 0.5).unwrap();
        for j in 0..3 {
            assert_eq!(r.details[j].recall, if r.prevalence[j] > 0.0 { 1.0 } else { 0.0 });
            assert_eq!(r.details[j].precision, r.prevalence[j]);
        }
        let exact: Vec<[f64; 3]> = truth.iter().map(|t| t.map(f64::from)).collect();
        let r = detail_metrics(&truth, &exact, 0.5).unwrap();
        assert!(r.details.iter().all(|s| s.f1 == 1.0));
        assert!(detail_metrics(&truth, &exact[..2], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn normalized_rows_sum_to_one(pairs in prop::collection::vec((0usize..4, 0usize..4), 0..60)) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let cm = confusion_matrix(&t, &p, 4).unwrap();
            for (i, row) in cm.row_normalized().iter().enumerate() {
                let s: f64 = row.iter().sum();
                if cm.support(i) > 0 {
                    prop_assert!((s - 1.0).abs() < 1e-12);
                } else {
                    prop_assert_eq!(s, 0.0);
                }
            }
        }

        #[test]
        fn macro_f1_invariant_under_relabeling(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60), perm_idx in 0usize..6) {
            const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let perm = PERMS[perm_idx];
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let a = macro_f1(&t, &p, 3).unwrap();
            let tp: Vec<usize> = t.iter().map(|&x| perm[x]).collect();
            let pp: Vec<usize> = p.iter().map(|&x| perm[x]).collect();
            prop_assert!((a - macro_f1(&tp, &pp, 3).unwrap()).abs() < 1e-12);
        }
    }
}
