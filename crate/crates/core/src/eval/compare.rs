//! Evaluation reports and paired model comparison.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{classification_metrics, confusion_matrix, macro_f1, ConfusionMatrix, DetailReport, MetricsReport, DETAIL_NAMES};
use super::stats::{bootstrap_indices, percentile_interval, wilcoxon_signed_rank, BootstrapCi, StatTestResult, Tail};
use crate::error::{Error, Result};

pub const ZERO_DIVISION_NOTE: &str = "precision, recall and F1 with an empty denominator are reported as 0";
pub const PAIRING_NOTE: &str = "significance pairs are bootstrap replicates of the test set, shared by both models";

/// Per-sample overall-quality outcomes of one model on a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub ids: Vec<String>,
    pub truth: Vec<usize>,
    pub pred: Vec<usize>,
    pub num_classes: usize,
}

impl Predictions {
    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.truth.len() || self.truth.len() != self.pred.len() {
            return Err(Error::invalid("prediction vectors differ in length"));
        }
        Ok(())
    }

    pub fn confusion(&self) -> Result<ConfusionMatrix> {
        confusion_matrix(&self.truth, &self.pred, self.num_classes)
    }
}

/// Metrics of one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub overall: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub confusion_normalized: Vec<Vec<f64>>,
    pub details: Option<DetailReport>,
    pub note: String,
}

impl EvalReport {
    pub fn new(model: &str, preds: &Predictions, details: Option<DetailReport>) -> Result<Self> {
        preds.validate()?;
        let confusion = preds.confusion()?;
        Ok(Self {
            model: model.to_string(),
            overall: classification_metrics(&confusion),
            confusion_normalized: confusion.row_normalized(),
            confusion,
            details,
            note: ZERO_DIVISION_NOTE.into(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model: {}  (n = {})", self.model, self.overall.n);
        let _ = writeln!(s, "{:<10}{:>10}{:>10}{:>10}{:>10}", "class", "precision", "recall", "f1", "support");
        for (k, c) in self.overall.per_class.iter().enumerate() {
            let _ = writeln!(s, "{:<10}{:>10.4}{:>10.4}{:>10.4}{:>10}", k, c.precision, c.recall, c.f1, c.support);
        }
        let _ = writeln!(s, "macro-F1 {:.4}   accuracy {:.4}", self.overall.macro_f1, self.overall.accuracy);
        if let Some(p) = &self.overall.positive {
            let _ = writeln!(s, "bad class as positive: Pr {:.4}  Re {:.4}  F1 {:.4}", p.precision, p.recall, p.f1);
        }
        let _ = writeln!(s, "row-normalized confusion (rows truth, cols prediction):");
        for row in &self.confusion_normalized {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>7.3}")).collect();
            let _ = writeln!(s, "  {}", cells.join(""));
        }
        if let Some(d) = &self.details {
            let _ = writeln!(s, "details (good positive, p >= {}):", d.threshold);
            for (name, sc) in DETAIL_NAMES.iter().zip(&d.details) {
                let _ = writeln!(s, "  {:<13}Pr {:.4}  Re {:.4}  F1 {:.4}", name, sc.precision, sc.recall, sc.f1);
            }
        }
        let _ = writeln!(s, "note: {}", self.note);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model_a: EvalReport,
    pub model_b: EvalReport,
    /// Per-class F1 of A minus B.
    pub f1_deltas: Vec<f64>,
    pub macro_f1_delta: f64,
    pub ci_a: BootstrapCi,
    pub ci_b: BootstrapCi,
    pub replicates: usize,
    pub alpha: f64,
    /// `Err` text when the replicate pairs are all tied.
    pub wilcoxon: std::result::Result<StatTestResult, String>,
    pub notes: Vec<String>,
}

/// Compares two models on an identical test set: macro-F1 is computed on
/// `b` shared bootstrap replicates, which form the Wilcoxon pairs.
pub fn compare_models(
    name_a: &str,
    a: &Predictions,
    name_b: &str,
    b: &Predictions,
    tail: Tail,
    replicates: usize,
    alpha: f64,
    seed: u64,
) -> Result<Comparison> {
    a.validate()?;
    b.validate()?;
    if a.ids != b.ids || a.truth != b.truth || a.num_classes != b.num_classes {
        return Err(Error::invalid("models were not evaluated on the identical test set"));
    }
    let report_a = EvalReport::new(name_a, a, None)?;
    let report_b = EvalReport::new(name_b, b, None)?;
    let (reps_a, reps_b) = replicate_macro_f1(a, b, replicates, seed)?;
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 0.5)")));
    }
    let f1_deltas = report_a
        .overall
        .per_class
        .iter()
        .zip(&report_b.overall.per_class)
        .map(|(x, y)| x.f1 - y.f1)
        .collect();
    let wilcoxon = wilcoxon_signed_rank(&reps_a, &reps_b, tail).map_err(|e| e.to_string());
    Ok(Comparison {
        macro_f1_delta: report_a.overall.macro_f1 - report_b.overall.macro_f1,
        ci_a: percentile_interval(&reps_a, alpha, report_a.overall.macro_f1),
        ci_b: percentile_interval(&reps_b, alpha, report_b.overall.macro_f1),
        model_a: report_a,
        model_b: report_b,
        f1_deltas,
        replicates,
        alpha,
        wilcoxon,
        notes: vec![ZERO_DIVISION_NOTE.into(), PAIRING_NOTE.into()],
    })
}

/// Macro-F1 of both models on the same `replicates` bootstrap resamples.
pub fn replicate_macro_f1(a: &Predictions, b: &Predictions, replicates: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = a.truth.len();
    if n == 0 {
        return Err(Error::invalid("empty test set"));
    }
    if replicates < 100 {
        return Err(Error::invalid(format!("bootstrap needs at least 100 replicates, got {replicates}")));
    }
    let (mut ra, mut rb) = (Vec::with_capacity(replicates), Vec::with_capacity(replicates));
    let (mut t, mut pa, mut pb) = (vec![0; n], vec![0; n], vec![0; n]);
    for idx in bootstrap_indices(n, replicates, seed) {
        for (k, &i) in idx.iter().enumerate() {
            t[k] = a.truth[i];
            pa[k] = a.pred[i];
            pb[k] = b.pred[i];
        }
        ra.push(macro_f1(&t, &pa, a.num_classes)?);
        rb.push(macro_f1(&t, &pb, a.num_classes)?);
    }
    Ok((ra, rb))
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let (a, b) = (&self.model_a, &self.model_b);
        let _ = writeln!(s, "{:<10}{:>12}{:>12}{:>10}", "class F1", a.model, b.model, "delta");
        for (k, d) in self.f1_deltas.iter().enumerate() {
            let _ = writeln!(s, "{:<10}{:>12.4}{:>12.4}{:>+10.4}", k, a.overall.per_class[k].f1, b.overall.per_class[k].f1, d);
        }
        let _ = writeln!(s, "{:<10}{:>12.4}{:>12.4}{:>+10.4}", "macro", a.overall.macro_f1, b.overall.macro_f1, self.macro_f1_delta);
        let _ = writeln!(s, "{:<10}{:>12.4}{:>12.4}", "accuracy", a.overall.accuracy, b.overall.accuracy);
        let pct = 100.0 * (1.0 - self.alpha);
        let _ = writeln!(s, "{pct:.0}% bootstrap CI ({} replicates):", self.replicates);
        let _ = writeln!(s, "  {:<10}[{:.4}, {:.4}]", a.model, self.ci_a.low, self.ci_a.high);
        let _ = writeln!(s, "  {:<10}[{:.4}, {:.4}]", b.model, self.ci_b.low, self.ci_b.high);
        match &self.wilcoxon {
            Ok(w) => {
                let _ = writeln!(s, "Wilcoxon signed-rank ({} tail, n = {}): W = {:.1}, p = {:.4e}", w.tail, w.n, w.statistic, w.p_value);
            }
            Err(e) => {
                let _ = writeln!(s, "Wilcoxon signed-rank: not computed ({e})");
            }
        }
        for (r, title) in [(a, &a.model), (b, &b.model)] {
            let _ = writeln!(s, "row-normalized confusion, {title}:");
            for row in &r.confusion_normalized {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:>7.3}")).collect();
                let _ = writeln!(s, "  {}", cells.join(""));
            }
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds(pred: Vec<usize>) -> Predictions {
        let truth: Vec<usize> = (0..pred.len()).map(|i| i % 3).collect();
        Predictions {
            ids: (0..pred.len()).map(|i| format!("s{i}")).collect(),
            truth,
            pred,
            num_classes: 3,
        }
    }

    #[test]
    fn self_comparison_has_zero_deltas() {
        let p = preds((0..30).map(|i| (i * 7) % 3).collect());
        let c = compare_models("x", &p, "y", &p, Tail::Two, 200, 0.05, 1).unwrap();
        assert!(c.f1_deltas.iter().all(|&d| d == 0.0));
        assert!(c.wilcoxon.is_err());
        assert!(c.to_text().contains("not computed"));
    }

    #[test]
    fn dominating_model_gets_minimal_p() {
        let perfect = preds((0..60).map(|i| i % 3).collect());
        let noisy = preds((0..60).map(|i| if i % 4 == 0 { (i + 1) % 3 } else { i % 3 }).collect());
        let c = compare_models("a", &perfect, "b", &noisy, Tail::Greater, 200, 0.05, 3).unwrap();
        let w = c.wilcoxon.unwrap();
        assert_eq!(w.statistic, 0.0);
        assert!(w.p_value < 1e-10);
        assert!(c.macro_f1_delta > 0.0);
    }

    #[test]
    fn mismatched_sets_rejected() {
        let a = preds(vec![0; 10]);
        let mut b = a.clone();
        b.ids[0] = "other".into();
        assert!(compare_models("a", &a, "b", &b, Tail::Two, 200, 0.05, 1).is_err());
    }
}
