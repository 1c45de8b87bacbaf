//! Training losses and the step learning-rate schedule.
//!
//! Losses take probabilities (not logits) and clamp them to
//! `[PROB_EPS, 1 - PROB_EPS]` before taking logs. Each loss has a companion
//! `*_grad` returning `dL/dprobs` for backpropagation through the graph's
//! sigmoid/softmax nodes.

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const PROB_EPS: f64 = 1e-7;

fn clamp_p(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn check_same(targets: &Tensor, probs: &Tensor) -> Result<()> {
    if targets.shape() != probs.shape() || targets.shape().len() != 2 {
        return Err(Error::Shape {
            node: "loss".into(),
            expected: format!("rank-2 probabilities shaped like targets {:?}", targets.shape()),
            actual: probs.shape().to_vec(),
        });
    }
    Ok(())
}

/// Binary cross-entropy summed over details and averaged over samples.
/// Targets may be soft (pseudo-labels).
pub fn bce_multilabel(targets: &Tensor, probs: &Tensor) -> Result<f64> {
    check_same(targets, probs)?;
    let n = targets.shape()[0] as f64;
    let total: f64 = targets
        .data()
        .iter()
        .zip(probs.data())
        .map(|(&y, &p)| {
            let p = clamp_p(p);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-total / n)
}

pub fn bce_multilabel_grad(targets: &Tensor, probs: &Tensor) -> Result<Tensor> {
    check_same(targets, probs)?;
    let n = targets.shape()[0] as f64;
    let g = targets
        .data()
        .iter()
        .zip(probs.data())
        .map(|(&y, &p)| {
            let p = clamp_p(p);
            (-(y / p) + (1.0 - y) / (1.0 - p)) / n
        })
        .collect();
    Tensor::new(targets.shape(), g)
}

fn check_one_hot(targets: &Tensor) -> Result<()> {
    let cols = targets.shape()[1];
    for (i, row) in targets.data().chunks_exact(cols).enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != cols - 1 {
            return Err(Error::invalid(format!("target row {i} is not one-hot: {row:?}")));
        }
    }
    Ok(())
}

/// Categorical cross-entropy averaged over the batch.
pub fn ce_multiclass(targets: &Tensor, probs: &Tensor) -> Result<f64> {
    check_same(targets, probs)?;
    check_one_hot(targets)?;
    let n = targets.shape()[0] as f64;
    let total: f64 = targets
        .data()
        .iter()
        .zip(probs.data())
        .filter(|(&y, _)| y != 0.0)
        .map(|(&y, &p)| y * clamp_p(p).ln())
        .sum();
    Ok(-total / n)
}

pub fn ce_multiclass_grad(targets: &Tensor, probs: &Tensor) -> Result<Tensor> {
    check_same(targets, probs)?;
    check_one_hot(targets)?;
    let n = targets.shape()[0] as f64;
    let g = targets.data().iter().zip(probs.data()).map(|(&y, &p)| -y / clamp_p(p) / n).collect();
    Tensor::new(targets.shape(), g)
}

/// One-hot encoding of class indices.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * num_classes];
    for (i, &c) in labels.iter().enumerate() {
        if c >= num_classes {
            return Err(Error::invalid(format!("label {c} out of range for {num_classes} classes")));
        }
        data[i * num_classes + c] = 1.0;
    }
    Tensor::new(&[labels.len(), num_classes], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_a: f64,
    pub lambda_b: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_a: 1.0,
            lambda_b: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_a: f64, lambda_b: f64) -> Result<Self> {
        let w = Self { lambda_a, lambda_b };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda_a) || !ok(self.lambda_b) || (self.lambda_a == 0.0 && self.lambda_b == 0.0) {
            return Err(Error::invalid(format!(
                "loss weights must be finite, non-negative and not both zero: ({}, {})",
                self.lambda_a, self.lambda_b
            )));
        }
        Ok(())
    }
}

/// `λ_A · bce + λ_B · ce`.
pub fn multitask_loss(weights: LossWeights, bce: Option<f64>, ce: f64) -> Result<f64> {
    weights.validate()?;
    match bce {
        Some(b) => Ok(weights.lambda_a * b + weights.lambda_b * ce),
        None if weights.lambda_a > 0.0 => Err(Error::invalid("lambda_a > 0 requires a task-A loss")),
        None => Ok(weights.lambda_b * ce),
    }
}

/// Step schedule: the base rate is halved at each milestone epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub max_epochs: usize,
    pub momentum: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            base_lr: 0.01,
            milestones: vec![30, 60, 80],
            max_epochs: 115,
            momentum: 0.9,
        }
    }
}

impl Schedule {
    /// The default schedule compressed to `max_epochs`, milestones scaled
    /// proportionally (e.g. 23 epochs → halvings at 6, 12, 16).
    pub fn shortened(max_epochs: usize) -> Self {
        let full = Self::default();
        let mut milestones: Vec<usize> = full
            .milestones
            .iter()
            .map(|&m| (m * max_epochs + full.max_epochs / 2) / full.max_epochs)
            .filter(|&m| m > 0 && m < max_epochs)
            .collect();
        milestones.dedup();
        Self {
            milestones,
            max_epochs,
            ..full
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || self.max_epochs == 0 || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("schedule needs base_lr > 0, max_epochs > 0, momentum in [0, 1)"));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) || self.milestones.iter().any(|&m| m >= self.max_epochs) {
            return Err(Error::invalid(format!(
                "milestones {:?} must be strictly increasing and below max_epochs {}",
                self.milestones, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// Learning rate in effect during `epoch` (0-based); halvings apply from the
/// milestone epoch itself.
pub fn lr_at_epoch(schedule: &Schedule, epoch: usize) -> Result<f64> {
    if epoch >= schedule.max_epochs {
        return Err(Error::invalid(format!("epoch {epoch} outside [0, {})", schedule.max_epochs)));
    }
    let halvings = schedule.milestones.iter().filter(|&&m| m <= epoch).count() as i32;
    Ok(schedule.base_lr * 0.5f64.powi(halvings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::new(&[rows.len(), rows[0].len()], data).unwrap()
    }

    #[test]
    fn bce_perfect_and_half() {
        let p = 1.0 - 1e-7;
        assert!(bce_multilabel(&t(&[&[1.0, 1.0, 1.0]]), &t(&[&[p, p, p]])).unwrap() <= 1e-6);
        let v = bce_multilabel(&t(&[&[1.0, 0.0, 1.0]]), &t(&[&[0.5, 0.5, 0.5]])).unwrap();
        assert!((v - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_soft_targets() {
        // term by term: 0.9 ln .8 + .1 ln .2, .1 ln .2 + .9 ln .8, .5 ln .5 + .5 ln .5
        let expect = -(2.0 * (0.9 * 0.8f64.ln() + 0.1 * 0.2f64.ln()) + 0.5f64.ln());
        let v = bce_multilabel(&t(&[&[0.9, 0.1, 0.5]]), &t(&[&[0.8, 0.2, 0.5]])).unwrap();
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn ce_cases() {
        let p = 1.0 - 1e-7;
        assert!(ce_multiclass(&t(&[&[0.0, 1.0, 0.0]]), &t(&[&[5e-8, p, 5e-8]])).unwrap() < 1e-6);
        let third = 1.0 / 3.0;
        let v = ce_multiclass(&t(&[&[1.0, 0.0, 0.0]]), &t(&[&[third, third, third]])).unwrap();
        assert!((v - 3f64.ln()).abs() < 1e-12);
        let v = ce_multiclass(&t(&[&[1.0, 0.0], &[0.0, 1.0]]), &t(&[&[0.7, 0.3], &[0.8, 0.2]])).unwrap();
        assert!((v - (-(0.7f64.ln()) - 0.2f64.ln()) / 2.0).abs() < 1e-12);
        assert!(ce_multiclass(&t(&[&[0.5, 0.5]]), &t(&[&[0.5, 0.5]])).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(bce_multilabel(&t(&[&[1.0, 0.0]]), &t(&[&[0.5, 0.5, 0.5]])).is_err());
    }

    #[test]
    fn multitask_combination() {
        let w = LossWeights::new(0.0, 2.0).unwrap();
        assert_eq!(multitask_loss(w, None, 1.5).unwrap(), 3.0);
        assert_eq!(multitask_loss(LossWeights::default(), Some(2.0), 1.0).unwrap(), 3.0);
        assert!(multitask_loss(LossWeights::default(), None, 1.0).is_err());
        assert!(LossWeights::new(0.0, 0.0).is_err());
    }

    #[test]
    fn schedule_values() {
        let s = Schedule::default();
        assert_eq!(lr_at_epoch(&s, 0).unwrap(), 0.01);
        assert_eq!(lr_at_epoch(&s, 29).unwrap(), 0.01);
        assert_eq!(lr_at_epoch(&s, 30).unwrap(), 0.005);
        assert_eq!(lr_at_epoch(&s, 80).unwrap(), 0.00125);
        assert!(lr_at_epoch(&s, 115).is_err());
        let mut prev = f64::INFINITY;
        for e in 0..115 {
            let lr = lr_at_epoch(&s, e).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn shortened_schedule_scales_milestones() {
        let s = Schedule::shortened(23);
        assert_eq!(s.milestones, vec![6, 12, 16]);
        s.validate().unwrap();
        assert_eq!(Schedule::shortened(115), Schedule::default());
    }
}
