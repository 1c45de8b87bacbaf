//! The shared minibatch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{stage_seed, EpochRecord, RunRecord, TrainConfig};
use crate::augment::{apply_plan, sample_plan};
use crate::diffcore::{sgd_step, SgdState, Tensor};
use crate::error::{Error, Result};
use crate::eval::{argmax, detail_metrics, macro_f1};
use crate::imaging::{to_nchw, Image};
use crate::model::{predict, ModelGraph, ModelParams, NUM_DETAILS};
use crate::objectives::{bce_multilabel, bce_multilabel_grad, ce_multiclass, ce_multiclass_grad, lr_at_epoch, multitask_loss, one_hot};

/// Training targets for one stage. Either or both tasks may be present.
pub(crate) struct Targets<'a> {
    pub images: Vec<&'a Image>,
    pub classes: Option<Vec<usize>>,
    pub details: Option<Vec<[f64; NUM_DETAILS]>>,
}

/// Validation data and the score used for checkpoint selection.
pub(crate) enum Selection<'a> {
    /// Macro-F1 of the overall-quality head.
    Overall { images: Vec<&'a Image>, truth: Vec<usize> },
    /// Mean per-detail F1 at threshold 0.5.
    Details { images: Vec<&'a Image>, truth: Vec<[u8; NUM_DETAILS]> },
}

impl Selection<'_> {
    pub fn score(&self, params: &ModelParams) -> Result<f64> {
        match self {
            Selection::Overall { images, truth } => {
                let (probs, _) = predict(params, images)?;
                let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
                macro_f1(truth, &pred, params.num_classes())
            }
            Selection::Details { images, truth } => {
                let (_, probs) = predict(params, images)?;
                let probs = probs.ok_or_else(|| Error::invalid("detail selection needs a detail head"))?;
                Ok(detail_metrics(truth, &probs, 0.5)?.mean_f1)
            }
        }
    }
}

pub(crate) struct Outcome {
    pub best: ModelParams,
    pub last: ModelParams,
    pub record: RunRecord,
}

/// Runs `cfg.schedule.max_epochs` epochs of momentum SGD from `params`.
/// The epoch with the highest validation score (earliest on ties) supplies
/// `best`. Epoch indices in the record start at `epoch_offset`.
pub(crate) fn train(
    stage: &str,
    mut params: ModelParams,
    targets: &Targets<'_>,
    selection: &Selection<'_>,
    cfg: &TrainConfig,
    augment: bool,
) -> Result<Outcome> {
    cfg.validate()?;
    let n = targets.images.len();
    if n == 0 {
        return Err(Error::invalid(format!("{stage}: no training samples")));
    }
    if targets.classes.is_none() && targets.details.is_none() {
        return Err(Error::invalid(format!("{stage}: no training targets")));
    }
    let w = cfg.weights;
    let use_b = targets.classes.is_some() && w.lambda_b > 0.0;
    let use_a = targets.details.is_some() && w.lambda_a > 0.0;
    if use_a && !params.has_head_a() {
        return Err(Error::invalid(format!("{stage}: detail targets need a detail head")));
    }
    if !use_a && !use_b {
        return Err(Error::invalid(format!("{stage}: loss weights disable every available task")));
    }

    let seed = stage_seed(cfg.seed, stage);
    let mut mg = ModelGraph::build(&params);
    let mut state = SgdState::new(params.store(), cfg.schedule.momentum);
    let mut record = RunRecord::new(stage, cfg.seed);
    let mut best: Option<(f64, ModelParams)> = None;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.schedule.max_epochs {
        let lr = lr_at_epoch(&cfg.schedule, epoch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let owned: Vec<Image>;
            let images: Vec<&Image> = if augment {
                owned = batch
                    .iter()
                    .map(|&i| {
                        let mut aug_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
                        aug_rng.set_stream(((epoch as u64) << 32) | i as u64);
                        apply_plan(targets.images[i], &sample_plan(&mut aug_rng, &cfg.augment_bounds))
                    })
                    .collect();
                record.augment_calls += batch.len() as u64;
                owned.iter().collect()
            } else {
                batch.iter().map(|&i| targets.images[i]).collect()
            };
            mg.run(&params, &to_nchw(&images)?)?;

            let mut seeds: Vec<(crate::diffcore::NodeId, Tensor)> = Vec::with_capacity(2);
            let mut ce = 0.0;
            if use_b {
                let classes = targets.classes.as_ref().expect("checked above");
                let labels: Vec<usize> = batch.iter().map(|&i| classes[i]).collect();
                let t = one_hot(&labels, params.num_classes())?;
                let probs = mg.graph.output(mg.probs_b)?;
                ce = ce_multiclass(&t, probs)?;
                let mut g = ce_multiclass_grad(&t, probs)?;
                g.data_mut().iter_mut().for_each(|v| *v *= w.lambda_b);
                seeds.push((mg.probs_b, g));
            }
            let mut bce = None;
            if use_a {
                let details = targets.details.as_ref().expect("checked above");
                let data: Vec<f64> = batch.iter().flat_map(|&i| details[i]).collect();
                let t = Tensor::new(&[batch.len(), NUM_DETAILS], data)?;
                let id = mg.probs_a.expect("detail head present");
                let probs = mg.graph.output(id)?;
                bce = Some(bce_multilabel(&t, probs)?);
                let mut g = bce_multilabel_grad(&t, probs)?;
                g.data_mut().iter_mut().for_each(|v| *v *= w.lambda_a);
                seeds.push((id, g));
            }
            let loss = if use_b {
                multitask_loss(w, if use_a { bce } else { None }, ce)?
            } else {
                w.lambda_a * bce.expect("detail loss computed")
            };
            loss_sum += loss * batch.len() as f64;

            params.store_mut().zero_grads();
            let seed_refs: Vec<_> = seeds.iter().map(|(id, t)| (*id, t)).collect();
            mg.graph.backward_from(params.store_mut(), &seed_refs)?;
            sgd_step(params.store_mut(), &mut state, lr)?;
        }
        params.store_mut().clear_grads();

        let val = selection.score(&params)?;
        record.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val_score: val,
            lr,
        });
        if best.as_ref().is_none_or(|(b, _)| val > *b) {
            best = Some((val, params.clone()));
            record.best_epoch = epoch;
            record.best_val_score = val;
        }
    }
    let (_, best) = best.expect("at least one epoch");
    Ok(Outcome { best, last: params, record })
}
