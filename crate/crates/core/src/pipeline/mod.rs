//! The four training steps: Teacher on the detail-labeled set, pseudo-labels
//! for the overall-quality set, single-task pretraining, and multi-task
//! fine-tuning, plus the extended single-task control and a λ sweep.

mod benchmark;
mod train;

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use benchmark::{predictions, run_benchmark, write_eval, BenchmarkConfig, BenchmarkReport, CriterionOutcome, SeedResult};

use crate::augment::AugmentBounds;
use crate::dataio::{read_manifest_rows, Dataset, LoadOptions, Split, Style};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::model::{predict, BackboneConfig, ModelParams, NUM_DETAILS};
use crate::objectives::{LossWeights, Schedule};
use train::{train, Selection, Targets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub seed: u64,
    /// Online augmentation for student stages; the Teacher never augments.
    pub augment: bool,
    pub augment_bounds: AugmentBounds,
    /// Threshold pseudo-labels at 0.5 before fine-tuning.
    pub hard_pseudo: bool,
    pub backbone: BackboneConfig,
    /// Where `<stage>_best.fmtk` and `<stage>_last.fmtk` are written.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            batch_size: 32,
            weights: LossWeights::default(),
            seed: 0,
            augment: true,
            augment_bounds: AugmentBounds::default(),
            hard_pseudo: false,
            backbone: BackboneConfig::default(),
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        self.schedule.validate()?;
        self.weights.validate()?;
        self.augment_bounds.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation macro-F1 (overall quality) or mean detail F1 (Teacher).
    pub val_score: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stage: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_score: f64,
    /// Checkpoint file names, relative to the checkpoint directory.
    pub checkpoints: Vec<String>,
    /// Number of augmented images produced.
    pub augment_calls: u64,
}

impl RunRecord {
    fn new(stage: &str, seed: u64) -> Self {
        Self {
            stage: stage.to_string(),
            seed,
            epochs: Vec::new(),
            best_epoch: 0,
            best_val_score: f64::NEG_INFINITY,
            checkpoints: Vec::new(),
            augment_calls: 0,
        }
    }

    /// Index of the epoch with the highest validation score, earliest on ties.
    pub fn argmax_epoch(&self) -> Option<usize> {
        let mut best: Option<&EpochRecord> = None;
        for e in &self.epochs {
            if best.is_none_or(|b| e.val_score > b.val_score) {
                best = Some(e);
            }
        }
        best.map(|e| e.epoch)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Writes pretty JSON atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(&tmp, text)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Deterministic per-stage seed derived from the run seed and a stage tag.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let tag = stage.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    // splitmix64 finalizer
    let mut z = seed ^ tag;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn save_checkpoints(stage: &str, out: &train::Outcome, cfg: &TrainConfig) -> Result<Vec<String>> {
    let Some(dir) = &cfg.checkpoint_dir else {
        return Ok(Vec::new());
    };
    std::fs::create_dir_all(dir)?;
    let names = vec![format!("{stage}_best.fmtk"), format!("{stage}_last.fmtk")];
    out.best.save(&dir.join(&names[0]))?;
    out.last.save(&dir.join(&names[1]))?;
    Ok(names)
}

/// A trained model with its run record. `last` holds the final-epoch
/// parameters when they differ from `best`.
#[derive(Debug, Clone)]
pub struct StageResult {
    pub params: ModelParams,
    pub last: ModelParams,
    pub record: RunRecord,
}

fn finish(stage: &str, out: train::Outcome, cfg: &TrainConfig) -> Result<StageResult> {
    let mut out = out;
    out.record.checkpoints = save_checkpoints(stage, &out, cfg)?;
    Ok(StageResult {
        params: out.best,
        last: out.last,
        record: out.record,
    })
}

fn images_of<'a>(ds: &'a Dataset, idx: &[usize]) -> Vec<&'a Image> {
    idx.iter().map(|&i| &ds.images[i]).collect()
}

fn overall_labels(ds: &Dataset, idx: &[usize], what: &str) -> Result<Vec<usize>> {
    idx.iter()
        .map(|&i| {
            ds.rows[i]
                .overall
                .map(usize::from)
                .ok_or_else(|| Error::Manifest { row: i + 1, message: format!("{what} row lacks an overall label") })
        })
        .collect()
}

fn detail_labels(ds: &Dataset, idx: &[usize]) -> Result<Vec<[u8; NUM_DETAILS]>> {
    idx.iter()
        .map(|&i| {
            let d = ds.rows[i].details;
            match d {
                [Some(a), Some(b), Some(c)] => Ok([a, b, c]),
                _ => Err(Error::Manifest { row: i + 1, message: "row lacks detail labels".into() }),
            }
        })
        .collect()
}

fn split_pair(ds: &Dataset, what: &str) -> Result<(Vec<usize>, Vec<usize>)> {
    let train = ds.indices(Split::Train);
    let val = ds.indices(Split::Val);
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid(format!("{what} needs nonempty train and val splits")));
    }
    Ok((train, val))
}

fn check_input_size(ds: &Dataset, cfg: &TrainConfig) -> Result<()> {
    if ds.image_size != cfg.backbone.input_size {
        return Err(Error::invalid(format!(
            "dataset images are {0}x{0} but the backbone expects {1}x{1}",
            ds.image_size, cfg.backbone.input_size
        )));
    }
    Ok(())
}

/// Trains the multilabel Teacher with binary cross-entropy on the detail
/// labels of `s` (train split), selecting by validation mean detail F1.
/// Augmentation is always off.
pub fn train_teacher(s: &Dataset, cfg: &TrainConfig) -> Result<StageResult> {
    check_input_size(s, cfg)?;
    let (train_idx, val_idx) = split_pair(s, "Teacher training")?;
    let details = detail_labels(s, &train_idx)?;
    let targets = Targets {
        images: images_of(s, &train_idx),
        classes: None,
        details: Some(details.iter().map(|d| d.map(f64::from)).collect()),
    };
    let selection = Selection::Details {
        images: images_of(s, &val_idx),
        truth: detail_labels(s, &val_idx)?,
    };
    let init = ModelParams::new(cfg.backbone.clone(), s.num_classes(), stage_seed(cfg.seed, "teacher.init"))?
        .attach_head_a(stage_seed(cfg.seed, "teacher.head_a"))?;
    let teacher_cfg = TrainConfig {
        weights: LossWeights { lambda_a: 1.0, lambda_b: 0.0 },
        ..cfg.clone()
    };
    finish("teacher", train("teacher", init, &targets, &selection, &teacher_cfg, false)?, cfg)
}

/// Fills the pseudo-label columns of every row with the Teacher's detail
/// probabilities. Other columns are left as they are.
pub fn pseudo_label(teacher: &ModelParams, q: &Dataset) -> Result<Dataset> {
    if !teacher.has_head_a() {
        return Err(Error::invalid("pseudo-labeling needs a Teacher with a detail head"));
    }
    let mut out = q.clone();
    if q.is_empty() {
        return Ok(out);
    }
    let (_, probs) = predict(teacher, &q.images.iter().collect::<Vec<_>>())?;
    for (row, p) in out.rows.iter_mut().zip(probs.expect("detail head present")) {
        row.pseudo = p.map(Some);
    }
    Ok(out)
}

/// Pseudo-labels a manifest on disk and writes the augmented manifest.
/// All unreadable images are reported together.
pub fn pseudo_label_manifest(teacher: &ModelParams, input: &Path, output: &Path, style: Style, opts: &LoadOptions) -> Result<Dataset> {
    let rows = read_manifest_rows(input, style)?;
    let base = input.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut bad = Vec::new();
    for r in &rows {
        let p = base.join(&r.image);
        if Image::load_png(&p).is_err() {
            bad.push(p);
        }
    }
    if !bad.is_empty() {
        return Err(Error::UnreadableImages(bad));
    }
    let ds = Dataset::load(input, style, opts)?;
    let labeled = pseudo_label(teacher, &ds)?;
    labeled.write_manifest(output)?;
    Ok(labeled)
}

fn overall_selection<'a>(q: &'a Dataset, val_idx: &[usize]) -> Result<Selection<'a>> {
    Ok(Selection::Overall {
        images: images_of(q, val_idx),
        truth: overall_labels(q, val_idx, "validation")?,
    })
}

/// Single-task pretraining with categorical cross-entropy on overall labels.
pub fn pretrain_student(q: &Dataset, cfg: &TrainConfig) -> Result<StageResult> {
    check_input_size(q, cfg)?;
    let (train_idx, val_idx) = split_pair(q, "pretraining")?;
    let targets = Targets {
        images: images_of(q, &train_idx),
        classes: Some(overall_labels(q, &train_idx, "training")?),
        details: None,
    };
    let init = ModelParams::new(cfg.backbone.clone(), q.num_classes(), stage_seed(cfg.seed, "st.init"))?;
    let st_cfg = TrainConfig {
        weights: LossWeights { lambda_a: 0.0, lambda_b: 1.0 },
        ..cfg.clone()
    };
    finish("st", train("st", init, &targets, &overall_selection(q, &val_idx)?, &st_cfg, cfg.augment)?, cfg)
}

/// Pseudo-label targets of the given rows, thresholded at 0.5 when `hard`.
pub fn pseudo_targets(ds: &Dataset, idx: &[usize], hard: bool) -> Result<Vec<[f64; NUM_DETAILS]>> {
    idx.iter()
        .map(|&i| match ds.rows[i].pseudo {
            [Some(a), Some(b), Some(c)] => {
                let p = [a, b, c];
                Ok(if hard { p.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }) } else { p })
            }
            _ => Err(Error::Manifest { row: i + 1, message: "row lacks pseudo-labels".into() }),
        })
        .collect()
}

/// Hardens pseudo-labels and flips each detail independently with the given
/// probability. Flipped datasets keep their hard values in the pseudo columns.
pub fn flip_pseudo_labels(ds: &Dataset, rates: [f64; NUM_DETAILS], seed: u64) -> Result<Dataset> {
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::invalid(format!("flip rates {rates:?} outside [0, 1]")));
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let hard = pseudo_targets(ds, &all, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, "flip"));
    let mut out = ds.clone();
    for (row, h) in out.rows.iter_mut().zip(hard) {
        let mut p = h;
        for j in 0..NUM_DETAILS {
            if rng.gen_bool(rates[j]) {
                p[j] = 1.0 - p[j];
            }
        }
        row.pseudo = p.map(Some);
    }
    Ok(out)
}

/// Multi-task fine-tuning: attaches a fresh detail head to the single-task
/// model and optimizes `λ_A·BCE(pseudo) + λ_B·CE(overall)` over all
/// parameters, selecting by validation macro-F1 on overall quality.
pub fn finetune_multitask(st: &ModelParams, q: &Dataset, cfg: &TrainConfig) -> Result<StageResult> {
    finetune_stage("mt", st, q, cfg)
}

fn finetune_stage(stage: &str, st: &ModelParams, q: &Dataset, cfg: &TrainConfig) -> Result<StageResult> {
    check_input_size(q, cfg)?;
    if st.has_head_a() {
        return Err(Error::invalid("fine-tuning starts from a single-task model"));
    }
    let (train_idx, val_idx) = split_pair(q, "fine-tuning")?;
    let targets = Targets {
        images: images_of(q, &train_idx),
        classes: Some(overall_labels(q, &train_idx, "training")?),
        details: Some(pseudo_targets(q, &train_idx, cfg.hard_pseudo)?),
    };
    let init = st.clone().attach_head_a(stage_seed(cfg.seed, &format!("{stage}.head_a")))?;
    finish(stage, train(stage, init, &targets, &overall_selection(q, &val_idx)?, cfg, cfg.augment)?, cfg)
}

/// Continues single-task training from the last phase-one parameters for
/// another schedule (the learning rate restarts). The returned record spans
/// both phases, with extension epochs numbered after phase one, and the
/// returned parameters are the best across both phases.
pub fn extend_st_baseline(phase_one: &StageResult, q: &Dataset, cfg: &TrainConfig) -> Result<StageResult> {
    check_input_size(q, cfg)?;
    let (train_idx, val_idx) = split_pair(q, "extended training")?;
    let targets = Targets {
        images: images_of(q, &train_idx),
        classes: Some(overall_labels(q, &train_idx, "training")?),
        details: None,
    };
    let ext_cfg = TrainConfig {
        weights: LossWeights { lambda_a: 0.0, lambda_b: 1.0 },
        ..cfg.clone()
    };
    let out = train("st_ext", phase_one.last.clone(), &targets, &overall_selection(q, &val_idx)?, &ext_cfg, cfg.augment)?;
    let offset = phase_one.record.epochs.len();
    let mut record = phase_one.record.clone();
    record.stage = "st_ext".into();
    record.augment_calls += out.record.augment_calls;
    record.epochs.extend(out.record.epochs.iter().map(|e| EpochRecord { epoch: e.epoch + offset, ..e.clone() }));
    let ext_wins = out.record.best_val_score > phase_one.record.best_val_score;
    let best = if ext_wins {
        record.best_epoch = out.record.best_epoch + offset;
        record.best_val_score = out.record.best_val_score;
        out.best
    } else {
        phase_one.params.clone()
    };
    let merged = train::Outcome { best, last: out.last, record };
    finish("st_ext", merged, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: LossWeights,
    pub best_score: f64,
    /// Validation macro-F1 for every grid point, in grid order.
    pub scores: Vec<(LossWeights, f64)>,
}

pub fn default_lambda_grid() -> Vec<LossWeights> {
    [0.25, 0.5, 1.0, 2.0].iter().map(|&a| LossWeights { lambda_a: a, lambda_b: 1.0 }).collect()
}

/// Fine-tunes once per grid point with `cfg` (typically a shortened
/// schedule) and returns the point with the best validation macro-F1; ties
/// go to the smaller `λ_A`.
pub fn tune_lambdas(grid: &[LossWeights], st: &ModelParams, q: &Dataset, cfg: &TrainConfig) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::invalid("λ grid is empty"));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for (k, &w) in grid.iter().enumerate() {
        w.validate()?;
        let point_cfg = TrainConfig {
            weights: w,
            checkpoint_dir: None,
            ..cfg.clone()
        };
        let res = finetune_stage(&format!("tune{k}"), st, q, &point_cfg)?;
        scores.push((w, res.record.best_val_score));
    }
    let (best, best_score) = scores
        .iter()
        .copied()
        .reduce(|a, b| if b.1 > a.1 || (b.1 == a.1 && b.0.lambda_a < a.0.lambda_a) { b } else { a })
        .expect("nonempty grid");
    Ok(TuneResult { best, best_score, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_dataset, GenConfig};

    fn tiny_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            schedule: Schedule::shortened(epochs),
            batch_size: 8,
            backbone: BackboneConfig {
                input_size: 16,
                widths: vec![4, 8],
                blocks_per_stage: 1,
                embedding_dim: 8,
            },
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn tiny_data(dir: &Path, fractions: [f64; 3]) -> Dataset {
        let cfg = GenConfig {
            count: 40,
            style: Style::ThreeClass,
            fractions,
            seed: 9,
            size: 16,
        };
        generate_dataset(&cfg, dir).unwrap().0
    }

    #[test]
    fn stage_seeds_differ() {
        assert_ne!(stage_seed(1, "st"), stage_seed(1, "mt"));
        assert_ne!(stage_seed(1, "st"), stage_seed(2, "st"));
        assert_eq!(stage_seed(5, "x"), stage_seed(5, "x"));
    }

    #[test]
    fn teacher_never_augments_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let s = tiny_data(dir.path(), [0.75, 0.25, 0.0]);
        let cfg = tiny_cfg(3);
        let a = train_teacher(&s, &cfg).unwrap();
        assert_eq!(a.record.augment_calls, 0);
        assert_eq!(a.record.argmax_epoch(), Some(a.record.best_epoch));
        let b = train_teacher(&s, &cfg).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.params.store(), b.params.store());
    }

    #[test]
    fn pseudo_labels_from_zero_head_are_half() {
        let dir = tempfile::tempdir().unwrap();
        let q = tiny_data(dir.path(), [0.5, 0.25, 0.25]);
        let mut t = ModelParams::new(tiny_cfg(1).backbone, 3, 1).unwrap().attach_head_a(2).unwrap();
        for (name, tensor) in t.store_mut().iter_mut() {
            if name.starts_with("head_a") {
                tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let out = pseudo_label(&t, &q).unwrap();
        assert!(out.rows.iter().all(|r| r.pseudo == [Some(0.5); 3]));
        assert!(out.rows.iter().zip(&q.rows).all(|(a, b)| a.overall == b.overall && a.details == b.details));
    }

    #[test]
    fn student_stages_run_and_record_schedule() {
        let dir = tempfile::tempdir().unwrap();
        let q = tiny_data(dir.path(), [0.5, 0.25, 0.25]);
        let mut cfg = tiny_cfg(4);
        cfg.checkpoint_dir = Some(dir.path().join("ckpt"));
        let st = pretrain_student(&q, &cfg).unwrap();
        for e in &st.record.epochs {
            assert_eq!(e.lr, crate::objectives::lr_at_epoch(&cfg.schedule, e.epoch).unwrap());
        }
        assert!(st.record.augment_calls > 0);
        assert_eq!(st.record.checkpoints, vec!["st_best.fmtk", "st_last.fmtk"]);

        let teacher = ModelParams::new(cfg.backbone.clone(), 3, 1).unwrap().attach_head_a(2).unwrap();
        let q2 = pseudo_label(&teacher, &q).unwrap();
        let ckpt = dir.path().join("ckpt/st_best.fmtk");
        let before = std::fs::read(&ckpt).unwrap();
        let mt = finetune_multitask(&st.params, &q2, &cfg).unwrap();
        assert!(mt.params.has_head_a());
        assert_eq!(std::fs::read(&ckpt).unwrap(), before);
        assert!(finetune_multitask(&st.params, &q, &cfg).is_err());

        let ext = extend_st_baseline(&st, &q, &cfg).unwrap();
        assert_eq!(ext.record.epochs.len(), 8);
        assert_eq!(ext.record.epochs[4].lr, 0.01);
        assert!(ext.record.best_val_score >= st.record.best_val_score);
        assert_eq!(ext.record.argmax_epoch(), Some(ext.record.best_epoch));

        let one = tune_lambdas(&[LossWeights::new(0.5, 1.0).unwrap()], &st.params, &q2, &tiny_cfg(1)).unwrap();
        assert_eq!(one.best, LossWeights::new(0.5, 1.0).unwrap());
        assert!(tune_lambdas(&[], &st.params, &q2, &cfg).is_err());
    }

    #[test]
    fn zero_lambda_a_leaves_shared_gradients_untouched_by_details() {
        // with λ_A = 0 the detail head is attached but receives no loss, so
        // fine-tuning equals continued single-task training on the shared
        // parameters and the overall head
        let dir = tempfile::tempdir().unwrap();
        let q = tiny_data(dir.path(), [0.5, 0.25, 0.25]);
        let mut cfg = tiny_cfg(2);
        cfg.augment = false;
        let st = pretrain_student(&q, &cfg).unwrap();
        let teacher = ModelParams::new(cfg.backbone.clone(), 3, 1).unwrap().attach_head_a(2).unwrap();
        let q2 = pseudo_label(&teacher, &q).unwrap();
        let mut flipped = q2.clone();
        for r in &mut flipped.rows {
            r.pseudo = r.pseudo.map(|p| p.map(|v| 1.0 - v));
        }
        cfg.weights = LossWeights::new(0.0, 1.0).unwrap();
        let a = finetune_multitask(&st.params, &q2, &cfg).unwrap();
        let b = finetune_multitask(&st.params, &flipped, &cfg).unwrap();
        assert_eq!(a.params.store(), b.params.store());
        let head_a: Vec<_> = a.params.group("head_a");
        let init = st.params.clone().attach_head_a(stage_seed(cfg.seed, "mt.head_a")).unwrap();
        for id in head_a {
            assert_eq!(a.params.store().get(id).data(), init.store().get(id).data());
        }
    }

    #[test]
    fn flipping_at_rate_one_inverts_hard_labels() {
        let dir = tempfile::tempdir().unwrap();
        let q = tiny_data(dir.path(), [0.5, 0.25, 0.25]);
        let teacher = ModelParams::new(tiny_cfg(1).backbone, 3, 1).unwrap().attach_head_a(4).unwrap();
        let q2 = pseudo_label(&teacher, &q).unwrap();
        let all: Vec<usize> = (0..q2.len()).collect();
        let hard = pseudo_targets(&q2, &all, true).unwrap();
        let f = flip_pseudo_labels(&q2, [1.0, 0.0, 1.0], 1).unwrap();
        for (r, h) in f.rows.iter().zip(hard) {
            assert_eq!(r.pseudo, [Some(1.0 - h[0]), Some(h[1]), Some(1.0 - h[2])]);
        }
    }
}
