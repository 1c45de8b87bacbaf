//! The end-to-end synthetic protocol: phantoms → Teacher → pseudo-labels →
//! single-task, extended single-task and multi-task students → comparison,
//! repeated over several seeds.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    extend_st_baseline, finetune_multitask, flip_pseudo_labels, pretrain_student, pseudo_label, stage_seed, train_teacher, write_json,
    StageResult, TrainConfig,
};
use crate::dataio::{split_holdout, Dataset, Split, Style};
use crate::error::{Error, Result};
use crate::eval::{
    argmax, bootstrap_indices, compare_models, detail_metrics, wilcoxon_signed_rank, EvalReport, Predictions, Tail,
};
use crate::explain::{gradcam, Target};
use crate::imaging::Mask;
use crate::model::{predict, BackboneConfig, ModelParams, NUM_DETAILS};
use crate::objectives::{LossWeights, Schedule};
use crate::phantom::{degrade, fov_mask, generate_clean, generate_dataset, DefectSeverities, GenConfig, PhantomSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub seeds: usize,
    /// Seed of the first repetition; repetition `k` uses `seed + k`.
    pub seed: u64,
    /// Epochs per student stage (milestones scale proportionally).
    pub epochs: usize,
    pub teacher_epochs: usize,
    pub image_size: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Size of the detail-labeled Teacher set, before its validation holdout.
    pub teacher_count: usize,
    pub teacher_holdout: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub hard_pseudo: bool,
    pub augment: bool,
    pub backbone: BackboneConfig,
    /// Shared bootstrap replicates for significance tests and intervals.
    pub replicates: usize,
    pub alpha: f64,
    /// Single-artifact images per seed for the GradCAM localization check.
    pub gradcam_images: usize,
    /// Artifact-mask dilation radius as a fraction of the image side.
    pub gradcam_dilation: f64,
    pub threads: usize,
    pub quiet: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seeds: 5,
            seed: 0,
            epochs: 30,
            teacher_epochs: 30,
            image_size: 32,
            n_train: 600,
            n_val: 60,
            n_test: 200,
            teacher_count: 300,
            teacher_holdout: 0.1,
            batch_size: 32,
            weights: LossWeights::default(),
            hard_pseudo: false,
            augment: true,
            backbone: BackboneConfig::default(),
            replicates: 1000,
            alpha: 0.05,
            gradcam_images: 40,
            gradcam_dilation: 0.1,
            threads: 1,
            quiet: false,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 || self.epochs == 0 || self.teacher_epochs == 0 {
            return Err(Error::invalid("benchmark needs at least one seed and one epoch per stage"));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::invalid("benchmark splits must be nonempty"));
        }
        if self.backbone.input_size != self.image_size {
            return Err(Error::invalid("backbone input size must equal the image size"));
        }
        if self.gradcam_images == 0 {
            return Err(Error::invalid("gradcam_images must be positive"));
        }
        self.train_config(0, 1, None).validate()
    }

    fn train_config(&self, seed: u64, epochs: usize, checkpoint_dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            schedule: Schedule::shortened(epochs),
            batch_size: self.batch_size,
            weights: self.weights,
            seed,
            augment: self.augment,
            hard_pseudo: self.hard_pseudo,
            backbone: self.backbone.clone(),
            checkpoint_dir,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailComparison {
    pub teacher_f1: f64,
    pub mt_f1: f64,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub st_f1: f64,
    pub st_ext_f1: f64,
    pub mt_f1: f64,
    pub mt_hard_f1: f64,
    pub mt_flip_f1: f64,
    /// Teacher error rate per detail on its validation holdout.
    pub teacher_error: [f64; NUM_DETAILS],
    /// Mean absolute error of soft pseudo-labels against oracle details (Q).
    pub pseudo_mae: f64,
    pub details: Vec<DetailComparison>,
    pub gradcam_hits: usize,
    pub gradcam_images: usize,
    /// Mean dilated-mask area fraction of the FOV.
    pub gradcam_chance: f64,
    pub mt_vs_st_p: Option<f64>,
}

impl SeedResult {
    pub fn gradcam_ratio(&self) -> f64 {
        let rate = self.gradcam_hits as f64 / self.gradcam_images as f64;
        rate / self.gradcam_chance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub seeds: Vec<SeedResult>,
    pub criteria: Vec<CriterionOutcome>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn log(cfg: &BenchmarkConfig, msg: impl AsRef<str>) {
    if !cfg.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

/// Runs every seed (fanned out over `cfg.threads` workers, each run
/// single-threaded) and writes per-seed artifacts plus
/// `benchmark_report.{json,txt}` under `out`.
pub fn run_benchmark(cfg: &BenchmarkConfig, out: &Path) -> Result<BenchmarkReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<SeedResult>>> = Mutex::new(Vec::new());
    let workers = cfg.threads.clamp(1, cfg.seeds);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= cfg.seeds {
                    break;
                }
                let seed = cfg.seed + k as u64;
                let r = run_seed(cfg, seed, &out.join(format!("seed_{seed}")));
                results.lock().expect("no worker panicked").push(r);
            });
        }
    });
    let mut seeds = results.into_inner().expect("no worker panicked").into_iter().collect::<Result<Vec<_>>>()?;
    seeds.sort_by_key(|s| s.seed);
    let report = BenchmarkReport {
        criteria: criteria(&seeds),
        config: cfg.clone(),
        seeds,
    };
    write_json(&out.join("benchmark_report.json"), &report)?;
    std::fs::write(out.join("benchmark_report.txt"), report.to_text())?;
    Ok(report)
}

fn criteria(seeds: &[SeedResult]) -> Vec<CriterionOutcome> {
    let n = seeds.len();
    let wins = seeds.iter().filter(|s| s.mt_f1 >= s.st_f1).count();
    let need = (4 * n).div_ceil(5);
    let mt_med = median(&seeds.iter().map(|s| s.mt_f1).collect::<Vec<_>>());
    let ext_med = median(&seeds.iter().map(|s| s.st_ext_f1).collect::<Vec<_>>());
    let ext_max_above = seeds.iter().filter(|s| s.st_ext_f1 > mt_med).count();

    let gaps: Vec<Vec<f64>> = (0..NUM_DETAILS)
        .map(|j| seeds.iter().map(|s| (s.details[j].mt_f1 - s.details[j].teacher_f1).abs()).collect())
        .collect();
    let med_gaps: Vec<f64> = gaps.iter().map(|g| median(g)).collect();
    let nonsig: Vec<f64> = seeds
        .iter()
        .map(|s| s.details.iter().filter(|d| d.p_value.is_none_or(|p| p > 0.05)).count() as f64)
        .collect();
    let med_nonsig = median(&nonsig);

    let degr = median(&seeds.iter().map(|s| s.mt_hard_f1 - s.mt_flip_f1).collect::<Vec<_>>());
    let ratio = median(&seeds.iter().map(SeedResult::gradcam_ratio).collect::<Vec<_>>());

    vec![
        CriterionOutcome {
            name: "mt_vs_st".into(),
            passed: wins >= need && ext_med <= mt_med,
            detail: format!(
                "MT >= ST in {wins}/{n} seeds (need {need}); median ST-ext {ext_med:.4} vs median MT {mt_med:.4} ({ext_max_above} seeds with ST-ext above it)"
            ),
        },
        CriterionOutcome {
            name: "detail_fidelity".into(),
            passed: med_gaps.iter().all(|&g| g <= 0.05) && med_nonsig >= 2.0,
            detail: format!(
                "median |F1 MT - Teacher| per detail {:.4}/{:.4}/{:.4} (limit 0.05); median details with p > 0.05: {med_nonsig} (need 2)",
                med_gaps[0], med_gaps[1], med_gaps[2]
            ),
        },
        CriterionOutcome {
            name: "pseudo_noise_tolerance".into(),
            passed: degr <= 0.03,
            detail: format!("median macro-F1 drop from flipped pseudo-labels {degr:.4} (limit 0.03)"),
        },
        CriterionOutcome {
            name: "gradcam_localization".into(),
            passed: ratio >= 2.0,
            detail: format!("median hit-rate / chance {ratio:.3} (need 2)"),
        },
    ]
}

/// Overall-quality predictions (and detail probabilities when the model has
/// a detail head) for rows `idx` of `ds`.
pub fn predictions(params: &ModelParams, ds: &Dataset, idx: &[usize]) -> Result<(Predictions, Option<Vec<[f64; NUM_DETAILS]>>)> {
    let images: Vec<_> = idx.iter().map(|&i| &ds.images[i]).collect();
    let (probs, details) = predict(params, &images)?;
    let preds = Predictions {
        ids: idx.iter().map(|&i| ds.rows[i].image.to_string_lossy().into_owned()).collect(),
        truth: idx.iter().map(|&i| ds.rows[i].overall.map_or(0, usize::from)).collect(),
        pred: probs.iter().map(|p| argmax(p)).collect(),
        num_classes: ds.num_classes(),
    };
    Ok((preds, details))
}

fn oracle_details(ds: &Dataset, idx: &[usize]) -> Vec<[u8; NUM_DETAILS]> {
    idx.iter().map(|&i| ds.rows[i].details.map(|d| d.unwrap_or(0))).collect()
}

fn save_stage(dir: &Path, res: &StageResult) -> Result<()> {
    res.record.save(&dir.join(format!("{}.json", res.record.stage)))
}

/// Writes `eval_<model>.{json,txt}` and both confusion CSVs into `dir`.
pub fn write_eval(dir: &Path, report: &EvalReport) -> Result<()> {
    write_json(&dir.join(format!("eval_{}.json", report.model)), report)?;
    std::fs::write(dir.join(format!("eval_{}.txt", report.model)), report.to_text())?;
    std::fs::write(dir.join(format!("confusion_{}.csv", report.model)), report.confusion.to_csv(false))?;
    std::fs::write(dir.join(format!("confusion_{}_normalized.csv", report.model)), report.confusion.to_csv(true))?;
    Ok(())
}

/// Per-detail F1 of two probability sets on shared bootstrap replicates.
fn detail_replicates(
    truth: &[[u8; NUM_DETAILS]],
    a: &[[f64; NUM_DETAILS]],
    b: &[[f64; NUM_DETAILS]],
    replicates: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut out = vec![(Vec::with_capacity(replicates), Vec::with_capacity(replicates)); NUM_DETAILS];
    for idx in bootstrap_indices(truth.len(), replicates, seed) {
        let t: Vec<_> = idx.iter().map(|&i| truth[i]).collect();
        let pa: Vec<_> = idx.iter().map(|&i| a[i]).collect();
        let pb: Vec<_> = idx.iter().map(|&i| b[i]).collect();
        let (ra, rb) = (detail_metrics(&t, &pa, 0.5)?, detail_metrics(&t, &pb, 0.5)?);
        for j in 0..NUM_DETAILS {
            out[j].0.push(ra.details[j].f1);
            out[j].1.push(rb.details[j].f1);
        }
    }
    Ok(out)
}

/// GradCAM hits on fresh single-artifact images: the argmax cell center must
/// fall inside the dilated illumination-artifact mask.
fn gradcam_localization(params: &ModelParams, cfg: &BenchmarkConfig, seed: u64) -> Result<(usize, f64)> {
    let size = cfg.image_size;
    let fov = fov_mask(size);
    let fov_area = fov.count() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, "gradcam.images"));
    let (mut hits, mut chance) = (0, 0.0);
    for _ in 0..cfg.gradcam_images {
        let spec = PhantomSpec::random(size, rng.gen());
        let sev = DefectSeverities::new(rng.gen_range(0.7..=1.0), 0.0, 0.0)?;
        let degraded = degrade(&generate_clean(&spec)?, &sev, rng.gen())?;
        let dilated = degraded.artifact_mask.dilate(cfg.gradcam_dilation * size as f64);
        let inside = Mask::from_fn(size, size, |x, y| dilated.get(x, y) && fov.get(x, y));
        chance += inside.count() as f64 / fov_area;
        let img = crate::imaging::Image::from_rgb8(size, size, &degraded.image.to_rgb8())?;
        let h = gradcam(params, &img, Target::Class(0))?;
        let (cx, cy) = h.argmax();
        let px = ((cx as f64 + 0.5) * size as f64 / h.width as f64) as usize;
        let py = ((cy as f64 + 0.5) * size as f64 / h.height as f64) as usize;
        if inside.get(px.min(size - 1), py.min(size - 1)) {
            hits += 1;
        }
    }
    Ok((hits, chance / cfg.gradcam_images as f64))
}

fn run_seed(cfg: &BenchmarkConfig, seed: u64, dir: &Path) -> Result<SeedResult> {
    let data_dir = dir.join("data");
    let ckpt_dir = dir.join("checkpoints");
    let rec_dir = dir.join("records");
    let rep_dir = dir.join("reports");
    for d in [&data_dir, &ckpt_dir, &rec_dir, &rep_dir] {
        std::fs::create_dir_all(d)?;
    }
    let style = Style::ThreeClass;
    log(cfg, format!("[seed {seed}] generating data"));

    let s_cfg = GenConfig {
        count: cfg.teacher_count,
        style,
        fractions: [1.0, 0.0, 0.0],
        seed: stage_seed(seed, "data.teacher"),
        size: cfg.image_size,
    };
    let (s_all, _) = generate_dataset(&s_cfg, &data_dir.join("teacher"))?;
    let (s_train, s_val) = split_holdout(&s_all, cfg.teacher_holdout, stage_seed(seed, "holdout"))?;
    let mut s = s_train.clone();
    s.rows.extend(s_val.rows.iter().cloned());
    s.images.extend(s_val.images.iter().cloned());
    s.write_manifest(&data_dir.join("teacher").join("manifest_split.csv"))?;

    let total = cfg.n_train + cfg.n_val + cfg.n_test;
    let q_cfg = GenConfig {
        count: total,
        style,
        fractions: [cfg.n_train, cfg.n_val, cfg.n_test].map(|c| c as f64 / total as f64),
        seed: stage_seed(seed, "data.q"),
        size: cfg.image_size,
    };
    let (q, _) = generate_dataset(&q_cfg, &data_dir.join("q"))?;

    let tcfg = |epochs| cfg.train_config(seed, epochs, Some(ckpt_dir.clone()));
    log(cfg, format!("[seed {seed}] teacher"));
    let teacher = train_teacher(&s, &tcfg(cfg.teacher_epochs))?;
    save_stage(&rec_dir, &teacher)?;
    let val_idx = s.indices(Split::Val);
    let (_, tv) = predictions(&teacher.params, &s, &val_idx)?;
    let tv = tv.expect("teacher has a detail head");
    let tv_truth = oracle_details(&s, &val_idx);
    let mut teacher_error = [0.0; NUM_DETAILS];
    for j in 0..NUM_DETAILS {
        let wrong = tv.iter().zip(&tv_truth).filter(|(p, t)| u8::from(p[j] >= 0.5) != t[j]).count();
        teacher_error[j] = wrong as f64 / val_idx.len() as f64;
    }

    let q_pseudo = pseudo_label(&teacher.params, &q)?;
    q_pseudo.write_manifest(&data_dir.join("q").join("manifest_pseudo.csv"))?;
    let pseudo_mae = {
        let mut sum = 0.0;
        for r in &q_pseudo.rows {
            for j in 0..NUM_DETAILS {
                sum += (r.pseudo[j].unwrap_or(0.5) - f64::from(r.details[j].unwrap_or(0))).abs();
            }
        }
        sum / (q_pseudo.len() * NUM_DETAILS) as f64
    };

    log(cfg, format!("[seed {seed}] single-task pretraining"));
    let st = pretrain_student(&q, &tcfg(cfg.epochs))?;
    save_stage(&rec_dir, &st)?;
    log(cfg, format!("[seed {seed}] extended single-task control"));
    let st_ext = extend_st_baseline(&st, &q, &tcfg(cfg.epochs))?;
    save_stage(&rec_dir, &st_ext)?;
    log(cfg, format!("[seed {seed}] multi-task fine-tuning"));
    let mt = finetune_multitask(&st.params, &q_pseudo, &tcfg(cfg.epochs))?;
    save_stage(&rec_dir, &mt)?;

    log(cfg, format!("[seed {seed}] noise control (hard and flipped pseudo-labels)"));
    let hard_cfg = TrainConfig {
        hard_pseudo: true,
        checkpoint_dir: None,
        ..tcfg(cfg.epochs)
    };
    let mt_hard = super::finetune_stage("mt_hard", &st.params, &q_pseudo, &hard_cfg)?;
    save_stage(&rec_dir, &mt_hard)?;
    let flipped = flip_pseudo_labels(&q_pseudo, teacher_error, seed)?;
    let mt_flip = super::finetune_stage("mt_flip", &st.params, &flipped, &hard_cfg)?;
    save_stage(&rec_dir, &mt_flip)?;

    let test_idx = q.indices(Split::Test);
    let detail_truth = oracle_details(&q, &test_idx);
    let (p_st, _) = predictions(&st.params, &q, &test_idx)?;
    let (p_ext, _) = predictions(&st_ext.params, &q, &test_idx)?;
    let (p_mt, d_mt) = predictions(&mt.params, &q, &test_idx)?;
    let (p_hard, _) = predictions(&mt_hard.params, &q, &test_idx)?;
    let (p_flip, _) = predictions(&mt_flip.params, &q, &test_idx)?;
    let (_, d_teacher) = predictions(&teacher.params, &q, &test_idx)?;
    let (d_mt, d_teacher) = (d_mt.expect("detail head"), d_teacher.expect("detail head"));

    let teacher_details = detail_metrics(&detail_truth, &d_teacher, 0.5)?;
    let mt_details = detail_metrics(&detail_truth, &d_mt, 0.5)?;
    let reports = vec![
        EvalReport::new("st", &p_st, None)?,
        EvalReport::new("st_ext", &p_ext, None)?,
        EvalReport::new("mt", &p_mt, Some(mt_details.clone()))?,
        EvalReport::new("mt_hard", &p_hard, None)?,
        EvalReport::new("mt_flip", &p_flip, None)?,
    ];
    for r in &reports {
        write_eval(&rep_dir, r)?;
    }
    write_json(&rep_dir.join("details_teacher.json"), &teacher_details)?;

    let boot_seed = stage_seed(seed, "bootstrap");
    let cmp = compare_models("mt", &p_mt, "st", &p_st, Tail::Greater, cfg.replicates, cfg.alpha, boot_seed)?;
    write_json(&rep_dir.join("compare_mt_vs_st.json"), &cmp)?;
    std::fs::write(rep_dir.join("compare_mt_vs_st.txt"), cmp.to_text())?;

    let reps = detail_replicates(&detail_truth, &d_mt, &d_teacher, cfg.replicates, boot_seed)?;
    let details: Vec<DetailComparison> = (0..NUM_DETAILS)
        .map(|j| DetailComparison {
            teacher_f1: teacher_details.details[j].f1,
            mt_f1: mt_details.details[j].f1,
            p_value: wilcoxon_signed_rank(&reps[j].0, &reps[j].1, Tail::Two).ok().map(|r| r.p_value),
        })
        .collect();
    write_json(&rep_dir.join("details_mt_vs_teacher.json"), &details)?;

    log(cfg, format!("[seed {seed}] GradCAM localization"));
    let (gradcam_hits, gradcam_chance) = gradcam_localization(&mt.params, cfg, seed)?;

    let f1 = |i: usize| reports[i].overall.macro_f1;
    let result = SeedResult {
        seed,
        st_f1: f1(0),
        st_ext_f1: f1(1),
        mt_f1: f1(2),
        mt_hard_f1: f1(3),
        mt_flip_f1: f1(4),
        teacher_error,
        pseudo_mae,
        details,
        gradcam_hits,
        gradcam_images: cfg.gradcam_images,
        gradcam_chance,
        mt_vs_st_p: cmp.wilcoxon.as_ref().ok().map(|w| w.p_value),
    };
    write_json(&rep_dir.join("seed_result.json"), &result)?;
    log(
        cfg,
        format!(
            "[seed {seed}] macro-F1 st {:.4} st_ext {:.4} mt {:.4} mt_hard {:.4} mt_flip {:.4}",
            result.st_f1, result.st_ext_f1, result.mt_f1, result.mt_hard_f1, result.mt_flip_f1
        ),
    );
    Ok(result)
}

impl BenchmarkReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>6}{:>9}{:>9}{:>9}{:>9}{:>9}{:>10}{:>9}",
            "seed", "ST", "ST-ext", "MT", "MT-hard", "MT-flip", "pseudoMAE", "CAM/ch"
        );
        for r in &self.seeds {
            let _ = writeln!(
                s,
                "{:>6}{:>9.4}{:>9.4}{:>9.4}{:>9.4}{:>9.4}{:>10.4}{:>9.3}",
                r.seed,
                r.st_f1,
                r.st_ext_f1,
                r.mt_f1,
                r.mt_hard_f1,
                r.mt_flip_f1,
                r.pseudo_mae,
                r.gradcam_ratio()
            );
        }
        let _ = writeln!(s, "\ndetail F1 (Teacher / MT / two-tailed p):");
        for r in &self.seeds {
            let cells: Vec<String> = r
                .details
                .iter()
                .map(|d| match d.p_value {
                    Some(p) => format!("{:.3}/{:.3}/{:.3}", d.teacher_f1, d.mt_f1, p),
                    None => format!("{:.3}/{:.3}/-", d.teacher_f1, d.mt_f1),
                })
                .collect();
            let _ = writeln!(s, "{:>6}  {}", r.seed, cells.join("  "));
        }
        let _ = writeln!(s);
        for c in &self.criteria {
            let _ = writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        s
    }
}
