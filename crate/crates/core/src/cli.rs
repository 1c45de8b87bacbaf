//! The `fmtk` command line: one subcommand per pipeline stage.
//!
//! Every subcommand resolves its settings as flags over an optional JSON
//! config file over built-in defaults. After running it writes
//! `run_manifest.json` into `--out`. A run manifest is itself a valid `--config` file, so
//! `fmtk <command> --config <dir>/run_manifest.json --out <dir2>` replays a
//! run.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataio::{preprocess, Dataset, LoadOptions, Split, Style, DEFAULT_FOV_THRESHOLD};
use crate::error::{Error, Result};
use crate::eval::{argmax, compare_models, detail_metrics, export_embeddings, EvalReport, Tail};
use crate::explain::{gradcam, overlay, Target};
use crate::imaging::Image;
use crate::model::{predict, ModelParams};
use crate::objectives::{LossWeights, Schedule};
use crate::phantom::{generate_dataset, GenConfig};
use crate::pipeline::{
    default_lambda_grid, finetune_multitask, predictions, pretrain_student, pseudo_label_manifest, run_benchmark, train_teacher,
    tune_lambdas, write_eval, write_json, BenchmarkConfig, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Environment variable capping benchmark worker threads.
pub const THREADS_ENV: &str = "FMTK_THREADS";

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Parser)]
#[command(name = "fmtk", version, about = "Semi-supervised multi-task fundus image quality toolkit")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// JSON config file (or a previous run manifest).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
struct DataFlags {
    /// Input manifest CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// `2class` or `3class`.
    #[arg(long)]
    style: Option<Style>,
    #[arg(long)]
    image_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
struct TrainFlags {
    /// Epochs; milestones are compressed proportionally.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lambda_a: Option<f64>,
    #[arg(long)]
    lambda_b: Option<f64>,
    /// Threshold pseudo-labels at 0.5 before fine-tuning.
    #[arg(long)]
    hard_pseudo: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic phantom dataset with oracle labels.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        style: Option<Style>,
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Train the detail-label Teacher.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Write a manifest with Teacher probabilities as pseudo-labels.
    PseudoLabel {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Single-task pre-training on overall-quality labels.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Multi-task fine-tuning from a pre-trained student.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        student: Option<PathBuf>,
    },
    /// Grid search over the loss weights.
    TuneLambdas {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        student: Option<PathBuf>,
    },
    /// Metrics of one model on one split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        split: Option<Split>,
        /// Detail decision threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Paired comparison of two models on one split.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        model_a: Option<PathBuf>,
        #[arg(long)]
        model_b: Option<PathBuf>,
        #[arg(long)]
        split: Option<Split>,
    },
    /// GradCAM heatmap and overlay for one image.
    Gradcam {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        /// `class:<c>` or `detail:<j>`; the predicted class when omitted.
        #[arg(long)]
        target: Option<Target>,
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Shared embeddings of every manifest row as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// The full synthetic protocol over several seeds.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seeds: Option<usize>,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        image_size: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainTeacher { .. } => "train-teacher",
            Command::PseudoLabel { .. } => "pseudo-label",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::TuneLambdas { .. } => "tune-lambdas",
            Command::Evaluate { .. } => "evaluate",
            Command::Compare { .. } => "compare",
            Command::Gradcam { .. } => "gradcam",
            Command::ExportEmbeddings { .. } => "export-embeddings",
            Command::Benchmark { .. } => "benchmark",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenData { common, .. }
            | Command::TrainTeacher { common, .. }
            | Command::PseudoLabel { common, .. }
            | Command::Pretrain { common, .. }
            | Command::Finetune { common, .. }
            | Command::TuneLambdas { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Compare { common, .. }
            | Command::Gradcam { common, .. }
            | Command::ExportEmbeddings { common, .. }
            | Command::Benchmark { common, .. } => common,
        }
    }
}

/// Written into `--out` at the end of every successful run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved settings, defaults included.
    pub config: Value,
    pub seed: u64,
    pub version: String,
    pub inputs: BTreeMap<String, PathBuf>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<PathBuf>,
    pub duration_secs: f64,
    pub argv: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSettings {
    pub count: usize,
    pub style: Style,
    pub fractions: [f64; 3],
    pub seed: u64,
    pub image_size: usize,
}

impl Default for GenSettings {
    fn default() -> Self {
        Self {
            count: 1000,
            style: Style::ThreeClass,
            fractions: [0.8, 0.1, 0.1],
            seed: 0,
            image_size: 32,
        }
    }
}

/// Manifest location and image preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSettings {
    pub manifest: Option<PathBuf>,
    pub style: Style,
    pub image_size: usize,
    pub fov_crop: bool,
    pub fov_threshold: f64,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            manifest: None,
            style: Style::ThreeClass,
            image_size: 32,
            fov_crop: true,
            fov_threshold: DEFAULT_FOV_THRESHOLD,
        }
    }
}

impl DataSettings {
    fn load_options(&self) -> LoadOptions {
        LoadOptions {
            image_size: self.image_size,
            fov_crop: self.fov_crop,
            fov_threshold: self.fov_threshold,
        }
    }

    fn manifest(&self) -> Result<&Path> {
        self.manifest.as_deref().ok_or_else(|| Error::invalid("no input manifest (use --data)"))
    }

    fn load(&self) -> Result<Dataset> {
        Dataset::load(self.manifest()?, self.style, &self.load_options())
    }

    fn apply(&mut self, flags: &DataFlags) {
        if let Some(p) = &flags.data {
            self.manifest = Some(p.clone());
        }
        if let Some(s) = flags.style {
            self.style = s;
        }
        if let Some(n) = flags.image_size {
            self.image_size = n;
        }
    }
}

/// Settings of the training subcommands. `student` is only read by
/// `finetune` and `tune-lambdas`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TrainSettings {
    pub data: DataSettings,
    pub train: TrainConfig,
    pub student: Option<PathBuf>,
    pub grid: Option<Vec<LossWeights>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PseudoSettings {
    pub data: DataSettings,
    pub teacher: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub data: DataSettings,
    pub model: Option<PathBuf>,
    pub split: Split,
    pub threshold: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            data: DataSettings::default(),
            model: None,
            split: Split::Test,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareSettings {
    pub data: DataSettings,
    pub model_a: Option<PathBuf>,
    pub model_b: Option<PathBuf>,
    pub split: Split,
    pub tail: Tail,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for CompareSettings {
    fn default() -> Self {
        Self {
            data: DataSettings::default(),
            model_a: None,
            model_b: None,
            split: Split::Test,
            tail: Tail::Two,
            replicates: 1000,
            alpha: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcamSettings {
    pub model: Option<PathBuf>,
    pub image: Option<PathBuf>,
    /// `None` explains the predicted class.
    pub target: Option<Target>,
    pub image_size: usize,
    pub fov_crop: bool,
    pub fov_threshold: f64,
    pub overlay_alpha: f64,
}

impl Default for GradcamSettings {
    fn default() -> Self {
        Self {
            model: None,
            image: None,
            target: None,
            image_size: 32,
            fov_crop: true,
            fov_threshold: DEFAULT_FOV_THRESHOLD,
            overlay_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EmbedSettings {
    pub data: DataSettings,
    pub model: Option<PathBuf>,
}

/// Reads `path` as settings of type `T`; a run manifest contributes its
/// `config` field.
fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let bad = |m: String| Error::invalid(format!("config {}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if value.get("command").is_some() && value.get("config").is_some() {
        value = value["config"].take();
    }
    serde_json::from_value(value).map_err(|e| bad(e.to_string()))
}

fn apply_train_flags(cfg: &mut TrainConfig, flags: &TrainFlags) -> Result<()> {
    if let Some(e) = flags.epochs {
        if e == 0 {
            return Err(Error::invalid("--epochs must be positive"));
        }
        cfg.schedule = Schedule::shortened(e);
    }
    if let Some(b) = flags.batch {
        cfg.batch_size = b;
    }
    if let Some(a) = flags.lambda_a {
        cfg.weights.lambda_a = a;
    }
    if let Some(b) = flags.lambda_b {
        cfg.weights.lambda_b = b;
    }
    if flags.hard_pseudo {
        cfg.hard_pseudo = true;
    }
    Ok(())
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| Error::invalid(format!("missing {flag}")))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

/// What one subcommand produced, before the manifest is assembled.
struct Outcome {
    config: Value,
    seed: u64,
    inputs: BTreeMap<String, PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Outcome {
    fn new<T: Serialize>(config: &T, seed: u64) -> Result<Self> {
        Ok(Self {
            config: serde_json::to_value(config)?,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    fn input(mut self, name: &str, path: Option<&Path>) -> Self {
        if let Some(p) = path {
            self.inputs.insert(name.into(), p.to_path_buf());
        }
        self
    }

    fn output(mut self, name: impl Into<PathBuf>) -> Self {
        self.outputs.push(name.into());
        self
    }
}

fn load_model(path: &Path, image_size: usize) -> Result<ModelParams> {
    ModelParams::load(path, image_size)
}

fn train_stage(command: &Command, common: &Common, data: &DataFlags, flags: &TrainFlags, student: Option<&PathBuf>) -> Result<Outcome> {
    let mut s: TrainSettings = read_config(common.config.as_deref())?;
    s.data.apply(data);
    apply_train_flags(&mut s.train, flags)?;
    if let Some(seed) = common.seed {
        s.train.seed = seed;
    }
    if let Some(p) = student {
        s.student = Some(p.clone());
    }
    s.train.backbone.input_size = s.data.image_size;
    let out = &common.out;
    let mut cfg = s.train.clone();
    cfg.checkpoint_dir = Some(out.clone());
    s.train.checkpoint_dir = None;
    let ds = s.data.load()?;

    let base = Outcome::new(&s, s.train.seed)?.input("data", s.data.manifest.as_deref());
    let res = match command {
        Command::TrainTeacher { .. } => train_teacher(&ds, &cfg)?,
        Command::Pretrain { .. } => pretrain_student(&ds, &cfg)?,
        Command::Finetune { .. } => {
            let st = load_model(required(&s.student, "--student")?, s.data.image_size)?;
            finetune_multitask(&st, &ds, &cfg)?
        }
        Command::TuneLambdas { .. } => {
            let st = load_model(required(&s.student, "--student")?, s.data.image_size)?;
            let grid = s.grid.clone().unwrap_or_else(default_lambda_grid);
            let tuned = tune_lambdas(&grid, &st, &ds, &cfg)?;
            write_json(&out.join("tune.json"), &tuned)?;
            return Ok(base.input("student", s.student.as_deref()).output("tune.json"));
        }
        _ => unreachable!("train_stage handles training commands only"),
    };
    let stage = res.record.stage.clone();
    let record = format!("{stage}.json");
    res.record.save(&out.join(&record))?;
    let mut outcome = base.input("student", s.student.as_deref()).output(record);
    for c in &res.record.checkpoints {
        outcome = outcome.output(c);
    }
    Ok(outcome)
}

fn execute(command: &Command) -> Result<Outcome> {
    let common = command.common();
    let out = &common.out;
    std::fs::create_dir_all(out)?;
    let config = common.config.as_deref();
    match command {
        Command::GenData { count, style, image_size, .. } => {
            let mut s: GenSettings = read_config(config)?;
            if let Some(c) = count {
                s.count = *c;
            }
            if let Some(st) = style {
                s.style = *st;
            }
            if let Some(n) = image_size {
                s.image_size = *n;
            }
            if let Some(seed) = common.seed {
                s.seed = seed;
            }
            let gen = GenConfig {
                count: s.count,
                style: s.style,
                fractions: s.fractions,
                seed: s.seed,
                size: s.image_size,
            };
            let (ds, _) = generate_dataset(&gen, out)?;
            let mut outcome = Outcome::new(&s, s.seed)?.output("manifest.csv");
            for r in &ds.rows {
                outcome = outcome.output(&r.image);
            }
            Ok(outcome)
        }
        Command::TrainTeacher { data, train, .. } | Command::Pretrain { data, train, .. } => train_stage(command, common, data, train, None),
        Command::Finetune { data, train, student, .. } | Command::TuneLambdas { data, train, student, .. } => {
            train_stage(command, common, data, train, student.as_ref())
        }
        Command::PseudoLabel { data, teacher, .. } => {
            let mut s: PseudoSettings = read_config(config)?;
            s.data.apply(data);
            if let Some(t) = teacher {
                s.teacher = Some(t.clone());
            }
            let teacher = load_model(required(&s.teacher, "--teacher")?, s.data.image_size)?;
            pseudo_label_manifest(&teacher, s.data.manifest()?, &out.join("manifest_pseudo.csv"), s.data.style, &s.data.load_options())?;
            Ok(Outcome::new(&s, 0)?
                .input("data", s.data.manifest.as_deref())
                .input("teacher", s.teacher.as_deref())
                .output("manifest_pseudo.csv"))
        }
        Command::Evaluate { data, model, split, threshold, .. } => {
            let mut s: EvalSettings = read_config(config)?;
            s.data.apply(data);
            if let Some(m) = model {
                s.model = Some(m.clone());
            }
            if let Some(sp) = split {
                s.split = *sp;
            }
            if let Some(t) = threshold {
                s.threshold = *t;
            }
            let path = required(&s.model, "--model")?;
            let params = load_model(path, s.data.image_size)?;
            let ds = s.data.load()?;
            let idx = ds.indices(s.split);
            if idx.is_empty() {
                return Err(Error::invalid(format!("split `{}` is empty", s.split)));
            }
            if !ds.has_overall(&idx) {
                return Err(Error::invalid("evaluation needs overall labels in the manifest"));
            }
            let (preds, probs) = predictions(&params, &ds, &idx)?;
            let details = match probs {
                Some(p) if ds.has_details(&idx) => {
                    let truth: Vec<_> = idx.iter().map(|&i| ds.rows[i].details.map(|d| d.unwrap_or(0))).collect();
                    Some(detail_metrics(&truth, &p, s.threshold)?)
                }
                _ => None,
            };
            let name = file_stem(path);
            let report = EvalReport::new(&name, &preds, details)?;
            write_eval(out, &report)?;
            print!("{}", report.to_text());
            Ok(Outcome::new(&s, 0)?
                .input("data", s.data.manifest.as_deref())
                .input("model", Some(path))
                .output(format!("eval_{name}.json"))
                .output(format!("eval_{name}.txt"))
                .output(format!("confusion_{name}.csv"))
                .output(format!("confusion_{name}_normalized.csv")))
        }
        Command::Compare { data, model_a, model_b, split, .. } => {
            let mut s: CompareSettings = read_config(config)?;
            s.data.apply(data);
            if let Some(m) = model_a {
                s.model_a = Some(m.clone());
            }
            if let Some(m) = model_b {
                s.model_b = Some(m.clone());
            }
            if let Some(sp) = split {
                s.split = *sp;
            }
            if let Some(seed) = common.seed {
                s.seed = seed;
            }
            let (pa, pb) = (required(&s.model_a, "--model-a")?, required(&s.model_b, "--model-b")?);
            let ds = s.data.load()?;
            let idx = ds.indices(s.split);
            if idx.is_empty() || !ds.has_overall(&idx) {
                return Err(Error::invalid(format!("split `{}` has no overall labels", s.split)));
            }
            let (a, _) = predictions(&load_model(pa, s.data.image_size)?, &ds, &idx)?;
            let (b, _) = predictions(&load_model(pb, s.data.image_size)?, &ds, &idx)?;
            let cmp = compare_models(&file_stem(pa), &a, &file_stem(pb), &b, s.tail, s.replicates, s.alpha, s.seed)?;
            write_json(&out.join("compare.json"), &cmp)?;
            std::fs::write(out.join("compare.txt"), cmp.to_text())?;
            print!("{}", cmp.to_text());
            Ok(Outcome::new(&s, s.seed)?
                .input("data", s.data.manifest.as_deref())
                .input("model_a", Some(pa))
                .input("model_b", Some(pb))
                .output("compare.json")
                .output("compare.txt"))
        }
        Command::Gradcam { model, image, target, image_size, .. } => {
            let mut s: GradcamSettings = read_config(config)?;
            if let Some(m) = model {
                s.model = Some(m.clone());
            }
            if let Some(i) = image {
                s.image = Some(i.clone());
            }
            if target.is_some() {
                s.target = *target;
            }
            if let Some(n) = image_size {
                s.image_size = *n;
            }
            let (mp, ip) = (required(&s.model, "--model")?, required(&s.image, "--image")?);
            let params = load_model(mp, s.image_size)?;
            let opts = LoadOptions {
                image_size: s.image_size,
                fov_crop: s.fov_crop,
                fov_threshold: s.fov_threshold,
            };
            let img: Image = preprocess(&Image::load_png(ip)?, &opts)?;
            let target = match s.target {
                Some(t) => t,
                None => Target::Class(argmax(&predict(&params, &[&img])?.0[0])),
            };
            s.target = Some(target);
            let heat = gradcam(&params, &img, target)?;
            heat.save_csv(&out.join("heatmap.csv"))?;
            write_json(&out.join("heatmap.json"), &heat)?;
            overlay(&img, &heat, s.overlay_alpha)?.save_png(&out.join("overlay.png"))?;
            Ok(Outcome::new(&s, 0)?
                .input("model", Some(mp))
                .input("image", Some(ip))
                .output("heatmap.csv")
                .output("heatmap.json")
                .output("overlay.png"))
        }
        Command::ExportEmbeddings { data, model, .. } => {
            let mut s: EmbedSettings = read_config(config)?;
            s.data.apply(data);
            if let Some(m) = model {
                s.model = Some(m.clone());
            }
            let mp = required(&s.model, "--model")?;
            let params = load_model(mp, s.data.image_size)?;
            let n = export_embeddings(&params, &s.data.load()?, &out.join("embeddings.csv"))?;
            println!("wrote {n} embeddings");
            Ok(Outcome::new(&s, 0)?
                .input("data", s.data.manifest.as_deref())
                .input("model", Some(mp))
                .output("embeddings.csv"))
        }
        Command::Benchmark { seeds, train, image_size, .. } => {
            let mut s: BenchmarkConfig = read_config(config)?;
            if let Some(n) = seeds {
                s.seeds = *n;
            }
            if let Some(seed) = common.seed {
                s.seed = seed;
            }
            if let Some(e) = train.epochs {
                s.epochs = e;
                s.teacher_epochs = e;
            }
            if let Some(b) = train.batch {
                s.batch_size = b;
            }
            if let Some(a) = train.lambda_a {
                s.weights.lambda_a = a;
            }
            if let Some(b) = train.lambda_b {
                s.weights.lambda_b = b;
            }
            if train.hard_pseudo {
                s.hard_pseudo = true;
            }
            if let Some(n) = image_size {
                s.image_size = *n;
            }
            s.backbone.input_size = s.image_size;
            if let Some(cap) = threads_cap()? {
                s.threads = s.threads.min(cap);
            }
            let report = run_benchmark(&s, out)?;
            print!("{}", report.to_text());
            Ok(Outcome::new(&s, s.seed)?.output("benchmark_report.json").output("benchmark_report.txt"))
        }
    }
}

fn threads_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::invalid(format!("{THREADS_ENV}=`{v}` is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let start = Instant::now();
    let result = execute(&cli.command).and_then(|outcome| {
        let manifest = RunManifest {
            command: cli.command.name().into(),
            config: outcome.config,
            seed: outcome.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            inputs: outcome.inputs,
            outputs: outcome.outputs,
            duration_secs: start.elapsed().as_secs_f64(),
            argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        };
        write_json(&cli.command.common().out.join(RUN_MANIFEST), &manifest)
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_INTERNAL
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_arguments_is_a_usage_error() {
        assert_eq!(dispatch(["fmtk"]), EXIT_USAGE);
        assert_eq!(dispatch(["fmtk", "frobnicate"]), EXIT_USAGE);
        assert_eq!(dispatch(["fmtk", "--help"]), EXIT_OK);
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"count": 40, "image_size": 16, "seed": 3}"#).unwrap();
        let s: GenSettings = read_config(Some(&cfg)).unwrap();
        assert_eq!((s.count, s.image_size, s.seed, s.style), (40, 16, 3, Style::ThreeClass));

        let out = dir.path().join("o");
        let code = dispatch([
            "fmtk", "gen-data", "--config", cfg.to_str().unwrap(), "--count", "30", "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK);
        let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(out.join(RUN_MANIFEST)).unwrap()).unwrap();
        assert_eq!(m.config["count"], 30);
        assert_eq!(m.config["image_size"], 16);
        assert_eq!(m.seed, 3);
        assert_eq!(m.config["fractions"], serde_json::json!([0.8, 0.1, 0.1]));
    }

    #[test]
    fn manifest_config_unwraps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = RunManifest {
            command: "gen-data".into(),
            config: serde_json::json!({"count": 12}),
            seed: 0,
            version: "0".into(),
            inputs: BTreeMap::new(),
            outputs: vec![],
            duration_secs: 0.0,
            argv: vec![],
        };
        write_json(&p, &m).unwrap();
        let s: GenSettings = read_config(Some(&p)).unwrap();
        assert_eq!(s.count, 12);
    }

    #[test]
    fn bad_config_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, "{not json").unwrap();
        let out = dir.path().join("o");
        let code = dispatch(["fmtk", "gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_DATA);
        let code = dispatch(["fmtk", "evaluate", "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_DATA);
    }
}
