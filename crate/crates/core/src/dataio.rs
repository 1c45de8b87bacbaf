//! CSV manifests and image loading with FOV cropping. Also hosts the
//! stratified holdout split.
//!
//! Manifest header (UTF-8, comma separated, `.` decimal point):
//!
//! ```text
//! image,split,overall,illum,clarity,contrast,p_illum,p_clarity,p_contrast
//! ```
//!
//! `image` is relative to the manifest's directory (or absolute) and `split`
//! is one of `train|val|test`. Detail columns hold `0`, `1` or nothing;
//! pseudo-label columns hold probabilities or nothing.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const HEADER: [&str; 9] = [
    "image", "split", "overall", "illum", "clarity", "contrast", "p_illum", "p_clarity", "p_contrast",
];

pub const DEFAULT_FOV_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split tag `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Overall-quality labeling scheme: `3class` is reject(0)/usable(1)/good(2),
/// `2class` is bad(0)/good(1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Style {
    #[serde(rename = "2class")]
    TwoClass,
    #[serde(rename = "3class")]
    ThreeClass,
}

impl Style {
    pub fn num_classes(self) -> usize {
        match self {
            Style::TwoClass => 2,
            Style::ThreeClass => 3,
        }
    }
}

impl FromStr for Style {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2class" => Ok(Style::TwoClass),
            "3class" => Ok(Style::ThreeClass),
            other => Err(Error::invalid(format!("unknown style `{other}` (expected 2class or 3class)"))),
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Style::TwoClass => "2class",
            Style::ThreeClass => "3class",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image: PathBuf,
    pub split: Split,
    pub overall: Option<u8>,
    pub details: [Option<u8>; 3],
    pub pseudo: [Option<f64>; 3],
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    image: String,
    split: String,
    overall: Option<String>,
    illum: Option<String>,
    clarity: Option<String>,
    contrast: Option<String>,
    p_illum: Option<String>,
    p_clarity: Option<String>,
    p_contrast: Option<String>,
}

fn parse_opt<T: FromStr>(field: &Option<String>) -> std::result::Result<Option<T>, String> {
    match field.as_deref().map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => s.parse().map(Some).map_err(|_| format!("cannot parse `{s}`")),
    }
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Reads and validates manifest rows without touching image files.
pub fn read_manifest_rows(path: &Path, style: Style) -> Result<Vec<ManifestRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).ne(HEADER.iter().copied()) {
        return Err(Error::Manifest {
            row: 0,
            message: format!("expected header `{}`", HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<CsvRow>().enumerate() {
        let row_no = i + 1;
        let err = |message: String| Error::Manifest { row: row_no, message };
        let r = rec.map_err(|e| err(e.to_string()))?;
        let split = r.split.trim().parse::<Split>().map_err(|e| err(e.to_string()))?;
        let overall: Option<u8> = parse_opt(&r.overall).map_err(&err)?;
        if let Some(o) = overall {
            if o as usize >= style.num_classes() {
                return Err(err(format!("overall label {o} out of range for {style}")));
            }
        }
        let mut details = [None; 3];
        for (j, f) in [&r.illum, &r.clarity, &r.contrast].into_iter().enumerate() {
            details[j] = parse_opt::<u8>(f).map_err(&err)?;
            if details[j].is_some_and(|d| d > 1) {
                return Err(err(format!("detail label {} must be 0 or 1", details[j].unwrap())));
            }
        }
        let mut pseudo = [None; 3];
        for (j, f) in [&r.p_illum, &r.p_clarity, &r.p_contrast].into_iter().enumerate() {
            pseudo[j] = parse_opt::<f64>(f).map_err(&err)?;
            if pseudo[j].is_some_and(|p| !(0.0..=1.0).contains(&p)) {
                return Err(err(format!("pseudo-label {} outside [0, 1]", pseudo[j].unwrap())));
            }
        }
        rows.push(ManifestRow {
            image: PathBuf::from(r.image.trim()),
            split,
            overall,
            details,
            pseudo,
        });
    }
    Ok(rows)
}

/// Writes rows atomically (temporary file, then rename). Floats use Rust's
/// shortest round-trip formatting, so write→read is lossless.
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::WriterBuilder::new().from_path(&tmp)?;
        w.write_record(HEADER)?;
        for r in rows {
            let mut rec = vec![r.image.to_string_lossy().into_owned(), r.split.to_string(), fmt_opt(r.overall)];
            rec.extend(r.details.iter().map(|d| fmt_opt(*d)));
            rec.extend(r.pseudo.iter().map(|p| fmt_opt(*p)));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Side length images are resized to.
    pub image_size: usize,
    /// Crop the field of view before resizing.
    pub fov_crop: bool,
    pub fov_threshold: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            image_size: 32,
            fov_crop: true,
            fov_threshold: DEFAULT_FOV_THRESHOLD,
        }
    }
}

impl LoadOptions {
    /// Options for generated phantoms, which are already square and tight.
    pub fn synthetic(image_size: usize) -> Self {
        Self {
            image_size,
            fov_crop: false,
            ..Self::default()
        }
    }
}

/// FOV crop (when enabled) and resize to the model input size.
pub fn preprocess(image: &Image, opts: &LoadOptions) -> Result<Image> {
    if opts.fov_crop {
        fov_crop(image, opts.fov_threshold, opts.image_size)
    } else {
        Ok(image.resize(opts.image_size, opts.image_size))
    }
}

/// Manifest rows with their preprocessed images.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<ManifestRow>,
    pub style: Style,
    pub image_size: usize,
    pub images: Vec<Image>,
    /// Directory relative image paths resolve against.
    pub base_dir: PathBuf,
}

impl Dataset {
    pub fn load(path: &Path, style: Style, opts: &LoadOptions) -> Result<Self> {
        let rows = read_manifest_rows(path, style)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut images = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let p = base_dir.join(&r.image);
            if !p.is_file() {
                return Err(Error::Manifest {
                    row: i + 1,
                    message: format!("missing image file {}", p.display()),
                });
            }
            let img = Image::load_png(&p)
                .and_then(|img| preprocess(&img, opts))
                .map_err(|e| Error::Manifest { row: i + 1, message: e.to_string() })?;
            images.push(img);
        }
        Ok(Self {
            rows,
            style,
            image_size: opts.image_size,
            images,
            base_dir,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.style.num_classes()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| self.rows[i].split == split).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            style: self.style,
            image_size: self.image_size,
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn split(&self, split: Split) -> Dataset {
        self.subset(&self.indices(split))
    }

    pub fn has_details(&self, indices: &[usize]) -> bool {
        indices.iter().all(|&i| self.rows[i].details.iter().all(Option::is_some))
    }

    pub fn has_pseudo(&self, indices: &[usize]) -> bool {
        indices.iter().all(|&i| self.rows[i].pseudo.iter().all(Option::is_some))
    }

    pub fn has_overall(&self, indices: &[usize]) -> bool {
        indices.iter().all(|&i| self.rows[i].overall.is_some())
    }

    /// Writes this dataset's rows as a manifest next to its images.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let rows: Vec<ManifestRow> = self
            .rows
            .iter()
            .map(|r| {
                let abs = self.base_dir.join(&r.image);
                let image = abs.strip_prefix(&dir).map(Path::to_path_buf).unwrap_or(abs);
                ManifestRow { image, ..r.clone() }
            })
            .collect();
        write_manifest(path, &rows)
    }
}

pub fn load_manifest(path: &Path, style: Style, opts: &LoadOptions) -> Result<Dataset> {
    Dataset::load(path, style, opts)
}

/// Tight bounding box of the pixels brighter than `threshold`, padded to a
/// square with black and resized to `out_size`.
pub fn fov_crop(image: &Image, threshold: f64, out_size: usize) -> Result<Image> {
    let (w, h) = (image.width(), image.height());
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if image.pixel(x, y).into_iter().fold(0.0, f64::max) > threshold {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(Error::NoFov);
    }
    let (cw, ch) = (x1 - x0 + 1, y1 - y0 + 1);
    let side = cw.max(ch);
    let (ox, oy) = ((side - cw) / 2, (side - ch) / 2);
    let mut square = Image::black(side, side);
    for y in 0..ch {
        for x in 0..cw {
            square.set_pixel(ox + x, oy + y, image.pixel(x0 + x, y0 + y));
        }
    }
    Ok(square.resize(out_size, out_size))
}

/// Stratified random holdout: for each overall class, `round(fraction · n)`
/// rows (at least one) move to the validation subset, which is re-tagged
/// `val`. Rows keep their original relative order.
pub fn split_holdout(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::invalid(format!("holdout fraction {fraction} outside (0, 0.5]")));
    }
    if ds.len() < 10 {
        return Err(Error::invalid(format!("holdout needs at least 10 rows, got {}", ds.len())));
    }
    let mut by_class: BTreeMap<Option<u8>, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.rows.iter().enumerate() {
        by_class.entry(r.overall).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_val = vec![false; ds.len()];
    for (class, mut members) in by_class {
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "class {class:?} has a single sample; a stratified holdout needs a larger dataset"
            )));
        }
        let k = ((fraction * members.len() as f64).round() as usize).max(1);
        members.shuffle(&mut rng);
        for &i in &members[..k] {
            is_val[i] = true;
        }
    }
    let train: Vec<usize> = (0..ds.len()).filter(|&i| !is_val[i]).collect();
    let val: Vec<usize> = (0..ds.len()).filter(|&i| is_val[i]).collect();
    let train_ds = ds.subset(&train);
    let mut val_ds = ds.subset(&val);
    for r in &mut val_ds.rows {
        r.split = Split::Val;
    }
    Ok((train_ds, val_ds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(path: &Path, text: &str) {
        std::fs::File::create(path).unwrap().write_all(text.as_bytes()).unwrap();
    }

    fn header() -> String {
        HEADER.join(",") + "\n"
    }

    fn dummy(n: usize, classes: &[u8]) -> Dataset {
        Dataset {
            rows: (0..n)
                .map(|i| ManifestRow {
                    image: format!("{i}.png").into(),
                    split: Split::Train,
                    overall: Some(classes[i % classes.len()]),
                    details: [None; 3],
                    pseudo: [None; 3],
                })
                .collect(),
            style: Style::ThreeClass,
            image_size: 4,
            images: vec![Image::black(4, 4); n],
            base_dir: PathBuf::new(),
        }
    }

    #[test]
    fn empty_manifest_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_file(&p, &header());
        let ds = load_manifest(&p, Style::ThreeClass, &LoadOptions::default()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn errors_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        Image::black(4, 4).save_png(&dir.path().join("a.png")).unwrap();
        write_file(&p, &(header() + "a.png,train,1,,,,,,\na.png,train,3,,,,,,\n"));
        let e = read_manifest_rows(&p, Style::ThreeClass).unwrap_err();
        assert!(matches!(e, Error::Manifest { row: 2, .. }), "{e}");
        write_file(&p, &(header() + "a.png,holdout,1,,,,,,\n"));
        assert!(matches!(read_manifest_rows(&p, Style::ThreeClass), Err(Error::Manifest { row: 1, .. })));
        write_file(&p, &(header() + "missing.png,train,1,,,,,,\n"));
        assert!(matches!(load_manifest(&p, Style::ThreeClass, &LoadOptions::synthetic(4)), Err(Error::Manifest { row: 1, .. })));
    }

    #[test]
    fn detail_and_pseudo_columns_are_independent() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_file(&p, &(header() + "a.png,val,,1,0,,0.25,,0.5\n"));
        let rows = read_manifest_rows(&p, Style::TwoClass).unwrap();
        assert_eq!(rows[0].details, [Some(1), Some(0), None]);
        assert_eq!(rows[0].pseudo, [Some(0.25), None, Some(0.5)]);
        assert_eq!(rows[0].overall, None);
    }

    #[test]
    fn fov_crop_finds_offset_circle() {
        // circle of radius 10 centered at (15, 20) on a 80x40 canvas
        let mut img = Image::black(80, 40);
        for y in 0..40 {
            for x in 0..80 {
                let (dx, dy) = (x as f64 - 15.0, y as f64 - 20.0);
                if dx * dx + dy * dy <= 100.0 {
                    img.set_pixel(x, y, [0.6, 0.3, 0.1]);
                }
            }
        }
        let out = fov_crop(&img, 0.02, 21).unwrap();
        // box is 21x21 starting at (5, 10); cropped square maps 1:1
        assert_eq!(out, img.crop(5, 10, 21, 21));
        assert!(matches!(fov_crop(&Image::black(8, 8), 0.02, 8), Err(Error::NoFov)));
    }

    #[test]
    fn holdout_is_stratified_partition() {
        let ds = dummy(100, &[0, 1, 2]);
        let (tr, va) = split_holdout(&ds, 0.1, 3).unwrap();
        assert_eq!(tr.len() + va.len(), 100);
        for c in 0..3u8 {
            let n = va.rows.iter().filter(|r| r.overall == Some(c)).count();
            assert!((3..=4).contains(&n));
        }
        let mut names: Vec<_> = tr.rows.iter().chain(&va.rows).map(|r| r.image.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 100);
        assert_eq!(split_holdout(&ds, 0.1, 3).unwrap().1, va);
        assert!(va.rows.iter().all(|r| r.split == Split::Val));
    }

    #[test]
    fn holdout_of_642_imbalanced_images_keeps_a_tenth() {
        // 642 training images with an imbalanced label mix
        let classes: Vec<u8> = (0..642).map(|i| if i % 5 == 0 { 0 } else if i % 5 < 3 { 1 } else { 2 }).collect();
        let ds = dummy(642, &classes);
        let (_, va) = split_holdout(&ds, 0.1, 1).unwrap();
        assert!((64..=65).contains(&va.len()), "{}", va.len());
    }

    #[test]
    fn holdout_rejects_singleton_class() {
        let mut ds = dummy(20, &[0, 1]);
        ds.rows[0].overall = Some(2);
        assert!(split_holdout(&ds, 0.1, 1).is_err());
    }
}
