//! Procedural fundus phantoms with controlled acquisition defects.
//!
//! A clean phantom is an orange retina disc on black, carrying an optic disc
//! and fovea plus a vessel tree. [`degrade`] applies one defect per quality
//! detail at a given severity; [`derive_labels`] maps severities to oracle
//! detail/overall labels.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{write_manifest, Dataset, ManifestRow, Split, Style};
use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};

/// FOV radius as a fraction of the image side.
pub const FOV_RADIUS_FRAC: f64 = 0.46;

pub const MIN_SIZE: usize = 16;
pub const MAX_SIZE: usize = 128;

/// Mixture used by [`generate_dataset`] to draw severities.
pub mod mixture {
    /// Probability that a sample is pristine.
    pub const PRISTINE_PROB: f64 = 0.4;
    /// Pristine severities are uniform in `[0, PRISTINE_MAX]`.
    pub const PRISTINE_MAX: f64 = 0.15;
}

/// Label thresholds on the worst severity (3-class style) and per detail.
pub mod thresholds {
    pub const GOOD_BELOW: f64 = 0.35;
    pub const REJECT_FROM: f64 = 0.65;
    pub const DETAIL_BAD_FROM: f64 = 0.5;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub size: usize,
    pub seed: u64,
    /// Centers are in pixel units, origin at the top-left corner.
    pub disc_center: (f64, f64),
    pub disc_radius: f64,
    pub fovea_center: (f64, f64),
    pub fovea_radius: f64,
    pub vessel_branches: usize,
    pub vessel_width: f64,
}

fn fov_geometry(size: usize) -> ((f64, f64), f64) {
    let c = size as f64 / 2.0;
    ((c, c), FOV_RADIUS_FRAC * size as f64)
}

fn inside_fov(size: usize, x: usize, y: usize) -> bool {
    let ((cx, cy), r) = fov_geometry(size);
    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
    dx * dx + dy * dy <= r * r
}

/// The circular field of view of a `size`×`size` phantom.
pub fn fov_mask(size: usize) -> Mask {
    Mask::from_fn(size, size, |x, y| inside_fov(size, x, y))
}

impl PhantomSpec {
    /// Random anatomy for an image of `size` pixels.
    pub fn random(size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ((cx, cy), r) = fov_geometry(size);
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let disc_radius = r * rng.gen_range(0.13..0.2);
        let disc_dist = r * rng.gen_range(0.35..0.5);
        let tilt = rng.gen_range(-0.3..0.3);
        let disc_center = (cx + side * disc_dist * f64::cos(tilt), cy + disc_dist * f64::sin(tilt));
        let fovea_dist = r * rng.gen_range(0.1..0.25);
        let fovea_center = (cx - side * fovea_dist, cy + rng.gen_range(-0.1..0.1) * r);
        Self {
            size,
            seed,
            disc_center,
            disc_radius,
            fovea_center,
            fovea_radius: r * rng.gen_range(0.1..0.16),
            vessel_branches: rng.gen_range(4..=7),
            vessel_width: (size as f64 / 32.0) * rng.gen_range(0.9..1.4),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_SIZE..=MAX_SIZE).contains(&self.size) {
            return Err(Error::invalid(format!("phantom size {} outside [{MIN_SIZE}, {MAX_SIZE}]", self.size)));
        }
        let ((cx, cy), r) = fov_geometry(self.size);
        let inside = |(x, y): (f64, f64), rad: f64| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() + rad <= r;
        if !inside(self.disc_center, self.disc_radius) || !inside(self.fovea_center, self.fovea_radius) {
            return Err(Error::invalid("optic disc and fovea must lie inside the FOV"));
        }
        if !(self.disc_radius > 0.0 && self.disc_radius < r / 4.0) {
            return Err(Error::invalid("disc radius must be positive and below a quarter of the FOV radius"));
        }
        if !(self.fovea_radius > 0.0 && self.vessel_width > 0.0) {
            return Err(Error::invalid("fovea radius and vessel width must be positive"));
        }
        Ok(())
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn seg_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * vx, a.1 + t * vy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Polyline segments with their widths.
fn vessel_tree(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Vec<((f64, f64), (f64, f64), f64)> {
    let ((cx, cy), r) = fov_geometry(spec.size);
    let mut segs = Vec::new();
    let step = r * 0.12;
    for b in 0..spec.vessel_branches {
        let base = 2.0 * PI * b as f64 / spec.vessel_branches as f64;
        let mut dir = base + rng.gen_range(-0.4..0.4);
        let mut p = spec.disc_center;
        let mut width = spec.vessel_width;
        for _ in 0..14 {
            dir += rng.gen_range(-0.35..0.35);
            // arcade-like pull: bend vessels around the fovea
            let to_center = (cy - p.1).atan2(cx - p.0);
            dir += 0.08 * (to_center - dir).sin();
            let q = (p.0 + step * dir.cos(), p.1 + step * dir.sin());
            segs.push((p, q, width));
            if ((q.0 - cx).powi(2) + (q.1 - cy).powi(2)).sqrt() > r {
                break;
            }
            if rng.gen_bool(0.2) {
                let fork = dir + if rng.gen_bool(0.5) { 0.7 } else { -0.7 };
                let f = (q.0 + step * fork.cos(), q.1 + step * fork.sin());
                segs.push((q, f, width * 0.7));
            }
            width = (width * 0.93).max(0.5 * spec.vessel_width);
            p = q;
        }
    }
    segs
}

/// Renders a defect-free phantom.
pub fn generate_clean(spec: &PhantomSpec) -> Result<Image> {
    spec.validate()?;
    let size = spec.size;
    let ((cx, cy), r) = fov_geometry(size);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7e55_e15e);
    let segs = vessel_tree(spec, &mut rng);
    let hue_shift = rng.gen_range(-0.05..0.05);
    let mut img = Image::black(size, size);
    for y in 0..size {
        for x in 0..size {
            if !inside_fov(size, x, y) {
                continue;
            }
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let rr = ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt() / r;
            let vignette = 1.0 - 0.3 * rr * rr;
            let mut rgb = [(0.78 + hue_shift) * vignette, 0.36 * vignette, 0.14 * vignette];

            let dd = ((p.0 - spec.disc_center.0).powi(2) + (p.1 - spec.disc_center.1).powi(2)).sqrt();
            let disc = 1.0 - smoothstep(spec.disc_radius * 0.8, spec.disc_radius * 1.15, dd);
            let disc_rgb = [0.97, 0.85, 0.55];
            for c in 0..3 {
                rgb[c] = rgb[c] * (1.0 - disc) + disc_rgb[c] * disc;
            }

            let fd = ((p.0 - spec.fovea_center.0).powi(2) + (p.1 - spec.fovea_center.1).powi(2)).sqrt();
            let fovea = 1.0 - smoothstep(spec.fovea_radius * 0.4, spec.fovea_radius * 1.2, fd);
            for v in &mut rgb {
                *v *= 1.0 - 0.45 * fovea;
            }

            let mut vessel: f64 = 0.0;
            for &(a, b, w) in &segs {
                let d = seg_distance(p, a, b);
                vessel = vessel.max(1.0 - smoothstep(w * 0.35, w * 0.75, d));
            }
            let vessel_rgb = [0.48, 0.1, 0.06];
            for c in 0..3 {
                rgb[c] = rgb[c] * (1.0 - 0.85 * vessel) + vessel_rgb[c] * 0.85 * vessel;
            }
            img.set_pixel(x, y, rgb.map(|v| v.clamp(0.0, 1.0)));
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DefectSeverities {
    pub illumination: f64,
    pub clarity: f64,
    pub contrast: f64,
}

impl DefectSeverities {
    pub fn new(illumination: f64, clarity: f64, contrast: f64) -> Result<Self> {
        let s = Self { illumination, clarity, contrast };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.as_array() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("severity {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.illumination, self.clarity, self.contrast]
    }

    pub fn worst(&self) -> f64 {
        self.as_array().into_iter().fold(0.0, f64::max)
    }
}

/// A degraded image together with the region its localized defect covers.
#[derive(Debug, Clone, PartialEq)]
pub struct Degraded {
    pub image: Image,
    /// Empty when illumination severity is zero; always inside the FOV.
    pub artifact_mask: Mask,
}

/// Applies the three defects in order: illumination, clarity, contrast.
///
/// * illumination `s`: a bright or dark elliptical artifact of peak opacity
///   `s`, then a global gain of `1 − 0.4·s`;
/// * clarity `s`: separable box blur of radius `s·size/16` (fractional radii
///   weight the outermost taps);
/// * contrast `s`: per-channel compression toward the image mean by
///   `1 − 0.8·s`.
pub fn degrade(image: &Image, severities: &DefectSeverities, seed: u64) -> Result<Degraded> {
    severities.validate()?;
    if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("image values must lie in [0, 1]"));
    }
    let (w, h) = (image.width(), image.height());
    let mut img = image.clone();
    let mut mask = Mask::empty(w, h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdefe_c7);

    let s = severities.illumination;
    if s > 0.0 {
        let size = w.min(h);
        let ((cx, cy), r) = fov_geometry(size);
        let ang = rng.gen_range(0.0..2.0 * PI);
        let dist = r * rng.gen_range(0.0..0.6);
        let (ex, ey) = (cx + dist * ang.cos(), cy + dist * ang.sin());
        let (a, b) = (r * rng.gen_range(0.2..0.35), r * rng.gen_range(0.2..0.35));
        let rot = rng.gen_range(0.0..PI);
        let target = if rng.gen_bool(0.5) { [1.0, 0.96, 0.88] } else { [0.0, 0.0, 0.0] };
        let (sin, cos) = rot.sin_cos();
        mask = Mask::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - ex, y as f64 + 0.5 - ey);
            let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
            (u / a).powi(2) + (v / b).powi(2) < 1.0 && inside_fov(size, x, y)
        });
        let gain = 1.0 - 0.4 * s;
        for y in 0..h {
            for x in 0..w {
                let mut px = img.pixel(x, y);
                if mask.get(x, y) {
                    let (dx, dy) = (x as f64 + 0.5 - ex, y as f64 + 0.5 - ey);
                    let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
                    let rho2 = (u / a).powi(2) + (v / b).powi(2);
                    let op = s * (1.0 - rho2 * rho2);
                    for c in 0..3 {
                        px[c] = px[c] * (1.0 - op) + target[c] * op;
                    }
                }
                img.set_pixel(x, y, px.map(|v| v * gain));
            }
        }
    }

    let s = severities.clarity;
    if s > 0.0 {
        let radius = s * w.min(h) as f64 / 16.0;
        img = box_blur(&img, radius);
    }

    let s = severities.contrast;
    if s > 0.0 {
        let factor = 1.0 - 0.8 * s;
        let means = [img.channel_mean(0), img.channel_mean(1), img.channel_mean(2)];
        for px in img.data_mut().chunks_exact_mut(3) {
            for c in 0..3 {
                px[c] = means[c] + (px[c] - means[c]) * factor;
            }
        }
    }

    img.clamp01();
    Ok(Degraded { image: img, artifact_mask: mask })
}

/// Separable box blur with a fractional radius; edge taps renormalize.
fn box_blur(img: &Image, radius: f64) -> Image {
    let full = radius.floor() as isize;
    let frac = radius - radius.floor();
    let reach = if frac > 0.0 { full + 1 } else { full };
    let weight = |k: isize| if k.abs() <= full { 1.0 } else { frac };
    let (w, h) = (img.width() as isize, img.height() as isize);
    let pass = |src: &Image, horizontal: bool| -> Image {
        let mut out = Image::black(w as usize, h as usize);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                let mut norm = 0.0;
                for k in -reach..=reach {
                    let (xx, yy) = if horizontal { (x + k, y) } else { (x, y + k) };
                    if xx < 0 || yy < 0 || xx >= w || yy >= h {
                        continue;
                    }
                    let wt = weight(k);
                    let p = src.pixel(xx as usize, yy as usize);
                    for c in 0..3 {
                        acc[c] += wt * p[c];
                    }
                    norm += wt;
                }
                out.set_pixel(x as usize, y as usize, acc.map(|v| v / norm));
            }
        }
        out
    };
    pass(&pass(img, true), false)
}

/// Oracle labels; detail value 1 means good.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleLabels {
    pub details: [u8; 3],
    pub overall: u8,
}

pub fn derive_labels(severities: &DefectSeverities, style: Style) -> OracleLabels {
    let details = severities.as_array().map(|s| u8::from(s < thresholds::DETAIL_BAD_FROM));
    let worst = severities.worst();
    let overall = match style {
        Style::ThreeClass if worst >= thresholds::REJECT_FROM => 0,
        Style::ThreeClass if worst >= thresholds::GOOD_BELOW => 1,
        Style::ThreeClass => 2,
        Style::TwoClass => u8::from(worst < thresholds::DETAIL_BAD_FROM),
    };
    OracleLabels { details, overall }
}

/// Draws severities from the generator's mixture.
pub fn sample_severities<R: Rng>(rng: &mut R) -> DefectSeverities {
    let pristine = rng.gen_bool(mixture::PRISTINE_PROB);
    let mut draw = || {
        if pristine {
            rng.gen_range(0.0..=mixture::PRISTINE_MAX)
        } else {
            rng.gen_range(0.0..=1.0)
        }
    };
    DefectSeverities {
        illumination: draw(),
        clarity: draw(),
        contrast: draw(),
    }
}

/// One phantom after rendering and degradation, with its labels.
#[derive(Debug, Clone)]
pub struct PhantomSample {
    pub spec: PhantomSpec,
    pub severities: DefectSeverities,
    pub degraded: Degraded,
    pub labels: OracleLabels,
}

/// Renders sample `index` of a dataset; each sample owns the RNG stream
/// `(seed, index)`, so samples can be produced in any order.
pub fn render_sample(seed: u64, index: u64, size: usize, style: Style) -> Result<PhantomSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let spec = PhantomSpec::random(size, rng.gen());
    let severities = sample_severities(&mut rng);
    let clean = generate_clean(&spec)?;
    let degraded = degrade(&clean, &severities, rng.gen())?;
    Ok(PhantomSample {
        spec,
        labels: derive_labels(&severities, style),
        severities,
        degraded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub count: usize,
    pub style: Style,
    /// Train / val / test fractions.
    pub fractions: [f64; 3],
    pub seed: u64,
    pub size: usize,
}

/// Exact per-split counts for `count` samples (largest remainder).
pub fn split_counts(count: usize, fractions: [f64; 3]) -> [usize; 3] {
    let raw = fractions.map(|f| f * count as f64);
    let mut counts = raw.map(|v| v.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let mut left = count - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Renders a dataset into `out_dir` as `images/NNNNN.png` plus
/// `manifest.csv`. The returned dataset has its images loaded.
///
/// Splits are stratified by overall label: samples are ordered by class and
/// dealt to splits so that every prefix tracks the requested proportions.
pub fn generate_dataset(cfg: &GenConfig, out_dir: &Path) -> Result<(Dataset, Vec<PhantomSample>)> {
    if cfg.count < 10 {
        return Err(Error::invalid("dataset needs at least 10 samples"));
    }
    if cfg.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (cfg.fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions {:?} must sum to 1", cfg.fractions)));
    }
    let samples = (0..cfg.count)
        .map(|i| render_sample(cfg.seed, i as u64, cfg.size, cfg.style))
        .collect::<Result<Vec<_>>>()?;

    let targets = split_counts(cfg.count, cfg.fractions);
    let mut order: Vec<usize> = (0..cfg.count).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5911_7000);
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
    order.sort_by_key(|&i| samples[i].labels.overall);
    let mut assigned = [0usize; 3];
    let mut split_of = vec![Split::Train; cfg.count];
    for (pos, &i) in order.iter().enumerate() {
        let progress = (pos + 1) as f64 / cfg.count as f64;
        let j = (0..3)
            .filter(|&j| assigned[j] < targets[j])
            .max_by(|&a, &b| {
                let da = targets[a] as f64 * progress - assigned[a] as f64;
                let db = targets[b] as f64 * progress - assigned[b] as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("targets sum to count");
        assigned[j] += 1;
        split_of[i] = [Split::Train, Split::Val, Split::Test][j];
    }

    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir)?;
    let mut rows = Vec::with_capacity(cfg.count);
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("images/{i:05}.png");
        s.degraded.image.save_png(&out_dir.join(&rel))?;
        rows.push(ManifestRow {
            image: rel.into(),
            split: split_of[i],
            overall: Some(s.labels.overall),
            details: s.labels.details.map(Some),
            pseudo: [None; 3],
        });
    }
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    let ds = Dataset::load(&manifest, cfg.style, &crate::dataio::LoadOptions::synthetic(cfg.size))?;
    Ok((ds, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_black_outside_fov() {
        let spec = PhantomSpec::random(32, 11);
        let a = generate_clean(&spec).unwrap();
        assert_eq!(a, generate_clean(&spec).unwrap());
        let fov = fov_mask(32);
        for y in 0..32 {
            for x in 0..32 {
                if !fov.get(x, y) {
                    assert_eq!(a.pixel(x, y), [0.0; 3]);
                }
            }
        }
    }

    #[test]
    fn size_bounds() {
        assert!(generate_clean(&PhantomSpec::random(8, 1)).is_err());
        assert!(generate_clean(&PhantomSpec::random(200, 1)).is_err());
        let spec = PhantomSpec::random(16, 1);
        assert!(generate_clean(&spec).is_ok());
    }

    #[test]
    fn fov_mean_intensity_in_range() {
        for seed in 0..100 {
            let img = generate_clean(&PhantomSpec::random(32, seed)).unwrap();
            let fov = fov_mask(32);
            let (mut sum, mut n) = (0.0, 0);
            for y in 0..32 {
                for x in 0..32 {
                    if fov.get(x, y) {
                        sum += img.pixel(x, y).iter().sum::<f64>() / 3.0;
                        n += 1;
                    }
                }
            }
            let mean = sum / n as f64;
            assert!((0.2..=0.8).contains(&mean), "seed {seed}: {mean}");
        }
    }

    #[test]
    fn zero_severity_is_identity() {
        let img = generate_clean(&PhantomSpec::random(32, 3)).unwrap();
        let d = degrade(&img, &DefectSeverities::default(), 5).unwrap();
        assert_eq!(d.image, img);
        assert!(d.artifact_mask.is_empty());
    }

    #[test]
    fn full_contrast_shrinks_std() {
        let img = generate_clean(&PhantomSpec::random(32, 4)).unwrap();
        let d = degrade(&img, &DefectSeverities::new(0.0, 0.0, 1.0).unwrap(), 5).unwrap();
        for c in 0..3 {
            assert!(d.image.channel_std(c) <= 0.2 * img.channel_std(c) + 1e-12);
        }
    }

    #[test]
    fn blur_reduces_laplacian_energy() {
        let img = generate_clean(&PhantomSpec::random(32, 6)).unwrap();
        let d = degrade(&img, &DefectSeverities::new(0.0, 0.8, 0.0).unwrap(), 5).unwrap();
        assert!(d.image.mean_abs_laplacian() < img.mean_abs_laplacian());
    }

    #[test]
    fn severities_out_of_range_rejected() {
        let img = generate_clean(&PhantomSpec::random(32, 6)).unwrap();
        let bad = DefectSeverities { illumination: 1.2, clarity: 0.0, contrast: 0.0 };
        assert!(degrade(&img, &bad, 1).is_err());
    }

    #[test]
    fn label_mapping() {
        let l = derive_labels(&DefectSeverities::new(0.0, 0.0, 0.0).unwrap(), Style::ThreeClass);
        assert_eq!(l, OracleLabels { details: [1, 1, 1], overall: 2 });
        let l = derive_labels(&DefectSeverities::new(0.9, 0.0, 0.0).unwrap(), Style::ThreeClass);
        assert_eq!(l, OracleLabels { details: [0, 1, 1], overall: 0 });
        let l = derive_labels(&DefectSeverities::new(0.4, 0.4, 0.4).unwrap(), Style::ThreeClass);
        assert_eq!(l, OracleLabels { details: [1, 1, 1], overall: 1 });
        let l = derive_labels(&DefectSeverities::new(0.1, 0.5, 0.0).unwrap(), Style::TwoClass);
        assert_eq!(l.overall, 0);
    }

    #[test]
    fn split_counts_are_exact() {
        assert_eq!(split_counts(100, [0.8, 0.1, 0.1]), [80, 10, 10]);
        assert_eq!(split_counts(860, [600.0 / 860.0, 60.0 / 860.0, 200.0 / 860.0]), [600, 60, 200]);
        assert_eq!(split_counts(10, [0.34, 0.33, 0.33]).iter().sum::<usize>(), 10);
    }
}
