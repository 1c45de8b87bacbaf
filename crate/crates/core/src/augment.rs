//! Mild, label-preserving stochastic augmentation.
//!
//! A plan is a short list of transforms drawn with replacement; every
//! strength comes from a bounded interval configured in [`AugmentBounds`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Strength intervals for each transform kind. Serialized as the
/// `augment` block of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentBounds {
    pub max_ops: usize,
    /// Rotation in degrees, symmetric interval `[-rotate_deg, rotate_deg]`.
    pub rotate_deg: f64,
    /// Additive brightness shift, symmetric interval.
    pub brightness: f64,
    pub saturation: [f64; 2],
    pub channel_mix: [f64; 2],
}

impl Default for AugmentBounds {
    fn default() -> Self {
        Self {
            max_ops: 7,
            rotate_deg: 15.0,
            brightness: 0.1,
            saturation: [0.9, 1.1],
            channel_mix: [0.0, 0.05],
        }
    }
}

impl AugmentBounds {
    pub fn validate(&self) -> Result<()> {
        let interval_ok = |[lo, hi]: [f64; 2]| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !(self.rotate_deg >= 0.0 && self.rotate_deg <= 180.0)
            || !(self.brightness >= 0.0 && self.brightness <= 1.0)
            || !interval_ok(self.saturation)
            || self.saturation[0] < 0.0
            || !interval_ok(self.channel_mix)
            || self.channel_mix[0] < 0.0
            || self.channel_mix[1] > 1.0
        {
            return Err(Error::invalid(format!("invalid augmentation bounds: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "strength", rename_all = "snake_case")]
pub enum Transform {
    Rotate(f64),
    HFlip,
    VFlip,
    Brightness(f64),
    Saturation(f64),
    ChannelMix(f64),
}

impl Transform {
    pub const NUM_KINDS: usize = 6;

    pub fn kind_index(&self) -> usize {
        match self {
            Transform::Rotate(_) => 0,
            Transform::HFlip => 1,
            Transform::VFlip => 2,
            Transform::Brightness(_) => 3,
            Transform::Saturation(_) => 4,
            Transform::ChannelMix(_) => 5,
        }
    }

    pub fn is_color(&self) -> bool {
        matches!(self, Transform::Brightness(_) | Transform::Saturation(_) | Transform::ChannelMix(_))
    }

    pub fn within(&self, b: &AugmentBounds) -> bool {
        let inside = |v: f64, [lo, hi]: [f64; 2]| (lo..=hi).contains(&v);
        match *self {
            Transform::Rotate(d) => d.abs() <= b.rotate_deg,
            Transform::HFlip | Transform::VFlip => true,
            Transform::Brightness(s) => s.abs() <= b.brightness,
            Transform::Saturation(s) => inside(s, b.saturation),
            Transform::ChannelMix(a) => inside(a, b.channel_mix),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub ops: Vec<Transform>,
}

impl AugmentPlan {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Draws the op count uniformly from `0..=max_ops`, then each kind uniformly
/// with replacement and its strength uniformly from its interval.
pub fn sample_plan<R: Rng>(rng: &mut R, bounds: &AugmentBounds) -> AugmentPlan {
    let count = rng.gen_range(0..=bounds.max_ops);
    let ops = (0..count)
        .map(|_| match rng.gen_range(0..Transform::NUM_KINDS) {
            0 => Transform::Rotate(uniform(rng, -bounds.rotate_deg, bounds.rotate_deg)),
            1 => Transform::HFlip,
            2 => Transform::VFlip,
            3 => Transform::Brightness(uniform(rng, -bounds.brightness, bounds.brightness)),
            4 => Transform::Saturation(uniform(rng, bounds.saturation[0], bounds.saturation[1])),
            _ => Transform::ChannelMix(uniform(rng, bounds.channel_mix[0], bounds.channel_mix[1])),
        })
        .collect();
    AugmentPlan { ops }
}

/// Rotation about the image center with bilinear resampling; pixels that map
/// outside the source are black.
pub fn rotate(image: &Image, degrees: f64) -> Image {
    let (w, h) = (image.width(), image.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = degrees.to_radians().sin_cos();
    let mut out = Image::black(w, h);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // inverse map: rotate the output coordinate back by -theta
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            if let Some(p) = image.sample_bilinear(sx, sy) {
                out.set_pixel(x, y, p);
            }
        }
    }
    out
}

pub fn hflip(image: &Image) -> Image {
    let (w, h) = (image.width(), image.height());
    let mut out = Image::black(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set_pixel(w - 1 - x, y, image.pixel(x, y));
        }
    }
    out
}

pub fn vflip(image: &Image) -> Image {
    let (w, h) = (image.width(), image.height());
    let mut out = Image::black(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set_pixel(x, h - 1 - y, image.pixel(x, y));
        }
    }
    out
}

fn map_pixels(image: &mut Image, f: impl Fn([f64; 3]) -> [f64; 3]) {
    for px in image.data_mut().chunks_exact_mut(3) {
        let out = f([px[0], px[1], px[2]]);
        px.copy_from_slice(&out);
    }
}

/// Applies one transform; color transforms are not clamped here.
pub fn apply_transform(image: &Image, t: &Transform) -> Image {
    match *t {
        Transform::Rotate(d) => rotate(image, d),
        Transform::HFlip => hflip(image),
        Transform::VFlip => vflip(image),
        Transform::Brightness(s) => {
            let mut out = image.clone();
            map_pixels(&mut out, |p| p.map(|v| v + s));
            out
        }
        Transform::Saturation(k) => {
            let mut out = image.clone();
            map_pixels(&mut out, |p| {
                let gray = (p[0] + p[1] + p[2]) / 3.0;
                p.map(|v| gray + k * (v - gray))
            });
            out
        }
        Transform::ChannelMix(a) => {
            let mut out = image.clone();
            // blend each channel toward its cyclic neighbor (r<-g, g<-b, b<-r)
            map_pixels(&mut out, |p| [(1.0 - a) * p[0] + a * p[1], (1.0 - a) * p[1] + a * p[2], (1.0 - a) * p[2] + a * p[0]]);
            out
        }
    }
}

/// Applies the plan in order and clamps to `[0, 1]` after every step. An
/// empty plan returns an exact copy.
pub fn apply_plan(image: &Image, plan: &AugmentPlan) -> Image {
    let mut out = image.clone();
    for t in &plan.ops {
        out = apply_transform(&out, t);
        out.clamp01();
    }
    out
}
