//! GradCAM heatmaps over the final backbone feature map.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::imaging::{to_nchw, Image};
use crate::model::{ModelGraph, ModelParams, NUM_DETAILS};

/// The pre-activation logit a heatmap explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", content = "index", rename_all = "lowercase")]
pub enum Target {
    /// Overall-quality class logit.
    Class(usize),
    /// Detail logit (positive means good).
    Detail(usize),
}

impl FromStr for Target {
    type Err = Error;

    /// Parses `class:<c>` or `detail:<j>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("target `{s}` is not class:<c> or detail:<j>"));
        let (task, idx) = s.split_once(':').ok_or_else(bad)?;
        let idx: usize = idx.parse().map_err(|_| bad())?;
        match task {
            "class" => Ok(Target::Class(idx)),
            "detail" => Ok(Target::Detail(idx)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Class(c) => write!(f, "class:{c}"),
            Target::Detail(j) => write!(f, "detail:{j}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    MaxNormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    /// Row-major, non-negative.
    pub values: Vec<f64>,
    pub normalization: Normalization,
    pub target: Target,
}

impl Heatmap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Scales to a maximum of exactly 1; an all-zero map stays all-zero.
    pub fn normalized(&self) -> Heatmap {
        let max = self.values.iter().copied().fold(0.0, f64::max);
        let values = if max > 0.0 {
            self.values.iter().map(|v| if *v == max { 1.0 } else { v / max }).collect()
        } else {
            self.values.clone()
        };
        Heatmap {
            values,
            normalization: Normalization::MaxNormalized,
            ..self.clone()
        }
    }

    /// Grid cell of the largest value, first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks_exact(self.width) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// GradCAM from a `(K, H, W)` activation block and the matching gradients:
/// channel weights are spatial gradient means, and the map is
/// `ReLU(Σ_k w_k A_k)`.
pub fn gradcam_from(activations: &[f64], grads: &[f64], channels: usize, height: usize, width: usize, target: Target) -> Result<Heatmap> {
    let plane = height * width;
    if activations.len() != channels * plane || grads.len() != activations.len() || plane == 0 {
        return Err(Error::invalid(format!(
            "activation/gradient blocks must both hold {channels}x{height}x{width} values"
        )));
    }
    let mut values = vec![0.0; plane];
    for k in 0..channels {
        let g = &grads[k * plane..(k + 1) * plane];
        let w = g.iter().sum::<f64>() / plane as f64;
        if w == 0.0 {
            continue;
        }
        for (v, a) in values.iter_mut().zip(&activations[k * plane..(k + 1) * plane]) {
            *v += w * a;
        }
    }
    values.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(Heatmap {
        width,
        height,
        values,
        normalization: Normalization::Raw,
        target,
    })
}

/// Raw GradCAM map for one image.
pub fn gradcam_raw(params: &ModelParams, image: &Image, target: Target) -> Result<Heatmap> {
    let mut mg = ModelGraph::build(params);
    let logits = match target {
        Target::Class(c) if c < params.num_classes() => mg.logits_b,
        Target::Detail(j) if j < NUM_DETAILS => mg
            .logits_a
            .ok_or_else(|| Error::invalid("detail target requested but the model has no detail head"))?,
        t => return Err(Error::invalid(format!("target {t} out of range"))),
    };
    let index = match target {
        Target::Class(c) => c,
        Target::Detail(j) => j,
    };
    mg.run(params, &to_nchw(&[image])?)?;
    let width = mg.graph.output(logits)?.shape()[1];
    let mut seed = vec![0.0; width];
    seed[index] = 1.0;
    let seed = Tensor::new(&[1, width], seed)?;
    let mut scratch = params.store().clone();
    mg.graph.backward_from(&mut scratch, &[(logits, &seed)])?;
    let acts = mg.graph.output(mg.features)?;
    let grads = mg.graph.node_grad(mg.features).ok_or(Error::BackwardBeforeForward)?;
    let s = acts.shape();
    gradcam_from(acts.data(), grads.data(), s[1], s[2], s[3], target)
}

/// Max-normalized GradCAM map for one image.
pub fn gradcam(params: &ModelParams, image: &Image, target: Target) -> Result<Heatmap> {
    Ok(gradcam_raw(params, image, target)?.normalized())
}

/// Piecewise-linear blue → cyan → yellow → red colormap on `[0, 1]`.
pub fn colormap(t: f64) -> [f64; 3] {
    const STOPS: [[f64; 3]; 4] = [[0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [0, 1, 2].map(|k| a[k] + f * (b[k] - a[k]))
}

/// Heatmap upsampled to `width × height` with pixel-center bilinear
/// interpolation.
pub fn upsample(heatmap: &Heatmap, width: usize, height: usize) -> Vec<f64> {
    let mut grid = Vec::with_capacity(heatmap.values.len() * 3);
    for &v in &heatmap.values {
        grid.extend_from_slice(&[v, v, v]);
    }
    let img = Image::new(heatmap.width, heatmap.height, grid).expect("heatmap dimensions are valid");
    img.resize(width, height).data().chunks_exact(3).map(|p| p[0]).collect()
}

/// Alpha-blends the colormapped heatmap over `image`.
pub fn overlay(image: &Image, heatmap: &Heatmap, alpha: f64) -> Result<Image> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let (w, h) = (image.width(), image.height());
    let up = upsample(heatmap, w, h);
    let mut out = image.clone();
    for (px, &v) in out.data_mut().chunks_exact_mut(3).zip(&up) {
        let c = colormap(v);
        for k in 0..3 {
            px[k] = ((1.0 - alpha) * px[k] + alpha * c[k]).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}
