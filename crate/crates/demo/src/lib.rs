//! WebAssembly bindings behind `www/index.html`.
//!
//! Every call returns RGBA bytes ready for `ImageData`, so the page only
//! deals with canvases and sliders.

use fmtk::augment::{apply_plan, sample_plan, AugmentBounds};
use fmtk::dataio::Style;
use fmtk::diffcore::checkpoint;
use fmtk::explain::{gradcam, overlay, Target};
use fmtk::imaging::Image;
use fmtk::model::{predict, BackboneConfig, ModelParams};
use fmtk::phantom::{degrade, derive_labels, generate_clean, DefectSeverities, PhantomSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js_err(e: fmtk::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn rgba(image: &Image) -> Vec<u8> {
    image
        .to_rgb8()
        .chunks_exact(3)
        .flat_map(|p| [p[0], p[1], p[2], 255])
        .collect()
}

#[wasm_bindgen]
pub struct Demo {
    size: usize,
    clean: Image,
    degraded: Image,
    severities: DefectSeverities,
    model: ModelParams,
    model_loaded: bool,
}

#[wasm_bindgen]
impl Demo {
    /// Starts with a clean phantom and a randomly initialized 3-class model with a detail head.
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, seed: u64) -> Result<Demo, JsValue> {
        let spec = PhantomSpec::random(size, seed);
        spec.validate().map_err(js_err)?;
        let clean = generate_clean(&spec).map_err(js_err)?;
        let backbone = BackboneConfig { input_size: size, ..BackboneConfig::default() };
        let model = ModelParams::new(backbone, 3, seed).and_then(|m| m.attach_head_a(seed)).map_err(js_err)?;
        Ok(Demo {
            size,
            degraded: clean.clone(),
            clean,
            severities: DefectSeverities::default(),
            model,
            model_loaded: false,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn model_loaded(&self) -> bool {
        self.model_loaded
    }

    /// Replaces the phantom anatomy and keeps the current severities.
    pub fn reseed(&mut self, seed: u64) -> Result<(), JsValue> {
        self.clean = generate_clean(&PhantomSpec::random(self.size, seed)).map_err(js_err)?;
        self.degraded = self.clean.clone();
        Ok(())
    }

    /// Applies the three defects and returns the degraded phantom.
    pub fn degrade(&mut self, illumination: f64, clarity: f64, contrast: f64, seed: u64) -> Result<Vec<u8>, JsValue> {
        self.apply_defects(illumination, clarity, contrast, seed).map_err(js_err)?;
        Ok(rgba(&self.degraded))
    }

    /// Oracle labels of the current severities as `[illum, clarity, contrast, overall]`.
    pub fn labels(&self) -> Vec<u8> {
        let l = derive_labels(&self.severities, Style::ThreeClass);
        vec![l.details[0], l.details[1], l.details[2], l.overall]
    }

    /// One random augmentation of the degraded phantom, plus a text summary
    /// of the sampled ops via [`Demo::describe_augment`].
    pub fn augment(&self, seed: u64) -> Vec<u8> {
        let plan = sample_plan(&mut ChaCha8Rng::seed_from_u64(seed), &AugmentBounds::default());
        rgba(&apply_plan(&self.degraded, &plan))
    }

    pub fn describe_augment(&self, seed: u64) -> String {
        let plan = sample_plan(&mut ChaCha8Rng::seed_from_u64(seed), &AugmentBounds::default());
        if plan.is_empty() {
            return "identity".into();
        }
        plan.ops.iter().map(|op| format!("{op:.2?}")).collect::<Vec<_>>().join(", ")
    }

    /// Loads a checkpoint written by `fmtk` (for example `finetune_best.fmtk`).
    pub fn load_checkpoint(&mut self, bytes: &[u8]) -> Result<(), JsValue> {
        let store = checkpoint::from_bytes(bytes).map_err(js_err)?;
        self.model = ModelParams::from_store(store, self.size).map_err(js_err)?;
        self.model_loaded = true;
        Ok(())
    }

    /// Overall-class probabilities followed by the three detail
    /// probabilities (detail entries are absent for a single-task model).
    pub fn predict(&self) -> Result<Vec<f64>, JsValue> {
        let (probs, details) = predict(&self.model, &[&self.degraded]).map_err(js_err)?;
        let mut out = probs[0].clone();
        if let Some(d) = details {
            out.extend_from_slice(&d[0]);
        }
        Ok(out)
    }

    /// GradCAM for `target` (`class:<c>` or `detail:<j>`) blended over the
    /// degraded phantom.
    pub fn gradcam(&self, target: &str, alpha: f64) -> Result<Vec<u8>, JsValue> {
        self.gradcam_overlay(target, alpha).map(|img| rgba(&img)).map_err(js_err)
    }
}

impl Demo {
    fn gradcam_overlay(&self, target: &str, alpha: f64) -> fmtk::Result<Image> {
        let target: Target = target.parse()?;
        overlay(&self.degraded, &gradcam(&self.model, &self.degraded, target)?, alpha)
    }

    fn apply_defects(&mut self, illumination: f64, clarity: f64, contrast: f64, seed: u64) -> fmtk::Result<()> {
        self.severities = DefectSeverities::new(illumination, clarity, contrast)?;
        self.degraded = degrade(&self.clean, &self.severities, seed)?.image;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operations_return_full_rgba_frames() {
        let mut demo = Demo::new(32, 3).unwrap();
        let frame = 32 * 32 * 4;
        demo.apply_defects(0.8, 0.2, 0.4, 1).unwrap();
        assert_eq!(demo.labels(), vec![0, 1, 1, 0]);
        assert_eq!(demo.augment(5).len(), frame);
        assert_eq!(demo.augment(5), demo.augment(5));
        for target in ["class:0", "detail:1"] {
            let img = demo.gradcam_overlay(target, 0.5).unwrap();
            assert_eq!(rgba(&img).len(), frame);
        }
        assert!(demo.gradcam_overlay("class:7", 0.5).is_err());
    }

    #[test]
    fn checkpoint_round_trip_through_bytes() {
        let mut demo = Demo::new(32, 0).unwrap();
        let other = ModelParams::new(BackboneConfig::default(), 3, 9).unwrap();
        demo.load_checkpoint(&checkpoint::to_bytes(other.store())).unwrap();
        assert!(demo.model_loaded());
        assert_eq!(demo.model.store(), other.store());
    }
}
