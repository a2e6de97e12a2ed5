//! Browser bindings for the prospectivity toolkit.
//!
//! Three things are exposed to the page: a synthetic area whose layers can be
//! rendered to RGBA, the weighted decision over six tool scores, and the
//! random-choice baseline. The logic lives in plain functions so it can be
//! tested natively; the `#[wasm_bindgen]` items only convert errors.

use prospect::dataset::{synthesize_area, AreaKind, SynthArea, SynthConfig};
use prospect::decision::{decide_scores, strategy_weights, Strategy, WeightVector};
use prospect::evaluate::random_baseline;
use prospect::raster::{BandId, Raster};
use prospect::render::{render_base, render_overlay, RenderConfig};
use prospect::signature::{DerivedLayers, SignatureRegistry};
use wasm_bindgen::prelude::*;

/// Layer names accepted by [`Area::render`].
pub const LAYERS: [&str; 13] =
    ["geological", "ox", "oh", "op", "al", "mg", "fe", "qa", "si", "hydrothermal", "propylitic", "silicification", "mpm"];

fn parse_kind(kind: &str) -> Result<AreaKind, String> {
    Ok(match kind {
        "deposit" => AreaKind::Deposit,
        "background" => AreaKind::Background,
        "core-only" => AreaKind::CoreOnly,
        "halo-only" => AreaKind::HaloOnly,
        "rim-only" => AreaKind::RimOnly,
        other => return Err(format!("unknown area kind {other:?}")),
    })
}

/// A synthetic study area with its derived layers held in memory.
#[wasm_bindgen]
pub struct Area {
    synth: SynthArea,
    derived: DerivedLayers,
    registry: SignatureRegistry,
}

impl Area {
    pub fn generate(kind: &str, seed: u64, noise: f64, size: usize) -> Result<Area, String> {
        if !(8..=256).contains(&size) {
            return Err(format!("size {size} outside 8..=256"));
        }
        let cfg = SynthConfig { noise, seed, size_px: size, ..SynthConfig::default() };
        let registry = SignatureRegistry::default();
        let synth = synthesize_area(0, parse_kind(kind)?, &cfg, &registry).map_err(|e| e.to_string())?;
        let derived = registry.derive(&synth.bands).map_err(|e| e.to_string())?;
        Ok(Area { synth, derived, registry })
    }

    fn geological(&self) -> &Raster {
        &self.synth.bands[&BandId::Geological]
    }

    /// The named layer rescaled to [0, 1] for colouring.
    fn unit_layer(&self, layer: &BandId) -> Result<Raster, String> {
        let d = &self.derived;
        Ok(match layer {
            BandId::Hydrothermal => d.hydrothermal.clone(),
            BandId::Propylitic => d.propylitic.clone(),
            BandId::Silicification => d.silicification.clone(),
            BandId::Mpm => {
                let (lo, hi) = (self.registry.mpm.out_lo, self.registry.mpm.out_hi);
                d.mpm.map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            }
            band => d.normalized.get(band).cloned().ok_or_else(|| format!("no layer {band}"))?,
        })
    }

    /// RGBA pixels of `layer` drawn over the geological image.
    pub fn rgba(&self, layer: &str, opacity: f64, scale: u32) -> Result<Vec<u8>, String> {
        let band: BandId = layer.parse().map_err(|e| format!("{e}"))?;
        let cfg = RenderConfig { opacity, scale, ..RenderConfig::default() };
        cfg.validate().map_err(|e| e.to_string())?;
        let image = if band == BandId::Geological {
            render_base(self.geological()).upscale(scale as usize)
        } else {
            render_overlay(self.geological(), &self.unit_layer(&band)?, &cfg).map_err(|e| e.to_string())?
        };
        Ok(image.pixels)
    }
}

#[wasm_bindgen]
impl Area {
    /// `kind` is one of deposit, background, core-only, halo-only, rim-only.
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, seed: u64, noise: f64, size: usize) -> Result<Area, JsError> {
        Area::generate(kind, seed, noise, size).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.geological().width()
    }

    /// Highest prospectivity value in the area, on the map's own scale.
    #[wasm_bindgen(getter, js_name = mpmPeak)]
    pub fn mpm_peak(&self) -> f64 {
        self.derived.mpm.values().iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Pixels for an `ImageData` of side `size * scale`.
    pub fn render(&self, layer: &str, opacity: f64, scale: u32) -> Result<Vec<u8>, JsError> {
        self.rgba(layer, opacity, scale).map_err(|e| JsError::new(&e))
    }
}

/// Fused score and label for six tool scores.
#[wasm_bindgen]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub score: f64,
    pub label: u8,
}

/// Weights of a named strategy (`local` or `mean`).
pub fn weights_for(strategy: &str) -> Result<Vec<f64>, String> {
    let s: Strategy = strategy.parse()?;
    Ok(strategy_weights(s, None).map_err(|e| e.to_string())?.as_slice().to_vec())
}

/// Weights are normalized internally, so any non-negative weights
/// with a positive sum are accepted.
pub fn fuse(scores: &[f64], weights: &[f64], threshold: f64) -> Result<Verdict, String> {
    let w = WeightVector::normalized(weights.to_vec()).map_err(|e| e.to_string())?;
    let d = decide_scores(scores, &w, threshold).map_err(|e| e.to_string())?;
    Ok(Verdict { score: d.score, label: d.label })
}

#[wasm_bindgen(js_name = strategyWeights)]
pub fn strategy_weights_js(strategy: &str) -> Result<Vec<f64>, JsError> {
    weights_for(strategy).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn decide(scores: &[f64], weights: &[f64], threshold: f64) -> Result<Verdict, JsError> {
    fuse(scores, weights, threshold).map_err(|e| JsError::new(&e))
}

/// Averages of the random-choice baseline, in percent.
#[wasm_bindgen]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baseline {
    #[wasm_bindgen(js_name = posF1)]
    pub pos_f1: f64,
    #[wasm_bindgen(js_name = avgF1)]
    pub avg_f1: f64,
    #[wasm_bindgen(js_name = rocAuc)]
    pub roc_auc: f64,
    pub mcc: f64,
}

pub fn baseline(positives: usize, negatives: usize, trials: usize, seed: u64) -> Result<Baseline, String> {
    let r = random_baseline(positives, negatives, trials, seed).map_err(|e| e.to_string())?;
    Ok(Baseline { pos_f1: r.pos_f1, avg_f1: r.avg_f1, roc_auc: r.roc_auc.unwrap_or(f64::NAN), mcc: r.mcc })
}

#[wasm_bindgen(js_name = randomBaseline)]
pub fn random_baseline_js(positives: usize, negatives: usize, trials: usize, seed: u64) -> Result<Baseline, JsError> {
    baseline(positives, negatives, trials, seed).map_err(|e| JsError::new(&e))
}
