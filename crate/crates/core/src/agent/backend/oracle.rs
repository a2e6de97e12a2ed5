//! Deterministic test double that answers from raster statistics.
//!
//! Each tool looks at a feature layer in `[0, 1]` and summarises it with
//! the mean of its top decile, which is 1 for a saturated layer and 0 for an
//! all-zero one:
//!
//! * `c1` geological contrast: `5 * clamp(2 * (top-decile mean - median))`
//! * `c2`..`c4` one alteration signature: `5 * top-decile mean`
//! * `c5` zoning: `5 * min` over the three signatures' top-decile means
//! * `c6` validation: prospectivity-map top-decile mean, blended 2:1 with
//!   the geological contrast when the geological image is supplied
//!
//! Tools with references average their image score with the mean
//! reference score, so removing references changes their output.
//! Signature layers come from the signature image when supplied, from the
//! prospectivity map in the two-image setting, and are rebuilt from raw
//! bands in the nine-image setting.

use std::collections::BTreeMap;

use super::{Attempt, Backend, BackendError, BackendErrorKind, BackendKind, BackendReply, BackendRequest, PIPELINE_TOOL_ID};
use crate::agent::protocol::Assessment;
use crate::dataset::AreaImage;
use crate::raster::{load_raster, min_max_normalize, BandId, Raster};
use crate::signature::{combine, SignatureRegistry};

pub struct OracleBackend {
    registry: SignatureRegistry,
}

impl Default for OracleBackend {
    fn default() -> Self {
        OracleBackend::new(SignatureRegistry::default())
    }
}

/// An oracle answer before formatting.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleScores {
    pub score: f64,
    pub areas: Vec<String>,
    pub explanation: String,
}

impl OracleScores {
    fn to_text(&self) -> String {
        let areas = if self.areas.is_empty() { "none".to_string() } else { self.areas.join("; ") };
        format!("Score: {:.2}\nFavorable Areas: {}\nExplanation: {}", self.score, areas, self.explanation)
    }
}

fn top_decile_mean(r: &Raster) -> f64 {
    let mut v: Vec<f64> = r.valid().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| b.total_cmp(a));
    let k = v.len().div_ceil(10);
    v[..k].iter().sum::<f64>() / k as f64
}

fn median(r: &Raster) -> f64 {
    let mut v: Vec<f64> = r.valid().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Compass description of where the top decile of `r` is concentrated.
fn hotspot(r: &Raster) -> String {
    let mut v: Vec<(f64, usize)> = r.values().iter().copied().enumerate().filter(|(_, x)| !x.is_nan()).map(|(i, x)| (x, i)).collect();
    if v.is_empty() {
        return "none".into();
    }
    v.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let k = v.len().div_ceil(10);
    let (w, h) = (r.width() as f64, r.height() as f64);
    let (mut cx, mut cy) = (0.0, 0.0);
    for &(_, i) in &v[..k] {
        cx += (i % r.width()) as f64 + 0.5;
        cy += (i / r.width()) as f64 + 0.5;
    }
    let (fx, fy) = (cx / k as f64 / w, cy / k as f64 / h);
    let ns = if fy < 1.0 / 3.0 {
        "north"
    } else if fy > 2.0 / 3.0 {
        "south"
    } else {
        ""
    };
    let ew = if fx < 1.0 / 3.0 {
        "west"
    } else if fx > 2.0 / 3.0 {
        "east"
    } else {
        ""
    };
    match (ns, ew) {
        ("", "") => "central part".into(),
        ("", e) => format!("{e}ern part"),
        (n, "") => format!("{n}ern part"),
        (n, e) => format!("{n}-{e} part"),
    }
}

fn round2(x: f64) -> f64 {
    ((x * 100.0).round() / 100.0).clamp(0.0, 5.0)
}

fn unresolvable(msg: String) -> BackendError {
    BackendError::new(BackendErrorKind::Unresolvable, msg)
}

struct Layers<'r> {
    registry: &'r SignatureRegistry,
    rasters: BTreeMap<BandId, Raster>,
}

impl<'r> Layers<'r> {
    fn load(registry: &'r SignatureRegistry, images: &[AreaImage]) -> Result<Self, BackendError> {
        let mut rasters = BTreeMap::new();
        for img in images {
            let r = load_raster(&img.path).map_err(|e| unresolvable(format!("{}: {e}", img.role)))?;
            rasters.insert(img.role.clone(), r);
        }
        Ok(Layers { registry, rasters })
    }

    fn geological(&self) -> Option<&Raster> {
        self.rasters.get(&BandId::Geological)
    }

    fn mpm_unit(&self) -> Option<Raster> {
        let mpm = self.rasters.get(&BandId::Mpm)?;
        let (lo, hi) = (self.registry.mpm.out_lo, self.registry.mpm.out_hi);
        Some(mpm.map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)))
    }

    /// A signature layer in `[0, 1]` from whatever the setting supplies.
    fn signature(&self, sig: &BandId) -> Result<Option<Raster>, BackendError> {
        if let Some(r) = self.rasters.get(sig) {
            return Ok(Some(r.clone()));
        }
        if let Some(r) = self.mpm_unit() {
            return Ok(Some(r));
        }
        let Some(spec) = self.registry.signature(sig) else { return Ok(None) };
        let mut normalized = BTreeMap::new();
        for band in spec.bands() {
            let Some(raw) = self.rasters.get(band) else { return Ok(None) };
            let range = self.registry.range_of(band).ok_or_else(|| unresolvable(format!("no range for {band}")))?;
            normalized.insert(band.clone(), min_max_normalize(raw, range).map_err(|e| unresolvable(e.to_string()))?);
        }
        combine(spec, &normalized).map(Some).map_err(|e| unresolvable(e.to_string()))
    }

    fn signatures(&self) -> Result<Option<[Raster; 3]>, BackendError> {
        let [h, p, s] = BandId::SIGNATURES;
        match (self.signature(&h)?, self.signature(&p)?, self.signature(&s)?) {
            (Some(h), Some(p), Some(s)) => Ok(Some([h, p, s])),
            _ => Ok(None),
        }
    }

    fn prospectivity(&self) -> Result<Option<Raster>, BackendError> {
        if let Some(r) = self.mpm_unit() {
            return Ok(Some(r));
        }
        let Some([h, p, s]) = self.signatures()? else { return Ok(None) };
        let spec = &self.registry.mpm;
        let mpm = spec.build(&h, &p, &s).map_err(|e| unresolvable(e.to_string()))?;
        Ok(Some(mpm.map(|v| ((v - spec.out_lo) / (spec.out_hi - spec.out_lo)).clamp(0.0, 1.0))))
    }
}

fn geological_contrast(g: &Raster) -> f64 {
    5.0 * (2.0 * (top_decile_mean(g) - median(g))).clamp(0.0, 1.0)
}

fn blend(image: f64, refs: &[Assessment]) -> f64 {
    if refs.is_empty() {
        image
    } else {
        0.5 * image + 0.5 * refs.iter().map(|a| a.score).sum::<f64>() / refs.len() as f64
    }
}

fn ref_note(refs: &[Assessment]) -> String {
    if refs.is_empty() {
        String::new()
    } else {
        let parts: Vec<String> = refs.iter().map(|a| format!("{} {:.2}", a.tool_id, a.score)).collect();
        format!("; combined with reference scores {}", parts.join(", "))
    }
}

impl OracleBackend {
    pub fn new(registry: SignatureRegistry) -> Self {
        OracleBackend { registry }
    }

    /// Scores one tool from its images and references.
    pub fn assess(&self, tool_id: &str, images: &[AreaImage], refs: &[Assessment]) -> Result<OracleScores, BackendError> {
        let layers = Layers::load(&self.registry, images)?;
        self.assess_layers(tool_id, &layers, refs)
    }

    fn assess_layers(&self, tool_id: &str, layers: &Layers<'_>, refs: &[Assessment]) -> Result<OracleScores, BackendError> {
        let need = |what: &str| unresolvable(format!("tool {tool_id} needs {what}"));
        let (image, focus, what) = match tool_id {
            "c1" => {
                let g = layers.geological().ok_or_else(|| need("the geological image"))?;
                let c = geological_contrast(g);
                (c, g.clone(), format!("geological contrast {:.3} between the brightest decile and the median", c / 5.0))
            }
            "c2" | "c3" | "c4" => {
                let sig = &BandId::SIGNATURES[tool_id.as_bytes()[1] as usize - b'2' as usize];
                let r = layers.signature(sig)?.ok_or_else(|| need(sig.as_str()))?;
                let m = top_decile_mean(&r);
                (5.0 * m, r, format!("{} top-decile mean {m:.3}", sig.description()))
            }
            "c5" => {
                let sigs = layers.signatures()?.ok_or_else(|| need("all three signatures"))?;
                let means = sigs.each_ref().map(top_decile_mean);
                let m = means.iter().copied().fold(f64::INFINITY, f64::min);
                let focus = sigs.into_iter().min_by(|a, b| top_decile_mean(a).total_cmp(&top_decile_mean(b))).expect("three layers");
                (
                    5.0 * m,
                    focus,
                    format!(
                        "zoning completeness {m:.3} (weakest of hydrothermal {:.3}, propylitic {:.3}, silicification {:.3})",
                        means[0], means[1], means[2]
                    ),
                )
            }
            "c6" => {
                let p = layers.prospectivity()?.ok_or_else(|| need("the prospectivity layers"))?;
                let m = top_decile_mean(&p);
                match layers.geological() {
                    Some(g) => {
                        let c = geological_contrast(g);
                        (
                            (2.0 * 5.0 * m + c) / 3.0,
                            p,
                            format!("prospectivity top-decile mean {m:.3} with geological contrast {:.3}", c / 5.0),
                        )
                    }
                    None => (5.0 * m, p, format!("prospectivity top-decile mean {m:.3}")),
                }
            }
            other => return Err(unresolvable(format!("the oracle has no rule for tool {other}"))),
        };
        let score = round2(blend(image, refs));
        let areas = if score >= 0.5 { vec![hotspot(&focus)] } else { Vec::new() };
        Ok(OracleScores { score, areas, explanation: format!("{what}{}", ref_note(refs)) })
    }

    /// Staged answer built from the six tool scores; the final score is the
    /// validation score and the label follows the threshold of 3.
    fn pipeline(&self, images: &[AreaImage]) -> Result<String, BackendError> {
        let layers = Layers::load(&self.registry, images)?;
        let mut done: Vec<Assessment> = Vec::new();
        let run = |id: &str, deps: &[&str], done: &mut Vec<Assessment>| -> Result<OracleScores, BackendError> {
            let refs: Vec<Assessment> = done.iter().filter(|a| deps.contains(&a.tool_id.as_str())).cloned().collect();
            let s = self.assess_layers(id, &layers, &refs)?;
            done.push(Assessment {
                tool_id: id.into(),
                score: s.score,
                areas: s.areas.clone(),
                explanation: s.explanation.clone(),
                raw_ref: None,
            });
            Ok(s)
        };
        let c1 = run("c1", &[], &mut done)?;
        let c2 = run("c2", &[], &mut done)?;
        let c3 = run("c3", &[], &mut done)?;
        let c4 = run("c4", &[], &mut done)?;
        let c5 = run("c5", &["c2", "c3", "c4"], &mut done)?;
        let c6 = run("c6", &["c1", "c2", "c3", "c4", "c5"], &mut done)?;
        let label = if c6.score >= 3.0 { "positive" } else { "negative" };
        Ok(format!(
            "[S1] Geological Environment Analysis: score {:.2}; {}\n\
             [S2] Remote Sensing Feature Identification: hydrothermal {:.2}, propylitic {:.2}, silicification {:.2}\n\
             [S3] Spatial Relation Analysis: score {:.2}; {}\n\
             [S4] Cross-referencing Validation: score {:.2}; {}\n\
             Final score: {:.2}\n\
             Final: {label}",
            c1.score, c1.explanation, c2.score, c3.score, c4.score, c5.score, c5.explanation, c6.score, c6.explanation, c6.score
        ))
    }
}

impl Backend for OracleBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Oracle
    }

    fn invoke(&self, req: &BackendRequest<'_>) -> Result<BackendReply, BackendError> {
        let text = if req.tool_id == PIPELINE_TOOL_ID {
            self.pipeline(req.images)?
        } else {
            self.assess(req.tool_id, req.images, req.references)?.to_text()
        };
        Ok(BackendReply { text, attempts: vec![Attempt { number: 1, elapsed_ms: 0, status: None, outcome: "ok".into() }] })
    }
}
