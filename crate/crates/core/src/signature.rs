//! Deposit signatures and the mineral prospectivity map (MPM).
//!
//! Each signature is a weighted sum of min-max normalized bands passed
//! through [`clipped_norm`] with the signature's output range. The MPM
//! combines the three signatures with weights 5, 3 and 1 and linearly
//! rescales the attainable sum range `[0, 9]` onto `[0, 5]`.
//!
//! The constants live in a [`SignatureRegistry`], which serializes to TOML so
//! other deposit styles can be described without recompiling. Schema:
//!
//! ```toml
//! # raw value ranges used for min-max normalization
//! [[band_ranges]]
//! band = "ox"          # band identifier
//! lo = 1.1             # raw minimum
//! hi = 2.1             # raw maximum, must exceed lo
//!
//! [hydrothermal]       # likewise [propylitic] and [silicification]
//! out_lo = 1.0         # clip range applied to the weighted sum
//! out_hi = 3.0
//! terms = [{ band = "ox", weight = 1.0 }, { band = "oh", weight = 2.0 }]
//!
//! [mpm]
//! w_h = 5.0            # must satisfy w_h > w_p > w_s > 0
//! w_p = 3.0
//! w_s = 1.0
//! out_lo = 0.0
//! out_hi = 5.0
//!
//! [geological]         # informational; not part of the MPM sum
//! raw_weight = 1.0
//! signature_weight = 1.0
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{clipped_norm, min_max_normalize, BandId, BandRange, Raster, RasterError};

#[derive(Debug, Error)]
pub enum SignatureError {
    #[error("band {0} required by signature {1} is not available")]
    MissingBand(BandId, String),
    #[error("band {band} holds {value}, outside [0, 1]; normalize it first")]
    Unnormalized { band: BandId, value: f64 },
    #[error("rasters do not share a grid: {0}")]
    DimensionMismatch(String),
    #[error("invalid registry: {0}")]
    InvalidRegistry(String),
    #[error("no value range registered for band {0}")]
    MissingRange(BandId),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("cannot read registry {path}: {message}")]
    Config { path: String, message: String },
}

pub type Result<T, E = SignatureError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub band: BandId,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureSpec {
    pub name: String,
    pub terms: Vec<Term>,
    pub out_lo: f64,
    pub out_hi: f64,
}

impl SignatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(SignatureError::InvalidRegistry(format!("{}: at least one term required", self.name)));
        }
        if !(self.out_lo < self.out_hi) {
            return Err(SignatureError::InvalidRegistry(format!(
                "{}: out_lo {} must be below out_hi {}",
                self.name, self.out_lo, self.out_hi
            )));
        }
        if let Some(t) = self.terms.iter().find(|t| !(t.weight > 0.0) || !t.weight.is_finite()) {
            return Err(SignatureError::InvalidRegistry(format!("{}: weight of {} must be positive, got {}", self.name, t.band, t.weight)));
        }
        Ok(())
    }

    pub fn bands(&self) -> impl Iterator<Item = &BandId> {
        self.terms.iter().map(|t| &t.band)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpmSpec {
    pub w_h: f64,
    pub w_p: f64,
    pub w_s: f64,
    pub out_lo: f64,
    pub out_hi: f64,
}

impl MpmSpec {
    /// Weighted sum of the three signatures, rescaled linearly from
    /// `[0, w_h + w_p + w_s]` onto `[out_lo, out_hi]`.
    pub fn build(&self, sig_h: &Raster, sig_p: &Raster, sig_s: &Raster) -> Result<Raster> {
        for other in [sig_p, sig_s] {
            if !sig_h.same_grid(other) {
                return Err(SignatureError::DimensionMismatch(format!(
                    "{} is {}x{}, {} is {}x{}",
                    sig_h.band(),
                    sig_h.width(),
                    sig_h.height(),
                    other.band(),
                    other.width(),
                    other.height()
                )));
            }
        }
        let total = self.w_h + self.w_p + self.w_s;
        let scale = (self.out_hi - self.out_lo) / total;
        let values = sig_h
            .values()
            .iter()
            .zip(sig_p.values())
            .zip(sig_s.values())
            .map(|((&h, &p), &s)| self.out_lo + (self.w_h * h + self.w_p * p + self.w_s * s) * scale)
            .collect();
        Ok(Raster::new(BandId::Mpm, sig_h.width(), sig_h.height(), sig_h.extent(), values)?)
    }
}

/// Row of the constants table describing the geological background layer.
/// It carries weights but does not enter the MPM sum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeologicalRow {
    pub raw_weight: f64,
    pub signature_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureRegistry {
    pub band_ranges: Vec<BandRange>,
    pub hydrothermal: SignatureSpec,
    pub propylitic: SignatureSpec,
    pub silicification: SignatureSpec,
    pub mpm: MpmSpec,
    pub geological: GeologicalRow,
}

fn spec(name: &str, terms: &[(BandId, f64)], out_lo: f64, out_hi: f64) -> SignatureSpec {
    SignatureSpec {
        name: name.to_string(),
        terms: terms.iter().map(|(band, weight)| Term { band: band.clone(), weight: *weight }).collect(),
        out_lo,
        out_hi,
    }
}

fn range(band: BandId, lo: f64, hi: f64) -> BandRange {
    BandRange { band, lo, hi }
}

/// The shipped copper-deposit constants.
pub fn builtin_registry() -> SignatureRegistry {
    use BandId::*;
    SignatureRegistry {
        band_ranges: vec![
            range(Geological, 0.0, 1.0),
            range(Ox, 1.1, 2.1),
            range(Oh, 2.03, 2.25),
            range(Op, 0.4, 0.9),
            range(Al, 2.0, 2.25),
            range(Mg, 1.05, 1.2),
            range(Fe, 0.1, 2.0),
            range(Qa, 1.0, 1.35),
            range(Si, 0.5, 0.52),
        ],
        hydrothermal: spec("hydrothermal", &[(Ox, 1.0), (Oh, 2.0), (Op, 4.0)], 1.0, 3.0),
        propylitic: spec("propylitic", &[(Al, 1.0), (Oh, 1.0), (Mg, 1.0), (Fe, 2.0)], 0.6, 1.0),
        // upper clip is 2.5, not 3
        silicification: spec("silicification", &[(Ox, 1.0), (Qa, 1.0), (Si, 2.0)], 1.0, 2.5),
        mpm: MpmSpec { w_h: 5.0, w_p: 3.0, w_s: 1.0, out_lo: 0.0, out_hi: 5.0 },
        geological: GeologicalRow { raw_weight: 1.0, signature_weight: 1.0 },
    }
}

impl Default for SignatureRegistry {
    fn default() -> Self {
        builtin_registry()
    }
}

/// Normalized bands plus every derived layer for one area.
#[derive(Clone, Debug)]
pub struct DerivedLayers {
    pub normalized: BTreeMap<BandId, Raster>,
    pub hydrothermal: Raster,
    pub propylitic: Raster,
    pub silicification: Raster,
    pub mpm: Raster,
}

impl DerivedLayers {
    pub fn signature(&self, band: &BandId) -> Option<&Raster> {
        match band {
            BandId::Hydrothermal => Some(&self.hydrothermal),
            BandId::Propylitic => Some(&self.propylitic),
            BandId::Silicification => Some(&self.silicification),
            BandId::Mpm => Some(&self.mpm),
            _ => None,
        }
    }
}

impl SignatureRegistry {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg_err = |message: String| SignatureError::Config { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(e.to_string()))?;
        let reg: SignatureRegistry = toml::from_str(&text).map_err(|e| cfg_err(e.to_string()))?;
        reg.validate()?;
        Ok(reg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("registry is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.band_ranges {
            if !(r.lo < r.hi) {
                return Err(SignatureError::InvalidRegistry(format!("band_ranges.{}: lo must be below hi", r.band)));
            }
        }
        for s in self.signatures() {
            s.validate()?;
            if let Some(b) = s.bands().find(|b| self.range_of(b).is_none()) {
                return Err(SignatureError::MissingRange(b.clone()));
            }
        }
        let m = &self.mpm;
        if !(m.w_h > m.w_p && m.w_p > m.w_s && m.w_s > 0.0) {
            return Err(SignatureError::InvalidRegistry(format!(
                "mpm: weights must satisfy w_h > w_p > w_s > 0, got {} {} {}",
                m.w_h, m.w_p, m.w_s
            )));
        }
        if !(m.out_lo < m.out_hi) {
            return Err(SignatureError::InvalidRegistry("mpm: out_lo must be below out_hi".into()));
        }
        Ok(())
    }

    pub fn signatures(&self) -> [&SignatureSpec; 3] {
        [&self.hydrothermal, &self.propylitic, &self.silicification]
    }

    /// Spec producing the given signature layer.
    pub fn signature(&self, band: &BandId) -> Option<&SignatureSpec> {
        match band {
            BandId::Hydrothermal => Some(&self.hydrothermal),
            BandId::Propylitic => Some(&self.propylitic),
            BandId::Silicification => Some(&self.silicification),
            _ => None,
        }
    }

    pub fn range_of(&self, band: &BandId) -> Option<&BandRange> {
        self.band_ranges.iter().find(|r| &r.band == band)
    }

    /// Normalizes every raw band and derives the three signatures and the MPM.
    pub fn derive(&self, raw: &BTreeMap<BandId, Raster>) -> Result<DerivedLayers> {
        let mut normalized = BTreeMap::new();
        for (band, r) in raw {
            let range = self.range_of(band).ok_or_else(|| SignatureError::MissingRange(band.clone()))?;
            normalized.insert(band.clone(), min_max_normalize(r, range)?);
        }
        let hydrothermal = combine(&self.hydrothermal, &normalized)?.with_band(BandId::Hydrothermal);
        let propylitic = combine(&self.propylitic, &normalized)?.with_band(BandId::Propylitic);
        let silicification = combine(&self.silicification, &normalized)?.with_band(BandId::Silicification);
        let mpm = self.mpm.build(&hydrothermal, &propylitic, &silicification)?;
        Ok(DerivedLayers { normalized, hydrothermal, propylitic, silicification, mpm })
    }
}

/// Weighted sum of normalized bands followed by clip-and-scale to the
/// spec's output range. A pixel missing in any contributing band is missing
/// in the result.
pub fn combine(spec: &SignatureSpec, bands: &BTreeMap<BandId, Raster>) -> Result<Raster> {
    spec.validate()?;
    let inputs: Vec<(&Raster, f64)> = spec
        .terms
        .iter()
        .map(|t| bands.get(&t.band).map(|r| (r, t.weight)).ok_or_else(|| SignatureError::MissingBand(t.band.clone(), spec.name.clone())))
        .collect::<Result<_>>()?;
    let first = inputs[0].0;
    for (r, _) in &inputs {
        if !first.same_grid(r) {
            return Err(SignatureError::DimensionMismatch(format!("{} vs {}", first.band(), r.band())));
        }
        if let Some(value) = r.valid().find(|v| !(0.0..=1.0).contains(v)) {
            return Err(SignatureError::Unnormalized { band: r.band().clone(), value });
        }
    }
    let mut sum = vec![0.0; first.values().len()];
    for (r, w) in &inputs {
        for (acc, &v) in sum.iter_mut().zip(r.values()) {
            *acc += w * v;
        }
    }
    let raw = Raster::new(BandId::Other(spec.name.clone()), first.width(), first.height(), first.extent(), sum)?;
    Ok(clipped_norm(&raw, spec.out_lo, spec.out_hi)?)
}

/// Prospectivity map from the three signatures with the shipped weights.
pub fn build_mpm(sig_h: &Raster, sig_p: &Raster, sig_s: &Raster) -> Result<Raster> {
    builtin_registry().mpm.build(sig_h, sig_p, sig_s)
}
