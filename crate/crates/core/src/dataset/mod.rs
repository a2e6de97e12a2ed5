//! Benchmark assembly: area records, manifests, imbalanced sampling and the
//! per-setting input selection.
//!
//! A manifest is a single JSON document. Raster references are stems (no
//! extension) relative to the manifest's directory:
//!
//! ```json
//! {
//!   "name": "synthetic",
//!   "seed": 7,
//!   "positives": 1,
//!   "negatives": 1,
//!   "areas": [
//!     {
//!       "id": "A0000",
//!       "label": 1,
//!       "geological": "areas/A0000/geological",
//!       "bands": { "ox": "areas/A0000/ox", "oh": "areas/A0000/oh" },
//!       "signatures": { "sig_h": "areas/A0000/sig_h" },
//!       "mpm": "areas/A0000/mpm"
//!     }
//!   ]
//! }
//! ```
//!
//! `signatures` and `mpm` are filled in by preprocessing and may be absent.

mod preprocess;
mod synth;

pub use preprocess::{preprocess, PreprocessStats};
pub use synth::{synthesize_area, synthesize_dataset, AreaKind, SynthArea, SynthConfig};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::write_atomic;
use crate::raster::{BandId, RasterError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no positive areas to sample from")]
    NoPositives,
    #[error("need {needed} negatives but only {available} are available")]
    InsufficientNegatives { needed: usize, available: usize },
    #[error("invalid sampling ratio {0}")]
    InvalidRatio(f64),
    #[error("area {area}: missing {layer} layer required by the {setting} setting")]
    MissingLayer { area: String, layer: BandId, setting: Setting },
    #[error("manifest {0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Signature(#[from] crate::signature::SignatureError),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaRecord {
    pub id: String,
    pub label: u8,
    pub geological: String,
    pub bands: BTreeMap<BandId, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub signatures: BTreeMap<BandId, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpm: Option<String>,
}

impl AreaRecord {
    /// Stem of the raster holding `layer`, if this record has one.
    pub fn layer(&self, layer: &BandId) -> Option<&str> {
        match layer {
            BandId::Geological => Some(&self.geological),
            BandId::Mpm => self.mpm.as_deref(),
            b if b.is_signature() => self.signatures.get(b).map(String::as_str),
            b => self.bands.get(b).map(String::as_str),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub positives: usize,
    pub negatives: usize,
    pub areas: Vec<AreaRecord>,
}

impl Manifest {
    pub fn new(name: impl Into<String>, seed: Option<u64>, areas: Vec<AreaRecord>) -> Self {
        let positives = areas.iter().filter(|a| a.label == 1).count();
        let negatives = areas.len() - positives;
        Manifest { name: name.into(), seed, positives, negatives, areas }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let read_err = |message: String| DatasetError::Read { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        m.check_counts()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(path, text.as_bytes()).map_err(|source| DatasetError::Write { path: path.display().to_string(), source })
    }

    pub fn check_counts(&self) -> Result<()> {
        if let Some(a) = self.areas.iter().find(|a| a.label > 1) {
            return Err(DatasetError::Invalid(format!("area {}: label must be 0 or 1, got {}", a.id, a.label)));
        }
        let pos = self.areas.iter().filter(|a| a.label == 1).count();
        let neg = self.areas.len() - pos;
        if pos != self.positives || neg != self.negatives {
            return Err(DatasetError::Invalid(format!("counts {}/{} do not match records {pos}/{neg}", self.positives, self.negatives)));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(a) = self.areas.iter().find(|a| !seen.insert(a.id.as_str())) {
            return Err(DatasetError::Invalid(format!("duplicate area id {}", a.id)));
        }
        Ok(())
    }

    /// Checks counts and that every referenced raster exists under `root`.
    pub fn validate(&self, root: &Path) -> Result<()> {
        self.check_counts()?;
        for a in &self.areas {
            let refs = std::iter::once(&a.geological).chain(a.bands.values()).chain(a.signatures.values()).chain(a.mpm.iter());
            for r in refs {
                if !crate::raster::raster_exists(&root.join(r)) {
                    return Err(DatasetError::Invalid(format!("area {}: raster {r} not found", a.id)));
                }
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> BTreeMap<&str, u8> {
        self.areas.iter().map(|a| (a.id.as_str(), a.label)).collect()
    }

    /// Applies `area_id,label` rows. Unknown ids are an error.
    pub fn import_labels(&mut self, csv_path: &Path) -> Result<usize> {
        let read_err = |message: String| DatasetError::Read { path: csv_path.display().to_string(), message };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(csv_path).map_err(|e| read_err(e.to_string()))?;
        #[derive(Deserialize)]
        struct Row {
            area_id: String,
            label: u8,
        }
        let mut updated = 0;
        for row in rdr.deserialize::<Row>() {
            let row = row.map_err(|e| read_err(e.to_string()))?;
            if row.label > 1 {
                return Err(read_err(format!("area {}: label must be 0 or 1", row.area_id)));
            }
            let area =
                self.areas.iter_mut().find(|a| a.id == row.area_id).ok_or_else(|| read_err(format!("unknown area {}", row.area_id)))?;
            area.label = row.label;
            updated += 1;
        }
        self.positives = self.areas.iter().filter(|a| a.label == 1).count();
        self.negatives = self.areas.len() - self.positives;
        Ok(updated)
    }
}

/// Directory containing the manifest, against which raster stems resolve.
pub fn manifest_root(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Keeps every positive and draws `round(neg_per_pos * |pos|)` negatives
/// uniformly without replacement.
pub fn sample_imbalanced(name: &str, pos: &[AreaRecord], neg: &[AreaRecord], neg_per_pos: f64, seed: u64) -> Result<Manifest> {
    if pos.is_empty() {
        return Err(DatasetError::NoPositives);
    }
    if !(neg_per_pos >= 0.0) || !neg_per_pos.is_finite() {
        return Err(DatasetError::InvalidRatio(neg_per_pos));
    }
    let needed = (neg_per_pos * pos.len() as f64).round() as usize;
    if needed > neg.len() {
        return Err(DatasetError::InsufficientNegatives { needed, available: neg.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, neg.len(), needed).into_vec();
    picked.sort_unstable();
    let areas = pos.iter().cloned().chain(picked.into_iter().map(|i| neg[i].clone())).collect();
    Ok(Manifest::new(name, Some(seed), areas))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Easy,
    Standard,
    Hard,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Easy, Setting::Standard, Setting::Hard];

    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::Easy => "easy",
            Setting::Standard => "standard",
            Setting::Hard => "hard",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Setting::Easy),
            "standard" => Ok(Setting::Standard),
            "hard" => Ok(Setting::Hard),
            other => Err(format!("unknown setting {other:?} (expected easy, standard or hard)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SettingConfig {
    pub setting: Setting,
    pub roles: Vec<BandId>,
}

impl SettingConfig {
    pub fn new(setting: Setting) -> Self {
        let mut roles = vec![BandId::Geological];
        match setting {
            Setting::Easy => roles.push(BandId::Mpm),
            Setting::Standard => roles.extend(BandId::SIGNATURES),
            Setting::Hard => roles.extend(BandId::HYPERSPECTRAL),
        }
        SettingConfig { setting, roles }
    }

    pub fn image_count(&self) -> usize {
        self.roles.len()
    }
}

/// One image handed to a model: its role and the raster stem on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaImage {
    pub role: BandId,
    pub path: PathBuf,
}

/// The setting's images for one area, in canonical order, resolved against
/// `root`.
pub fn setting_inputs(area: &AreaRecord, cfg: &SettingConfig, root: &Path) -> Result<Vec<AreaImage>> {
    cfg.roles
        .iter()
        .map(|role| {
            area.layer(role).map(|p| AreaImage { role: role.clone(), path: root.join(p) }).ok_or_else(|| DatasetError::MissingLayer {
                area: area.id.clone(),
                layer: role.clone(),
                setting: cfg.setting,
            })
        })
        .collect()
}
