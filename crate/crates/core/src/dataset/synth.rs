//! Synthetic geology for desk-scale testing.
//!
//! Deposit areas carry a concentric alteration pattern: a core rich in
//! ferric oxide, FeOH and opaque minerals; a halo of AlOH, FeOH, MgOH and
//! ferrous iron; and an outer rim of ferric oxide, quartz and silica. The
//! band profiles are planted in normalized units and converted back to raw
//! units through the registry's band ranges, so the preprocessing chain sees
//! realistic raw values. At zero noise the core of every deposit yields an
//! MPM above 3.
//!
//! Non-deposit areas are either plain background or a single isolated zone
//! (core, halo or rim without the other two).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AreaRecord, DatasetError, Manifest, Result};
use crate::fsutil::write_atomic;
use crate::raster::{store_raster, BandId, DepositPoint, Extent, Raster};
use crate::signature::SignatureRegistry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub positives: usize,
    pub negatives: usize,
    /// Standard deviation of per-pixel Gaussian noise, in normalized units.
    pub noise: f64,
    pub seed: u64,
    pub size_px: usize,
    pub tile_km: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { name: "synthetic".into(), positives: 20, negatives: 180, noise: 0.1, seed: 7, size_px: 48, tile_km: 12.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AreaKind {
    Deposit,
    Background,
    CoreOnly,
    HaloOnly,
    RimOnly,
}

impl AreaKind {
    pub fn label(self) -> u8 {
        u8::from(self == AreaKind::Deposit)
    }
}

/// One generated area: raw bands (including the geological image) and the
/// planted deposit location, if any.
#[derive(Clone, Debug)]
pub struct SynthArea {
    pub id: String,
    pub kind: AreaKind,
    pub bands: BTreeMap<BandId, Raster>,
    pub deposit: Option<DepositPoint>,
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn ring(r: f64, center: f64, width: f64) -> f64 {
    let d = (r - center) / width;
    (-d * d).exp()
}

#[derive(Clone, Copy)]
struct Zones {
    cx: f64,
    cy: f64,
    core_r: f64,
    amp: f64,
    core: bool,
    halo: bool,
    rim: bool,
}

impl Zones {
    /// (core, halo, rim) intensities at pixel centre (x, y).
    fn at(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let r = ((x - self.cx).powi(2) + (y - self.cy).powi(2)).sqrt();
        let rc = self.core_r;
        let core = if self.core { 1.0 - smoothstep(0.6 * rc, 1.2 * rc, r) } else { 0.0 };
        let halo = if self.halo { ring(r, 2.0 * rc, 0.6 * rc) } else { 0.0 };
        let rim = if self.rim { ring(r, 3.1 * rc, 0.5 * rc) } else { 0.0 };
        (self.amp * core, self.amp * halo, self.amp * rim)
    }
}

/// Normalized intensity of a band given the three zone intensities.
fn band_intensity(band: &BandId, (core, halo, rim): (f64, f64, f64)) -> f64 {
    match band {
        BandId::Ox => core.max(rim),
        BandId::Oh => core.max(halo),
        BandId::Op => core,
        BandId::Al | BandId::Mg | BandId::Fe => halo,
        BandId::Qa | BandId::Si => rim,
        _ => 0.0,
    }
}

/// Generates area number `index` of the given kind. Deterministic in
/// (`cfg.seed`, `index`).
pub fn synthesize_area(index: usize, kind: AreaKind, cfg: &SynthConfig, registry: &SignatureRegistry) -> Result<SynthArea> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let n = cfg.size_px;
    let extent = Extent::square(cfg.tile_km)?;
    let px_km = cfg.tile_km / n as f64;
    let noise = if cfg.noise > 0.0 { Some(Normal::new(0.0, cfg.noise).map_err(|e| DatasetError::Invalid(e.to_string()))?) } else { None };
    let nf = n as f64;

    let zones = Zones {
        cx: rng.random_range(0.3..0.7) * nf,
        cy: rng.random_range(0.3..0.7) * nf,
        core_r: rng.random_range(0.07..0.10) * nf,
        amp: rng.random_range(0.85..1.0),
        core: matches!(kind, AreaKind::Deposit | AreaKind::CoreOnly),
        halo: matches!(kind, AreaKind::Deposit | AreaKind::HaloOnly),
        rim: matches!(kind, AreaKind::Deposit | AreaKind::RimOnly),
    };

    // geological background: a smooth texture, with an intrusive body
    // more often present near deposits
    let (kx, ky) = (rng.random_range(1.5..3.0) * 2.0 * PI / nf, rng.random_range(1.5..3.0) * 2.0 * PI / nf);
    let (phx, phy) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let intrusion_p = if kind == AreaKind::Deposit { 0.7 } else { 0.3 };
    let intrusion = if rng.random_bool(intrusion_p) {
        let (ix, iy) = if kind == AreaKind::Deposit {
            (zones.cx, zones.cy)
        } else {
            (rng.random_range(0.2..0.8) * nf, rng.random_range(0.2..0.8) * nf)
        };
        Some((ix, iy, 2.5 * zones.core_r))
    } else {
        None
    };
    let mut geo = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
            let mut g = 0.45 + 0.12 * (kx * x + phx).sin() * (ky * y + phy).cos();
            if let Some((ix, iy, ir)) = intrusion {
                let r = ((x - ix).powi(2) + (y - iy).powi(2)).sqrt();
                g += 0.3 * (1.0 - smoothstep(0.5 * ir, ir, r));
            }
            if let Some(d) = &noise {
                g += 0.5 * d.sample(&mut rng);
            }
            geo.push(g);
        }
    }
    let mut bands = BTreeMap::new();
    bands.insert(BandId::Geological, Raster::new(BandId::Geological, n, n, extent, geo)?);

    for band in BandId::HYPERSPECTRAL {
        let range = registry.range_of(&band).ok_or_else(|| DatasetError::Invalid(format!("registry has no range for {band}")))?.clone();
        let bg = rng.random_range(0.02..0.08);
        let mut values = Vec::with_capacity(n * n);
        for row in 0..n {
            for col in 0..n {
                let zone = zones.at(col as f64 + 0.5, row as f64 + 0.5);
                let mut v = bg + (1.0 - bg) * band_intensity(&band, zone);
                if let Some(d) = &noise {
                    v += d.sample(&mut rng);
                }
                values.push(range.lo + v * (range.hi - range.lo));
            }
        }
        bands.insert(band.clone(), Raster::new(band, n, n, extent, values)?);
    }

    let deposit = (kind == AreaKind::Deposit).then_some(DepositPoint { x_km: zones.cx * px_km, y_km: cfg.tile_km - zones.cy * px_km });
    Ok(SynthArea { id: format!("A{index:04}"), kind, bands, deposit })
}

/// Kind of area number `index`: the first `positives` are deposits, the
/// rest cycle through the non-deposit kinds.
fn kind_for(index: usize, cfg: &SynthConfig) -> AreaKind {
    if index < cfg.positives {
        return AreaKind::Deposit;
    }
    match (index - cfg.positives) % 5 {
        0 | 1 => AreaKind::Background,
        2 => AreaKind::CoreOnly,
        3 => AreaKind::HaloOnly,
        _ => AreaKind::RimOnly,
    }
}

/// Writes a synthetic dataset under `dir`: raw rasters in `areas/<id>/`,
/// `labels.csv`, `deposits.csv` and `manifest.json`.
pub fn synthesize_dataset(dir: &Path, cfg: &SynthConfig) -> Result<Manifest> {
    if !(cfg.noise >= 0.0) || cfg.size_px == 0 {
        return Err(DatasetError::Invalid(format!("noise must be >= 0 and size positive (noise {}, size {})", cfg.noise, cfg.size_px)));
    }
    let registry = SignatureRegistry::default();
    let total = cfg.positives + cfg.negatives;
    let generated: Vec<(AreaRecord, Option<DepositPoint>)> = (0..total)
        .into_par_iter()
        .map(|i| {
            let area = synthesize_area(i, kind_for(i, cfg), cfg, &registry)?;
            let rel = format!("areas/{}", area.id);
            let mut record = AreaRecord {
                id: area.id.clone(),
                label: area.kind.label(),
                geological: format!("{rel}/geological"),
                bands: BTreeMap::new(),
                signatures: BTreeMap::new(),
                mpm: None,
            };
            for (band, raster) in &area.bands {
                let stem = format!("{rel}/{band}");
                store_raster(raster, dir.join(&stem))?;
                if *band != BandId::Geological {
                    record.bands.insert(band.clone(), stem);
                }
            }
            Ok((record, area.deposit))
        })
        .collect::<Result<_>>()?;

    let mut labels = String::from("area_id,label\n");
    let mut deposits = String::from("area_id,x_km,y_km\n");
    for (r, d) in &generated {
        labels.push_str(&format!("{},{}\n", r.id, r.label));
        if let Some(d) = d {
            deposits.push_str(&format!("{},{:.4},{:.4}\n", r.id, d.x_km, d.y_km));
        }
    }
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        write_atomic(&p, text.as_bytes()).map_err(|source| DatasetError::Write { path: p.display().to_string(), source })
    };
    write("labels.csv", &labels)?;
    write("deposits.csv", &deposits)?;

    let manifest = Manifest::new(cfg.name.clone(), Some(cfg.seed), generated.into_iter().map(|(r, _)| r).collect());
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
