//! Deriving signature and prospectivity layers for every area of a manifest.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use super::{AreaRecord, Manifest, Result};
use crate::raster::{load_raster, raster_exists, store_raster, BandId};
use crate::signature::SignatureRegistry;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PreprocessStats {
    pub derived: usize,
    pub skipped: usize,
}

fn derived_stem(area: &AreaRecord, band: &BandId) -> String {
    // next to the geological raster, which every area has
    match area.geological.rsplit_once('/') {
        Some((dir, _)) => format!("{dir}/{band}"),
        None => band.to_string(),
    }
}

fn is_complete(area: &AreaRecord, root: &Path) -> bool {
    BandId::SIGNATURES.iter().all(|b| area.signatures.get(b).is_some_and(|s| raster_exists(&root.join(s))))
        && area.mpm.as_ref().is_some_and(|m| raster_exists(&root.join(m)))
}

fn derive_area(area: &mut AreaRecord, root: &Path, registry: &SignatureRegistry) -> Result<()> {
    let raw = area.bands.iter().map(|(b, stem)| Ok((b.clone(), load_raster(root.join(stem))?))).collect::<Result<BTreeMap<_, _>>>()?;
    let derived = registry.derive(&raw)?;
    for band in BandId::SIGNATURES.iter().chain([&BandId::Mpm]) {
        let stem = derived_stem(area, band);
        let layer = derived.signature(band).expect("derived layers cover signatures and mpm");
        store_raster(layer, root.join(&stem))?;
        if *band == BandId::Mpm {
            area.mpm = Some(stem);
        } else {
            area.signatures.insert(band.clone(), stem);
        }
    }
    Ok(())
}

/// Derives the three signatures and the MPM of each area, stores them next
/// to its raw bands and records them in `manifest`. Areas whose derived
/// layers already exist are left alone unless `force` is set, so repeating
/// a run changes nothing.
pub fn preprocess(manifest: &mut Manifest, root: &Path, registry: &SignatureRegistry, force: bool) -> Result<PreprocessStats> {
    let outcomes: Vec<bool> = manifest
        .areas
        .par_iter_mut()
        .map(|area| {
            if !force && is_complete(area, root) {
                return Ok(false);
            }
            derive_area(area, root, registry)?;
            Ok(true)
        })
        .collect::<Result<_>>()?;
    let derived = outcomes.iter().filter(|d| **d).count();
    Ok(PreprocessStats { derived, skipped: outcomes.len() - derived })
}
