//! Dataset commands: synthesis, sampling, tiling, preprocessing, rendering.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use super::{usage, AppConfig, ManifestCommand, PreprocessArgs, RenderArgs, SampleArgs, SynthArgs, TileArgs};
use crate::dataset::{self, manifest_root, sample_imbalanced, synthesize_dataset, AreaRecord, Manifest, SynthConfig};
use crate::fsutil::write_atomic;
use crate::raster::{load_raster, min_max_normalize, quality_filter, store_raster, tile_grid, BandId, DepositPoint, FilterRules};
use crate::render::{render_base, render_overlay, RenderConfig};

/// Builds a directory in a temporary sibling and moves it into place only
/// when `build` succeeds.
fn build_dir<T>(out: &Path, force: bool, build: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let occupied = out.is_dir() && std::fs::read_dir(out)?.next().is_some();
    if out.exists() && !out.is_dir() || occupied && !force {
        bail!("{} already exists; pass --force to replace it", out.display());
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let tmp = tempfile::Builder::new().prefix(".prospect-").tempdir_in(parent)?;
    let value = build(tmp.path())?;
    if out.exists() {
        std::fs::remove_dir_all(out).with_context(|| format!("removing {}", out.display()))?;
    }
    let kept = tmp.keep();
    std::fs::rename(&kept, out).with_context(|| format!("moving output into {}", out.display()))?;
    Ok(value)
}

pub fn synth(cfg: &AppConfig, a: SynthArgs) -> Result<()> {
    if a.positives == 0 {
        return Err(usage("--positives must be at least 1"));
    }
    let sc = SynthConfig {
        name: a.name,
        positives: a.positives,
        negatives: a.negatives,
        noise: a.noise,
        seed: cfg.seed,
        size_px: a.size,
        tile_km: a.tile_km,
    };
    let out = cfg.output(&a.out);
    let m = build_dir(&out, a.force, |dir| Ok(synthesize_dataset(dir, &sc)?))?;
    println!(
        "wrote {} areas ({} positive, {} negative, seed {}) to {}",
        m.areas.len(),
        m.positives,
        m.negatives,
        cfg.seed,
        out.join("manifest.json").display()
    );
    Ok(())
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

/// Rewrites raster stems so they resolve from `to` instead of `from`.
fn rebase(area: &mut AreaRecord, from: &Path, to: &Path) -> Result<()> {
    let (from, to) = (from.canonicalize()?, to.canonicalize()?);
    if from == to {
        return Ok(());
    }
    let fix = |s: &mut String| *s = from.join(&*s).display().to_string();
    fix(&mut area.geological);
    area.bands.values_mut().chain(area.signatures.values_mut()).chain(area.mpm.iter_mut()).for_each(fix);
    Ok(())
}

pub fn sample(cfg: &AppConfig, a: SampleArgs) -> Result<()> {
    let path = cfg.input(&a.manifest);
    let m = load_manifest(&path)?;
    let (pos, neg): (Vec<AreaRecord>, Vec<AreaRecord>) = m.areas.iter().cloned().partition(|r| r.label == 1);
    let name = a.name.unwrap_or_else(|| format!("{}-sample", m.name));
    let mut sampled = sample_imbalanced(&name, &pos, &neg, a.ratio, cfg.seed)?;
    let out = cfg.output(&a.out);
    let out_root = manifest_root(&out);
    std::fs::create_dir_all(&out_root)?;
    for area in &mut sampled.areas {
        rebase(area, &manifest_root(&path), &out_root)?;
    }
    sampled.save(&out)?;
    println!("sampled {} positive and {} negative areas (seed {}) into {}", sampled.positives, sampled.negatives, cfg.seed, out.display());
    Ok(())
}

pub fn manifest(cfg: &AppConfig, c: ManifestCommand) -> Result<()> {
    match c {
        ManifestCommand::Validate { manifest } => {
            let path = cfg.input(&manifest);
            let m = load_manifest(&path)?;
            m.validate(&manifest_root(&path))?;
            println!("ok: {} areas ({} positive, {} negative)", m.areas.len(), m.positives, m.negatives);
        }
        ManifestCommand::ImportLabels { manifest, labels, out } => {
            let path = cfg.input(&manifest);
            let mut m = load_manifest(&path)?;
            let n = m.import_labels(&cfg.input(&labels))?;
            let target = out.map_or_else(|| path.clone(), |o| cfg.output(&o));
            if manifest_root(&target) != manifest_root(&path) {
                std::fs::create_dir_all(manifest_root(&target))?;
                for area in &mut m.areas {
                    rebase(area, &manifest_root(&path), &manifest_root(&target))?;
                }
            }
            m.save(&target)?;
            println!("updated {n} labels; {} positive, {} negative", m.positives, m.negatives);
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct DepositRow {
    x_km: f64,
    y_km: f64,
}

fn read_deposits(path: &Path) -> Result<Vec<DepositPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).with_context(|| format!("reading {}", path.display()))?;
    rdr.deserialize::<DepositRow>()
        .map(|r| r.map(|d| DepositPoint { x_km: d.x_km, y_km: d.y_km }).with_context(|| format!("parsing {}", path.display())))
        .collect()
}

pub fn tile(cfg: &AppConfig, a: TileArgs) -> Result<()> {
    let rasters = a
        .rasters
        .iter()
        .map(|p| load_raster(cfg.input(p)).with_context(|| format!("loading raster {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    if !rasters.iter().any(|r| *r.band() == BandId::Geological) {
        return Err(usage("one --raster must hold the geological band"));
    }
    let deposits = match &a.deposits {
        Some(p) => read_deposits(&cfg.input(p))?,
        None => Vec::new(),
    };
    let rules = FilterRules { max_missing_fraction: a.max_missing, edge_margin_km: a.edge_margin_km };
    let tiles = tile_grid(&rasters, a.tile_km, &deposits)?;
    let out = cfg.output(&a.out);
    let (kept, dropped) = build_dir(&out, false, |dir| {
        let mut areas = Vec::new();
        let mut log = csv::Writer::from_writer(Vec::new());
        log.write_record(["area_id", "kept", "reason", "deposits"])?;
        for t in &tiles {
            let v = quality_filter(t, &rules);
            log.write_record([
                t.id.as_str(),
                if v.keep { "1" } else { "0" },
                v.reason.map_or("", |r| r.as_str()),
                &t.deposits.len().to_string(),
            ])?;
            if !v.keep {
                continue;
            }
            let rel = format!("areas/{}", t.id);
            let mut rec = AreaRecord {
                id: t.id.clone(),
                label: u8::from(!t.deposits.is_empty()),
                geological: format!("{rel}/geological"),
                bands: BTreeMap::new(),
                signatures: BTreeMap::new(),
                mpm: None,
            };
            for (band, r) in &t.bands {
                let stem = format!("{rel}/{band}");
                store_raster(r, dir.join(&stem))?;
                if *band != BandId::Geological {
                    rec.bands.insert(band.clone(), stem);
                }
            }
            areas.push(rec);
        }
        write_atomic(&dir.join("tiles.csv"), &log.into_inner()?)?;
        let kept = areas.len();
        Manifest::new(&a.name, None, areas).save(&dir.join("manifest.json"))?;
        Ok((kept, tiles.len() - kept))
    })?;
    println!("kept {kept} of {} tiles ({dropped} dropped); manifest at {}", kept + dropped, out.join("manifest.json").display());
    Ok(())
}

pub fn preprocess(cfg: &AppConfig, a: PreprocessArgs) -> Result<()> {
    let path = cfg.input(&a.manifest);
    let mut m = load_manifest(&path)?;
    let registry = cfg.registry()?;
    let root = manifest_root(&path);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build()?;
    let stats = pool.install(|| dataset::preprocess(&mut m, &root, &registry, a.force))?;
    m.save(&path)?;
    println!("derived layers for {} areas, {} already up to date", stats.derived, stats.skipped);
    Ok(())
}

pub fn render(cfg: &AppConfig, a: RenderArgs) -> Result<()> {
    let path = cfg.input(&a.manifest);
    let m = load_manifest(&path)?;
    let root = manifest_root(&path);
    let area = m.areas.iter().find(|r| r.id == a.area).ok_or_else(|| anyhow::anyhow!("no area {} in {}", a.area, path.display()))?;
    let layer: BandId = a.layer.parse().map_err(|e| usage(format!("--layer: {e}")))?;
    let stem =
        area.layer(&layer).ok_or_else(|| anyhow::anyhow!("area {} has no {layer} layer (run preprocess for derived layers)", area.id))?;
    let base = load_raster(root.join(&area.geological))?;
    let rc = RenderConfig { opacity: a.opacity, scale: a.scale, colorbar: a.colorbar, ..RenderConfig::default() };
    rc.validate().map_err(|e| usage(e.to_string()))?;
    let image = if layer == BandId::Geological {
        render_base(&base).upscale(a.scale as usize)
    } else {
        let registry = cfg.registry()?;
        let raw = load_raster(root.join(stem))?;
        // the colormap takes values in [0, 1]
        let overlay = if layer == BandId::Mpm {
            let (lo, hi) = (registry.mpm.out_lo, registry.mpm.out_hi);
            raw.map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        } else if let Some(range) = registry.range_of(&layer) {
            min_max_normalize(&raw, range)?
        } else {
            raw.map(|v| v.clamp(0.0, 1.0))
        };
        render_overlay(&base, &overlay, &rc)?
    };
    let out: PathBuf = cfg.output(&a.out);
    image.save_png(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
