//! Grid tiling of co-registered scene rasters into square study areas, and
//! the automatic rules that reject unusable areas.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BandId, Extent, Raster, RasterError, Result};

/// A deposit location. Scene points use scene kilometres; points attached to
/// an [`AreaTile`] are relative to the tile's lower-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepositPoint {
    pub x_km: f64,
    pub y_km: f64,
}

/// One square study area cut from a scene, with every band on the same grid.
#[derive(Clone, Debug)]
pub struct AreaTile {
    pub id: String,
    pub extent: Extent,
    pub bands: BTreeMap<BandId, Raster>,
    pub deposits: Vec<DepositPoint>,
}

impl AreaTile {
    pub fn new(id: impl Into<String>, extent: Extent, bands: BTreeMap<BandId, Raster>) -> Result<Self> {
        let mut grid: Option<&Raster> = None;
        for r in bands.values() {
            if r.extent() != extent {
                return Err(RasterError::MismatchedGrids(format!("band {} extent differs from tile extent", r.band())));
            }
            match grid {
                Some(g) if !g.same_grid(r) => {
                    return Err(RasterError::MismatchedGrids(format!("band {} differs from band {}", r.band(), g.band())))
                }
                _ => grid = Some(r),
            }
        }
        Ok(AreaTile { id: id.into(), extent, bands, deposits: Vec::new() })
    }
}

/// Cuts co-registered rasters into `tile_km` squares.
///
/// The grid is anchored at the upper-left corner of the shared extent and
/// tiles are emitted left-to-right, top-to-bottom. Partial tiles along the
/// right and bottom edges are dropped. Deposits (scene coordinates) are
/// attached to the tile containing them, translated to tile coordinates.
pub fn tile_grid(rasters: &[Raster], tile_km: f64, deposits: &[DepositPoint]) -> Result<Vec<AreaTile>> {
    let first = rasters.first().ok_or_else(|| RasterError::MismatchedGrids("no rasters to tile".into()))?;
    first.extent().validate()?;
    for r in &rasters[1..] {
        if !first.same_grid(r) {
            return Err(RasterError::MismatchedGrids(format!("band {} differs from band {}", r.band(), first.band())));
        }
    }
    if !(tile_km > 0.0) || !tile_km.is_finite() {
        return Err(RasterError::InvalidTileSize(format!("tile size must be positive, got {tile_km}")));
    }
    let (px, py) = first.pixel_size();
    let tile_cols = tile_km / px;
    let tile_rows = tile_km / py;
    let (nx, ny) = (tile_cols.round(), tile_rows.round());
    if nx < 1.0 || ny < 1.0 || (tile_cols - nx).abs() > 1e-6 * nx.max(1.0) || (tile_rows - ny).abs() > 1e-6 * ny.max(1.0) {
        return Err(RasterError::InvalidTileSize(format!("{tile_km} km is not a whole number of {px}x{py} km pixels")));
    }
    let (tw, th) = (nx as usize, ny as usize);
    let across = first.width() / tw;
    let down = first.height() / th;
    let ext = first.extent();

    let mut tiles = Vec::with_capacity(across * down);
    for ty in 0..down {
        for tx in 0..across {
            let x_min = ext.x_min + (tx * tw) as f64 * px;
            let y_max = ext.y_max - (ty * th) as f64 * py;
            let extent = Extent::new(x_min, y_max - th as f64 * py, x_min + tw as f64 * px, y_max)?;
            let bands = rasters.iter().map(|r| (r.band().clone(), r.window(tx * tw, ty * th, tw, th, extent))).collect();
            let mut tile = AreaTile::new(format!("T{ty:03}_{tx:03}"), extent, bands)?;
            tile.deposits = deposits
                .iter()
                .filter(|d| d.x_km >= extent.x_min && d.x_km < extent.x_max && d.y_km > extent.y_min && d.y_km <= extent.y_max)
                .map(|d| DepositPoint { x_km: d.x_km - extent.x_min, y_km: d.y_km - extent.y_min })
                .collect();
            tiles.push(tile);
        }
    }
    Ok(tiles)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterRules {
    /// Largest tolerated fraction of missing pixels in any band.
    pub max_missing_fraction: f64,
    /// Deposits closer than this to a tile boundary disqualify the tile.
    pub edge_margin_km: f64,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules { max_missing_fraction: 0.1, edge_margin_km: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    MissingFraction,
    DepositNearEdge,
}

impl DropReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DropReason::MissingFraction => "missing-fraction",
            DropReason::DepositNearEdge => "deposit-near-edge",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterVerdict {
    pub keep: bool,
    pub reason: Option<DropReason>,
}

pub fn quality_filter(tile: &AreaTile, rules: &FilterRules) -> FilterVerdict {
    let worst_missing = tile.bands.values().map(Raster::missing_fraction).fold(0.0, f64::max);
    if worst_missing > rules.max_missing_fraction {
        return FilterVerdict { keep: false, reason: Some(DropReason::MissingFraction) };
    }
    let (w, h) = (tile.extent.width(), tile.extent.height());
    let near_edge = tile.deposits.iter().any(|d| {
        let edge_distance = d.x_km.min(w - d.x_km).min(d.y_km).min(h - d.y_km);
        edge_distance < rules.edge_margin_km
    });
    if near_edge {
        return FilterVerdict { keep: false, reason: Some(DropReason::DepositNearEdge) };
    }
    FilterVerdict { keep: true, reason: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(side_km: f64, px_km: f64, band: BandId) -> Raster {
        let n = (side_km / px_km).round() as usize;
        let values = (0..n * n).map(|i| i as f64).collect();
        Raster::new(band, n, n, Extent::square(side_km).unwrap(), values).unwrap()
    }

    #[test]
    fn exact_multiple_gives_full_grid() {
        let tiles = tile_grid(&[scene(36.0, 1.0, BandId::Ox), scene(36.0, 1.0, BandId::Oh)], 12.0, &[]).unwrap();
        assert_eq!(tiles.len(), 9);
        assert_eq!(tiles[0].id, "T000_000");
        assert_eq!(tiles[1].id, "T000_001");
        assert_eq!(tiles[3].id, "T001_000");
        assert_eq!(tiles[0].bands.len(), 2);
    }

    #[test]
    fn partial_edge_tiles_are_dropped() {
        let tiles = tile_grid(&[scene(30.0, 1.0, BandId::Ox)], 12.0, &[]).unwrap();
        assert_eq!(tiles.len(), 4);
    }

    #[test]
    fn tiles_partition_without_overlap() {
        let src = scene(30.0, 0.5, BandId::Ox);
        let tiles = tile_grid(std::slice::from_ref(&src), 12.0, &[]).unwrap();
        for (i, a) in tiles.iter().enumerate() {
            let e = a.extent;
            let s = src.extent();
            assert!(e.x_min >= s.x_min && e.x_max <= s.x_max && e.y_min >= s.y_min && e.y_max <= s.y_max);
            for b in &tiles[i + 1..] {
                let f = b.extent;
                let overlap_x = e.x_min.max(f.x_min) < e.x_max.min(f.x_max);
                let overlap_y = e.y_min.max(f.y_min) < e.y_max.min(f.y_max);
                assert!(!(overlap_x && overlap_y));
            }
        }
        // top-left tile copies the top-left window
        assert_eq!(tiles[0].bands[&BandId::Ox].get(0, 0), src.get(0, 0));
        assert_eq!(tiles[1].bands[&BandId::Ox].get(0, 0), src.get(24, 0));
    }

    #[test]
    fn deposits_follow_their_tile() {
        let deposits = [DepositPoint { x_km: 18.0, y_km: 30.0 }];
        let tiles = tile_grid(&[scene(36.0, 1.0, BandId::Ox)], 12.0, &deposits).unwrap();
        let hit: Vec<_> = tiles.iter().filter(|t| !t.deposits.is_empty()).collect();
        assert_eq!(hit.len(), 1);
        assert_eq!(hit[0].id, "T000_001");
        assert_eq!(hit[0].deposits[0], DepositPoint { x_km: 6.0, y_km: 6.0 });
    }

    #[test]
    fn mismatched_grids_and_bad_sizes_fail() {
        assert!(tile_grid(&[scene(36.0, 1.0, BandId::Ox), scene(30.0, 1.0, BandId::Oh)], 12.0, &[]).is_err());
        assert!(tile_grid(&[scene(36.0, 1.0, BandId::Ox)], 0.0, &[]).is_err());
        assert!(tile_grid(&[], 12.0, &[]).is_err());
        assert!(tile_grid(&[scene(36.0, 1.0, BandId::Ox)], 12.5, &[]).is_err());
    }

    fn tile_with(values: Vec<f64>, deposits: Vec<DepositPoint>) -> AreaTile {
        let e = Extent::square(12.0).unwrap();
        let r = Raster::new(BandId::Ox, 4, 4, e, values).unwrap();
        let mut t = AreaTile::new("A", e, BTreeMap::from([(BandId::Ox, r)])).unwrap();
        t.deposits = deposits;
        t
    }

    #[test]
    fn filter_rules() {
        let rules = FilterRules { max_missing_fraction: 0.1, edge_margin_km: 0.5 };
        let mut half = vec![1.0; 16];
        half[..8].fill(f64::NAN);
        let v = quality_filter(&tile_with(half, vec![]), &rules);
        assert_eq!(v, FilterVerdict { keep: false, reason: Some(DropReason::MissingFraction) });
        assert_eq!(v.reason.unwrap().as_str(), "missing-fraction");

        let near = quality_filter(&tile_with(vec![1.0; 16], vec![DepositPoint { x_km: 0.1, y_km: 6.0 }]), &rules);
        assert_eq!(near.reason, Some(DropReason::DepositNearEdge));
        assert_eq!(near.reason.unwrap().as_str(), "deposit-near-edge");

        let ok = quality_filter(&tile_with(vec![1.0; 16], vec![DepositPoint { x_km: 6.0, y_km: 6.0 }]), &rules);
        assert!(ok.keep);
        assert_eq!(ok.reason, None);
    }
}
