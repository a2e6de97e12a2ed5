//! Single-band raster grids and the per-pixel normalizations every later
//! stage relies on.
//!
//! Missing pixels are held as `NaN` in memory. They propagate through all
//! arithmetic, never contribute to combinations and are written to disk as
//! the header's `nodata` value.

mod io;
mod tile;

pub(crate) use io::raster_exists;
pub use io::{load_raster, store_raster, DEFAULT_NODATA};
pub use tile::{quality_filter, tile_grid, AreaTile, DepositPoint, DropReason, FilterRules, FilterVerdict};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("dimension mismatch: expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("degenerate range [{lo}, {hi}]")]
    DegenerateRange { lo: f64, hi: f64 },
    #[error("invalid extent: {0}")]
    InvalidExtent(String),
    #[error("rasters do not share extent and resolution: {0}")]
    MismatchedGrids(String),
    #[error("invalid tile size: {0}")]
    InvalidTileSize(String),
}

pub type Result<T, E = RasterError> = std::result::Result<T, E>;

/// Identity of a raster layer: a raw input band or a derived product.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum BandId {
    /// False-colour geological image.
    Geological,
    /// Ferric oxide content.
    Ox,
    /// FeOH group content.
    Oh,
    /// Opaque index.
    Op,
    /// AlOH group content.
    Al,
    /// MgOH group content.
    Mg,
    /// Ferrous iron content.
    Fe,
    /// Quartz index.
    Qa,
    /// Silica index.
    Si,
    Hydrothermal,
    Propylitic,
    Silicification,
    Mpm,
    Other(String),
}

impl BandId {
    /// The eight hyperspectral bands in canonical order.
    pub const HYPERSPECTRAL: [BandId; 8] = [BandId::Ox, BandId::Oh, BandId::Op, BandId::Al, BandId::Mg, BandId::Fe, BandId::Qa, BandId::Si];

    /// The three deposit signatures in canonical order.
    pub const SIGNATURES: [BandId; 3] = [BandId::Hydrothermal, BandId::Propylitic, BandId::Silicification];

    pub fn as_str(&self) -> &str {
        match self {
            BandId::Geological => "geological",
            BandId::Ox => "ox",
            BandId::Oh => "oh",
            BandId::Op => "op",
            BandId::Al => "al",
            BandId::Mg => "mg",
            BandId::Fe => "fe",
            BandId::Qa => "qa",
            BandId::Si => "si",
            BandId::Hydrothermal => "sig_h",
            BandId::Propylitic => "sig_p",
            BandId::Silicification => "sig_s",
            BandId::Mpm => "mpm",
            BandId::Other(s) => s,
        }
    }

    /// Human-readable name used in prompts and reports.
    pub fn description(&self) -> &str {
        match self {
            BandId::Geological => "false-colour geological image",
            BandId::Ox => "ferric oxide content",
            BandId::Oh => "FeOH group content",
            BandId::Op => "opaque index",
            BandId::Al => "AlOH group content",
            BandId::Mg => "MgOH group content",
            BandId::Fe => "ferrous iron content",
            BandId::Qa => "quartz index",
            BandId::Si => "silica index",
            BandId::Hydrothermal => "hydrothermal alteration signature",
            BandId::Propylitic => "propylitic alteration signature",
            BandId::Silicification => "silicification signature",
            BandId::Mpm => "mineral prospectivity map",
            BandId::Other(s) => s,
        }
    }

    pub fn is_signature(&self) -> bool {
        matches!(self, BandId::Hydrothermal | BandId::Propylitic | BandId::Silicification)
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BandId {
    type Err = RasterError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.is_empty() || t.chars().any(|c| c.is_whitespace()) {
            return Err(RasterError::MalformedHeader(format!("invalid band identifier {s:?}")));
        }
        Ok(match t.to_ascii_lowercase().as_str() {
            "geological" => BandId::Geological,
            "ox" => BandId::Ox,
            "oh" => BandId::Oh,
            "op" => BandId::Op,
            "al" => BandId::Al,
            "mg" => BandId::Mg,
            "fe" => BandId::Fe,
            "qa" => BandId::Qa,
            "si" => BandId::Si,
            "sig_h" | "hydrothermal" => BandId::Hydrothermal,
            "sig_p" | "propylitic" => BandId::Propylitic,
            "sig_s" | "silicification" => BandId::Silicification,
            "mpm" => BandId::Mpm,
            _ => BandId::Other(t.to_string()),
        })
    }
}

impl From<BandId> for String {
    fn from(b: BandId) -> String {
        b.as_str().to_string()
    }
}

impl TryFrom<String> for BandId {
    type Error = RasterError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Geospatial rectangle in kilometres. `y` grows northwards, so raster row 0
/// sits along `y_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Extent {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let e = Extent { x_min, y_min, x_max, y_max };
        e.validate()?;
        Ok(e)
    }

    /// Square extent anchored at the origin.
    pub fn square(side_km: f64) -> Result<Self> {
        Self::new(0.0, 0.0, side_km, side_km)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite());
        if !finite || self.width() <= 0.0 || self.height() <= 0.0 {
            return Err(RasterError::InvalidExtent(format!(
                "{} {} {} {} must have strictly positive width and height",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Raw value range of one band, used for min-max normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRange {
    pub band: BandId,
    pub lo: f64,
    pub hi: f64,
}

impl BandRange {
    pub fn new(band: BandId, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(RasterError::DegenerateRange { lo, hi });
        }
        Ok(BandRange { band, lo, hi })
    }
}

/// Row-major single-band grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    band: BandId,
    width: usize,
    height: usize,
    extent: Extent,
    values: Vec<f64>,
}

impl Raster {
    pub fn new(band: BandId, width: usize, height: usize, extent: Extent, values: Vec<f64>) -> Result<Self> {
        extent.validate()?;
        if width == 0 || height == 0 {
            return Err(RasterError::InvalidExtent(format!("{width}x{height} grid is empty")));
        }
        if width * height != values.len() {
            return Err(RasterError::DimensionMismatch { expected: width * height, found: values.len() });
        }
        Ok(Raster { band, width, height, extent, values })
    }

    pub fn filled(band: BandId, width: usize, height: usize, extent: Extent, value: f64) -> Result<Self> {
        Self::new(band, width, height, extent, vec![value; width * height])
    }

    pub fn band(&self) -> &BandId {
        &self.band
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }

    /// Pixel size (x, y) in kilometres.
    pub fn pixel_size(&self) -> (f64, f64) {
        (self.extent.width() / self.width as f64, self.extent.height() / self.height as f64)
    }

    pub fn with_band(mut self, band: BandId) -> Self {
        self.band = band;
        self
    }

    pub fn same_grid(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.extent == other.extent
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        self.missing_count() as f64 / self.values.len() as f64
    }

    /// Non-missing values.
    pub fn valid(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied().filter(|v| !v.is_nan())
    }

    /// Applies `f` to every non-missing pixel.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        let values = self.values.iter().map(|&v| if v.is_nan() { v } else { f(v) }).collect();
        Raster { values, ..self.clone() }
    }

    /// Copies a `w`×`h` window starting at (`col`, `row`) with the given extent.
    pub(crate) fn window(&self, col: usize, row: usize, w: usize, h: usize, extent: Extent) -> Raster {
        let mut values = Vec::with_capacity(w * h);
        for r in row..row + h {
            let start = r * self.width + col;
            values.extend_from_slice(&self.values[start..start + w]);
        }
        Raster { band: self.band.clone(), width: w, height: h, extent, values }
    }
}

/// `(x - lo) / (hi - lo)` clamped to `[0, 1]`.
pub fn min_max_scalar(x: f64, lo: f64, hi: f64) -> f64 {
    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Piecewise clip-and-scale onto `[0, 1]` with breakpoints `a < b`.
pub fn clipped_norm_scalar(x: f64, a: f64, b: f64) -> f64 {
    if x < a {
        0.0
    } else if x > b {
        1.0
    } else {
        (x - a) / (b - a)
    }
}

/// Min-max normalization against a band's raw value range. Values outside
/// the range are clamped so the result always lies in `[0, 1]`.
pub fn min_max_normalize(r: &Raster, range: &BandRange) -> Result<Raster> {
    if !(range.lo < range.hi) {
        return Err(RasterError::DegenerateRange { lo: range.lo, hi: range.hi });
    }
    Ok(r.map(|x| min_max_scalar(x, range.lo, range.hi)))
}

/// Clip-and-scale normalization with breakpoints `a < b`.
pub fn clipped_norm(r: &Raster, a: f64, b: f64) -> Result<Raster> {
    if !(a < b) {
        return Err(RasterError::DegenerateRange { lo: a, hi: b });
    }
    Ok(r.map(|x| clipped_norm_scalar(x, a, b)))
}
