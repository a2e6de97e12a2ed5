//! `<name>.band` + `<name>.hdr` raster files.
//!
//! The payload is row-major 32-bit little-endian floats. The header is plain
//! text, one `key = value` per line:
//!
//! ```text
//! width = 48
//! height = 48
//! band = ox
//! extent_km = 0 0 12 12
//! nodata = -9999
//! ```
//!
//! `extent_km` lists `x_min y_min x_max y_max`. Blank lines and lines starting
//! with `#` are ignored. Any `NaN` or `nodata` payload value loads as missing.

use std::path::{Path, PathBuf};

use super::{BandId, Extent, Raster, RasterError, Result};
use crate::fsutil::{with_suffix, write_atomic};

pub const DEFAULT_NODATA: f32 = -9999.0;

/// Strips a trailing `.hdr` or `.band` so either file (or the bare stem) can
/// name a raster.
fn stem_of(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("hdr") | Some("band") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io { path: path.display().to_string(), source }
}

struct Header {
    width: usize,
    height: usize,
    band: BandId,
    extent: Extent,
    nodata: f32,
}

fn parse_header(text: &str) -> Result<Header> {
    let mut width = None;
    let mut height = None;
    let mut band = None;
    let mut extent = None;
    let mut nodata = DEFAULT_NODATA;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| RasterError::MalformedHeader(format!("line {}: expected `key = value`", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| RasterError::MalformedHeader(format!("line {}: invalid {what} {value:?}", lineno + 1));
        match key {
            "width" => width = Some(value.parse::<usize>().map_err(|_| bad("width"))?),
            "height" => height = Some(value.parse::<usize>().map_err(|_| bad("height"))?),
            "band" => band = Some(value.parse::<BandId>()?),
            "extent_km" => {
                let parts: Vec<f64> = value
                    .split_whitespace()
                    .map(|p| p.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("extent_km"))?;
                if parts.len() != 4 {
                    return Err(bad("extent_km"));
                }
                extent = Some(Extent::new(parts[0], parts[1], parts[2], parts[3])?);
            }
            "nodata" => nodata = value.parse::<f32>().map_err(|_| bad("nodata"))?,
            "dtype" => {
                if value != "float32_le" {
                    return Err(bad("dtype"));
                }
            }
            other => return Err(RasterError::MalformedHeader(format!("line {}: unknown key {other:?}", lineno + 1))),
        }
    }
    let missing = |k: &str| RasterError::MalformedHeader(format!("missing `{k}`"));
    Ok(Header {
        width: width.ok_or_else(|| missing("width"))?,
        height: height.ok_or_else(|| missing("height"))?,
        band: band.ok_or_else(|| missing("band"))?,
        extent: extent.ok_or_else(|| missing("extent_km"))?,
        nodata,
    })
}

/// Loads a raster given its stem or either of its two files.
pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let stem = stem_of(path.as_ref());
    let hdr_path = with_suffix(&stem, "hdr");
    let band_path = with_suffix(&stem, "band");
    let text = std::fs::read_to_string(&hdr_path).map_err(io_err(&hdr_path))?;
    let header = parse_header(&text)?;
    let bytes = std::fs::read(&band_path).map_err(io_err(&band_path))?;
    if bytes.len() % 4 != 0 {
        return Err(RasterError::MalformedHeader(format!(
            "{}: payload length {} is not a multiple of 4",
            band_path.display(),
            bytes.len()
        )));
    }
    let expected = header.width * header.height;
    let found = bytes.len() / 4;
    if expected != found {
        return Err(RasterError::DimensionMismatch { expected, found });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if v.is_nan() || v == header.nodata {
                f64::NAN
            } else {
                f64::from(v)
            }
        })
        .collect();
    Raster::new(header.band, header.width, header.height, header.extent, values)
}

/// Writes `<stem>.band` and `<stem>.hdr`. Values are narrowed to `f32`;
/// missing pixels are written as [`DEFAULT_NODATA`]. Both files are written
/// atomically.
pub fn store_raster(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let stem = stem_of(path.as_ref());
    let hdr_path = with_suffix(&stem, "hdr");
    let band_path = with_suffix(&stem, "band");
    let mut payload = Vec::with_capacity(r.values().len() * 4);
    for &v in r.values() {
        let f = if v.is_nan() { DEFAULT_NODATA } else { v as f32 };
        payload.extend_from_slice(&f.to_le_bytes());
    }
    let e = r.extent();
    let header = format!(
        "width = {}\nheight = {}\nband = {}\nextent_km = {} {} {} {}\nnodata = {}\ndtype = float32_le\n",
        r.width(),
        r.height(),
        r.band(),
        e.x_min,
        e.y_min,
        e.x_max,
        e.y_max,
        DEFAULT_NODATA
    );
    write_atomic(&band_path, &payload).map_err(io_err(&band_path))?;
    write_atomic(&hdr_path, header.as_bytes()).map_err(io_err(&hdr_path))?;
    Ok(())
}

/// True when both files of the raster exist.
pub(crate) fn raster_exists(path: &Path) -> bool {
    let stem = stem_of(path);
    with_suffix(&stem, "hdr").is_file() && with_suffix(&stem, "band").is_file()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Raster {
        let values: Vec<f64> = (0..16).map(|i| f64::from(i as f32 * 0.37 - 1.5)).collect();
        Raster::new(BandId::Fe, 4, 4, Extent::new(3.0, 4.0, 15.0, 16.0).unwrap(), values).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample();
        store_raster(&r, dir.path().join("fe")).unwrap();
        let back = load_raster(dir.path().join("fe.hdr")).unwrap();
        assert_eq!(back.band(), r.band());
        assert_eq!(back.extent(), r.extent());
        for (a, b) in r.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn missing_sentinel_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = sample();
        r.set(1, 0, f64::NAN);
        r.set(3, 2, f64::NAN);
        store_raster(&r, dir.path().join("fe")).unwrap();
        let back = load_raster(dir.path().join("fe.band")).unwrap();
        let missing: Vec<usize> = back.values().iter().enumerate().filter(|(_, v)| v.is_nan()).map(|(i, _)| i).collect();
        assert_eq!(missing, vec![1, 11]);
    }

    #[test]
    fn short_payload_is_a_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        store_raster(&sample(), dir.path().join("fe")).unwrap();
        let band = dir.path().join("fe.band");
        let bytes = std::fs::read(&band).unwrap();
        std::fs::write(&band, &bytes[..15 * 4]).unwrap();
        assert!(matches!(load_raster(dir.path().join("fe")), Err(RasterError::DimensionMismatch { expected: 16, found: 15 })));
    }

    #[test]
    fn malformed_headers_are_rejected() {
        assert!(parse_header("width = 4\nheight = four\nband = ox\nextent_km = 0 0 1 1\n").is_err());
        assert!(parse_header("width = 4\nheight = 4\nextent_km = 0 0 1 1\n").is_err());
        assert!(parse_header("width 4\n").is_err());
        assert!(parse_header("width = 4\nheight = 4\nband = ox\nextent_km = 0 0 1\n").is_err());
        let h = parse_header("# comment\nwidth = 2\nheight = 3\nband = mpm\nextent_km = 0 0 1 1\nnodata = -1\n").unwrap();
        assert_eq!((h.width, h.height, h.band, h.nodata), (2, 3, BandId::Mpm, -1.0));
    }

    #[test]
    fn unreadable_payload_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_raster(dir.path().join("nope")), Err(RasterError::Io { .. })));
    }
}
