//! Colour-coded overlays on a grayscale geological base, written as 8-bit
//! RGBA PNG.
//!
//! The rainbow colormap is a fixed piecewise-linear table so renders are
//! byte-identical across platforms:
//!
//! | v    | colour              |
//! |------|---------------------|
//! | 0.00 | blue   (0, 0, 255)  |
//! | 0.25 | cyan   (0, 255, 255)|
//! | 0.50 | green  (0, 255, 0)  |
//! | 0.75 | yellow (255, 255, 0)|
//! | 1.00 | red    (255, 0, 0)  |
//!
//! An exact zero maps to a fully transparent pixel.

use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::write_atomic;
use crate::raster::Raster;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("base is {0}x{1} but overlay is {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("PNG encoding failed: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = RenderError> = std::result::Result<T, E>;

pub type Rgba = [u8; 4];

/// Rainbow control points, cool to warm.
pub const RAINBOW_STOPS: [(f64, [u8; 3]); 5] =
    [(0.0, [0, 0, 255]), (0.25, [0, 255, 255]), (0.5, [0, 255, 0]), (0.75, [255, 255, 0]), (1.0, [255, 0, 0])];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    Rainbow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub colormap: Colormap,
    /// Overlay opacity in (0, 1].
    pub opacity: f64,
    /// Integer upscaling factor (nearest neighbour).
    pub scale: u32,
    /// Appends a colourbar strip below the image.
    pub colorbar: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { colormap: Colormap::Rainbow, opacity: 1.0, scale: 1, colorbar: false }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(RenderError::InvalidConfig(format!("opacity {} must lie in (0, 1]", self.opacity)));
        }
        if self.scale == 0 {
            return Err(RenderError::InvalidConfig("scale must be at least 1".into()));
        }
        Ok(())
    }
}

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    (f64::from(a) + (f64::from(b) - f64::from(a)) * t).round() as u8
}

/// Opaque rainbow colour for `v` in `[0, 1]`, ignoring the zero rule.
fn rainbow_rgb(v: f64) -> [u8; 3] {
    for pair in RAINBOW_STOPS.windows(2) {
        let (v0, c0) = pair[0];
        let (v1, c1) = pair[1];
        if v <= v1 {
            let t = (v - v0) / (v1 - v0);
            return [lerp(c0[0], c1[0], t), lerp(c0[1], c1[1], t), lerp(c0[2], c1[2], t)];
        }
    }
    RAINBOW_STOPS[RAINBOW_STOPS.len() - 1].1
}

pub fn colormap_rainbow(v: f64) -> Result<Rgba> {
    if !(0.0..=1.0).contains(&v) {
        return Err(RenderError::OutOfRange(v));
    }
    if v == 0.0 {
        return Ok([0, 0, 0, 0]);
    }
    let [r, g, b] = rainbow_rgb(v);
    Ok([r, g, b, 255])
}

/// Hue in degrees of an RGB triple (0 = red, 240 = blue).
pub fn hue(rgb: [u8; 3]) -> f64 {
    let [r, g, b] = rgb.map(|c| f64::from(c) / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    h * 60.0
}

/// Plain RGBA pixel buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image { width, height, pixels: vec![0; width * height * 4] }
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgba {
        let i = (y * self.width + x) * 4;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2], self.pixels[i + 3]]
    }

    pub fn put(&mut self, x: usize, y: usize, c: Rgba) {
        let i = (y * self.width + x) * 4;
        self.pixels[i..i + 4].copy_from_slice(&c);
    }

    pub fn upscale(&self, factor: usize) -> Image {
        if factor <= 1 {
            return self.clone();
        }
        let mut out = Image::new(self.width * factor, self.height * factor);
        for y in 0..out.height {
            for x in 0..out.width {
                out.put(x, y, self.pixel(x / factor, y / factor));
            }
        }
        out
    }

    /// Stacks `other` underneath; both must be equally wide.
    pub fn stack(&self, other: &Image) -> Image {
        debug_assert_eq!(self.width, other.width);
        let mut pixels = self.pixels.clone();
        pixels.extend_from_slice(&other.pixels);
        Image { width: self.width, height: self.height + other.height, pixels }
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(BufWriter::new(&mut buf), self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header()?;
            writer.write_image_data(&self.pixels)?;
        }
        Ok(buf)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png()?;
        write_atomic(path, &bytes).map_err(|source| RenderError::Io { path: path.display().to_string(), source })
    }
}

fn gray(v: f64) -> Rgba {
    if v.is_nan() {
        return [0, 0, 0, 255];
    }
    let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [g, g, g, 255]
}

/// Grayscale rendering of a base raster whose values lie in `[0, 1]`.
pub fn render_base(base: &Raster) -> Image {
    let mut img = Image::new(base.width(), base.height());
    for y in 0..base.height() {
        for x in 0..base.width() {
            img.put(x, y, gray(base.get(x, y)));
        }
    }
    img
}

fn blend(under: Rgba, over: [u8; 3], alpha: f64) -> Rgba {
    let mix = |u: u8, o: u8| (f64::from(u) * (1.0 - alpha) + f64::from(o) * alpha).round() as u8;
    [mix(under[0], over[0]), mix(under[1], over[1]), mix(under[2], over[2]), 255]
}

/// Grayscale `base` with `overlay` (values in `[0, 1]`) alpha-composited on
/// top. Zero and missing overlay pixels leave the base untouched.
pub fn render_overlay(base: &Raster, overlay: &Raster, cfg: &RenderConfig) -> Result<Image> {
    cfg.validate()?;
    if base.width() != overlay.width() || base.height() != overlay.height() {
        return Err(RenderError::DimensionMismatch(base.width(), base.height(), overlay.width(), overlay.height()));
    }
    let mut img = render_base(base);
    for y in 0..overlay.height() {
        for x in 0..overlay.width() {
            let v = overlay.get(x, y);
            if v.is_nan() {
                continue;
            }
            let c = colormap_rainbow(v)?;
            if c[3] == 0 {
                continue;
            }
            let under = img.pixel(x, y);
            img.put(x, y, blend(under, [c[0], c[1], c[2]], cfg.opacity));
        }
    }
    let mut img = img.upscale(cfg.scale as usize);
    if cfg.colorbar {
        let strip = colorbar(img.width, (img.height / 16).max(4));
        img = img.stack(&strip);
    }
    Ok(img)
}

/// Horizontal strip running the colormap from 0 (left) to 1 (right).
pub fn colorbar(width: usize, height: usize) -> Image {
    let mut img = Image::new(width, height);
    for x in 0..width {
        let v = if width > 1 { x as f64 / (width - 1) as f64 } else { 1.0 };
        let [r, g, b] = rainbow_rgb(v);
        for y in 0..height {
            img.put(x, y, [r, g, b, 255]);
        }
    }
    img
}
