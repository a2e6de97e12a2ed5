//! Mineral-prospectivity toolkit.
//!
//! Turns multi-band remote-sensing rasters into deposit signatures and
//! prospectivity maps, runs a hierarchy of judging tools over a pluggable
//! multimodal-model backend, fuses their assessments into a deposit-presence
//! decision and scores the resulting predictions.
//!
//! Module map:
//!
//! * [`raster`] raster grids, band-range normalization, tiling and quality rules
//! * [`signature`] weighted band combinations and the prospectivity map
//! * [`render`] colormapped overlays written as PNG
//! * [`dataset`] manifests, imbalanced sampling, settings and a synthetic generator
//! * [`agent`] assessment protocol, tool graph, backends and orchestration
//! * [`decision`] weighted fusion, weighting strategies and weight fitting
//! * [`evaluate`] classification metrics, agreement statistics and reports
//! * [`cli`] the `prospect` command-line surface

// Negated float comparisons are used on purpose: `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
#[cfg(feature = "cli")]
pub mod cli;
pub mod dataset;
pub mod decision;
pub mod evaluate;
pub mod raster;
pub mod render;
pub mod signature;

pub(crate) mod fsutil;
