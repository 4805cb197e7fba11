//! Pothole detection and road-deterioration inventory from nadir aerial
//! imagery.
//!
//! A small convolutional backbone feeds a single-pass grid detection head
//! (`S × S` cells, `B` boxes per cell, one severity distribution per cell).
//! Detections are geolocated from the image geotag and aggregated into
//! per-road-segment maintenance reports.

pub mod checkpoint;
pub mod data;
pub mod detections;
pub mod eval;
pub mod geo;
pub mod geometry;
pub mod inventory;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

#[doc(hidden)]
pub mod cli;

/// Severity levels: 0 low, 1 middle, 2 high.
pub const SEVERITY_LEVELS: usize = 3;
