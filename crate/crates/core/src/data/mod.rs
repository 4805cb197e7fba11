//! Annotated imagery: label files, dataset directories, rotation
//! augmentation and the procedural road-scene generator.

mod augment;
mod labels;
mod loader;
mod synth;

pub use augment::{augment_with_rotations, rotate_augment};
pub use labels::{parse_label_file, serialize_labels, LabelError};
pub use loader::{
    encode_png, load_dataset, load_image_dir, parse_geotags, write_dataset, LoadedDataset,
};
pub use synth::{generate_synthetic_scene, SyntheticSceneSpec};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Label { path: PathBuf, source: LabelError },
    #[error("{path}: {detail}")]
    Image { path: PathBuf, detail: String },
    #[error("{path}: geotag row {row}: {detail}")]
    Geotag {
        path: PathBuf,
        row: usize,
        detail: String,
    },
    #[error("no readable images under {0}")]
    EmptyDataset(PathBuf),
    #[error("invalid synthetic scene spec: {0}")]
    InvalidSpec(String),
    #[error("could not place pothole {placed} of {requested} without overlap after {attempts} attempts")]
    Placement {
        placed: usize,
        requested: usize,
        attempts: usize,
    },
}

/// One annotated object: severity (0 low, 1 middle, 2 high) and its box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub category: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Camera position when the image was taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geotag {
    pub lat: f64,
    pub lon: f64,
    pub alt_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    /// `[3, N, N]`, values in `[0, 1]`.
    pub pixels: Tensor,
    pub labels: Vec<LabelRecord>,
    pub geotag: Option<Geotag>,
    pub source_id: String,
}

impl AnnotatedImage {
    pub fn side(&self) -> usize {
        self.pixels.shape()[1]
    }

    /// Labels as `(box, category)` pairs for target encoding.
    pub fn ground_truth(&self) -> Vec<(BBox, usize)> {
        self.labels.iter().map(|l| (l.bbox, l.category)).collect()
    }
}
