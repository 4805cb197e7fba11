//! `dets.json`: the detections interchange file written by `infer` and read
//! by `report`. See `docs/dets-json.md` for the schema.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Detection};

pub const DETECTIONS_FORMAT: &str = "rdiv-detections";
pub const DETECTIONS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DetectionsError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {detail}")]
    Parse { path: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    /// File stem of the source image.
    pub image: String,
    pub category: usize,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl DetectionRecord {
    pub fn new(image: &str, det: &Detection) -> Self {
        DetectionRecord {
            image: image.to_string(),
            category: det.category,
            confidence: det.confidence,
            bbox: det.bbox,
        }
    }

    /// Detection without category probabilities (not part of the file).
    pub fn detection(&self) -> Detection {
        Detection {
            bbox: self.bbox,
            confidence: self.confidence,
            category: self.category,
            category_probs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsFile {
    pub format: String,
    pub version: u32,
    pub conf_threshold: f64,
    pub nms_threshold: f64,
    /// Every image that was processed, including those without detections.
    pub images: Vec<String>,
    pub detections: Vec<DetectionRecord>,
}

impl DetectionsFile {
    pub fn new(conf_threshold: f64, nms_threshold: f64) -> Self {
        DetectionsFile {
            format: DETECTIONS_FORMAT.to_string(),
            version: DETECTIONS_VERSION,
            conf_threshold,
            nms_threshold,
            images: Vec::new(),
            detections: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("detections serialize");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, DetectionsError> {
        let parse_err = |detail: String| DetectionsError::Parse {
            path: path.display().to_string(),
            detail,
        };
        let file: DetectionsFile = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        if file.format != DETECTIONS_FORMAT {
            return Err(parse_err(format!("format {:?} is not {DETECTIONS_FORMAT:?}", file.format)));
        }
        if file.version != DETECTIONS_VERSION {
            return Err(parse_err(format!("unsupported version {}", file.version)));
        }
        for (i, d) in file.detections.iter().enumerate() {
            if d.category >= crate::SEVERITY_LEVELS || !(0.0..=1.0).contains(&d.confidence) {
                return Err(parse_err(format!("detection {i}: category or confidence out of range")));
            }
            d.bbox
                .validate()
                .map_err(|e| parse_err(format!("detection {i}: {e}")))?;
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), DetectionsError> {
        fs::write(path, self.to_json()).map_err(|source| DetectionsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DetectionsError> {
        let text = fs::read_to_string(path).map_err(|source| DetectionsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, path)
    }
}
