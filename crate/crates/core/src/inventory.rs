//! Per-road-segment pothole inventory.
//!
//! Each geolocated detection is assigned to the road segment whose
//! centreline passes closest to it, measured in a local metric plane
//! centred on the detection. Detections farther than the cutoff from every
//! segment stay unassigned. A segment's score is
//! `Σ weight[severity] · count[severity] / length_m`.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use thiserror::Error;

use crate::geo::{GeoDetection, METERS_PER_DEGREE};
use crate::SEVERITY_LEVELS;

pub const DEFAULT_SEVERITY_WEIGHTS: [f64; SEVERITY_LEVELS] = [1.0, 2.0, 4.0];
pub const DEFAULT_CUTOFF_M: f64 = 30.0;

#[derive(Debug, Error)]
pub enum InventoryError {
    #[error("segment input: {0}")]
    Segments(String),
    #[error("segment {id}: {detail}")]
    BadSegment { id: String, detail: String },
    #[error("severity weights must be finite and non-negative, got {0:?}")]
    BadWeights([f64; SEVERITY_LEVELS]),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Road centreline as `(lat, lon)` vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    pub points: Vec<(f64, f64)>,
}

/// Planar `(east, north)` metres of `p` relative to `origin`.
fn local_xy(origin: (f64, f64), p: (f64, f64)) -> (f64, f64) {
    let east = (p.1 - origin.1) * METERS_PER_DEGREE * origin.0.to_radians().cos();
    let north = (p.0 - origin.0) * METERS_PER_DEGREE;
    (east, north)
}

fn point_to_piece(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        ((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2
    } else {
        0.0
    };
    // Endpoints are measured directly so pieces sharing a vertex tie exactly.
    if t <= 0.0 {
        return (p.0 - a.0).hypot(p.1 - a.1);
    }
    if t >= 1.0 {
        return (p.0 - b.0).hypot(p.1 - b.1);
    }
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    (p.0 - qx).hypot(p.1 - qy)
}

impl Segment {
    pub fn new(id: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self, InventoryError> {
        let seg = Segment { id: id.into(), points };
        let bad = |detail: &str| InventoryError::BadSegment {
            id: seg.id.clone(),
            detail: detail.to_string(),
        };
        if seg.points.len() < 2 {
            return Err(bad("a centreline needs at least two vertices"));
        }
        if seg.points.iter().any(|&(lat, lon)| !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon)) {
            return Err(bad("vertex outside the coordinate range"));
        }
        if !(seg.length_m() > 0.0) {
            return Err(bad("centreline has zero length"));
        }
        Ok(seg)
    }

    /// Sum of piece lengths, each measured in a plane centred on its start.
    pub fn length_m(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                let (x, y) = local_xy(w[0], w[1]);
                (x * x + y * y).sqrt()
            })
            .sum()
    }

    /// Shortest distance in metres from `(lat, lon)` to the centreline.
    pub fn distance_m(&self, p: (f64, f64)) -> f64 {
        self.points
            .windows(2)
            .map(|w| point_to_piece((0.0, 0.0), local_xy(p, w[0]), local_xy(p, w[1])))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Index of the segment nearest to `p` within `cutoff_m`, ties to the
/// smaller id.
pub fn nearest_segment(segments: &[Segment], p: (f64, f64), cutoff_m: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, seg) in segments.iter().enumerate() {
        let d = seg.distance_m(p);
        let better = match best {
            None => true,
            Some((bd, bi)) => d < bd || (d == bd && seg.id < segments[bi].id),
        };
        if better {
            best = Some((d, i));
        }
    }
    best.filter(|&(d, _)| d <= cutoff_m).map(|(_, i)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReport {
    pub segment: Segment,
    pub counts: [usize; SEVERITY_LEVELS],
    pub length_m: f64,
    pub per_100m: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inventory {
    /// Sorted by score, highest first; equal scores by id.
    pub reports: Vec<SegmentReport>,
    /// Segment id per detection, in input order.
    pub assignment: Vec<Option<String>>,
    pub unassigned: usize,
}

pub fn aggregate_segments(
    dets: &[GeoDetection],
    segments: &[Segment],
    weights: [f64; SEVERITY_LEVELS],
    cutoff_m: f64,
) -> Result<Inventory, InventoryError> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(InventoryError::BadWeights(weights));
    }
    let mut counts = vec![[0usize; SEVERITY_LEVELS]; segments.len()];
    let mut assignment = Vec::with_capacity(dets.len());
    let mut unassigned = 0;
    for det in dets {
        match nearest_segment(segments, (det.lat, det.lon), cutoff_m) {
            Some(i) => {
                if let Some(slot) = counts[i].get_mut(det.detection.category) {
                    *slot += 1;
                }
                assignment.push(Some(segments[i].id.clone()));
            }
            None => {
                unassigned += 1;
                assignment.push(None);
            }
        }
    }
    let mut reports: Vec<SegmentReport> = segments
        .iter()
        .zip(counts)
        .map(|(seg, counts)| {
            let length_m = seg.length_m();
            let total: usize = counts.iter().sum();
            let weighted: f64 = counts.iter().zip(&weights).map(|(&c, w)| c as f64 * w).sum();
            SegmentReport {
                segment: seg.clone(),
                counts,
                length_m,
                per_100m: total as f64 * 100.0 / length_m,
                score: weighted / length_m,
            }
        })
        .collect();
    reports.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.segment.id.cmp(&b.segment.id)));
    Ok(Inventory {
        reports,
        assignment,
        unassigned,
    })
}

fn coord_pair(v: &Value) -> Option<(f64, f64)> {
    let arr = v.as_array()?;
    if arr.len() < 2 {
        return None;
    }
    // GeoJSON order is longitude, latitude.
    Some((arr[1].as_f64()?, arr[0].as_f64()?))
}

/// Reads LineString features carrying an `id` property (string or number).
pub fn parse_segments(text: &str) -> Result<Vec<Segment>, InventoryError> {
    let root: Value = serde_json::from_str(text).map_err(|e| InventoryError::Segments(e.to_string()))?;
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| InventoryError::Segments("expected a FeatureCollection".into()))?;
    let mut segments = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let geometry = &f["geometry"];
        if geometry["type"] != "LineString" {
            continue;
        }
        let id = match f["properties"].get("id").or_else(|| f.get("id")) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(InventoryError::Segments(format!("feature {i} has no id"))),
        };
        let points = geometry["coordinates"]
            .as_array()
            .ok_or_else(|| InventoryError::BadSegment {
                id: id.clone(),
                detail: "missing coordinates".into(),
            })?
            .iter()
            .map(coord_pair)
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| InventoryError::BadSegment {
                id: id.clone(),
                detail: "malformed coordinate".into(),
            })?;
        segments.push(Segment::new(id, points)?);
    }
    Ok(segments)
}

fn line_coords(seg: &Segment) -> Value {
    Value::Array(seg.points.iter().map(|&(lat, lon)| json!([lon, lat])).collect())
}

pub fn segments_geojson(segments: &[Segment]) -> String {
    let features: Vec<Value> = segments
        .iter()
        .map(|s| {
            json!({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": line_coords(s)},
                "properties": {"id": s.id},
            })
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&json!({"type": "FeatureCollection", "features": features}))
        .expect("JSON values serialize");
    text.push('\n');
    text
}

/// FeatureCollection of segment LineStrings (in report order) followed by
/// detection Points (in input order). Object keys are sorted.
pub fn report_geojson(inventory: &Inventory, dets: &[GeoDetection]) -> String {
    let mut features: Vec<Value> = inventory
        .reports
        .iter()
        .map(|r| {
            json!({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": line_coords(&r.segment)},
                "properties": {
                    "id": r.segment.id,
                    "counts": {"low": r.counts[0], "middle": r.counts[1], "high": r.counts[2]},
                    "length_m": r.length_m,
                    "per_100m": r.per_100m,
                    "score": r.score,
                },
            })
        })
        .collect();
    for (det, seg) in dets.iter().zip(&inventory.assignment) {
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [det.lon, det.lat]},
            "properties": {
                "image": det.image,
                "severity": det.detection.category,
                "confidence": det.detection.confidence,
                "ground_size_m": [det.ground_size_m.0, det.ground_size_m.1],
                "segment": seg,
            },
        }));
    }
    let mut text = serde_json::to_string_pretty(&json!({
        "type": "FeatureCollection",
        "features": features,
        "unassigned": inventory.unassigned,
    }))
    .expect("JSON values serialize");
    text.push('\n');
    text
}

/// `segment_id,low,middle,high,per_100m,score`, one row per report.
pub fn report_csv(inventory: &Inventory) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["segment_id", "low", "middle", "high", "per_100m", "score"])
        .expect("in-memory CSV");
    for r in &inventory.reports {
        w.write_record([
            r.segment.id.clone(),
            r.counts[0].to_string(),
            r.counts[1].to_string(),
            r.counts[2].to_string(),
            r.per_100m.to_string(),
            r.score.to_string(),
        ])
        .expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8 input")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    GeoJson,
    Csv,
}

impl ReportFormat {
    /// CSV for a `.csv` extension, GeoJSON otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::GeoJson,
        }
    }
}

pub fn export_report(
    inventory: &Inventory,
    dets: &[GeoDetection],
    format: ReportFormat,
    path: &Path,
) -> Result<(), InventoryError> {
    let text = match format {
        ReportFormat::GeoJson => report_geojson(inventory, dets),
        ReportFormat::Csv => report_csv(inventory),
    };
    fs::write(path, text).map_err(|source| InventoryError::Io {
        path: path.display().to_string(),
        source,
    })
}
