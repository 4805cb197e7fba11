//! Box algebra for the grid detector: IOU, target encoding, prediction
//! decoding and non-maximum suppression.
//!
//! Output layout: cells are stored row-major (`row * S + col`). Each cell
//! holds `B` box records `[x, y, w, h, c]` followed by `C` category values,
//! for `5B + C` values per cell and `S²(5B + C)` overall. `x, y` are offsets
//! of the box centre inside its cell; `w, h` are fractions of the image.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box ({cx}, {cy}, {w}, {h}): {reason}")]
    InvalidBox {
        cx: f64,
        cy: f64,
        w: f64,
        h: f64,
        reason: &'static str,
    },
    #[error("grid needs S, B, C ≥ 1, got S={s} B={b} C={c}")]
    InvalidGrid { s: usize, b: usize, c: usize },
    #[error("prediction length {got} does not match grid layout {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("category {category} outside [0, {classes})")]
    InvalidCategory { category: usize, classes: usize },
}

/// Axis-aligned box in image-fraction units, centre plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Validated constructor: centre inside the image, extents in (0, 1].
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let b = BBox { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let &BBox { cx, cy, w, h } = self;
        let fail = |reason| {
            Err(GeometryError::InvalidBox {
                cx,
                cy,
                w,
                h,
                reason,
            })
        };
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return fail("non-finite field");
        }
        if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
            return fail("centre outside [0,1]");
        }
        if !(w > 0.0 && w <= 1.0 && h > 0.0 && h <= 1.0) {
            return fail("extent outside (0,1]");
        }
        if self.clipped().area() <= 0.0 {
            return fail("zero area inside the image");
        }
        Ok(())
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox {
            cx: 0.5 * (x1 + x2),
            cy: 0.5 * (y1 + y2),
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    /// `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        )
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Intersection with the unit square.
    pub fn clipped(&self) -> BBox {
        let (x1, y1, x2, y2) = self.corners();
        let (x1, y1) = (x1.clamp(0.0, 1.0), y1.clamp(0.0, 1.0));
        let (x2, y2) = (x2.clamp(0.0, 1.0), y2.clamp(0.0, 1.0));
        BBox::from_corners(x1, y1, x2.max(x1), y2.max(y1))
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let ix = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let iy = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    // Areas from the same corners as the intersection, so identical boxes give exactly 1.
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Detector head shape: `S×S` cells, `B` boxes per cell, `C` categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub s: usize,
    pub b: usize,
    pub c: usize,
}

impl GridSpec {
    pub fn new(s: usize, b: usize, c: usize) -> Result<Self, GeometryError> {
        if s == 0 || b == 0 || c == 0 {
            return Err(GeometryError::InvalidGrid { s, b, c });
        }
        Ok(GridSpec { s, b, c })
    }

    pub fn cells(&self) -> usize {
        self.s * self.s
    }

    /// Values per cell, `5B + C`.
    pub fn cell_len(&self) -> usize {
        5 * self.b + self.c
    }

    /// `S²(5B + C)`.
    pub fn output_len(&self) -> usize {
        self.cells() * self.cell_len()
    }

    /// Offset of box `slot` inside the flat output for `cell`.
    pub fn box_offset(&self, cell: usize, slot: usize) -> usize {
        cell * self.cell_len() + 5 * slot
    }

    pub fn category_offset(&self, cell: usize) -> usize {
        cell * self.cell_len() + 5 * self.b
    }

    /// `(row, col)` of the cell containing an image-fraction point.
    pub fn cell_of(&self, cx: f64, cy: f64) -> (usize, usize) {
        let s = self.s as f64;
        let col = ((cx * s).floor().max(0.0) as usize).min(self.s - 1);
        let row = ((cy * s).floor().max(0.0) as usize).min(self.s - 1);
        (row, col)
    }

    /// Absolute box for cell-relative prediction fields.
    pub fn absolute_box(&self, cell: usize, x: f64, y: f64, w: f64, h: f64) -> BBox {
        let (row, col) = (cell / self.s, cell % self.s);
        let s = self.s as f64;
        BBox {
            cx: (col as f64 + x) / s,
            cy: (row as f64 + y) / s,
            w,
            h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub confidence: f64,
    pub category: usize,
    pub category_probs: Vec<f64>,
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTargets {
    pub values: Vec<f64>,
    /// Objects that landed in an occupied cell and lost to a larger box.
    pub collisions: usize,
    pub assigned: usize,
}

/// Total order deciding which of two objects keeps a shared cell: larger
/// area first, then the remaining fields so the result never depends on
/// annotation order.
fn collision_rank(a: &(BBox, usize), b: &(BBox, usize)) -> Ordering {
    a.0.area()
        .total_cmp(&b.0.area())
        .then(b.0.cx.total_cmp(&a.0.cx))
        .then(b.0.cy.total_cmp(&a.0.cy))
        .then(b.0.w.total_cmp(&a.0.w))
        .then(b.0.h.total_cmp(&a.0.h))
        .then(b.1.cmp(&a.1))
}

/// Offset of `centre` inside cell `index`, nudged by a few ulps when needed
/// so that `(index + offset) / s` reproduces `centre` exactly.
fn cell_offset(centre: f64, index: usize, s: f64) -> f64 {
    let base = centre * s - index as f64;
    let decodes = |off: f64| (index as f64 + off) / s == centre;
    if decodes(base) {
        return base;
    }
    let (mut up, mut down) = (base, base);
    for _ in 0..8 {
        up = up.next_up();
        down = down.next_down();
        if decodes(up) {
            return up;
        }
        if decodes(down) {
            return down;
        }
    }
    base
}

/// Builds the training target for a set of ground-truth boxes.
///
/// Only box slot 0 of an occupied cell is filled (`x, y, w, h, 1`), plus the
/// one-hot category; every other value is zero.
pub fn encode_targets(
    gts: &[(BBox, usize)],
    grid: GridSpec,
) -> Result<EncodedTargets, GeometryError> {
    let mut owners: Vec<Option<(BBox, usize)>> = vec![None; grid.cells()];
    let mut collisions = 0;
    for &(bbox, category) in gts {
        bbox.validate()?;
        if category >= grid.c {
            return Err(GeometryError::InvalidCategory {
                category,
                classes: grid.c,
            });
        }
        let (row, col) = grid.cell_of(bbox.cx, bbox.cy);
        let slot = &mut owners[row * grid.s + col];
        match slot {
            None => *slot = Some((bbox, category)),
            Some(current) => {
                collisions += 1;
                if collision_rank(&(bbox, category), current) == Ordering::Greater {
                    *current = (bbox, category);
                }
            }
        }
    }

    let mut values = vec![0.0; grid.output_len()];
    let mut assigned = 0;
    let s = grid.s as f64;
    for (cell, owner) in owners.iter().enumerate() {
        let Some((bbox, category)) = owner else {
            continue;
        };
        assigned += 1;
        let (row, col) = (cell / grid.s, cell % grid.s);
        let o = grid.box_offset(cell, 0);
        values[o] = cell_offset(bbox.cx, col, s);
        values[o + 1] = cell_offset(bbox.cy, row, s);
        values[o + 2] = bbox.w;
        values[o + 3] = bbox.h;
        values[o + 4] = 1.0;
        values[grid.category_offset(cell) + category] = 1.0;
    }
    Ok(EncodedTargets {
        values,
        collisions,
        assigned,
    })
}

/// Turns a flat head output into detections above `conf_threshold`.
pub fn decode_predictions(
    output: &[f64],
    grid: GridSpec,
    conf_threshold: f64,
) -> Result<Vec<Detection>, GeometryError> {
    if output.len() != grid.output_len() {
        return Err(GeometryError::LengthMismatch {
            expected: grid.output_len(),
            got: output.len(),
        });
    }
    let mut dets = Vec::new();
    for cell in 0..grid.cells() {
        let co = grid.category_offset(cell);
        let probs = &output[co..co + grid.c];
        for slot in 0..grid.b {
            let o = grid.box_offset(cell, slot);
            let confidence = output[o + 4];
            if confidence < conf_threshold {
                continue;
            }
            let bbox = grid.absolute_box(cell, output[o], output[o + 1], output[o + 2], output[o + 3]);
            let (x1, y1, x2, y2) = bbox.corners();
            let bbox = if x1 < 0.0 || y1 < 0.0 || x2 > 1.0 || y2 > 1.0 {
                bbox.clipped()
            } else {
                bbox
            };
            if bbox.area() <= 0.0 {
                continue;
            }
            dets.push(Detection {
                bbox,
                confidence,
                category: argmax(probs),
                category_probs: probs.to_vec(),
            });
        }
    }
    Ok(dets)
}

/// Greedy per-category suppression. Survivors come back sorted by
/// confidence, highest first; equal confidences keep input order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));

    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept.iter().any(|&k| {
            dets[k].category == dets[i].category && iou(&dets[k].bbox, &dets[i].bbox) >= iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}
