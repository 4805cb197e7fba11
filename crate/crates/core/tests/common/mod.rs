//! Shared generators and reference implementations for integration tests.
#![allow(dead_code)]

use proptest::prelude::*;
use rdiv::geo::METERS_PER_DEGREE;
use rdiv::geometry::{iou, BBox, Detection};
use rdiv::inventory::Segment;

/// Boxes whose centre lies in the image and whose extent stays inside it.
pub fn arb_box() -> impl Strategy<Value = BBox> {
    (0.02f64..0.5, 0.02f64..0.5)
        .prop_flat_map(|(w, h)| (w / 2.0..=1.0 - w / 2.0, h / 2.0..=1.0 - h / 2.0, Just(w), Just(h)))
        .prop_map(|(cx, cy, w, h)| BBox { cx, cy, w, h })
}

/// IOU on an `n × n` raster where each pixel contributes the fraction of
/// its area the box covers. Coverage is a product of per-axis fractions.
pub fn coverage_raster_iou(a: &BBox, b: &BBox, n: usize) -> f64 {
    let fractions = |lo: f64, hi: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let (p0, p1) = (i as f64 / n as f64, (i + 1) as f64 / n as f64);
                ((hi.min(p1) - lo.max(p0)) * n as f64).max(0.0)
            })
            .collect()
    };
    let span = |c: f64, e: f64| (c - e / 2.0, c + e / 2.0);
    let (ax, ay, bx, by) = (span(a.cx, a.w), span(a.cy, a.h), span(b.cx, b.w), span(b.cy, b.h));
    let sum = |lo: f64, hi: f64| fractions(lo, hi).iter().sum::<f64>();
    let area_a = sum(ax.0, ax.1) * sum(ay.0, ay.1);
    let area_b = sum(bx.0, bx.1) * sum(by.0, by.1);
    let inter = sum(ax.0.max(bx.0), ax.1.min(bx.1)) * sum(ay.0.max(by.0), ay.1.min(by.1));
    let union = area_a + area_b - inter;
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Ground truths with distinct owning cells on an `s × s` grid.
pub fn one_per_cell_boxes(s: usize) -> impl Strategy<Value = Vec<(BBox, usize)>> {
    prop::collection::btree_set(0..s * s, 0..=6).prop_flat_map(move |cells| {
        cells
            .into_iter()
            .map(|cell| {
                let (row, col) = ((cell / s) as f64, (cell % s) as f64);
                let sf = s as f64;
                (0.001f64..0.999, 0.001f64..0.999, 0.02f64..0.4, 0.02f64..0.4, 0usize..3).prop_map(
                    move |(ox, oy, w, h, cat)| {
                        let cx = (col + ox) / sf;
                        let cy = (row + oy) / sf;
                        let w = w.min(2.0 * cx).min(2.0 * (1.0 - cx));
                        let h = h.min(2.0 * cy).min(2.0 * (1.0 - cy));
                        (BBox { cx, cy, w, h }, cat)
                    },
                )
            })
            .collect::<Vec<_>>()
    })
}

/// Fraction of pixel centres in `[lo, hi)` on an `n`-wide grid over `[0, 1]`.
fn covered(lo: f64, hi: f64, n: usize) -> Vec<bool> {
    (0..n)
        .map(|i| {
            let c = (i as f64 + 0.5) / n as f64;
            c >= lo && c < hi
        })
        .collect()
}

/// IOU by counting pixel centres on an `n × n` raster. Box membership is a
/// product of per-axis tests, so the counts factor per axis.
pub fn raster_iou(a: &BBox, b: &BBox, n: usize) -> f64 {
    let ax = covered(a.cx - a.w / 2.0, a.cx + a.w / 2.0, n);
    let ay = covered(a.cy - a.h / 2.0, a.cy + a.h / 2.0, n);
    let bx = covered(b.cx - b.w / 2.0, b.cx + b.w / 2.0, n);
    let by = covered(b.cy - b.h / 2.0, b.cy + b.h / 2.0, n);
    let count = |v: &[bool]| v.iter().filter(|&&x| x).count() as f64;
    let both = |u: &[bool], v: &[bool]| u.iter().zip(v).filter(|(&p, &q)| p && q).count() as f64;
    let inter = both(&ax, &bx) * both(&ay, &by);
    let union = count(&ax) * count(&ay) + count(&bx) * count(&by) - inter;
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn det(bbox: BBox, confidence: f64, category: usize) -> Detection {
    let mut probs = vec![0.0; 3];
    probs[category] = 1.0;
    Detection {
        bbox,
        confidence,
        category,
        category_probs: probs,
    }
}

/// The kept set is the unique subset `K` such that a detection belongs to
/// `K` iff no higher-ranked member of `K` with its category overlaps it at
/// or above the threshold. Found by testing every subset.
pub fn brute_force_nms(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    let n = dets.len();
    let mut rank: Vec<usize> = (0..n).collect();
    rank.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    let mut found = None;
    for mask in 0u32..(1 << n) {
        let member = |i: usize| mask & (1 << i) != 0;
        let consistent = rank.iter().enumerate().all(|(pos, &i)| {
            let blocked = rank[..pos].iter().any(|&j| {
                member(j) && dets[j].category == dets[i].category && iou(&dets[j].bbox, &dets[i].bbox) >= threshold
            });
            member(i) == !blocked
        });
        if consistent {
            assert!(found.is_none(), "fixed point must be unique");
            found = Some(mask);
        }
    }
    let mask = found.expect("a consistent subset exists");
    rank.into_iter().filter(|&i| mask & (1 << i) != 0).map(|i| dets[i].clone()).collect()
}

/// Distance from the origin to piece `ab`: perpendicular distance when the
/// foot of the perpendicular lands on the piece, nearer endpoint otherwise.
fn piece_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = (dx * dx + dy * dy).sqrt();
    let along = -(a.0 * dx + a.1 * dy) / len;
    let end = (a.0.hypot(a.1)).min(b.0.hypot(b.1));
    if along > 0.0 && along < len {
        ((a.0 * dy - a.1 * dx) / len).abs().min(end)
    } else {
        end
    }
}

/// Scans every piece of every segment; returns the nearest segment index.
pub fn brute_force_nearest(segments: &[Segment], p: (f64, f64), cutoff: f64) -> Option<usize> {
    let to_plane = |q: (f64, f64)| {
        (
            (q.1 - p.1) * METERS_PER_DEGREE * p.0.to_radians().cos(),
            (q.0 - p.0) * METERS_PER_DEGREE,
        )
    };
    let mut all: Vec<(f64, &str, usize)> = segments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let d = s
                .points
                .windows(2)
                .map(|w| piece_distance(to_plane(w[0]), to_plane(w[1])))
                .fold(f64::INFINITY, f64::min);
            (d, s.id.as_str(), i)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    all.first().filter(|c| c.0 <= cutoff).map(|c| c.2)
}
