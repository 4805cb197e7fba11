//! Procedural nadir road scenes with exact pothole ground truth.
//!
//! A scene is asphalt-gray noise, optionally crossed by a lane marking, with
//! potholes rendered as dark filled ellipses whose rim pixels are unevenly
//! shaded. Severity drives both size and darkness: the radius and darkness
//! ranges are each split into three equal bands, low taking the smallest,
//! faintest band and high the largest, darkest one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AnnotatedImage, DataError, LabelRecord};
use crate::geometry::BBox;
use crate::tensor::Tensor;
use crate::SEVERITY_LEVELS;

const PLACEMENT_ATTEMPTS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub image_size: usize,
    /// Inclusive range of pothole counts.
    pub count_range: (usize, usize),
    /// Probability of low, middle, high severity.
    pub severity_mix: [f64; 3],
    pub asphalt_mean: f64,
    pub asphalt_std: f64,
    pub lane_marking_prob: f64,
    /// Semi-major axis range in pixels.
    pub radius_range: (f64, f64),
    pub eccentricity_range: (f64, f64),
    /// Fraction of the background brightness removed inside a pothole.
    pub darkness_range: (f64, f64),
    /// Keep pothole centres in grid cells with at least one free cell
    /// between any two of them (Chebyshev distance ≥ 2 on `grid_side`).
    pub separable: bool,
    pub grid_side: usize,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            image_size: 112,
            count_range: (1, 4),
            severity_mix: [0.4, 0.35, 0.25],
            asphalt_mean: 0.45,
            asphalt_std: 0.04,
            lane_marking_prob: 0.5,
            radius_range: (6.0, 15.0),
            eccentricity_range: (0.0, 0.75),
            darkness_range: (0.35, 0.85),
            separable: false,
            grid_side: 7,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidSpec(m));
        if self.image_size < 8 {
            return bad(format!("image side {} is too small", self.image_size));
        }
        if self.count_range.0 > self.count_range.1 {
            return bad(format!("count range {:?} is reversed", self.count_range));
        }
        let mix_sum: f64 = self.severity_mix.iter().sum();
        if self.severity_mix.iter().any(|p| !(*p >= 0.0)) || (mix_sum - 1.0).abs() > 1e-9 {
            return bad(format!("severity mix {:?} must be non-negative and sum to 1", self.severity_mix));
        }
        let (r0, r1) = self.radius_range;
        if !(r0 > 0.0 && r1 >= r0) || 2.0 * r1 >= self.image_size as f64 {
            return bad(format!("radius range {:?} must be positive and fit the image", self.radius_range));
        }
        let (e0, e1) = self.eccentricity_range;
        if !(0.0..1.0).contains(&e0) || !(e0..1.0).contains(&e1) {
            return bad(format!("eccentricity range {:?} must lie in [0,1)", self.eccentricity_range));
        }
        let (d0, d1) = self.darkness_range;
        if !(d0 > 0.0 && d1 >= d0 && d1 <= 1.0) {
            return bad(format!("darkness range {:?} must lie in (0,1]", self.darkness_range));
        }
        if !(0.0..=1.0).contains(&self.lane_marking_prob) {
            return bad(format!("lane marking probability {}", self.lane_marking_prob));
        }
        if !(self.asphalt_std >= 0.0 && (0.0..=1.0).contains(&self.asphalt_mean)) {
            return bad("asphalt mean must lie in [0,1] and std be non-negative".into());
        }
        if self.separable && self.grid_side == 0 {
            return bad("separable mode needs a grid side".into());
        }
        Ok(())
    }
}

/// Shape of one rendered pothole, in pixels.
#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let hx = (self.a * self.a * c * c + self.b * self.b * s * s).sqrt();
        let hy = (self.a * self.a * s * s + self.b * self.b * c * c).sqrt();
        (hx, hy)
    }

    /// Squared normalized radius of a point; ≤ 1 inside.
    fn radius2(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (x - self.cx, y - self.cy);
        let p = (u * c + v * s) / self.a;
        let q = (-u * s + v * c) / self.b;
        p * p + q * q
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let (hx, hy) = self.half_extents();
        (self.cx - hx, self.cy - hy, self.cx + hx, self.cy + hy)
    }
}

fn band(range: (f64, f64), level: usize) -> (f64, f64) {
    let step = (range.1 - range.0) / SEVERITY_LEVELS as f64;
    (range.0 + step * level as f64, range.0 + step * (level + 1) as f64)
}

fn sample_in<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn sample_severity<R: Rng>(rng: &mut R, mix: &[f64; 3]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (level, p) in mix.iter().enumerate() {
        acc += p;
        if u < acc {
            return level;
        }
    }
    // Rounding in the cumulative sum: fall back to the last non-empty level.
    mix.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn cell_of(x: f64, y: f64, side: usize, n: usize) -> (i64, i64) {
    let cell = n as f64 / side as f64;
    let col = ((x / cell).floor() as i64).clamp(0, side as i64 - 1);
    let row = ((y / cell).floor() as i64).clamp(0, side as i64 - 1);
    (row, col)
}

fn compatible(a: &Ellipse, b: &Ellipse, spec: &SyntheticSceneSpec) -> bool {
    let (ax1, ay1, ax2, ay2) = a.bounds();
    let (bx1, by1, bx2, by2) = b.bounds();
    // one pixel of clearance so rasterized shapes never touch
    let disjoint = ax2 + 1.0 < bx1 || bx2 + 1.0 < ax1 || ay2 + 1.0 < by1 || by2 + 1.0 < ay1;
    if !disjoint {
        return false;
    }
    if spec.separable {
        let n = spec.image_size;
        let (ra, ca) = cell_of(a.cx, a.cy, spec.grid_side, n);
        let (rb, cb) = cell_of(b.cx, b.cy, spec.grid_side, n);
        return (ra - rb).abs().max((ca - cb).abs()) >= 2;
    }
    true
}

/// Renders one scene. Identical `(spec, seed)` give identical output.
pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec, seed: u64) -> Result<AnnotatedImage, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.image_size;
    let nf = n as f64;

    // Asphalt: gray noise with a faint warm tint shared by the whole scene.
    let tint = [1.0 + rng.gen_range(-0.03..0.03), 1.0, 1.0 + rng.gen_range(-0.03..0.03)];
    let noise = Normal::new(0.0, spec.asphalt_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut gray = vec![0.0; n * n];
    for g in gray.iter_mut() {
        let jitter = if spec.asphalt_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        *g = (spec.asphalt_mean + jitter).clamp(0.0, 1.0);
    }
    let mut pixels = vec![0.0; 3 * n * n];
    for ch in 0..3 {
        for i in 0..n * n {
            pixels[ch * n * n + i] = (gray[i] * tint[ch]).clamp(0.0, 1.0);
        }
    }

    if rng.gen::<f64>() < spec.lane_marking_prob {
        let vertical = rng.gen::<bool>();
        let pos = rng.gen_range(0.15 * nf..0.85 * nf);
        let width = rng.gen_range(1.5..3.5);
        let colour = if rng.gen::<bool>() { [0.92, 0.92, 0.9] } else { [0.9, 0.8, 0.25] };
        let dash = rng.gen_range(6.0..14.0);
        for y in 0..n {
            for x in 0..n {
                let (across, along) = if vertical {
                    (x as f64 + 0.5, y as f64 + 0.5)
                } else {
                    (y as f64 + 0.5, x as f64 + 0.5)
                };
                let on_dash = (along / dash).floor() as i64 % 2 == 0;
                if (across - pos).abs() <= width / 2.0 && on_dash {
                    for ch in 0..3 {
                        pixels[ch * n * n + y * n + x] = colour[ch];
                    }
                }
            }
        }
    }

    let count = rng.gen_range(spec.count_range.0..=spec.count_range.1);
    let mut placed: Vec<(Ellipse, usize, f64)> = Vec::with_capacity(count);
    let mut attempts = 0;
    while placed.len() < count {
        if attempts >= PLACEMENT_ATTEMPTS * count.max(1) {
            return Err(DataError::Placement {
                placed: placed.len(),
                requested: count,
                attempts,
            });
        }
        attempts += 1;
        let severity = sample_severity(&mut rng, &spec.severity_mix);
        let a = sample_in(&mut rng, band(spec.radius_range, severity));
        let e = sample_in(&mut rng, spec.eccentricity_range);
        let darkness = sample_in(&mut rng, band(spec.darkness_range, severity));
        let b = a * (1.0 - e * e).sqrt();
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        let mut ellipse = Ellipse { cx: 0.0, cy: 0.0, a, b, angle };
        let (hx, hy) = ellipse.half_extents();
        // Keep a one-pixel margin to the frame so the enclosure is fully visible.
        ellipse.cx = rng.gen_range(hx + 1.0..nf - hx - 1.0);
        ellipse.cy = rng.gen_range(hy + 1.0..nf - hy - 1.0);
        if placed.iter().all(|(other, _, _)| compatible(&ellipse, other, spec)) {
            placed.push((ellipse, severity, darkness));
        }
    }

    let mut labels = Vec::with_capacity(placed.len());
    for (ellipse, severity, darkness) in &placed {
        let (x1, y1, x2, y2) = ellipse.bounds();
        let (px0, py0) = (x1.floor().max(0.0) as usize, y1.floor().max(0.0) as usize);
        let (px1, py1) = ((x2.ceil() as usize).min(n - 1), (y2.ceil() as usize).min(n - 1));
        for py in py0..=py1 {
            for px in px0..=px1 {
                let r2 = ellipse.radius2(px as f64 + 0.5, py as f64 + 0.5);
                if r2 > 1.0 {
                    continue;
                }
                // Broken rim: shading varies most near the edge.
                let shade = if r2 > 0.6 {
                    rng.gen_range(0.6..1.0)
                } else {
                    rng.gen_range(0.9..1.0)
                };
                let keep = 1.0 - darkness * shade;
                for ch in 0..3 {
                    let i = ch * n * n + py * n + px;
                    pixels[i] = (pixels[i] * keep).clamp(0.0, 1.0);
                }
            }
        }
        let bbox = BBox::from_corners(x1 / nf, y1 / nf, x2 / nf, y2 / nf);
        labels.push(LabelRecord {
            category: *severity,
            bbox,
        });
    }

    Ok(AnnotatedImage {
        pixels: Tensor::new(&[3, n, n], pixels).expect("3×N×N"),
        labels,
        geotag: None,
        source_id: format!("synth_{seed}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;

    fn clean(count: usize) -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            count_range: (count, count),
            asphalt_std: 0.0,
            lane_marking_prob: 0.0,
            separable: true,
            ..SyntheticSceneSpec::default()
        }
    }

    #[test]
    fn empty_scene_has_no_labels() {
        let spec = SyntheticSceneSpec {
            count_range: (0, 0),
            ..SyntheticSceneSpec::default()
        };
        let img = generate_synthetic_scene(&spec, 1).unwrap();
        assert!(img.labels.is_empty());
        assert_eq!(img.pixels.shape(), &[3, 112, 112]);
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SyntheticSceneSpec::default();
        assert_eq!(
            generate_synthetic_scene(&spec, 77).unwrap(),
            generate_synthetic_scene(&spec, 77).unwrap()
        );
        assert_ne!(
            generate_synthetic_scene(&spec, 77).unwrap().pixels,
            generate_synthetic_scene(&spec, 78).unwrap().pixels
        );
    }

    #[test]
    fn separable_scenes_have_disjoint_labels_in_distinct_cells() {
        for seed in 0..20 {
            let img = generate_synthetic_scene(&clean(3), seed).unwrap();
            assert_eq!(img.labels.len(), 3);
            for (i, a) in img.labels.iter().enumerate() {
                a.bbox.validate().unwrap();
                for b in &img.labels[i + 1..] {
                    assert_eq!(iou(&a.bbox, &b.bbox), 0.0);
                }
            }
        }
    }

    #[test]
    fn severity_tracks_size() {
        let spec = SyntheticSceneSpec {
            count_range: (3, 3),
            ..clean(3)
        };
        let mut by_level = [Vec::new(), Vec::new(), Vec::new()];
        for seed in 0..30 {
            for l in generate_synthetic_scene(&spec, seed).unwrap().labels {
                by_level[l.category].push(l.bbox.w.max(l.bbox.h));
            }
        }
        let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&by_level[0]) < mean(&by_level[1]));
        assert!(mean(&by_level[1]) < mean(&by_level[2]));
    }

    #[test]
    fn impossible_placement_errors() {
        let spec = SyntheticSceneSpec {
            image_size: 32,
            count_range: (12, 12),
            radius_range: (6.0, 7.0),
            ..clean(12)
        };
        assert!(matches!(
            generate_synthetic_scene(&spec, 3),
            Err(DataError::Placement { requested: 12, .. })
        ));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad_mix = SyntheticSceneSpec {
            severity_mix: [0.5, 0.5, 0.5],
            ..SyntheticSceneSpec::default()
        };
        assert!(generate_synthetic_scene(&bad_mix, 0).is_err());
        let bad_radius = SyntheticSceneSpec {
            radius_range: (0.0, 3.0),
            ..SyntheticSceneSpec::default()
        };
        assert!(generate_synthetic_scene(&bad_radius, 0).is_err());
    }
}
