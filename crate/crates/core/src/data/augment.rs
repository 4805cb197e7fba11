use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AnnotatedImage, LabelRecord};
use crate::geometry::BBox;
use crate::tensor::Tensor;

/// Rotated boxes keeping less than this share of their enclosure inside the
/// frame are dropped.
const MIN_VISIBLE_FRACTION: f64 = 0.2;

/// Rounding slack when deciding whether a sample lands inside the source.
const EDGE_SLACK: f64 = 1e-9;

/// Maps a normalized image point through a counter-clockwise (as displayed,
/// y pointing down) rotation about the image centre.
fn rotate_point(x: f64, y: f64, cos: f64, sin: f64) -> (f64, f64) {
    let (dx, dy) = (x - 0.5, y - 0.5);
    (0.5 + dx * cos + dy * sin, 0.5 - dx * sin + dy * cos)
}

fn rotate_label(label: &LabelRecord, cos: f64, sin: f64) -> Option<LabelRecord> {
    let (x1, y1, x2, y2) = label.bbox.corners();
    let pts = [(x1, y1), (x2, y1), (x1, y2), (x2, y2)].map(|(x, y)| rotate_point(x, y, cos, sin));
    let (mut lx, mut ly, mut hx, mut hy) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        lx = lx.min(x);
        ly = ly.min(y);
        hx = hx.max(x);
        hy = hy.max(y);
    }
    let enclosure = BBox::from_corners(lx, ly, hx, hy);
    let clipped = enclosure.clipped();
    if clipped.area() < MIN_VISIBLE_FRACTION * enclosure.area() || clipped.area() <= 0.0 {
        return None;
    }
    Some(LabelRecord {
        category: label.category,
        bbox: clipped,
    })
}

/// Mean over the outermost ring of pixels, all channels pooled.
fn edge_mean(pixels: &Tensor) -> f64 {
    let (c, h, w) = (pixels.shape()[0], pixels.shape()[1], pixels.shape()[2]);
    let data = pixels.data();
    let (mut sum, mut n) = (0.0, 0usize);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
                    sum += data[(ch * h + y) * w + x];
                    n += 1;
                }
            }
        }
    }
    sum / n as f64
}

/// Rotates image and labels by `angle_deg` about the centre.
///
/// Pixels are bilinearly resampled; samples falling outside the source are
/// filled with the mean gray of the source border. Each box becomes the
/// axis-aligned enclosure of its rotated corners, clipped to the image.
pub fn rotate_augment(img: &AnnotatedImage, angle_deg: f64) -> AnnotatedImage {
    let angle = angle_deg.rem_euclid(360.0);
    if angle == 0.0 {
        return img.clone();
    }
    let theta = angle.to_radians();
    let (sin, cos) = theta.sin_cos();
    let shape = img.pixels.shape().to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let fill = edge_mean(&img.pixels);
    let src = img.pixels.data();
    let mut out = vec![fill; src.len()];

    for py in 0..h {
        for px in 0..w {
            let u = (px as f64 + 0.5) / w as f64 - 0.5;
            let v = (py as f64 + 0.5) / h as f64 - 0.5;
            // Inverse rotation finds where this output pixel came from.
            let sx = (0.5 + u * cos - v * sin) * w as f64 - 0.5;
            let sy = (0.5 + u * sin + v * cos) * h as f64 - 0.5;
            let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
            if sx < -EDGE_SLACK || sy < -EDGE_SLACK || sx > xmax + EDGE_SLACK || sy > ymax + EDGE_SLACK {
                continue;
            }
            let (sx, sy) = (sx.clamp(0.0, xmax), sy.clamp(0.0, ymax));
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(ch * h + y) * w + x];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out[(ch * h + py) * w + px] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }

    let labels = img
        .labels
        .iter()
        .filter_map(|l| rotate_label(l, cos, sin))
        .collect();
    AnnotatedImage {
        pixels: Tensor::new(&shape, out).expect("same shape as source"),
        labels,
        geotag: img.geotag,
        source_id: format!("{}_rot{:03}", img.source_id, angle.round() as u32),
    }
}

/// Picks `count` distinct images (or all of them, if fewer) and returns a
/// rotated copy of each at an arbitrary angle in `[0, 360)`.
pub fn augment_with_rotations(
    images: &[AnnotatedImage],
    count: usize,
    seed: u64,
) -> Vec<AnnotatedImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = count.min(images.len());
    let mut picks = sample(&mut rng, images.len(), count).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|i| {
            let angle = rng.gen_range(0.0..360.0);
            rotate_augment(&images[i], angle)
        })
        .collect()
}
