//! Ground projection of detections from nadir images.
//!
//! A pinhole camera pointing straight down from altitude `h` with
//! horizontal field of view `fov` images a ground rectangle `2·h·tan(fov/2)`
//! metres wide; its height follows from the image aspect ratio. Image `x`
//! grows eastwards and image `y` southwards. Metres become degrees with the
//! equirectangular approximation, accurate to centimetres over a footprint.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Geotag;
use crate::geometry::Detection;

/// Metres per degree of latitude.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("detection in {image} has no geotag")]
    Ungeoreferenced { image: String },
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("invalid geotag: {0}")]
    Geotag(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fov_deg: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub nadir: bool,
}

impl CameraModel {
    pub fn new(fov_deg: f64, width_px: u32, height_px: u32) -> Result<Self, GeoError> {
        let cam = CameraModel {
            fov_deg,
            width_px,
            height_px,
            nadir: true,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(GeoError::Camera(format!("field of view {} must lie in (0, 180)", self.fov_deg)));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(GeoError::Camera("image size must be positive".into()));
        }
        if !self.nadir {
            return Err(GeoError::Camera("only nadir imagery can be projected".into()));
        }
        Ok(())
    }

    /// Ground footprint `(width, height)` in metres at `alt_m`.
    pub fn footprint(&self, alt_m: f64) -> (f64, f64) {
        let width = 2.0 * alt_m * (self.fov_deg.to_radians() / 2.0).tan();
        (width, width * self.height_px as f64 / self.width_px as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoDetection {
    pub detection: Detection,
    pub lat: f64,
    pub lon: f64,
    /// East-west and north-south extent in metres.
    pub ground_size_m: (f64, f64),
    pub image: String,
}

/// Degrees north and east of `(lat, _)` covered by the given offsets in metres.
pub fn meters_to_degrees(lat: f64, north_m: f64, east_m: f64) -> (f64, f64) {
    (
        north_m / METERS_PER_DEGREE,
        east_m / (METERS_PER_DEGREE * lat.to_radians().cos()),
    )
}

pub fn geolocate(
    det: &Detection,
    geotag: Option<Geotag>,
    cam: &CameraModel,
    image: &str,
) -> Result<GeoDetection, GeoError> {
    cam.validate()?;
    let tag = geotag.ok_or_else(|| GeoError::Ungeoreferenced { image: image.to_string() })?;
    if !(tag.alt_m > 0.0 && tag.alt_m.is_finite()) {
        return Err(GeoError::Geotag(format!("altitude {} must be positive", tag.alt_m)));
    }
    if !(-90.0..=90.0).contains(&tag.lat) || !(-180.0..=180.0).contains(&tag.lon) {
        return Err(GeoError::Geotag(format!("({}, {}) is not a coordinate", tag.lat, tag.lon)));
    }
    let (width, height) = cam.footprint(tag.alt_m);
    let east = (det.bbox.cx - 0.5) * width;
    let north = (0.5 - det.bbox.cy) * height;
    let (dlat, dlon) = meters_to_degrees(tag.lat, north, east);
    Ok(GeoDetection {
        detection: det.clone(),
        lat: tag.lat + dlat,
        lon: tag.lon + dlon,
        ground_size_m: (det.bbox.w * width, det.bbox.h * height),
        image: image.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn det(cx: f64, cy: f64) -> Detection {
        Detection {
            bbox: BBox { cx, cy, w: 0.1, h: 0.1 },
            confidence: 0.9,
            category: 1,
            category_probs: vec![0.1, 0.8, 0.1],
        }
    }

    const TAG: Geotag = Geotag {
        lat: 4.616,
        lon: -74.10096,
        alt_m: 10.0,
    };

    #[test]
    fn right_angle_fov_footprint() {
        let cam = CameraModel::new(90.0, 100, 100).unwrap();
        let (w, h) = cam.footprint(10.0);
        assert!((w - 20.0).abs() < 1e-12 && (h - 20.0).abs() < 1e-12);
    }

    #[test]
    fn centre_maps_to_geotag() {
        let cam = CameraModel::new(77.0, 112, 112).unwrap();
        let g = geolocate(&det(0.5, 0.5), Some(TAG), &cam, "a").unwrap();
        assert_eq!((g.lat, g.lon), (TAG.lat, TAG.lon));
    }

    #[test]
    fn quarter_offset_is_five_metres_east() {
        let cam = CameraModel::new(90.0, 100, 100).unwrap();
        let g = geolocate(&det(0.75, 0.5), Some(TAG), &cam, "a").unwrap();
        let expected = 5.0 / (111_320.0 * 4.616f64.to_radians().cos());
        assert!((g.lon - TAG.lon - expected).abs() < 1e-12);
        assert_eq!(g.lat, TAG.lat);
        assert!((g.ground_size_m.0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn missing_geotag_is_reported() {
        let cam = CameraModel::new(77.0, 112, 112).unwrap();
        assert_eq!(
            geolocate(&det(0.5, 0.5), None, &cam, "img"),
            Err(GeoError::Ungeoreferenced { image: "img".into() })
        );
    }

    #[test]
    fn fov_bounds() {
        assert!(CameraModel::new(180.0, 1, 1).is_err());
        assert!(CameraModel::new(0.0, 1, 1).is_err());
    }
}
