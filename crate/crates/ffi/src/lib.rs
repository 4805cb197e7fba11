//! C ABI for loading a trained detector, running it on images and
//! projecting detections onto the ground.
//!
//! Every function returns an [`RdivStatus`]. On failure a description is
//! kept per thread and can be copied out with
//! [`rdiv_last_error_message`]. Handles come from [`rdiv_model_load`] and
//! must be released with [`rdiv_model_free`]. No function unwinds across
//! the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rdiv::checkpoint::load_checkpoint;
use rdiv::data::Geotag;
use rdiv::geo::{geolocate, CameraModel};
use rdiv::geometry::{iou, BBox, Detection};
use rdiv::model::Model;
use rdiv::tensor::Tensor;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdivStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    CorruptCheckpoint = 4,
    Model = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Axis-aligned box in image fractions: centre plus width and height.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdivBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdivDetection {
    pub bbox: RdivBox,
    pub confidence: f64,
    /// Severity: 0 low, 1 middle, 2 high.
    pub category: u32,
}

/// Opaque trained detector.
pub struct RdivModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: RdivStatus, msg: impl Into<String>) -> RdivStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn guarded(f: impl FnOnce() -> RdivStatus) -> RdivStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(RdivStatus::Panic, "internal panic"),
    }
}

impl From<RdivBox> for BBox {
    fn from(b: RdivBox) -> Self {
        BBox {
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
        }
    }
}

impl From<BBox> for RdivBox {
    fn from(b: BBox) -> Self {
        RdivBox {
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
        }
    }
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `capacity` bytes. Returns the full message length without
/// the terminator.
///
/// # Safety
/// `buffer` must be null or point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rdiv_last_error_message(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buffer.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buffer, n);
            *buffer.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rdiv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdiv_model_load(path: *const c_char, out: *mut *mut RdivModel) -> RdivStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(RdivStatus::NullPointer, "path and out must not be null");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(RdivStatus::InvalidArgument, "path is not valid UTF-8");
        };
        match load_checkpoint(Path::new(path)) {
            Ok(ckpt) => {
                *out = Box::into_raw(Box::new(RdivModel { model: ckpt.model }));
                RdivStatus::Ok
            }
            Err(e @ rdiv::checkpoint::CheckpointError::Io { .. }) => fail(RdivStatus::Io, e.to_string()),
            Err(e) => fail(RdivStatus::CorruptCheckpoint, e.to_string()),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`rdiv_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rdiv_model_free(model: *mut RdivModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length in pixels of the square images the model expects.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdiv_model_input_size(model: *const RdivModel, out: *mut usize) -> RdivStatus {
    if model.is_null() || out.is_null() {
        return fail(RdivStatus::NullPointer, "model and out must not be null");
    }
    *out = (*model).model.config().input_size;
    RdivStatus::Ok
}

/// Runs the detector on one image and writes up to `capacity` detections.
///
/// `pixels` holds `3 · N · N` values in `[0, 1]`, channel-major (all red,
/// then green, then blue), rows top to bottom. `out_count` receives the
/// number of detections; if it exceeds `capacity` nothing is written and
/// `BufferTooSmall` is returned, so a caller can retry with a larger buffer.
///
/// # Safety
/// `pixels` must point to `len` readable values; `out_dets` to `capacity`
/// writable records (may be null when `capacity` is 0); `out_count` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rdiv_model_detect(
    model: *const RdivModel,
    pixels: *const f64,
    len: usize,
    conf_threshold: f64,
    nms_threshold: f64,
    out_dets: *mut RdivDetection,
    capacity: usize,
    out_count: *mut usize,
) -> RdivStatus {
    guarded(|| {
        if model.is_null() || pixels.is_null() || out_count.is_null() || (out_dets.is_null() && capacity > 0) {
            return fail(RdivStatus::NullPointer, "model, pixels and out_count must not be null");
        }
        let model = &(*model).model;
        let n = model.config().input_size;
        let channels = model.config().channels;
        if len != channels * n * n {
            return fail(
                RdivStatus::InvalidArgument,
                format!("expected {} pixel values, got {len}", channels * n * n),
            );
        }
        if !(0.0..=1.0).contains(&conf_threshold) || !(0.0..=1.0).contains(&nms_threshold) {
            return fail(RdivStatus::InvalidArgument, "thresholds must lie in [0, 1]");
        }
        let data = std::slice::from_raw_parts(pixels, len).to_vec();
        let image = match Tensor::new(&[channels, n, n], data) {
            Ok(t) => t,
            Err(e) => return fail(RdivStatus::InvalidArgument, e.to_string()),
        };
        let dets = match model.detect(&image, conf_threshold, nms_threshold) {
            Ok(d) => d,
            Err(e) => return fail(RdivStatus::Model, e.to_string()),
        };
        *out_count = dets.len();
        if dets.len() > capacity {
            return fail(
                RdivStatus::BufferTooSmall,
                format!("{} detections do not fit in {capacity}", dets.len()),
            );
        }
        for (i, d) in dets.iter().enumerate() {
            *out_dets.add(i) = RdivDetection {
                bbox: d.bbox.into(),
                confidence: d.confidence,
                category: d.category as u32,
            };
        }
        RdivStatus::Ok
    })
}

/// Intersection over union of two boxes.
///
/// # Safety
/// `a`, `b` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rdiv_iou(a: *const RdivBox, b: *const RdivBox, out: *mut f64) -> RdivStatus {
    if a.is_null() || b.is_null() || out.is_null() {
        return fail(RdivStatus::NullPointer, "a, b and out must not be null");
    }
    *out = iou(&BBox::from(*a), &BBox::from(*b));
    RdivStatus::Ok
}

/// Ground position of a box centre seen by a nadir camera at
/// `(lat, lon, alt_m)` with horizontal field of view `fov_deg` and an image
/// of `width_px × height_px` pixels.
///
/// # Safety
/// `bbox` must be readable; `out_lat` and `out_lon` writable.
#[no_mangle]
pub unsafe extern "C" fn rdiv_geolocate(
    bbox: *const RdivBox,
    lat: f64,
    lon: f64,
    alt_m: f64,
    fov_deg: f64,
    width_px: u32,
    height_px: u32,
    out_lat: *mut f64,
    out_lon: *mut f64,
) -> RdivStatus {
    if bbox.is_null() || out_lat.is_null() || out_lon.is_null() {
        return fail(RdivStatus::NullPointer, "bbox, out_lat and out_lon must not be null");
    }
    let cam = match CameraModel::new(fov_deg, width_px, height_px) {
        Ok(c) => c,
        Err(e) => return fail(RdivStatus::InvalidArgument, e.to_string()),
    };
    let det = Detection {
        bbox: BBox::from(*bbox),
        confidence: 1.0,
        category: 0,
        category_probs: Vec::new(),
    };
    match geolocate(&det, Some(Geotag { lat, lon, alt_m }), &cam, "") {
        Ok(g) => {
            *out_lat = g.lat;
            *out_lon = g.lon;
            RdivStatus::Ok
        }
        Err(e) => fail(RdivStatus::InvalidArgument, e.to_string()),
    }
}
