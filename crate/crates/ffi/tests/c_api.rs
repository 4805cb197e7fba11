use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use rdiv::checkpoint::{save_checkpoint, TrainingMetadata};
use rdiv::geometry::BBox;
use rdiv::model::{build_network, NetworkConfig};
use rdiv_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        rdiv_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn saved_model(dir: &Path) -> CString {
    let model = build_network(NetworkConfig::default(), 4).unwrap();
    let path = dir.join("m.ckpt");
    save_checkpoint(&model, TrainingMetadata { steps: 0, final_loss: 0.0, seed: 4 }, &path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

#[test]
fn detect_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = saved_model(dir.path());
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { rdiv_model_load(path.as_ptr(), &mut handle) }, RdivStatus::Ok);

    let mut n = 0usize;
    assert_eq!(unsafe { rdiv_model_input_size(handle, &mut n) }, RdivStatus::Ok);
    assert_eq!(n, 112);
    let pixels: Vec<f64> = (0..3 * n * n).map(|i| (i % 97) as f64 / 97.0).collect();

    // An untrained model with threshold 0 reports something in every cell.
    let mut count = 0usize;
    let status = unsafe { rdiv_model_detect(handle, pixels.as_ptr(), pixels.len(), 0.0, 1.0, ptr::null_mut(), 0, &mut count) };
    assert_eq!(status, RdivStatus::BufferTooSmall);
    assert!(count > 0);

    let mut dets = vec![RdivDetection { bbox: RdivBox { cx: 0.0, cy: 0.0, w: 0.0, h: 0.0 }, confidence: 0.0, category: 0 }; count];
    let status = unsafe { rdiv_model_detect(handle, pixels.as_ptr(), pixels.len(), 0.0, 1.0, dets.as_mut_ptr(), count, &mut count) };
    assert_eq!(status, RdivStatus::Ok);

    let model = build_network(NetworkConfig::default(), 4).unwrap();
    let image = rdiv::tensor::Tensor::new(&[3, n, n], pixels.clone()).unwrap();
    let expected = model.detect(&image, 0.0, 1.0).unwrap();
    assert_eq!(expected.len(), count);
    for (got, want) in dets.iter().zip(&expected) {
        assert_eq!(BBox::from(got.bbox), want.bbox);
        assert_eq!(got.confidence, want.confidence);
        assert_eq!(got.category as usize, want.category);
    }

    let status = unsafe { rdiv_model_detect(handle, pixels.as_ptr(), 5, 0.5, 0.45, dets.as_mut_ptr(), count, &mut count) };
    assert_eq!(status, RdivStatus::InvalidArgument);
    assert!(last_error().contains("pixel values"));
    unsafe { rdiv_model_free(handle) };
}

#[test]
fn load_errors_are_classified() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { rdiv_model_load(missing.as_ptr(), &mut handle) }, RdivStatus::Io);
    assert!(handle.is_null());

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { rdiv_model_load(junk.as_ptr(), &mut handle) }, RdivStatus::CorruptCheckpoint);
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { rdiv_model_load(ptr::null(), &mut handle) }, RdivStatus::NullPointer);
    unsafe { rdiv_model_free(ptr::null_mut()) };
}

#[test]
fn iou_and_geolocation() {
    let a = RdivBox { cx: 0.5, cy: 0.5, w: 0.2, h: 0.2 };
    let mut v = 0.0;
    assert_eq!(unsafe { rdiv_iou(&a, &a, &mut v) }, RdivStatus::Ok);
    assert_eq!(v, 1.0);

    let (mut lat, mut lon) = (0.0, 0.0);
    let status = unsafe { rdiv_geolocate(&a, 4.616, -74.10096, 12.0, 77.0, 112, 112, &mut lat, &mut lon) };
    assert_eq!(status, RdivStatus::Ok);
    assert_eq!((lat, lon), (4.616, -74.10096));

    let status = unsafe { rdiv_geolocate(&a, 4.616, -74.10096, 12.0, 190.0, 112, 112, &mut lat, &mut lon) };
    assert_eq!(status, RdivStatus::InvalidArgument);
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(rdiv_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/rdiv.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["rdiv_model_load", "rdiv_model_free", "rdiv_model_detect", "rdiv_iou", "rdiv_geolocate", "RDIV_STATUS_OK", "typedef struct RdivModel RdivModel"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // Syntax-check with the system C compiler when one is installed.
    if let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
