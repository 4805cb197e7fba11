//! Dataset directories:
//!
//! ```text
//! root/images/<stem>.png
//! root/labels/<stem>.txt      optional per image
//! root/geotags.csv            optional, header `stem,lat,lon,alt_m`
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageFormat, RgbImage};
use serde::Deserialize;

use super::{parse_label_file, serialize_labels, AnnotatedImage, DataError, Geotag};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub images: Vec<AnnotatedImage>,
    /// One line per skipped file or missing label file.
    pub warnings: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Deserialize)]
struct GeotagRow {
    stem: String,
    lat: f64,
    lon: f64,
    alt_m: f64,
}

/// Parses a `stem,lat,lon,alt_m` CSV.
pub fn parse_geotags(text: &str, path: &Path) -> Result<BTreeMap<String, Geotag>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut tags = BTreeMap::new();
    for (i, row) in reader.deserialize::<GeotagRow>().enumerate() {
        let fail = |detail: String| DataError::Geotag {
            path: path.to_path_buf(),
            row: i + 1,
            detail,
        };
        let row = row.map_err(|e| fail(e.to_string()))?;
        if !(-90.0..=90.0).contains(&row.lat) || !(-180.0..=180.0).contains(&row.lon) {
            return Err(fail(format!("coordinates ({}, {}) out of range", row.lat, row.lon)));
        }
        if !(row.alt_m > 0.0 && row.alt_m.is_finite()) {
            return Err(fail(format!("altitude {} must be positive", row.alt_m)));
        }
        tags.insert(
            row.stem,
            Geotag {
                lat: row.lat,
                lon: row.lon,
                alt_m: row.alt_m,
            },
        );
    }
    Ok(tags)
}

fn decode_image(path: &Path, input_size: usize) -> Result<Tensor, String> {
    let img = image::open(path).map_err(|e| e.to_string())?.to_rgb8();
    let img = if img.width() as usize != input_size || img.height() as usize != input_size {
        image::imageops::resize(&img, input_size as u32, input_size as u32, FilterType::Triangle)
    } else {
        img
    };
    let n = input_size;
    let mut data = vec![0.0; 3 * n * n];
    for (x, y, px) in img.enumerate_pixels() {
        for ch in 0..3 {
            data[ch * n * n + y as usize * n + x as usize] = px[ch] as f64 / 255.0;
        }
    }
    Ok(Tensor::new(&[3, n, n], data).expect("3×N×N"))
}

fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>, DataError> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            stems.push((stem.to_string(), path.clone()));
        }
    }
    stems.sort();
    Ok(stems)
}

/// Loads a dataset directory, resizing every image to `input_size`².
///
/// Images come back ordered by stem. An image that cannot be decoded is
/// skipped and an image without a label file gets no labels; both cases
/// are recorded in `warnings`.
pub fn load_dataset(root: &Path, input_size: usize) -> Result<LoadedDataset, DataError> {
    let images_dir = root.join("images");
    let labels_dir = root.join("labels");
    let geotag_path = root.join("geotags.csv");
    let geotags = if geotag_path.is_file() {
        let text = fs::read_to_string(&geotag_path).map_err(io_err(&geotag_path))?;
        parse_geotags(&text, &geotag_path)?
    } else {
        BTreeMap::new()
    };

    let mut out = LoadedDataset::default();
    for (stem, path) in png_stems(&images_dir)? {
        let pixels = match decode_image(&path, input_size) {
            Ok(p) => p,
            Err(detail) => {
                log::warn!("skipping {}: {detail}", path.display());
                out.warnings.push(format!("{}: {detail}", path.display()));
                continue;
            }
        };
        let label_path = labels_dir.join(format!("{stem}.txt"));
        let labels = if label_path.is_file() {
            let text = fs::read_to_string(&label_path).map_err(io_err(&label_path))?;
            parse_label_file(&text).map_err(|source| DataError::Label {
                path: label_path.clone(),
                source,
            })?
        } else {
            log::warn!("{stem}: no label file, assuming no potholes");
            out.warnings.push(format!("{stem}: missing label file"));
            Vec::new()
        };
        out.images.push(AnnotatedImage {
            pixels,
            labels,
            geotag: geotags.get(&stem).copied(),
            source_id: stem,
        });
    }
    if out.images.is_empty() {
        return Err(DataError::EmptyDataset(root.to_path_buf()));
    }
    Ok(out)
}

/// Loads bare images for inference: `dir/images/*.png` when that
/// sub-directory exists, `dir/*.png` otherwise.
pub fn load_image_dir(dir: &Path, input_size: usize) -> Result<LoadedDataset, DataError> {
    let images_dir = if dir.join("images").is_dir() {
        dir.join("images")
    } else {
        dir.to_path_buf()
    };
    let mut out = LoadedDataset::default();
    for (stem, path) in png_stems(&images_dir)? {
        match decode_image(&path, input_size) {
            Ok(pixels) => out.images.push(AnnotatedImage {
                pixels,
                labels: Vec::new(),
                geotag: None,
                source_id: stem,
            }),
            Err(detail) => {
                log::warn!("skipping {}: {detail}", path.display());
                out.warnings.push(format!("{}: {detail}", path.display()));
            }
        }
    }
    if out.images.is_empty() {
        return Err(DataError::EmptyDataset(dir.to_path_buf()));
    }
    Ok(out)
}

/// PNG bytes of a `[3, N, N]` tensor, values rounded to 8 bits.
pub fn encode_png(pixels: &Tensor) -> Vec<u8> {
    let (h, w) = (pixels.shape()[1], pixels.shape()[2]);
    let data = pixels.data();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |ch: usize| {
            let v = data[ch * h * w + y as usize * w + x as usize];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        image::Rgb([at(0), at(1), at(2)])
    });
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .expect("PNG encoding into memory");
    bytes
}

/// Writes images, label files and (when any image carries one) geotags in
/// the layout [`load_dataset`] reads.
pub fn write_dataset(root: &Path, images: &[AnnotatedImage]) -> Result<(), DataError> {
    let images_dir = root.join("images");
    let labels_dir = root.join("labels");
    fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;
    fs::create_dir_all(&labels_dir).map_err(io_err(&labels_dir))?;
    let mut geotags = String::from("stem,lat,lon,alt_m\n");
    let mut any_geotag = false;
    for img in images {
        let png = images_dir.join(format!("{}.png", img.source_id));
        fs::write(&png, encode_png(&img.pixels)).map_err(io_err(&png))?;
        let txt = labels_dir.join(format!("{}.txt", img.source_id));
        fs::write(&txt, serialize_labels(&img.labels)).map_err(io_err(&txt))?;
        if let Some(g) = img.geotag {
            any_geotag = true;
            geotags.push_str(&format!("{},{:.8},{:.8},{:.3}\n", img.source_id, g.lat, g.lon, g.alt_m));
        }
    }
    if any_geotag {
        let path = root.join("geotags.csv");
        fs::write(&path, geotags).map_err(io_err(&path))?;
    }
    Ok(())
}
