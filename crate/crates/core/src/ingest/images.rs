//! PNG loading and saving for images, masks, and rendered outputs.
//! 8-bit and 16-bit inputs normalize to [0, 1]; outputs quantize to 8-bit.

use crate::error::IngestError;
use crate::grid::{GridF, GridRgb};
use image::ImageReader;
use std::path::Path;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn decode_err(path: &Path, e: image::ImageError) -> IngestError {
    IngestError::Malformed {
        what: "image",
        path: path.to_path_buf(),
        line: 0,
        detail: e.to_string(),
    }
}

pub fn load_png_rgb(path: &Path) -> Result<GridRgb, IngestError> {
    if !path.is_file() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    let img = ImageReader::open(path)
        .map_err(io_err(path))?
        .decode()
        .map_err(|e| decode_err(path, e))?
        .to_rgb16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| {
            [
                p.0[0] as f64 / 65535.0,
                p.0[1] as f64 / 65535.0,
                p.0[2] as f64 / 65535.0,
            ]
        })
        .collect();
    Ok(GridRgb::from_vec(w, h, data))
}

pub fn load_png_gray(path: &Path) -> Result<GridF, IngestError> {
    if !path.is_file() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    let img = ImageReader::open(path)
        .map_err(io_err(path))?
        .decode()
        .map_err(|e| decode_err(path, e))?
        .to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
    Ok(GridF::from_vec(w, h, data))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_png_rgb(path: &Path, img: &GridRgb) -> Result<(), IngestError> {
    let mut out = image::RgbImage::new(img.width() as u32, img.height() as u32);
    for (i, px) in img.data().iter().enumerate() {
        let (x, y) = (i % img.width(), i / img.width());
        out.put_pixel(
            x as u32,
            y as u32,
            image::Rgb([quantize(px[0]), quantize(px[1]), quantize(px[2])]),
        );
    }
    out.save(path).map_err(|e| decode_err(path, e))
}

pub fn save_png_gray(path: &Path, img: &GridF) -> Result<(), IngestError> {
    let mut out = image::GrayImage::new(img.width() as u32, img.height() as u32);
    for (i, &v) in img.data().iter().enumerate() {
        let (x, y) = (i % img.width(), i / img.width());
        out.put_pixel(x as u32, y as u32, image::Luma([quantize(v)]));
    }
    out.save(path).map_err(|e| decode_err(path, e))
}
