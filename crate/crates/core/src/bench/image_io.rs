use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, ImageFormat};

use super::{IoFormatError, RgbImage};
use crate::grid::ScalarGrid;

/// Reads an 8- or 16-bit grayscale (or color, converted to luma) PNG/PGM and
/// normalizes it to `[0, 1]`.
pub fn read_gray(path: impl AsRef<Path>) -> Result<ScalarGrid, IoFormatError> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        other if other.color().bytes_per_pixel() > other.color().channel_count() => {
            other.into_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
        }
        other => other.into_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
    };
    ScalarGrid::new(w, h, data).map_err(|_| IoFormatError::NonFinite)
}

fn quantize(g: &ScalarGrid) -> GrayImage {
    let bytes = g
        .values()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    GrayImage::from_raw(g.width() as u32, g.height() as u32, bytes).expect("buffer size")
}

/// 8-bit PNG of an image clamped to `[0, 1]`.
pub fn write_gray_png(path: impl AsRef<Path>, g: &ScalarGrid) -> Result<(), IoFormatError> {
    quantize(g).save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// 8-bit binary PGM of an image clamped to `[0, 1]`.
pub fn write_gray_pgm(path: impl AsRef<Path>, g: &ScalarGrid) -> Result<(), IoFormatError> {
    quantize(g).save_with_format(path, ImageFormat::Pnm)?;
    Ok(())
}

pub fn write_rgb_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<(), IoFormatError> {
    let buf: ImageBuffer<image::Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, img.data.clone()).expect("buffer size");
    buf.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}
