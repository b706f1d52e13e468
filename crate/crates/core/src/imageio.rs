//! 8-bit PNG encoding and decoding for renders and masks.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage, RgbaImage, GrayImage};

use crate::sketch::Mask;

#[derive(Debug, thiserror::Error)]
pub enum ImageIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error("pixel buffer has {got} entries, expected {expected}")]
    Size { got: usize, expected: usize },
}

#[inline]
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(img: image::DynamicImage) -> Result<Vec<u8>, ImageIoError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// RGB, or RGBA when `alpha` is given.
pub fn encode_png(width: usize, height: usize, rgb: &[[f64; 3]], alpha: Option<&[f64]>) -> Result<Vec<u8>, ImageIoError> {
    let n = width * height;
    if rgb.len() != n || alpha.is_some_and(|a| a.len() != n) {
        return Err(ImageIoError::Size { got: rgb.len(), expected: n });
    }
    let img = match alpha {
        Some(a) => {
            let data = rgb.iter().zip(a).flat_map(|(c, &a)| [to_u8(c[0]), to_u8(c[1]), to_u8(c[2]), to_u8(a)]).collect();
            image::DynamicImage::ImageRgba8(RgbaImage::from_raw(width as u32, height as u32, data).unwrap())
        }
        None => {
            let data = rgb.iter().flat_map(|c| c.map(to_u8)).collect();
            image::DynamicImage::ImageRgb8(RgbImage::from_raw(width as u32, height as u32, data).unwrap())
        }
    };
    encode(img)
}

pub fn encode_gray_png(width: usize, height: usize, values: &[f64]) -> Result<Vec<u8>, ImageIoError> {
    if values.len() != width * height {
        return Err(ImageIoError::Size { got: values.len(), expected: width * height });
    }
    let data = values.iter().map(|&v| to_u8(v)).collect();
    encode(image::DynamicImage::ImageLuma8(GrayImage::from_raw(width as u32, height as u32, data).unwrap()))
}

pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>, ImageIoError> {
    let data = mask.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode(image::DynamicImage::ImageLuma8(
        GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data).unwrap(),
    ))
}

/// Decodes any PNG as grayscale; values above 127 are inside.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask, ImageIoError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Mask::from_vec(w as usize, h as usize, img.into_raw().into_iter().map(|v| v > 127).collect()))
}

/// Decodes a PNG to linear `[0, 1]` RGB values (alpha dropped).
pub fn decode_rgb_png(bytes: &[u8]) -> Result<(usize, usize, Vec<[f64; 3]>), ImageIoError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
    let (w, h) = img.dimensions();
    let px = img.pixels().map(|p| p.0.map(|v| v as f64 / 255.0)).collect();
    Ok((w as usize, h as usize, px))
}

pub fn write_png(path: &Path, png: &[u8]) -> Result<(), ImageIoError> {
    crate::io_util::write_atomic(path, png)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<Mask, ImageIoError> {
    decode_mask_png(&std::fs::read(path)?)
}

pub fn read_rgb_png(path: &Path) -> Result<(usize, usize, Vec<[f64; 3]>), ImageIoError> {
    decode_rgb_png(&std::fs::read(path)?)
}
