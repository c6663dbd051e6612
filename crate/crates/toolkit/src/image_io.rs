//! PNG/PPM images and binary mask PNGs.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageError, ImageFormat, ImageReader, RgbImage as Rgb8};
use spxrefine_core::{BinaryMask, RgbImage};

use crate::error::{Result, ToolkitError};

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| ToolkitError::io(path, e))?;
    let reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| ToolkitError::io(path, e))?;
    let corrupt = |reason: String| ToolkitError::CorruptImage { path: path.to_path_buf(), reason };
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => {}
        Some(other) => {
            return Err(ToolkitError::UnsupportedBitDepth { path: path.to_path_buf(), found: format!("{other:?} file") })
        }
        None => return Err(corrupt("unrecognized file signature".into())),
    }
    reader.decode().map_err(|e| match e {
        ImageError::Unsupported(u) => ToolkitError::UnsupportedBitDepth { path: path.to_path_buf(), found: u.to_string() },
        other => corrupt(other.to_string()),
    })
}

/// Loads an 8- or 16-bit RGB or grayscale PNG/PPM/PGM, scaled to `[0, 1]`.
/// An alpha channel, if present, is dropped.
pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            img.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()
        }
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => img.to_rgb16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        other => {
            return Err(ToolkitError::UnsupportedBitDepth { path: path.to_path_buf(), found: format!("{:?}", other.color()) })
        }
    };
    Ok(RgbImage::new(w, h, data)?)
}

/// Writes an 8-bit RGB PNG, rounding each channel.
pub fn save_image(img: &RgbImage, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let buf = Rgb8::from_raw(img.width() as u32, img.height() as u32, raw).expect("buffer size");
    save(DynamicImage::ImageRgb8(buf), path)
}

/// Any nonzero sample (in any channel) is foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bits = img.to_rgb16().pixels().map(|p| p.0.iter().any(|&v| v != 0)).collect();
    Ok(BinaryMask::new(w, h, bits)?)
}

/// Writes an 8-bit grayscale PNG with 255 for foreground.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let raw = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw).expect("buffer size");
    save(DynamicImage::ImageLuma8(buf), path)
}

fn save(img: DynamicImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| ToolkitError::Parse { path: path.to_path_buf(), reason: e.to_string() })?;
    crate::formats::write_file(path, &bytes)
}
