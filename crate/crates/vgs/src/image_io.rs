//! Image ingestion and encoding.
//!
//! PNG and PGM/PPM files are decoded as 8-bit grayscale or RGB and scaled to
//! [0, 1]. Files with a `.f32` or `.raw` extension use a small float format:
//! width, height and channels as little-endian `u32`, followed by
//! `width * height * channels` little-endian `f32` pixels in row-major order.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use vgs_core::distort::DistortError;
use vgs_core::Image;

#[derive(Debug, thiserror::Error)]
pub enum ImageIoError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("decoding image: {0}")]
    Decode(#[from] image::ImageError),
    #[error("raw image: {0}")]
    Raw(String),
    #[error(transparent)]
    Invalid(#[from] DistortError),
    #[error("cannot encode {0}-channel image as PNG")]
    Channels(usize),
}

fn is_raw(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("f32" | "raw")
    )
}

/// Loads an image, using the file stem as its id.
pub fn load_image(path: &Path) -> Result<Image, ImageIoError> {
    let image = if is_raw(path) {
        let bytes = std::fs::read(path).map_err(|source| ImageIoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        decode_raw(&bytes)?
    } else {
        from_dynamic(&image::open(path)?)?
    };
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(image.with_id(id))
}

pub fn decode_image_bytes(bytes: &[u8]) -> Result<Image, ImageIoError> {
    from_dynamic(&image::load_from_memory(bytes)?)
}

fn from_dynamic(img: &DynamicImage) -> Result<Image, ImageIoError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = if img.color().has_color() {
        (3, img.to_rgb8().into_raw())
    } else {
        (1, img.to_luma8().into_raw())
    };
    let pixels = raw.into_iter().map(|b| f64::from(b) / 255.0).collect();
    Ok(Image::new(w, h, channels, pixels)?)
}

pub fn decode_raw(bytes: &[u8]) -> Result<Image, ImageIoError> {
    if bytes.len() < 12 {
        return Err(ImageIoError::Raw("truncated header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    let (w, h, c) = (word(0), word(1), word(2));
    let n = w
        .checked_mul(h)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| ImageIoError::Raw("dimensions overflow".into()))?;
    let body = &bytes[12..];
    if body.len() != n * 4 {
        return Err(ImageIoError::Raw(format!(
            "expected {} pixel bytes, found {}",
            n * 4,
            body.len()
        )));
    }
    let pixels = body
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    Ok(Image::new(w, h, c, pixels)?)
}

pub fn encode_raw(image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + image.pixels().len() * 4);
    for d in [image.width(), image.height(), image.channels()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &p in image.pixels() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

fn to_u8(p: f64) -> u8 {
    (p * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Quantizes to 8 bits and encodes as PNG (grayscale or RGB).
pub fn encode_png(image: &Image) -> Result<Vec<u8>, ImageIoError> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let bytes: Vec<u8> = image.pixels().iter().map(|&p| to_u8(p)).collect();
    let dynamic = match image.channels() {
        1 => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes).expect("buffer size matches"),
        ),
        3 => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes).expect("buffer size matches"),
        ),
        c => return Err(ImageIoError::Channels(c)),
    };
    let mut out = Cursor::new(Vec::new());
    dynamic.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Writes PNG for `.png` paths and the raw float format otherwise.
pub fn save_image(image: &Image, path: &Path) -> Result<(), ImageIoError> {
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => encode_png(image)?,
        _ => encode_raw(image),
    };
    std::fs::write(path, bytes).map_err(|source| ImageIoError::Io {
        path: path.display().to_string(),
        source,
    })
}
