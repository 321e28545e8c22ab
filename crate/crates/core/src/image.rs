//! Grayscale image loading and the working-resolution resize rule.
//!
//! All downstream feature extraction operates on row-major luminance images
//! with values in `[0, 1]`. Color inputs are reduced with the ITU-R 601
//! weights so results are reproducible across decoders.

use std::path::Path;

use thiserror::Error;

/// ITU-R 601 luma weights, fixed for reproducibility.
const LUMA_R: f32 = 0.299;
const LUMA_G: f32 = 0.587;
const LUMA_B: f32 = 0.114;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image file not found: {0}")]
    NotFound(String),
    #[error("failed to decode {path}: {reason}")]
    DecodeFailed { path: String, reason: String },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("image {width}x{height} smaller than the {min_width}x{min_height} descriptor window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min_width: usize,
        min_height: usize,
    },
}

/// Row-major grayscale image with luminance values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImageGray {
    /// Wraps raw luminance data. Panics if the dimensions are empty, the
    /// buffer length does not match, or any value falls outside `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert!(width >= 1 && height >= 1, "empty image");
        assert_eq!(data.len(), width * height, "buffer length mismatch");
        assert!(
            data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)),
            "luminance values must be finite and within [0, 1]"
        );
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(width, height, data)
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.width..(row + 1) * self.width]
    }
}

/// Loads a PNG, JPEG, or PGM image and converts it to luminance.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGray, ImageError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    if !path.exists() {
        return Err(ImageError::NotFound(display));
    }
    let reader = image::ImageReader::open(path)
        .map_err(|e| ImageError::DecodeFailed { path: display.clone(), reason: e.to_string() })?
        .with_guessed_format()
        .map_err(|e| ImageError::DecodeFailed { path: display.clone(), reason: e.to_string() })?;
    match reader.format() {
        Some(image::ImageFormat::Png | image::ImageFormat::Jpeg | image::ImageFormat::Pnm) => {}
        Some(other) => return Err(ImageError::UnsupportedFormat(format!("{other:?}"))),
        None => return Err(ImageError::UnsupportedFormat(display)),
    }
    let decoded = reader
        .decode()
        .map_err(|e| ImageError::DecodeFailed { path: display.clone(), reason: e.to_string() })?;
    Ok(to_luminance(decoded))
}

fn to_luminance(img: image::DynamicImage) -> ImageGray {
    use image::DynamicImage::*;
    let width = img.width() as usize;
    let height = img.height() as usize;
    let data: Vec<f32> = match img {
        ImageLuma8(buf) => buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        ImageLuma16(buf) => buf.into_raw().iter().map(|&v| v as f32 / 65535.0).collect(),
        ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
        ImageLumaA16(buf) => buf.pixels().map(|p| p.0[0] as f32 / 65535.0).collect(),
        ImageRgb16(buf) => buf
            .pixels()
            .map(|p| luma(p.0[0] as f32 / 65535.0, p.0[1] as f32 / 65535.0, p.0[2] as f32 / 65535.0))
            .collect(),
        ImageRgba16(buf) => buf
            .pixels()
            .map(|p| luma(p.0[0] as f32 / 65535.0, p.0[1] as f32 / 65535.0, p.0[2] as f32 / 65535.0))
            .collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma(p.0[0] as f32 / 255.0, p.0[1] as f32 / 255.0, p.0[2] as f32 / 255.0))
            .collect(),
    };
    // Clamp away any rounding excursions before constructing.
    let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    ImageGray::new(width, height, data)
}

#[inline]
fn luma(r: f32, g: f32, b: f32) -> f32 {
    LUMA_R * r + LUMA_G * g + LUMA_B * b
}

/// Saves as a 16-bit grayscale PNG (near-lossless for `[0, 1]` luminance).
pub fn save_png(img: &ImageGray, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_fn(
        img.width() as u32,
        img.height() as u32,
        |x, y| image::Luma([(img.get(y as usize, x as usize) * 65535.0).round() as u16]),
    );
    buf.save(path.as_ref()).map_err(|e| ImageError::DecodeFailed {
        path: path.as_ref().display().to_string(),
        reason: e.to_string(),
    })
}

/// Downsamples so that `max(width, height) == max_dim`, preserving aspect
/// ratio. Images already within the bound are returned unchanged.
pub fn resize_max_dim(img: &ImageGray, max_dim: usize) -> ImageGray {
    assert!(max_dim >= 1, "max_dim must be at least 1");
    let (w, h) = (img.width(), img.height());
    if w.max(h) <= max_dim {
        return img.clone();
    }
    let scale = max_dim as f64 / w.max(h) as f64;
    let (new_w, new_h) = if w >= h {
        (max_dim, ((h as f64 * scale).round() as usize).max(1))
    } else {
        (((w as f64 * scale).round() as usize).max(1), max_dim)
    };
    bilinear_resize(img, new_w, new_h)
}

fn bilinear_resize(img: &ImageGray, new_w: usize, new_h: usize) -> ImageGray {
    let (w, h) = (img.width(), img.height());
    let sx = w as f64 / new_w as f64;
    let sy = h as f64 / new_h as f64;
    let mut data = Vec::with_capacity(new_w * new_h);
    for r in 0..new_h {
        let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = (fy - y0 as f64) as f32;
        for c in 0..new_w {
            let fx = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = (fx - x0 as f64) as f32;
            // lerp form keeps constants exactly constant
            let top = lerp(img.get(y0, x0), img.get(y0, x1), tx);
            let bot = lerp(img.get(y1, x0), img.get(y1, x1), tx);
            data.push(lerp(top, bot, ty).clamp(0.0, 1.0));
        }
    }
    ImageGray::new(new_w, new_h, data)
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}
