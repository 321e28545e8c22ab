//! Dense per-pixel SIFT feature maps.
//!
//! Every pixel receives a `grid x grid x orientation_bins` descriptor (128
//! channels with the defaults) aggregating Gaussian-smoothed gradient
//! orientations over a window of `grid` cells of `cell_size` pixels centered
//! at the pixel, with bilinear spatial and orientation binning. Descriptors
//! are L2-normalized, clamped, and renormalized; the all-zero descriptor of a
//! flat region stays the zero vector.

use rayon::prelude::*;

use crate::image::{ImageError, ImageGray};

/// Dense SIFT extraction parameters.
///
/// `grid` and `orientation_bins` default to the classic 4 and 8; together
/// with `cell_size = 2` this yields 128-channel descriptors with a 9x9 pixel
/// footprint at the working resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SiftParams {
    /// Cell side length in pixels.
    pub cell_size: usize,
    /// Cells per descriptor side.
    pub grid: usize,
    /// Orientation histogram bins per cell.
    pub orientation_bins: usize,
    /// Per-component clamp applied after the first L2 normalization.
    pub clamp: f32,
    /// Gaussian smoothing applied to the image before gradients.
    pub smoothing_sigma: f32,
}

impl Default for SiftParams {
    fn default() -> Self {
        Self { cell_size: 2, grid: 4, orientation_bins: 8, clamp: 0.2, smoothing_sigma: 0.8 }
    }
}

impl SiftParams {
    /// Descriptor length: `grid * grid * orientation_bins`.
    pub fn channels(&self) -> usize {
        self.grid * self.grid * self.orientation_bins
    }

    /// Largest pixel offset from the descriptor center that can contribute.
    pub fn window_radius(&self) -> usize {
        // Outermost cell center sits at cell_size*(grid-1)/2; bilinear support
        // extends one further cell width, exclusive.
        let reach = self.cell_size as f32 * (self.grid as f32 - 1.0) / 2.0 + self.cell_size as f32;
        (reach.ceil() as usize).saturating_sub(1)
    }

    fn validate(&self) {
        assert!(self.cell_size >= 1, "cell_size must be at least 1");
        assert!(self.grid >= 1, "grid must be at least 1");
        assert!(self.orientation_bins >= 2, "need at least two orientation bins");
        assert!(
            self.clamp > 0.0 && self.clamp <= 1.0,
            "clamp must lie in (0, 1]"
        );
        assert!(self.smoothing_sigma >= 0.0, "smoothing_sigma must be non-negative");
    }
}

/// H x W grid of C-channel descriptors, row-major in (row, col, channel).
///
/// This (row, col, channel) layout is shared by every module that flattens
/// patches into vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    /// Wraps raw descriptor data. Panics on shape mismatch or non-finite
    /// values. Maps produced by [`dense_sift`] additionally have non-negative
    /// components and per-pixel L2 norm at most `1 + 1e-6`.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        assert!(width >= 1 && height >= 1 && channels >= 1, "empty feature map");
        assert_eq!(data.len(), width * height * channels, "buffer length mismatch");
        assert!(data.iter().all(|v| v.is_finite()), "descriptor values must be finite");
        Self { width, height, channels, data }
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::new(width, height, channels, vec![0.0; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn descriptor(&self, row: usize, col: usize) -> &[f32] {
        let base = (row * self.width + col) * self.channels;
        &self.data[base..base + self.channels]
    }
}

/// Computes one SIFT descriptor per pixel of `img`.
pub fn dense_sift(img: &ImageGray, params: &SiftParams) -> Result<FeatureMap, ImageError> {
    params.validate();
    let (w, h) = (img.width(), img.height());
    let min_side = params.grid * params.cell_size;
    if w < min_side || h < min_side {
        return Err(ImageError::ImageTooSmall {
            width: w,
            height: h,
            min_width: min_side,
            min_height: min_side,
        });
    }

    let smoothed = gaussian_blur(img, params.smoothing_sigma);
    // Central differences; where the stencil leaves the image the gradient
    // component is zero, so flat images stay descriptor-free at the borders.
    let mut mag = vec![0.0f32; w * h];
    let mut orient = vec![0.0f32; w * h];
    let bins = params.orientation_bins as f32;
    for r in 0..h {
        for c in 0..w {
            let dx = if c >= 1 && c + 1 < w {
                0.5 * (smoothed[r * w + c + 1] - smoothed[r * w + c - 1])
            } else {
                0.0
            };
            let dy = if r >= 1 && r + 1 < h {
                0.5 * (smoothed[(r + 1) * w + c] - smoothed[(r - 1) * w + c])
            } else {
                0.0
            };
            let i = r * w + c;
            mag[i] = (dx * dx + dy * dy).sqrt();
            // Fractional orientation bin in [0, bins).
            let mut o = dy.atan2(dx) * bins / (2.0 * std::f32::consts::PI);
            if o < 0.0 {
                o += bins;
            }
            if o >= bins {
                o -= bins;
            }
            orient[i] = o;
        }
    }

    // Bilinear weight of each window offset onto each cell, per axis. At most
    // two cells have non-zero weight for any offset.
    let radius = params.window_radius() as isize;
    let span = (2 * radius + 1) as usize;
    let grid = params.grid;
    let cell = params.cell_size as f32;
    let mut cell_w = vec![0.0f32; span * grid];
    for (di, d) in (-radius..=radius).enumerate() {
        for k in 0..grid {
            let center = cell * (k as f32 - (grid as f32 - 1.0) / 2.0);
            let t = 1.0 - (d as f32 - center).abs() / cell;
            cell_w[di * grid + k] = t.max(0.0);
        }
    }

    let channels = params.channels();
    let nbins = params.orientation_bins;
    let mut data = vec![0.0f32; w * h * channels];
    data.par_chunks_mut(w * channels).enumerate().for_each(|(r, row_out)| {
        let r = r as isize;
        let mut desc = vec![0.0f32; channels];
        for c in 0..w as isize {
            desc.iter_mut().for_each(|v| *v = 0.0);
            for dr in -radius..=radius {
                let rr = r + dr;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                let wrow = &cell_w[(dr + radius) as usize * grid..(dr + radius) as usize * grid + grid];
                for dc in -radius..=radius {
                    let cc = c + dc;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    let i = rr as usize * w + cc as usize;
                    let m = mag[i];
                    if m == 0.0 {
                        continue;
                    }
                    let wcol =
                        &cell_w[(dc + radius) as usize * grid..(dc + radius) as usize * grid + grid];
                    let o = orient[i];
                    let b0 = o.floor() as usize % nbins;
                    let fo = o - o.floor();
                    let b1 = (b0 + 1) % nbins;
                    for (kr, &wr) in wrow.iter().enumerate() {
                        if wr == 0.0 {
                            continue;
                        }
                        for (kc, &wc) in wcol.iter().enumerate() {
                            if wc == 0.0 {
                                continue;
                            }
                            let base = (kr * grid + kc) * nbins;
                            let s = m * wr * wc;
                            desc[base + b0] += s * (1.0 - fo);
                            desc[base + b1] += s * fo;
                        }
                    }
                }
            }
            normalize_descriptor(&mut desc, params.clamp);
            let out = &mut row_out[c as usize * channels..(c as usize + 1) * channels];
            out.copy_from_slice(&desc);
        }
    });

    Ok(FeatureMap::new(w, h, channels, data))
}

/// L2-normalize, clamp each component, renormalize. The zero vector is its
/// own normalization.
fn normalize_descriptor(desc: &mut [f32], clamp: f32) {
    let norm = desc.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm > 0.0 {
        desc.iter_mut().for_each(|v| *v /= norm);
    }
    desc.iter_mut().for_each(|v| *v = v.min(clamp));
    let norm = desc.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm > 0.0 {
        desc.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Separable Gaussian smoothing with replicated borders. `sigma == 0` returns
/// the image unchanged.
fn gaussian_blur(img: &ImageGray, sigma: f32) -> Vec<f32> {
    let (w, h) = (img.width(), img.height());
    if sigma == 0.0 {
        return img.data().to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for t in -radius..=radius {
        kernel.push((-0.5 * (t as f32 / sigma).powi(2)).exp());
    }
    let sum: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= sum);

    let mut hpass = vec![0.0f32; w * h];
    for r in 0..h {
        let row = img.row(r);
        for c in 0..w as isize {
            let mut acc = 0.0f32;
            for (ti, t) in (-radius..=radius).enumerate() {
                let cc = (c + t).clamp(0, w as isize - 1) as usize;
                acc += kernel[ti] * row[cc];
            }
            hpass[r * w + c as usize] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for r in 0..h as isize {
        for c in 0..w {
            let mut acc = 0.0f32;
            for (ti, t) in (-radius..=radius).enumerate() {
                let rr = (r + t).clamp(0, h as isize - 1) as usize;
                acc += kernel[ti] * hpass[rr * w + c];
            }
            out[r as usize * w + c] = acc;
        }
    }
    out
}
