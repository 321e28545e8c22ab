//! Streaming stationary statistics over an image corpus.
//!
//! The accumulator gathers, per spatial displacement `(di, dj)` up to a
//! bandwidth `B`, running sums of cross-channel descriptor products together
//! with per-channel sums and pair counts. Only displacements with both pixels
//! fully inside the image contribute, so the statistics carry no padding
//! bias. Centering happens at [`StatsAccumulator::finalize`], which keeps
//! accumulators mergeable.
//!
//! Sums are stored as 2^-64 fixed-point integers. Integer addition is exact,
//! so merging accumulators is commutative and associative bit-for-bit, in any
//! order and under any parenthesization — corpus-parallel accumulation cannot
//! perturb results. Per-image contributions are computed in f64 with a fixed
//! summation order and quantized once on entry.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::sift::FeatureMap;

/// 2^64, the fixed-point scale of the stored sums.
const FP_SCALE: f64 = 18446744073709551616.0;

#[inline]
fn quantize(v: f64) -> i128 {
    (v * FP_SCALE).round() as i128
}

#[inline]
fn dequantize(q: i128) -> f64 {
    q as f64 / FP_SCALE
}

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("feature map has {fm} channels, accumulator expects {acc}")]
    ChannelMismatch { fm: usize, acc: usize },
    #[error("image {width}x{height} must be strictly larger than bandwidth {bandwidth}")]
    ImageSmallerThanBandwidth { width: usize, height: usize, bandwidth: usize },
    #[error(
        "accumulator shapes differ: {lhs_channels} ch / bandwidth {lhs_bandwidth} \
         vs {rhs_channels} ch / bandwidth {rhs_bandwidth}"
    )]
    ShapeMismatch {
        lhs_channels: usize,
        lhs_bandwidth: usize,
        rhs_channels: usize,
        rhs_bandwidth: usize,
    },
    #[error("displacement bin ({di},{dj}) has {count} pixel pairs; at least 2 required")]
    InsufficientData { di: isize, dj: isize, count: u64 },
}

/// Running second-moment sums over all pixel pairs within a displacement
/// bandwidth, mergeable exactly.
///
/// Only the canonical half of the displacement range is stored: the sum for
/// `(-di, -dj, q, p)` is by definition the same set of products as
/// `(di, dj, p, q)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsAccumulator {
    channels: usize,
    bandwidth: usize,
    n_images: u64,
    /// Pixel-pair counts, one per canonical displacement bin.
    pair_counts: Vec<u64>,
    /// Per-channel value sums (fixed-point).
    channel_sums: Vec<i128>,
    /// Raw product sums, `bins x channels x channels` (fixed-point).
    prod_sums: Vec<i128>,
}

/// Canonical displacement bins: `(0, 0..=B)` then `(1..=B, -B..=B)`.
fn canonical_bins(bandwidth: usize) -> impl Iterator<Item = (isize, isize)> {
    let b = bandwidth as isize;
    (0..=b).flat_map(move |di| {
        let lo = if di == 0 { 0 } else { -b };
        (lo..=b).map(move |dj| (di, dj))
    })
}

pub(crate) fn n_canonical_bins(bandwidth: usize) -> usize {
    (bandwidth + 1) + bandwidth * (2 * bandwidth + 1)
}

fn canonical_index(bandwidth: usize, di: isize, dj: isize) -> usize {
    let b = bandwidth as isize;
    debug_assert!((0..=b).contains(&di));
    if di == 0 {
        debug_assert!((0..=b).contains(&dj));
        dj as usize
    } else {
        (bandwidth + 1) + (di as usize - 1) * (2 * bandwidth + 1) + (dj + b) as usize
    }
}

impl StatsAccumulator {
    pub fn new(channels: usize, bandwidth: usize) -> Self {
        assert!(channels >= 1, "need at least one channel");
        let bins = n_canonical_bins(bandwidth);
        Self {
            channels,
            bandwidth,
            n_images: 0,
            pair_counts: vec![0; bins],
            channel_sums: vec![0; channels],
            prod_sums: vec![0; bins * channels * channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn n_images(&self) -> u64 {
        self.n_images
    }

    /// Total contributing pixels (the pair count of displacement `(0, 0)`).
    pub fn n_pixels(&self) -> u64 {
        self.pair_counts[0]
    }

    /// Pixel-pair count for any displacement within the bandwidth.
    pub fn pair_count(&self, di: isize, dj: isize) -> u64 {
        let (di, dj) = if (di, dj) < (0, 0) { (-di, -dj) } else { (di, dj) };
        self.pair_counts[canonical_index(self.bandwidth, di, dj)]
    }

    pub fn channel_sum(&self, p: usize) -> f64 {
        dequantize(self.channel_sums[p])
    }

    /// Raw (uncentered) product sum for displacement `(di, dj)` and channel
    /// pair `(p, q)`. Non-canonical displacements resolve through the exact
    /// identity `sum(di,dj,p,q) == sum(-di,-dj,q,p)`.
    pub fn raw_product_sum(&self, di: isize, dj: isize, p: usize, q: usize) -> f64 {
        let c = self.channels;
        let (di, dj, p, q) = if (di, dj) < (0, 0) { (-di, -dj, q, p) } else { (di, dj, p, q) };
        let bin = canonical_index(self.bandwidth, di, dj);
        dequantize(self.prod_sums[(bin * c + p) * c + q])
    }

    /// Folds one feature map into the statistics.
    pub fn accumulate(&mut self, fm: &FeatureMap) -> Result<(), StatsError> {
        if fm.channels() != self.channels {
            return Err(StatsError::ChannelMismatch { fm: fm.channels(), acc: self.channels });
        }
        let (w, h) = (fm.width(), fm.height());
        if w <= self.bandwidth || h <= self.bandwidth {
            return Err(StatsError::ImageSmallerThanBandwidth {
                width: w,
                height: h,
                bandwidth: self.bandwidth,
            });
        }
        let c = self.channels;
        // One f64 copy of the map, rows flattened: (H*W) x C.
        let fmat = Array2::from_shape_fn((h * w, c), |(i, ch)| fm.data()[i * c + ch] as f64);

        // Per-channel sums in fixed row order.
        let mut csums = vec![0.0f64; c];
        for row in fmat.rows() {
            for (s, &v) in csums.iter_mut().zip(row.iter()) {
                *s += v;
            }
        }
        for (acc, s) in self.channel_sums.iter_mut().zip(&csums) {
            *acc += quantize(*s);
        }

        // Per-bin product sums via one small GEMM per image row.
        let mut buf = Array2::<f64>::zeros((c, c));
        for (di, dj) in canonical_bins(self.bandwidth) {
            let bin = canonical_index(self.bandwidth, di, dj);
            let c0 = (-dj).max(0) as usize;
            let c1 = w - dj.max(0) as usize;
            let len = c1 - c0;
            buf.fill(0.0);
            for r in 0..h - di as usize {
                let a = anchor_rows(&fmat, w, r, c0, len);
                let b = anchor_rows(&fmat, w, r + di as usize, (c0 as isize + dj) as usize, len);
                general_mat_mul(1.0, &a.t(), &b, 1.0, &mut buf.view_mut());
            }
            self.pair_counts[bin] += ((h - di as usize) * len) as u64;
            let base = bin * c * c;
            for (dst, &v) in self.prod_sums[base..base + c * c].iter_mut().zip(buf.iter()) {
                *dst += quantize(v);
            }
        }
        self.n_images += 1;
        Ok(())
    }

    /// Element-wise sum of two accumulators. Exact: any merge order and any
    /// parenthesization produce bit-identical results.
    pub fn merge(&self, other: &Self) -> Result<Self, StatsError> {
        if self.channels != other.channels || self.bandwidth != other.bandwidth {
            return Err(StatsError::ShapeMismatch {
                lhs_channels: self.channels,
                lhs_bandwidth: self.bandwidth,
                rhs_channels: other.channels,
                rhs_bandwidth: other.bandwidth,
            });
        }
        let mut out = self.clone();
        out.n_images += other.n_images;
        for (a, b) in out.pair_counts.iter_mut().zip(&other.pair_counts) {
            *a += b;
        }
        for (a, b) in out.channel_sums.iter_mut().zip(&other.channel_sums) {
            *a += b;
        }
        for (a, b) in out.prod_sums.iter_mut().zip(&other.prod_sums) {
            *a += b;
        }
        Ok(out)
    }

    /// Raw storage view for persistence: (pair counts, channel sums, product
    /// sums), the latter two in 2^-64 fixed point.
    pub(crate) fn raw_parts(&self) -> (&[u64], &[i128], &[i128]) {
        (&self.pair_counts, &self.channel_sums, &self.prod_sums)
    }

    /// Rebuilds an accumulator from persisted raw storage.
    pub(crate) fn from_raw_parts(
        channels: usize,
        bandwidth: usize,
        n_images: u64,
        pair_counts: Vec<u64>,
        channel_sums: Vec<i128>,
        prod_sums: Vec<i128>,
    ) -> Self {
        let bins = n_canonical_bins(bandwidth);
        assert_eq!(pair_counts.len(), bins);
        assert_eq!(channel_sums.len(), channels);
        assert_eq!(prod_sums.len(), bins * channels * channels);
        Self { channels, bandwidth, n_images, pair_counts, channel_sums, prod_sums }
    }

    /// Centers the raw sums into the per-channel mean and the displacement
    /// tensor of second moments.
    pub fn finalize(&self) -> Result<(Vec<f64>, DisplacementTensor), StatsError> {
        for (di, dj) in canonical_bins(self.bandwidth) {
            let count = self.pair_counts[canonical_index(self.bandwidth, di, dj)];
            if count < 2 {
                return Err(StatsError::InsufficientData { di, dj, count });
            }
        }
        let c = self.channels;
        let n = self.n_pixels() as f64;
        let mean: Vec<f64> = self.channel_sums.iter().map(|&s| dequantize(s) / n).collect();

        let b = self.bandwidth as isize;
        let side = 2 * self.bandwidth + 1;
        let mut values = vec![0.0f64; side * side * c * c];
        for di in -b..=b {
            for dj in -b..=b {
                let count = self.pair_count(di, dj) as f64;
                let base = (((di + b) as usize) * side + (dj + b) as usize) * c * c;
                for p in 0..c {
                    for q in 0..c {
                        let raw = self.raw_product_sum(di, dj, p, q);
                        let mut v = raw / count - mean[p] * mean[q];
                        if di == 0 && dj == 0 && p == q {
                            // variances cannot be negative; clip roundoff
                            v = v.max(0.0);
                        }
                        values[base + p * c + q] = v;
                    }
                }
            }
        }
        let mut tensor =
            DisplacementTensor { bandwidth: self.bandwidth, channels: c, values };
        tensor.symmetrize_zero_block();
        Ok((mean, tensor))
    }
}

/// Contiguous `(len x C)` view of columns `[c0, c0+len)` of image row `r`.
fn anchor_rows(fmat: &Array2<f64>, width: usize, r: usize, c0: usize, len: usize) -> ArrayView2<'_, f64> {
    let start = r * width + c0;
    fmat.slice(ndarray::s![start..start + len, ..])
}

/// Centered second moments `g[di, dj, p, q]` for all displacements within the
/// bandwidth. Conjugate symmetry `g[di,dj,p,q] == g[-di,-dj,q,p]` holds
/// exactly because both entries are materialized from the same stored sum.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementTensor {
    bandwidth: usize,
    channels: usize,
    values: Vec<f64>,
}

impl DisplacementTensor {
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, di: isize, dj: isize, p: usize, q: usize) -> f64 {
        let b = self.bandwidth as isize;
        debug_assert!(di.abs() <= b && dj.abs() <= b);
        let side = 2 * self.bandwidth + 1;
        let c = self.channels;
        self.values[((((di + b) as usize) * side + (dj + b) as usize) * c + p) * c + q]
    }

    /// The `C x C` block at displacement `(di, dj)` as a matrix view.
    pub fn block(&self, di: isize, dj: isize) -> ArrayView2<'_, f64> {
        let b = self.bandwidth as isize;
        let side = 2 * self.bandwidth + 1;
        let c = self.channels;
        let base = (((di + b) as usize) * side + (dj + b) as usize) * c * c;
        ArrayView2::from_shape((c, c), &self.values[base..base + c * c]).expect("block shape")
    }

    fn symmetrize_zero_block(&mut self) {
        let c = self.channels;
        let side = 2 * self.bandwidth + 1;
        let base = (self.bandwidth * side + self.bandwidth) * c * c;
        for p in 0..c {
            for q in p + 1..c {
                let a = self.values[base + p * c + q];
                let b = self.values[base + q * c + p];
                let m = 0.5 * (a + b);
                self.values[base + p * c + q] = m;
                self.values[base + q * c + p] = m;
            }
        }
    }
}
