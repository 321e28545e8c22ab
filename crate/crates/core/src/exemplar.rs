//! Per-pixel exemplar LDA classifiers, calibrated posterior evaluation, and
//! the L1 baseline unary.
//!
//! One classifier is learned per reference pixel from a single positive patch
//! against the shared negative statistics: `w = Sigma_reg^-1 (u_pos - u_neg)`.
//! Raw scores calibrate into posteriors through the closed-form logistic
//! `p = sigmoid((x - (u_pos + u_neg)/2)ᵀ w + mu)`, so confidence is
//! comparable across classifiers without a separate calibration phase.

use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

use crate::covariance::CovarianceFactor;
use crate::linalg::ddot;
use crate::sift::FeatureMap;

#[derive(Debug, Error)]
pub enum ExemplarError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("search window does not intersect the target image")]
    EmptyWindow,
}

/// Half-open pixel rectangle restricting evaluation on the target image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl Window {
    fn clamp_to(&self, height: usize, width: usize) -> Option<Window> {
        let w = Window {
            row0: self.row0,
            col0: self.col0,
            row1: self.row1.min(height),
            col1: self.col1.min(width),
        };
        (w.row0 < w.row1 && w.col0 < w.col1).then_some(w)
    }
}

/// What the per-pixel values of a [`LikelihoodMap`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    /// Raw classifier scores `wᵀ x`.
    Raw,
    /// Calibrated posteriors, strictly inside (0, 1).
    Posterior,
    /// Non-negative dissimilarity costs (the L1 baseline).
    Cost,
}

/// Per-target-pixel scalar field with a validity mask (positions outside the
/// requested window are invalid).
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodMap {
    width: usize,
    height: usize,
    kind: MapKind,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl LikelihoodMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    /// Value at (row, col), or None outside the evaluated window.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.width + col;
        self.valid[i].then(|| self.values[i])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Largest double strictly below one; posteriors are clamped into
/// `[MIN_POSITIVE, POSTERIOR_MAX]` so they stay in the open interval.
const POSTERIOR_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Numerically stable logistic, clamped to the open interval (0, 1).
pub fn sigmoid(y: f64) -> f64 {
    let p = if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, POSTERIOR_MAX)
}

/// Flattens the detector window centered at `(row, col)` into the shared
/// (row, col, channel) layout; positions outside the image contribute zeros.
pub fn extract_patch(
    fm: &FeatureMap,
    row: usize,
    col: usize,
    detector_h: usize,
    detector_w: usize,
) -> Vec<f64> {
    let c = fm.channels();
    let mut out = vec![0.0f64; detector_h * detector_w * c];
    let r0 = row as isize - (detector_h as isize - 1) / 2;
    let c0 = col as isize - (detector_w as isize - 1) / 2;
    for pr in 0..detector_h {
        let rr = r0 + pr as isize;
        if rr < 0 || rr >= fm.height() as isize {
            continue;
        }
        for pc in 0..detector_w {
            let cc = c0 + pc as isize;
            if cc < 0 || cc >= fm.width() as isize {
                continue;
            }
            let src = fm.descriptor(rr as usize, cc as usize);
            let dst = (pr * detector_w + pc) * c;
            for (o, &v) in out[dst..dst + c].iter_mut().zip(src) {
                *o = v as f64;
            }
        }
    }
    out
}

/// Learns one exemplar classifier: `w = Sigma_reg^-1 (u_pos - u_neg)` and the
/// calibration bias `(u_pos + u_neg)ᵀ w / 2`.
pub fn learn_classifier(
    factor: &CovarianceFactor,
    u_pos: &[f64],
) -> Result<(Vec<f64>, f64), ExemplarError> {
    if u_pos.len() != factor.dim() {
        return Err(ExemplarError::DimensionMismatch { expected: factor.dim(), got: u_pos.len() });
    }
    let mean = factor.mean_neg();
    let b: Vec<f64> = u_pos.iter().zip(mean).map(|(u, m)| u - m).collect();
    let w = factor.solve(&b);
    let mid: Vec<f64> = u_pos.iter().zip(mean).map(|(u, m)| 0.5 * (u + m)).collect();
    let bias = ddot(&mid, &w);
    Ok((w, bias))
}

/// One classifier per reference pixel plus its calibration constants.
#[derive(Debug, Clone)]
pub struct ExemplarBank {
    ref_width: usize,
    ref_height: usize,
    detector_h: usize,
    detector_w: usize,
    channels: usize,
    /// dim x n_pixels; column `r * ref_width + c` is the classifier of
    /// reference pixel (r, c).
    weights: Array2<f64>,
    biases: Vec<f64>,
    prior_mu: f64,
}

/// Fixed column chunk for batched bank learning; bounds transient memory and
/// never depends on the worker count.
const BANK_CHUNK: usize = 4096;

/// Learns a classifier for every reference pixel as one stacked multi-RHS
/// solve per column chunk. Equivalent to per-pixel [`learn_classifier`].
pub fn learn_bank(
    factor: &CovarianceFactor,
    fm_ref: &FeatureMap,
    prior_mu: f64,
) -> Result<ExemplarBank, ExemplarError> {
    if fm_ref.channels() != factor.channels() {
        return Err(ExemplarError::DimensionMismatch {
            expected: factor.channels(),
            got: fm_ref.channels(),
        });
    }
    let dim = factor.dim();
    let (w, h) = (fm_ref.width(), fm_ref.height());
    let npix = w * h;
    let mean = factor.mean_neg().to_vec();
    let mut weights = Array2::<f64>::zeros((dim, npix));
    let mut biases = vec![0.0f64; npix];
    for start in (0..npix).step_by(BANK_CHUNK) {
        let len = BANK_CHUNK.min(npix - start);
        // Right-hand sides u_pos - u_neg, one patch per row, then transposed
        // into column order for the solver.
        let mut rhs_rows = Array2::<f64>::zeros((len, dim));
        rhs_rows
            .axis_iter_mut(ndarray::Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(j, mut row)| {
                let pix = start + j;
                let patch =
                    extract_patch(fm_ref, pix / w, pix % w, factor.detector_h(), factor.detector_w());
                for ((dst, p), m) in row.iter_mut().zip(&patch).zip(&mean) {
                    *dst = p - m;
                }
            });
        let wchunk = factor.solve_many(rhs_rows.t());
        // bias = (u_pos + u_neg)ᵀ w / 2 = bᵀ w / 2 + u_negᵀ w
        for j in 0..len {
            let wcol = wchunk.column(j);
            let wslice = wcol.to_vec();
            let brow = rhs_rows.row(j);
            biases[start + j] =
                0.5 * ddot(brow.to_slice().expect("row-major"), &wslice) + ddot(&mean, &wslice);
        }
        weights.slice_mut(ndarray::s![.., start..start + len]).assign(&wchunk);
    }
    Ok(ExemplarBank {
        ref_width: w,
        ref_height: h,
        detector_h: factor.detector_h(),
        detector_w: factor.detector_w(),
        channels: factor.channels(),
        weights,
        biases,
        prior_mu,
    })
}

impl ExemplarBank {
    pub fn ref_width(&self) -> usize {
        self.ref_width
    }

    pub fn ref_height(&self) -> usize {
        self.ref_height
    }

    pub fn detector_h(&self) -> usize {
        self.detector_h
    }

    pub fn detector_w(&self) -> usize {
        self.detector_w
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dim(&self) -> usize {
        self.detector_h * self.detector_w * self.channels
    }

    pub fn prior_mu(&self) -> f64 {
        self.prior_mu
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Classifier weights of reference pixel (row, col).
    pub fn weight(&self, row: usize, col: usize) -> Vec<f64> {
        self.weights.column(row * self.ref_width + col).to_vec()
    }

    pub fn bias(&self, row: usize, col: usize) -> f64 {
        self.biases[row * self.ref_width + col]
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }
}

/// Raw sliding-window scores `wᵀ patch(t)` of one classifier over the target
/// map, restricted to `window` when given.
pub fn likelihood_map(
    w: &[f64],
    detector_h: usize,
    detector_w: usize,
    fm_tgt: &FeatureMap,
    window: Option<Window>,
) -> Result<LikelihoodMap, ExemplarError> {
    let c = fm_tgt.channels();
    if w.len() != detector_h * detector_w * c {
        return Err(ExemplarError::DimensionMismatch {
            expected: detector_h * detector_w * c,
            got: w.len(),
        });
    }
    evaluate_map(fm_tgt, window, MapKind::Raw, |r, col| {
        raw_score(w, detector_h, detector_w, fm_tgt, r, col)
    })
}

/// Calibrated posterior map of one bank classifier over the target image:
/// `p(t) = sigmoid(raw(t) - bias + prior_mu)`, strictly inside (0, 1).
pub fn posterior_map(
    bank: &ExemplarBank,
    ref_row: usize,
    ref_col: usize,
    fm_tgt: &FeatureMap,
    prior_mu: f64,
    window: Option<Window>,
) -> Result<LikelihoodMap, ExemplarError> {
    if fm_tgt.channels() != bank.channels() {
        return Err(ExemplarError::DimensionMismatch {
            expected: bank.channels(),
            got: fm_tgt.channels(),
        });
    }
    posterior_map_from_classifier(
        &bank.weight(ref_row, ref_col),
        bank.bias(ref_row, ref_col),
        bank.detector_h(),
        bank.detector_w(),
        fm_tgt,
        prior_mu,
        window,
    )
}

/// Posterior map from an explicit classifier and its calibration bias.
pub fn posterior_map_from_classifier(
    w: &[f64],
    bias: f64,
    detector_h: usize,
    detector_w: usize,
    fm_tgt: &FeatureMap,
    prior_mu: f64,
    window: Option<Window>,
) -> Result<LikelihoodMap, ExemplarError> {
    let c = fm_tgt.channels();
    if w.len() != detector_h * detector_w * c {
        return Err(ExemplarError::DimensionMismatch {
            expected: detector_h * detector_w * c,
            got: w.len(),
        });
    }
    let w = w.to_vec();
    evaluate_map(fm_tgt, window, MapKind::Posterior, move |r, col| {
        sigmoid(raw_score(&w, detector_h, detector_w, fm_tgt, r, col) - bias + prior_mu)
    })
}

/// The SIFT Flow baseline unary: L1 distance between the reference descriptor
/// patch at `(ref_row, ref_col)` and the target patch at each evaluated
/// pixel. Support is 1x1 by default (pointwise descriptors).
pub fn l1_unary(
    fm_ref: &FeatureMap,
    ref_row: usize,
    ref_col: usize,
    fm_tgt: &FeatureMap,
    support: (usize, usize),
    window: Option<Window>,
) -> Result<LikelihoodMap, ExemplarError> {
    if fm_ref.channels() != fm_tgt.channels() {
        return Err(ExemplarError::DimensionMismatch {
            expected: fm_ref.channels(),
            got: fm_tgt.channels(),
        });
    }
    let (dh, dw) = support;
    let ref_patch = extract_patch(fm_ref, ref_row, ref_col, dh, dw);
    evaluate_map(fm_tgt, window, MapKind::Cost, |r, col| {
        let tgt_patch = extract_patch(fm_tgt, r, col, dh, dw);
        ref_patch.iter().zip(&tgt_patch).map(|(a, b)| (a - b).abs()).sum()
    })
}

fn evaluate_map(
    fm_tgt: &FeatureMap,
    window: Option<Window>,
    kind: MapKind,
    eval: impl Fn(usize, usize) -> f64 + Sync,
) -> Result<LikelihoodMap, ExemplarError> {
    let (wd, ht) = (fm_tgt.width(), fm_tgt.height());
    let win = window
        .unwrap_or(Window { row0: 0, col0: 0, row1: ht, col1: wd })
        .clamp_to(ht, wd)
        .ok_or(ExemplarError::EmptyWindow)?;
    let mut values = vec![0.0f64; wd * ht];
    let mut valid = vec![false; wd * ht];
    let rows: Vec<usize> = (win.row0..win.row1).collect();
    let row_results: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|&r| (win.col0..win.col1).map(|col| eval(r, col)).collect())
        .collect();
    for (&r, vals) in rows.iter().zip(&row_results) {
        for (col, &v) in (win.col0..win.col1).zip(vals) {
            values[r * wd + col] = v;
            valid[r * wd + col] = true;
        }
    }
    Ok(LikelihoodMap { width: wd, height: ht, kind, values, valid })
}

/// `wᵀ patch(fm, row, col)` with zero padding, accumulated row-span by
/// row-span in f64.
pub fn raw_score(
    w: &[f64],
    detector_h: usize,
    detector_w: usize,
    fm: &FeatureMap,
    row: usize,
    col: usize,
) -> f64 {
    let c = fm.channels();
    let r0 = row as isize - (detector_h as isize - 1) / 2;
    let c0 = col as isize - (detector_w as isize - 1) / 2;
    let mut acc = 0.0f64;
    for pr in 0..detector_h {
        let rr = r0 + pr as isize;
        if rr < 0 || rr >= fm.height() as isize {
            continue;
        }
        // in-bounds column span of this detector row
        let pc_lo = (-c0).max(0) as usize;
        let pc_hi = detector_w.min((fm.width() as isize - c0).max(0) as usize);
        if pc_lo >= pc_hi {
            continue;
        }
        let fm_base = (rr as usize * fm.width() + (c0 + pc_lo as isize) as usize) * c;
        let w_base = (pr * detector_w + pc_lo) * c;
        let len = (pc_hi - pc_lo) * c;
        let fs = &fm.data()[fm_base..fm_base + len];
        let ws = &w[w_base..w_base + len];
        let mut span = 0.0f64;
        for (a, &b) in ws.iter().zip(fs) {
            span += a * b as f64;
        }
        acc += span;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{factorize, FactorKind};
    use crate::linalg::matmul;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_map(w: usize, h: usize, c: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::new(w, h, c, (0..w * h * c).map(|_| rng.random::<f32>()).collect())
    }

    fn random_spd(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);
        let mut a = matmul(g.view(), g.t());
        for i in 0..n {
            a[[i, i]] += 0.5 * n as f64;
        }
        a
    }

    fn identity_factor(dh: usize, dw: usize, c: usize, mean: &[f64]) -> CovarianceFactor {
        let dim = dh * dw * c;
        factorize(&Array2::eye(dim), FactorKind::Cholesky, dh, dw, c, mean, 0.0).unwrap()
    }

    #[test]
    fn patch_of_single_pixel_detector_is_the_descriptor() {
        let fm = random_map(5, 4, 3, 1);
        let patch = extract_patch(&fm, 2, 3, 1, 1);
        let want: Vec<f64> = fm.descriptor(2, 3).iter().map(|&v| v as f64).collect();
        assert_eq!(patch, want);
    }

    #[test]
    fn corner_patch_zero_pads_five_of_nine() {
        let fm = random_map(6, 6, 2, 2);
        let patch = extract_patch(&fm, 0, 0, 3, 3);
        let mut zero_positions = 0;
        for pr in 0..3 {
            for pc in 0..3 {
                let sl = &patch[(pr * 3 + pc) * 2..(pr * 3 + pc) * 2 + 2];
                if pr == 0 || pc == 0 {
                    assert_eq!(sl, &[0.0, 0.0], "padded position ({pr},{pc})");
                    zero_positions += 1;
                }
            }
        }
        assert_eq!(zero_positions, 5);
    }

    #[test]
    fn patch_of_constant_map_tiles_the_descriptor() {
        let c = 3;
        let desc = [0.1f32, 0.5, 0.9];
        let data: Vec<f32> = desc.iter().copied().cycle().take(8 * 8 * c).collect();
        let fm = FeatureMap::new(8, 8, c, data);
        let patch = extract_patch(&fm, 4, 4, 3, 3);
        for pos in 0..9 {
            for ch in 0..c {
                assert_eq!(patch[pos * c + ch], desc[ch] as f64);
            }
        }
    }

    #[test]
    fn identity_covariance_gives_mean_difference() {
        let mean = vec![0.25, 0.5];
        let factor = identity_factor(1, 1, 2, &mean);
        let (w, _) = learn_classifier(&factor, &[1.0, 1.0]).unwrap();
        assert_eq!(w, vec![0.75, 0.5]);
    }

    #[test]
    fn positive_equal_to_mean_gives_zero_classifier() {
        let mean = vec![0.3, 0.7, 0.1];
        let factor = identity_factor(1, 1, 3, &mean);
        let (w, bias) = learn_classifier(&factor, &mean).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
        assert_eq!(bias, 0.0);
    }

    #[test]
    fn solve_residual_is_tiny_for_random_spd() {
        let dim = 18;
        let spd = random_spd(dim, 3);
        let factor = factorize(&spd, FactorKind::Cholesky, 3, 3, 2, &[0.1, 0.2], 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u_pos: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let (w, _) = learn_classifier(&factor, &u_pos).unwrap();
        let b: Vec<f64> = u_pos.iter().zip(factor.mean_neg()).map(|(u, m)| u - m).collect();
        let sw = matmul(
            spd.view(),
            Array2::from_shape_vec((dim, 1), w).unwrap().view(),
        );
        for i in 0..dim {
            assert!((sw[[i, 0]] - b[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let factor = identity_factor(1, 1, 2, &[0.0, 0.0]);
        assert!(matches!(
            learn_classifier(&factor, &[1.0, 2.0, 3.0]),
            Err(ExemplarError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bank_of_single_pixel_matches_learn_classifier() {
        let fm = random_map(1, 1, 4, 9);
        let mean = vec![0.2; 4];
        let factor = identity_factor(1, 1, 4, &mean);
        let bank = learn_bank(&factor, &fm, 0.0).unwrap();
        let u_pos = extract_patch(&fm, 0, 0, 1, 1);
        let (w, bias) = learn_classifier(&factor, &u_pos).unwrap();
        assert_eq!(bank.weight(0, 0), w);
        assert!((bank.bias(0, 0) - bias).abs() < 1e-15);
    }

    #[test]
    fn bank_matches_per_pixel_loop() {
        let fm = random_map(6, 6, 2, 11);
        let spd = random_spd(18, 13);
        let factor = factorize(&spd, FactorKind::Cholesky, 3, 3, 2, &[0.4, 0.1], 0.0).unwrap();
        let bank = learn_bank(&factor, &fm, 0.0).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                let u_pos = extract_patch(&fm, r, c, 3, 3);
                let (w, bias) = learn_classifier(&factor, &u_pos).unwrap();
                let bw = bank.weight(r, c);
                for (a, b) in bw.iter().zip(&w) {
                    assert!(
                        (a - b).abs() <= 1e-10 * (1.0 + b.abs()),
                        "({r},{c}): {a} vs {b}"
                    );
                }
                assert!((bank.bias(r, c) - bias).abs() <= 1e-10 * (1.0 + bias.abs()));
            }
        }
    }

    #[test]
    fn zero_classifier_gives_zero_map() {
        let fm = random_map(5, 5, 2, 15);
        let map = likelihood_map(&vec![0.0; 2], 1, 1, &fm, None).unwrap();
        assert!(map.values().iter().all(|&v| v == 0.0));
        assert_eq!(map.n_valid(), 25);
    }

    #[test]
    fn raw_score_matches_patch_dot_product() {
        let fm = random_map(7, 7, 3, 17);
        let mean = vec![0.1; 3 * 9];
        let spd = random_spd(27, 19);
        let factor = factorize(&spd, FactorKind::Cholesky, 3, 3, 3, &[0.1; 3], 0.0).unwrap();
        let _ = mean;
        let u_pos = extract_patch(&fm, 3, 3, 3, 3);
        let (w, _) = learn_classifier(&factor, &u_pos).unwrap();
        let map = likelihood_map(&w, 3, 3, &fm, None).unwrap();
        let direct = ddot(&w, &u_pos);
        assert!((map.get(3, 3).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn single_pixel_window_yields_one_valid_value() {
        let fm = random_map(6, 4, 2, 21);
        let map = likelihood_map(
            &vec![1.0, -1.0],
            1,
            1,
            &fm,
            Some(Window { row0: 2, col0: 3, row1: 3, col1: 4 }),
        )
        .unwrap();
        assert_eq!(map.n_valid(), 1);
        assert!(map.get(2, 3).is_some());
        assert!(map.get(0, 0).is_none());
    }

    #[test]
    fn window_outside_target_is_empty() {
        let fm = random_map(4, 4, 1, 23);
        let e = likelihood_map(
            &vec![1.0],
            1,
            1,
            &fm,
            Some(Window { row0: 10, col0: 0, row1: 12, col1: 2 }),
        );
        assert!(matches!(e, Err(ExemplarError::EmptyWindow)));
    }

    #[test]
    fn posterior_at_class_midpoint_is_half() {
        // Feature equal to the midpoint of the class means with mu = 0 sits on
        // the decision boundary.
        let c = 3;
        let mean = vec![0.2, 0.4, 0.6];
        let factor = identity_factor(1, 1, c, &mean);
        let u_pos = vec![0.8, 0.1, 0.5];
        let mid: Vec<f32> =
            u_pos.iter().zip(&mean).map(|(u, m)| (0.5 * (u + m)) as f32).collect();
        let fm_ref = FeatureMap::new(1, 1, c, u_pos.iter().map(|&v| v as f32).collect());
        let bank = learn_bank(&factor, &fm_ref, 0.0).unwrap();
        let fm_tgt = FeatureMap::new(1, 1, c, mid);
        let map = posterior_map(&bank, 0, 0, &fm_tgt, 0.0, None).unwrap();
        let p = map.get(0, 0).unwrap();
        // f32 quantization of the midpoint features moves the score slightly
        assert!((p - 0.5).abs() < 1e-7, "posterior {p}");
    }

    #[test]
    fn large_prior_dominates() {
        let fm = random_map(4, 4, 2, 29);
        let factor = identity_factor(1, 1, 2, &[0.5, 0.5]);
        let bank = learn_bank(&factor, &fm, 0.0).unwrap();
        let map = posterior_map(&bank, 1, 1, &fm, 1e6, None).unwrap();
        assert!(map.values().iter().zip(map.valid()).all(|(&p, &v)| !v || p > 0.999999));
        let map_neg = posterior_map(&bank, 1, 1, &fm, -1e6, None).unwrap();
        assert!(map_neg
            .values()
            .iter()
            .zip(map_neg.valid())
            .all(|(&p, &v)| !v || p < 1e-6));
    }

    #[test]
    fn posteriors_stay_strictly_inside_unit_interval() {
        assert!(sigmoid(1e9) < 1.0);
        assert!(sigmoid(-1e9) > 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn posterior_is_monotone_in_raw_score() {
        // argmax of the posterior equals argmax of the raw response
        let fm_tgt = random_map(9, 9, 2, 33);
        let fm_ref = random_map(9, 9, 2, 34);
        let factor = identity_factor(1, 1, 2, &[0.5, 0.5]);
        let bank = learn_bank(&factor, &fm_ref, 0.0).unwrap();
        let w = bank.weight(4, 4);
        let raw = likelihood_map(&w, 1, 1, &fm_tgt, None).unwrap();
        let post = posterior_map(&bank, 4, 4, &fm_tgt, 0.3, None).unwrap();
        let argmax = |m: &LikelihoodMap| {
            m.values()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&raw), argmax(&post));
    }

    #[test]
    fn ideal_response_direction() {
        // With w = Sigma^-1 (u_pos - u_neg), the raw score at the positive
        // mean always exceeds the score at the negative mean.
        let dim = 12;
        let spd = random_spd(dim, 41);
        let mean: Vec<f64> = (0..dim).map(|i| 0.1 + 0.01 * i as f64).collect();
        let factor = factorize(&spd, FactorKind::Cholesky, 1, 1, dim, &mean, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let u_pos: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let (w, _) = learn_classifier(&factor, &u_pos).unwrap();
        assert!(ddot(&w, &u_pos) > ddot(&w, &mean));
    }

    #[test]
    fn l1_cost_is_zero_at_self_match() {
        let fm = random_map(5, 5, 4, 51);
        let map = l1_unary(&fm, 2, 2, &fm, (1, 1), None).unwrap();
        assert_eq!(map.get(2, 2).unwrap(), 0.0);
        assert!(map.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn l1_cost_of_disjoint_unit_vectors_is_two() {
        let a = FeatureMap::new(1, 1, 4, vec![1.0, 0.0, 0.0, 0.0]);
        let b = FeatureMap::new(1, 1, 4, vec![0.0, 1.0, 0.0, 0.0]);
        let map = l1_unary(&a, 0, 0, &b, (1, 1), None).unwrap();
        assert_eq!(map.get(0, 0).unwrap(), 2.0);
    }

    #[test]
    fn l1_triangle_inequality_and_nonnegativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..50 {
            let c = 6;
            let mk = |rng: &mut ChaCha8Rng| {
                FeatureMap::new(1, 1, c, (0..c).map(|_| rng.random::<f32>()).collect())
            };
            let (fa, fb, fc) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            let d = |x: &FeatureMap, y: &FeatureMap| {
                l1_unary(x, 0, 0, y, (1, 1), None).unwrap().get(0, 0).unwrap()
            };
            let (ab, bc, ac) = (d(&fa, &fb), d(&fb, &fc), d(&fa, &fc));
            assert!(ab >= 0.0 && bc >= 0.0 && ac >= 0.0);
            assert!(ac <= ab + bc + 1e-12);
        }
    }
}
