//! Structured covariance assembly, regularization, and factorization.
//!
//! A detector of `detector_h x detector_w` pixels over `C` channels has a
//! `dim = detector_h * detector_w * C` covariance whose entries depend only
//! on the relative displacement between patch positions: entry
//! `((u,v,p), (i,j,q)) = g[i-u, j-v, p, q]`. Patch vectors (and therefore the
//! row/column index layout here) are row-major in (row, col, channel),
//! matching every other module.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::linalg::{ddot, Cholesky};
use crate::stats::DisplacementTensor;

#[derive(Debug, Error)]
pub enum CovarianceError {
    #[error(
        "detector {detector_h}x{detector_w} needs bandwidth {needed}, tensor has {bandwidth}"
    )]
    BandwidthTooSmall {
        detector_h: usize,
        detector_w: usize,
        needed: usize,
        bandwidth: usize,
    },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not positive-definite")]
    NotPositiveDefinite,
}

/// How the regularized covariance is factorized for solving.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    /// Store the lower Cholesky factor; solves are two triangular passes.
    Cholesky,
    /// Store the explicit inverse; solves are one GEMM.
    ExplicitInverse,
}

/// Assembles the dense structured covariance for a detector geometry.
pub fn build_covariance(
    tensor: &DisplacementTensor,
    detector_h: usize,
    detector_w: usize,
) -> Result<Array2<f64>, CovarianceError> {
    assert!(detector_h >= 1 && detector_w >= 1);
    let needed = (detector_h - 1).max(detector_w - 1);
    if needed > tensor.bandwidth() {
        return Err(CovarianceError::BandwidthTooSmall {
            detector_h,
            detector_w,
            needed,
            bandwidth: tensor.bandwidth(),
        });
    }
    let c = tensor.channels();
    let dim = detector_h * detector_w * c;
    let mut sigma = Array2::<f64>::zeros((dim, dim));
    for u in 0..detector_h {
        for v in 0..detector_w {
            let row0 = (u * detector_w + v) * c;
            for i in 0..detector_h {
                for j in 0..detector_w {
                    let col0 = (i * detector_w + j) * c;
                    let block = tensor.block(i as isize - u as isize, j as isize - v as isize);
                    let mut dst = sigma.slice_mut(ndarray::s![row0..row0 + c, col0..col0 + c]);
                    dst.assign(&block);
                }
            }
        }
    }
    Ok(sigma)
}

/// Shifts the diagonal until the matrix is strictly positive-definite.
///
/// The applied shift is `max(0, -lambda_min) + delta` with a relative floor
/// `delta = 1e-6 * trace / dim` (absolute floor `1e-8` for zero-trace input).
/// Returns the shifted matrix and the shift.
pub fn regularize_psd(sigma: &Array2<f64>) -> Result<(Array2<f64>, f64), CovarianceError> {
    let dim = sigma.nrows();
    assert_eq!(dim, sigma.ncols(), "covariance must be square");
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(CovarianceError::NonFinite);
    }
    debug_assert!(is_symmetric(sigma, 1e-9), "input must be symmetric");

    let trace: f64 = sigma.diag().sum();
    let delta = if trace > 0.0 { 1e-6 * trace / dim as f64 } else { 1e-8 };

    let shifted = |s: f64| {
        let mut m = sigma.clone();
        for i in 0..dim {
            m[[i, i]] += s;
        }
        m
    };

    // Common case: already (near-)PD, the floor alone suffices.
    let candidate = shifted(delta);
    if Cholesky::factor(candidate.view()).is_ok() {
        return Ok((candidate, delta));
    }

    // Estimate -lambda_min by power iteration on s*I - Sigma, then escalate
    // until a Cholesky succeeds.
    let neg_min = estimate_negative_lambda_min(sigma);
    let mut shift = neg_min.max(0.0) + delta;
    for _ in 0..64 {
        let candidate = shifted(shift);
        if Cholesky::factor(candidate.view()).is_ok() {
            return Ok((candidate, shift));
        }
        shift = shift * 2.0 + delta;
    }
    Err(CovarianceError::NotPositiveDefinite)
}

/// Largest eigenvalue of `s*I - Sigma` minus `s`, i.e. an estimate of
/// `-lambda_min(Sigma)`, via deterministic power iteration.
fn estimate_negative_lambda_min(sigma: &Array2<f64>) -> f64 {
    let dim = sigma.nrows();
    // Gershgorin-style bound on |lambda|.
    let s = sigma
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    if s == 0.0 {
        return 0.0;
    }
    let b_mul = |v: &Array1<f64>| -> Array1<f64> {
        let mut out = Array1::zeros(dim);
        for i in 0..dim {
            let row = sigma.row(i);
            out[i] = s * v[i]
                - ddot(row.to_slice().expect("row-major"), v.as_slice().expect("contig"));
        }
        out
    };
    let mut v = Array1::from_elem(dim, 1.0 / (dim as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..200 {
        let mut w = b_mul(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        w.mapv_inplace(|x| x / norm);
        lambda = norm;
        v = w;
    }
    lambda - s
}

fn is_symmetric(a: &Array2<f64>, tol: f64) -> bool {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let scale = 1.0f64.max(a[[i, j]].abs()).max(a[[j, i]].abs());
            if (a[[i, j]] - a[[j, i]]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Regularized, factorized covariance for a fixed detector geometry, plus the
/// tiled negative-class mean needed to learn classifiers.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    detector_h: usize,
    detector_w: usize,
    channels: usize,
    kind: FactorKind,
    chol: Option<Cholesky>,
    inverse: Option<Array2<f64>>,
    /// Per-channel negative mean tiled over every patch position.
    mean_neg: Vec<f64>,
    /// Diagonal shift applied by the PSD regularization.
    eig_shift: f64,
}

/// Factorizes an already-regularized covariance.
pub fn factorize(
    sigma_reg: &Array2<f64>,
    kind: FactorKind,
    detector_h: usize,
    detector_w: usize,
    channels: usize,
    channel_mean: &[f64],
    eig_shift: f64,
) -> Result<CovarianceFactor, CovarianceError> {
    let dim = detector_h * detector_w * channels;
    assert_eq!(sigma_reg.nrows(), dim, "covariance does not match geometry");
    assert_eq!(channel_mean.len(), channels, "mean does not match channels");
    let chol = Cholesky::factor(sigma_reg.view())
        .map_err(|_| CovarianceError::NotPositiveDefinite)?;
    let (chol, inverse) = match kind {
        FactorKind::Cholesky => (Some(chol), None),
        FactorKind::ExplicitInverse => (None, Some(chol.inverse())),
    };
    let mut mean_neg = Vec::with_capacity(dim);
    for _ in 0..detector_h * detector_w {
        mean_neg.extend_from_slice(channel_mean);
    }
    Ok(CovarianceFactor {
        detector_h,
        detector_w,
        channels,
        kind,
        chol,
        inverse,
        mean_neg,
        eig_shift,
    })
}

impl CovarianceFactor {
    /// Builds the factor straight from finalized statistics:
    /// assemble -> regularize -> factorize.
    pub fn from_stats(
        channel_mean: &[f64],
        tensor: &DisplacementTensor,
        detector_h: usize,
        detector_w: usize,
        kind: FactorKind,
    ) -> Result<Self, CovarianceError> {
        let sigma = build_covariance(tensor, detector_h, detector_w)?;
        let (sigma_reg, shift) = regularize_psd(&sigma)?;
        factorize(
            &sigma_reg,
            kind,
            detector_h,
            detector_w,
            tensor.channels(),
            channel_mean,
            shift,
        )
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

    pub fn kind(&self) -> FactorKind {
        self.kind
    }

    pub fn eig_shift(&self) -> f64 {
        self.eig_shift
    }

    /// Negative-class mean tiled per patch position (length `dim`).
    pub fn mean_neg(&self) -> &[f64] {
        &self.mean_neg
    }

    /// `Sigma_reg^-1 b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim());
        match self.kind {
            FactorKind::Cholesky => self.chol.as_ref().expect("factor").solve_vec(b),
            FactorKind::ExplicitInverse => {
                let inv = self.inverse.as_ref().expect("factor");
                inv.rows()
                    .into_iter()
                    .map(|row| ddot(row.to_slice().expect("row-major"), b))
                    .collect()
            }
        }
    }

    /// `Sigma_reg^-1 B` for many right-hand sides (columns of `B`).
    pub fn solve_many(&self, b: ndarray::ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(b.nrows(), self.dim());
        match self.kind {
            FactorKind::Cholesky => self.chol.as_ref().expect("factor").solve_many(b),
            FactorKind::ExplicitInverse => {
                crate::linalg::matmul(self.inverse.as_ref().expect("factor").view(), b)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matmul;
    use crate::sift::FeatureMap;
    use crate::stats::StatsAccumulator;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_map(w: usize, h: usize, c: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::new(w, h, c, (0..w * h * c).map(|_| rng.random::<f32>()).collect())
    }

    fn tiny_tensor(c: usize, bandwidth: usize) -> (Vec<f64>, DisplacementTensor) {
        let mut acc = StatsAccumulator::new(c, bandwidth);
        for i in 0..4 {
            acc.accumulate(&random_map(9, 8, c, 300 + i)).unwrap();
        }
        acc.finalize().unwrap()
    }

    #[test]
    fn one_by_one_detector_is_the_channel_block() {
        let (_, tensor) = tiny_tensor(3, 2);
        let sigma = build_covariance(&tensor, 1, 1).unwrap();
        for p in 0..3 {
            for q in 0..3 {
                assert_eq!(sigma[[p, q]], tensor.get(0, 0, p, q));
            }
        }
    }

    #[test]
    fn two_by_one_detector_lays_out_the_index_map() {
        let (_, tensor) = tiny_tensor(1, 2);
        let sigma = build_covariance(&tensor, 2, 1).unwrap();
        assert_eq!(sigma[[0, 0]], tensor.get(0, 0, 0, 0));
        assert_eq!(sigma[[0, 1]], tensor.get(1, 0, 0, 0));
        assert_eq!(sigma[[1, 0]], tensor.get(-1, 0, 0, 0));
        assert_eq!(sigma[[1, 1]], tensor.get(0, 0, 0, 0));
    }

    #[test]
    fn covariance_is_exactly_symmetric() {
        let (_, tensor) = tiny_tensor(2, 2);
        let sigma = build_covariance(&tensor, 3, 2).unwrap();
        for i in 0..sigma.nrows() {
            for j in 0..i {
                assert_eq!(sigma[[i, j]], sigma[[j, i]]);
            }
        }
    }

    #[test]
    fn bandwidth_check_rejects_large_detectors() {
        let (_, tensor) = tiny_tensor(1, 2);
        assert!(matches!(
            build_covariance(&tensor, 4, 1),
            Err(CovarianceError::BandwidthTooSmall { .. })
        ));
    }

    #[test]
    fn regularize_pd_input_needs_only_the_floor() {
        let mut a = Array2::<f64>::eye(4);
        a[[0, 0]] = 2.0;
        let (reg, shift) = regularize_psd(&a).unwrap();
        let delta = 1e-6 * 5.0 / 4.0;
        assert!((shift - delta).abs() < 1e-18);
        assert!((reg[[0, 0]] - (2.0 + delta)).abs() < 1e-15);
    }

    #[test]
    fn regularize_indefinite_diagonal() {
        let a = Array2::from_diag(&ndarray::arr1(&[1.0, -0.5]));
        let (reg, shift) = regularize_psd(&a).unwrap();
        let delta = 1e-6 * 0.5 / 2.0;
        assert!(
            (shift - (0.5 + delta)).abs() < 1e-9,
            "shift {shift} should be 0.5 + {delta}"
        );
        assert!(Cholesky::factor(reg.view()).is_ok());
    }

    #[test]
    fn regularize_zero_matrix_uses_absolute_floor() {
        let a = Array2::<f64>::zeros((3, 3));
        let (reg, shift) = regularize_psd(&a).unwrap();
        assert_eq!(shift, 1e-8);
        for i in 0..3 {
            assert_eq!(reg[[i, i]], 1e-8);
        }
    }

    #[test]
    fn regularize_rejects_non_finite() {
        let mut a = Array2::<f64>::eye(2);
        a[[0, 1]] = f64::NAN;
        a[[1, 0]] = f64::NAN;
        assert!(matches!(regularize_psd(&a), Err(CovarianceError::NonFinite)));
    }

    #[test]
    fn regularized_output_always_factorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..10 {
            let n = 6 + trial;
            let g = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);
            // symmetric but typically indefinite
            let sym = (&g + &g.t()) * 0.5;
            let (reg, _) = regularize_psd(&sym).unwrap();
            assert!(Cholesky::factor(reg.view()).is_ok(), "trial {trial}");
        }
    }

    #[test]
    fn factorize_identity_and_diagonal() {
        let eye = Array2::<f64>::eye(4);
        let f = factorize(&eye, FactorKind::Cholesky, 2, 2, 1, &[0.0], 0.0).unwrap();
        let b = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(f.solve(&b), b);

        let d = Array2::from_diag(&ndarray::arr1(&[4.0, 9.0]));
        let f = factorize(&d, FactorKind::Cholesky, 1, 2, 1, &[0.0], 0.0).unwrap();
        assert_eq!(f.solve(&[4.0, 9.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn both_factor_kinds_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Array2::from_shape_fn((20, 20), |_| rng.random::<f64>() - 0.5);
        let mut spd = matmul(g.view(), g.t());
        for i in 0..20 {
            spd[[i, i]] += 2.0;
        }
        let fc = factorize(&spd, FactorKind::Cholesky, 1, 1, 20, &vec![0.0; 20], 0.0).unwrap();
        let fi =
            factorize(&spd, FactorKind::ExplicitInverse, 1, 1, 20, &vec![0.0; 20], 0.0).unwrap();
        let b: Vec<f64> = (0..20).map(|_| rng.random::<f64>() - 0.5).collect();
        let xc = fc.solve(&b);
        let xi = fi.solve(&b);
        for (a, b) in xc.iter().zip(&xi) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn factorize_rejects_indefinite() {
        let a = Array2::from_diag(&ndarray::arr1(&[1.0, -1.0]));
        assert!(matches!(
            factorize(&a, FactorKind::Cholesky, 1, 2, 1, &[0.0], 0.0),
            Err(CovarianceError::NotPositiveDefinite)
        ));
    }

    #[test]
    fn cholesky_reconstruction_invariant() {
        let (mean, tensor) = tiny_tensor(2, 2);
        let sigma = build_covariance(&tensor, 3, 3).unwrap();
        let (reg, shift) = regularize_psd(&sigma).unwrap();
        let f = factorize(&reg, FactorKind::Cholesky, 3, 3, 2, &mean, shift).unwrap();
        let l = f.chol.as_ref().unwrap().factor_matrix();
        let rec = matmul(l.view(), l.t());
        let num = (&rec - &reg).mapv(|v| v * v).sum().sqrt();
        let den = reg.mapv(|v| v * v).sum().sqrt();
        assert!(num / den < 1e-8, "relative Frobenius {num}/{den}");
    }

    #[test]
    fn explicit_inverse_invariant() {
        let (mean, tensor) = tiny_tensor(2, 2);
        let sigma = build_covariance(&tensor, 2, 2).unwrap();
        let (reg, shift) = regularize_psd(&sigma).unwrap();
        let f = factorize(&reg, FactorKind::ExplicitInverse, 2, 2, 2, &mean, shift).unwrap();
        let prod = matmul(reg.view(), f.inverse.as_ref().unwrap().view());
        let n = prod.nrows();
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[[i, j]] - want).abs() < 1e-6, "({i},{j}) = {}", prod[[i, j]]);
            }
        }
    }

    #[test]
    fn mean_neg_is_tiled_per_position() {
        let (mean, tensor) = tiny_tensor(3, 1);
        let f = CovarianceFactor::from_stats(&mean, &tensor, 2, 2, FactorKind::Cholesky).unwrap();
        assert_eq!(f.dim(), 12);
        for pos in 0..4 {
            assert_eq!(&f.mean_neg()[pos * 3..(pos + 1) * 3], mean.as_slice());
        }
    }
}
