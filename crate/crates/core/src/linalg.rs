//! Dense kernels backing the statistics and classifier paths: blocked
//! Cholesky factorization, triangular solves with many right-hand sides, and
//! a parallel GEMM wrapper.
//!
//! All parallel sections split work at fixed chunk boundaries, so outputs are
//! bit-identical regardless of the worker count.

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};

/// Block size for the blocked Cholesky / triangular-solve kernels.
const NB: usize = 128;
/// Fixed column chunk for parallel multi-RHS solves.
const RHS_CHUNK: usize = 1024;
/// Fixed row chunk for parallel GEMM.
const GEMM_CHUNK: usize = 256;

/// `c = alpha * a @ b + beta * c`, parallelized over fixed row chunks of `c`.
pub fn par_gemm<A>(alpha: A, a: ArrayView2<A>, b: ArrayView2<A>, beta: A, c: &mut ArrayViewMut2<A>)
where
    A: ndarray::LinalgScalar + Send + Sync,
{
    assert_eq!(a.nrows(), c.nrows());
    assert_eq!(b.ncols(), c.ncols());
    assert_eq!(a.ncols(), b.nrows());
    if c.nrows() <= GEMM_CHUNK {
        general_mat_mul(alpha, &a, &b, beta, c);
        return;
    }
    c.axis_chunks_iter_mut(Axis(0), GEMM_CHUNK)
        .into_par_iter()
        .zip(a.axis_chunks_iter(Axis(0), GEMM_CHUNK).into_par_iter())
        .for_each(|(mut cc, aa)| general_mat_mul(alpha, &aa, &b, beta, &mut cc));
}

/// Owned-output convenience wrapper around [`par_gemm`].
pub fn matmul<A>(a: ArrayView2<A>, b: ArrayView2<A>) -> Array2<A>
where
    A: ndarray::LinalgScalar + Send + Sync,
{
    let mut c = Array2::zeros((a.nrows(), b.ncols()));
    par_gemm(A::one(), a, b, A::zero(), &mut c.view_mut());
    c
}

/// Dot product with a fixed 4-way accumulation order.
pub fn ddot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() & !3;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < n {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut tail = 0.0;
    for j in n..a.len() {
        tail += a[j] * b[j];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// f32 dot product with a fixed 8-way accumulation order.
pub fn sdot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() & !7;
    let mut acc = [0.0f32; 8];
    let mut i = 0;
    while i < n {
        for k in 0..8 {
            acc[k] += a[i + k] * b[i + k];
        }
        i += 8;
    }
    let mut tail = 0.0f32;
    for j in n..a.len() {
        tail += a[j] * b[j];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

/// Factorization failure: the matrix is not (numerically) positive-definite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotPositiveDefinite;

impl Cholesky {
    /// Blocked right-looking factorization. Fails if any pivot is
    /// non-positive or non-finite.
    pub fn factor(a: ArrayView2<f64>) -> Result<Self, NotPositiveDefinite> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "matrix must be square");
        let mut l = a.to_owned();
        let mut k = 0;
        while k < n {
            let kb = NB.min(n - k);
            // Unblocked factorization of the block column (diagonal block and
            // the panel below it).
            {
                let flat = l.as_slice_mut().expect("row-major layout");
                for j in 0..kb {
                    let gj = k + j;
                    let (_, from_j) = flat.split_at_mut(gj * n);
                    let (row_j, rows_below) = from_j.split_at_mut(n);
                    let d = row_j[gj] - ddot(&row_j[k..gj], &row_j[k..gj]);
                    if !(d > 0.0) || !d.is_finite() {
                        return Err(NotPositiveDefinite);
                    }
                    let d = d.sqrt();
                    row_j[gj] = d;
                    let pivot_left = &row_j[k..gj];
                    for ri in rows_below.chunks_exact_mut(n) {
                        ri[gj] = (ri[gj] - ddot(&ri[k..gj], pivot_left)) / d;
                    }
                }
            }
            // Trailing update: A22 -= L21 L21ᵀ.
            let next = k + kb;
            if next < n {
                let panel = l.slice(s![next.., k..next]).to_owned();
                let mut a22 = l.slice_mut(s![next.., next..]);
                par_gemm(-1.0, panel.view(), panel.t(), 1.0, &mut a22);
            }
            k = next;
        }
        // Zero the strict upper triangle so `l` is exactly triangular.
        for i in 0..n {
            for j in i + 1..n {
                l[[i, j]] = 0.0;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn factor_matrix(&self) -> &Array2<f64> {
        &self.l
    }

    /// Solve `A x = b` for a single right-hand side.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let rhs = Array2::from_shape_vec((n, 1), b.to_vec()).expect("shape");
        let x = self.solve_many(rhs.view());
        x.column(0).to_vec()
    }

    /// Solve `A X = B` for many right-hand sides (columns of `B`).
    ///
    /// Columns are processed in fixed-size chunks in parallel; each column's
    /// arithmetic is identical to a single-column solve of the same chunk
    /// shape, and chunk boundaries do not depend on the worker count.
    pub fn solve_many(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let n = self.dim();
        assert_eq!(b.nrows(), n, "rhs row count must match dimension");
        let m = b.ncols();
        let starts: Vec<usize> = (0..m).step_by(RHS_CHUNK).collect();
        let blocks: Vec<Array2<f64>> = starts
            .par_iter()
            .map(|&c0| {
                let c1 = (c0 + RHS_CHUNK).min(m);
                let src = b.slice(s![.., c0..c1]);
                // force standard layout; the block solver needs contiguous rows
                let mut blk = Array2::<f64>::zeros(src.raw_dim());
                blk.assign(&src);
                self.solve_block(&mut blk);
                blk
            })
            .collect();
        let mut x = Array2::zeros((n, m));
        for (&c0, blk) in starts.iter().zip(&blocks) {
            let c1 = (c0 + blk.ncols()).min(m);
            x.slice_mut(s![.., c0..c1]).assign(blk);
        }
        x
    }

    /// In-place forward + backward substitution on a row-major block.
    fn solve_block(&self, blk: &mut Array2<f64>) {
        let n = self.dim();
        let l = &self.l;
        // Forward: L y = b.
        let mut k = 0;
        while k < n {
            let kb = NB.min(n - k);
            if k > 0 {
                let (top, mut rest) = blk.view_mut().split_at(Axis(0), k);
                let mut mid = rest.slice_mut(s![0..kb, ..]);
                general_mat_mul(-1.0, &l.slice(s![k..k + kb, 0..k]), &top.view(), 1.0, &mut mid);
            }
            for i in 0..kb {
                let gi = k + i;
                let (done, mut cur) = blk.view_mut().split_at(Axis(0), gi);
                let mut row_i = cur.row_mut(0);
                for j in 0..i {
                    let gj = k + j;
                    let c = l[[gi, gj]];
                    if c != 0.0 {
                        let row_j = done.row(gj);
                        row_i
                            .as_slice_mut()
                            .expect("row-major")
                            .iter_mut()
                            .zip(row_j.to_slice().expect("row-major"))
                            .for_each(|(x, &y)| *x -= c * y);
                    }
                }
                let d = l[[gi, gi]];
                row_i.mapv_inplace(|v| v / d);
            }
            k += kb;
        }
        // Backward: Lᵀ x = y.
        let mut k1 = n;
        while k1 > 0 {
            let k0 = k1.saturating_sub(NB);
            let kb = k1 - k0;
            if k1 < n {
                let (mut top, bottom) = blk.view_mut().split_at(Axis(0), k1);
                let mut mid = top.slice_mut(s![k0..k1, ..]);
                general_mat_mul(
                    -1.0,
                    &l.slice(s![k1.., k0..k1]).t(),
                    &bottom.view(),
                    1.0,
                    &mut mid,
                );
            }
            for i in (0..kb).rev() {
                let gi = k0 + i;
                let (mut cur, done) = blk.view_mut().split_at(Axis(0), gi + 1);
                let mut row_i = cur.row_mut(gi);
                for gj in gi + 1..k1 {
                    let c = l[[gj, gi]];
                    if c != 0.0 {
                        let row_j = done.row(gj - gi - 1);
                        row_i
                            .as_slice_mut()
                            .expect("row-major")
                            .iter_mut()
                            .zip(row_j.to_slice().expect("row-major"))
                            .for_each(|(x, &y)| *x -= c * y);
                    }
                }
                let d = l[[gi, gi]];
                row_i.mapv_inplace(|v| v / d);
            }
            k1 = k0;
        }
    }

    /// Explicit inverse `A⁻¹`, symmetrized.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.dim();
        let mut inv = self.solve_many(Array2::eye(n).view());
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv[[i, j]] + inv[[j, i]]);
                inv[[i, j]] = v;
                inv[[j, i]] = v;
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() - 0.5);
        let mut a = matmul(g.view(), g.t());
        for i in 0..n {
            a[[i, i]] += n as f64 * 0.1;
        }
        a
    }

    #[test]
    fn factor_identity() {
        let chol = Cholesky::factor(Array2::<f64>::eye(5).view()).unwrap();
        assert_eq!(chol.factor_matrix(), &Array2::<f64>::eye(5));
        let b = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(chol.solve_vec(&b), b);
    }

    #[test]
    fn factor_diagonal() {
        let a = Array2::from_diag(&ndarray::arr1(&[4.0, 9.0]));
        let chol = Cholesky::factor(a.view()).unwrap();
        assert_eq!(chol.factor_matrix()[[0, 0]], 2.0);
        assert_eq!(chol.factor_matrix()[[1, 1]], 3.0);
        assert_eq!(chol.solve_vec(&[4.0, 9.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn reconstructs_spd_matrix() {
        // Larger than one block so the blocked path is exercised.
        let a = random_spd(200, 7);
        let chol = Cholesky::factor(a.view()).unwrap();
        let l = chol.factor_matrix();
        let rec = matmul(l.view(), l.t());
        let num = (&rec - &a).mapv(|v| v * v).sum().sqrt();
        let den = a.mapv(|v| v * v).sum().sqrt();
        assert!(num / den < 1e-13, "relative Frobenius error {}", num / den);
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = Array2::eye(3);
        a[[2, 2]] = -1.0;
        assert!(Cholesky::factor(a.view()).is_err());
    }

    #[test]
    fn solve_many_matches_reference_residual() {
        let n = 150;
        let a = random_spd(n, 3);
        let chol = Cholesky::factor(a.view()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = Array2::from_shape_fn((n, 7), |_| rng.random::<f64>() - 0.5);
        let x = chol.solve_many(b.view());
        let r = &matmul(a.view(), x.view()) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn solve_many_matches_single_column_solves() {
        let n = 170;
        let a = random_spd(n, 5);
        let chol = Cholesky::factor(a.view()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let b = Array2::from_shape_fn((n, 5), |_| rng.random::<f64>() - 0.5);
        let x = chol.solve_many(b.view());
        for c in 0..b.ncols() {
            let xc = chol.solve_vec(b.column(c).to_vec().as_slice());
            for i in 0..n {
                assert_abs_diff_eq!(x[[i, c]], xc[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn inverse_matches_solve() {
        let n = 60;
        let a = random_spd(n, 9);
        let chol = Cholesky::factor(a.view()).unwrap();
        let inv = chol.inverse();
        let prod = matmul(a.view(), inv.view());
        let eye = Array2::<f64>::eye(n);
        let err = (&prod - &eye).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-10, "max-abs deviation from identity {err}");
    }

    #[test]
    fn par_gemm_matches_serial() {
        let a = random_spd(300, 21);
        let b = random_spd(300, 22);
        let par = matmul(a.view(), b.view());
        let mut serial = Array2::zeros((300, 300));
        ndarray::linalg::general_mat_mul(1.0, &a, &b, 0.0, &mut serial);
        assert_eq!(par, serial);
    }
}
