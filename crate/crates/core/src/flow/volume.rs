//! Cost volume construction from either unary source.

use ndarray::Array2;
use rayon::prelude::*;

use crate::covariance::CovarianceFactor;
use crate::exemplar::{extract_patch, sigmoid, ExemplarBank};
use crate::linalg::sdot;
use crate::sift::FeatureMap;

use super::{CostKind, CostVolume, FlowError, FlowField};

/// Posterior clamp bounds before taking the negative log.
const POSTERIOR_CLAMP_LO: f64 = 1e-12;
const POSTERIOR_CLAMP_HI: f64 = 1.0 - 1e-12;

/// Unary term feeding a cost volume.
pub enum UnarySource<'a> {
    /// L1 descriptor distance with the given patch support (1x1 is the plain
    /// SIFT Flow unary).
    L1 {
        fm_ref: &'a FeatureMap,
        fm_tgt: &'a FeatureMap,
        support: (usize, usize),
    },
    /// Negative log posterior of pre-learned exemplar classifiers.
    Lda {
        bank: &'a ExemplarBank,
        fm_tgt: &'a FeatureMap,
        prior_mu: f64,
    },
}

/// Builds the windowed cost volume. Each pixel's window is centered at its
/// entry in `centers` (zero displacement when absent), clamped so at least
/// the window center lands inside the target image.
pub fn build_cost_volume(
    source: &UnarySource,
    radius: usize,
    centers: Option<&FlowField>,
) -> Result<CostVolume, FlowError> {
    match source {
        UnarySource::L1 { fm_ref, fm_tgt, support } => {
            if fm_ref.channels() != fm_tgt.channels() {
                return Err(FlowError::DimensionMismatch {
                    expected: fm_ref.channels(),
                    got: fm_tgt.channels(),
                });
            }
            build_l1(fm_ref, fm_tgt, *support, radius, centers)
        }
        UnarySource::Lda { bank, fm_tgt, prior_mu } => {
            if bank.channels() != fm_tgt.channels() {
                return Err(FlowError::DimensionMismatch {
                    expected: bank.channels(),
                    got: fm_tgt.channels(),
                });
            }
            build_lda_from_bank(bank, fm_tgt, *prior_mu, radius, centers)
        }
    }
}

/// Window centers per reference pixel, clamped so the center displacement
/// maps inside the target image (guaranteeing at least one finite cost).
fn make_centers(
    ref_w: usize,
    ref_h: usize,
    tgt_w: usize,
    tgt_h: usize,
    centers: Option<&FlowField>,
) -> Result<(Vec<i32>, Vec<i32>), FlowError> {
    if let Some(f) = centers {
        if f.width() != ref_w || f.height() != ref_h {
            return Err(FlowError::DimensionMismatch {
                expected: ref_w * ref_h,
                got: f.width() * f.height(),
            });
        }
    }
    let mut cu = vec![0i32; ref_w * ref_h];
    let mut cv = vec![0i32; ref_w * ref_h];
    for r in 0..ref_h {
        for c in 0..ref_w {
            let px = r * ref_w + c;
            let (mut u, mut v) = centers.map_or((0, 0), |f| f.uv(r, c));
            u = u.clamp(-(c as i32), tgt_w as i32 - 1 - c as i32);
            v = v.clamp(-(r as i32), tgt_h as i32 - 1 - r as i32);
            cu[px] = u;
            cv[px] = v;
        }
    }
    Ok((cu, cv))
}

fn build_l1(
    fm_ref: &FeatureMap,
    fm_tgt: &FeatureMap,
    support: (usize, usize),
    radius: usize,
    centers: Option<&FlowField>,
) -> Result<CostVolume, FlowError> {
    let (w, h) = (fm_ref.width(), fm_ref.height());
    let (tw, th) = (fm_tgt.width(), fm_tgt.height());
    let (cu, cv) = make_centers(w, h, tw, th, centers)?;
    let side = 2 * radius + 1;
    let k = side * side;
    let mut costs = vec![f32::INFINITY; w * h * k];
    costs.par_chunks_mut(w * k).enumerate().for_each(|(r, row_costs)| {
        let (dh, dw) = support;
        for c in 0..w {
            let px = r * w + c;
            let ref_patch: Vec<f32> =
                extract_patch(fm_ref, r, c, dh, dw).iter().map(|&v| v as f32).collect();
            let total_abs: f32 = ref_patch.iter().map(|v| v.abs()).sum();
            let out = &mut row_costs[c * k..(c + 1) * k];
            fill_window(out, (r, c), (cu[px], cv[px]), radius, (tw, th), |tr, tc| {
                l1_score(&ref_patch, dh, dw, fm_tgt, tr, tc, total_abs)
            });
        }
    });
    Ok(CostVolume {
        width: w,
        height: h,
        radius,
        kind: CostKind::L1,
        centers_u: cu,
        centers_v: cv,
        costs,
    })
}

fn build_lda_from_bank(
    bank: &ExemplarBank,
    fm_tgt: &FeatureMap,
    prior_mu: f64,
    radius: usize,
    centers: Option<&FlowField>,
) -> Result<CostVolume, FlowError> {
    let (w, h) = (bank.ref_width(), bank.ref_height());
    let (tw, th) = (fm_tgt.width(), fm_tgt.height());
    let (cu, cv) = make_centers(w, h, tw, th, centers)?;
    let weights32 = bank.weights().mapv(|v| v as f32);
    let side = 2 * radius + 1;
    let k = side * side;
    let mut costs = vec![f32::INFINITY; w * h * k];
    fill_lda_chunk(
        &mut costs,
        0..w * h,
        &weights32,
        bank.biases(),
        bank.detector_h(),
        bank.detector_w(),
        fm_tgt,
        prior_mu,
        radius,
        (w, h),
        (&cu, &cv),
    );
    Ok(CostVolume {
        width: w,
        height: h,
        radius,
        kind: CostKind::LdaNegLogPosterior,
        centers_u: cu,
        centers_v: cv,
        costs,
    })
}

/// Streaming LDA volume: classifiers are learned chunk-by-chunk and dropped
/// after their costs are written, so the full bank is never materialized.
pub(crate) fn lda_volume_streaming(
    factor: &CovarianceFactor,
    fm_ref: &FeatureMap,
    fm_tgt: &FeatureMap,
    prior_mu: f64,
    radius: usize,
    centers: Option<&FlowField>,
) -> Result<CostVolume, FlowError> {
    if fm_ref.channels() != factor.channels() || fm_tgt.channels() != factor.channels() {
        return Err(FlowError::DimensionMismatch {
            expected: factor.channels(),
            got: fm_ref.channels().max(fm_tgt.channels()),
        });
    }
    let (w, h) = (fm_ref.width(), fm_ref.height());
    let (tw, th) = (fm_tgt.width(), fm_tgt.height());
    let (cu, cv) = make_centers(w, h, tw, th, centers)?;
    let dim = factor.dim();
    let mean = factor.mean_neg().to_vec();
    let side = 2 * radius + 1;
    let k = side * side;
    let mut costs = vec![f32::INFINITY; w * h * k];

    const CHUNK: usize = 2048;
    let npix = w * h;
    for start in (0..npix).step_by(CHUNK) {
        let len = CHUNK.min(npix - start);
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
        let mut biases = vec![0.0f64; len];
        for j in 0..len {
            let wcol = wchunk.column(j).to_vec();
            let brow = rhs_rows.row(j);
            biases[j] = 0.5 * crate::linalg::ddot(brow.to_slice().expect("row-major"), &wcol)
                + crate::linalg::ddot(&mean, &wcol);
        }
        let weights32 = wchunk.mapv(|v| v as f32);
        fill_lda_chunk(
            &mut costs,
            start..start + len,
            &weights32,
            &biases,
            factor.detector_h(),
            factor.detector_w(),
            fm_tgt,
            prior_mu,
            radius,
            (w, h),
            (&cu, &cv),
        );
    }
    Ok(CostVolume {
        width: w,
        height: h,
        radius,
        kind: CostKind::LdaNegLogPosterior,
        centers_u: cu,
        centers_v: cv,
        costs,
    })
}

/// Writes negative-log-posterior costs for a contiguous pixel range whose
/// classifier weights are the columns of `weights32`.
#[allow(clippy::too_many_arguments)]
fn fill_lda_chunk(
    costs: &mut [f32],
    range: std::ops::Range<usize>,
    weights32: &Array2<f32>,
    biases: &[f64],
    detector_h: usize,
    detector_w: usize,
    fm_tgt: &FeatureMap,
    prior_mu: f64,
    radius: usize,
    ref_dims: (usize, usize),
    centers: (&[i32], &[i32]),
) {
    let (w, _h) = ref_dims;
    let (tw, th) = (fm_tgt.width(), fm_tgt.height());
    let side = 2 * radius + 1;
    let k = side * side;
    let start = range.start;
    let weights_flat: Vec<f32> = {
        // column-major copy so each classifier is contiguous
        let (dim, len) = (weights32.nrows(), weights32.ncols());
        let mut flat = vec![0.0f32; dim * len];
        for (j, col) in weights32.columns().into_iter().enumerate() {
            for (dst, &v) in flat[j * dim..(j + 1) * dim].iter_mut().zip(col.iter()) {
                *dst = v;
            }
        }
        flat
    };
    let dim = weights32.nrows();
    costs[range.start * k..range.end * k]
        .par_chunks_mut(k)
        .enumerate()
        .for_each(|(j, out)| {
            let px = start + j;
            let (r, c) = (px / w, px % w);
            let wcol = &weights_flat[j * dim..(j + 1) * dim];
            let bias = biases[j];
            fill_window(out, (r, c), (centers.0[px], centers.1[px]), radius, (tw, th), |tr, tc| {
                let y = score_f32(wcol, detector_h, detector_w, fm_tgt, tr, tc) as f64 - bias
                    + prior_mu;
                let p = sigmoid(y).clamp(POSTERIOR_CLAMP_LO, POSTERIOR_CLAMP_HI);
                (-p.ln()) as f32
            });
        });
}

/// Evaluates `eval` at every in-target window position, leaving infinite cost
/// elsewhere.
fn fill_window(
    out: &mut [f32],
    (r, c): (usize, usize),
    (cu, cv): (i32, i32),
    radius: usize,
    (tw, th): (usize, usize),
    eval: impl Fn(usize, usize) -> f32,
) {
    let side = 2 * radius + 1;
    let ir = radius as i32;
    for dv in -ir..=ir {
        let tr = r as i32 + cv + dv;
        if tr < 0 || tr >= th as i32 {
            continue;
        }
        for du in -ir..=ir {
            let tc = c as i32 + cu + du;
            if tc < 0 || tc >= tw as i32 {
                continue;
            }
            out[((dv + ir) * side as i32 + du + ir) as usize] = eval(tr as usize, tc as usize);
        }
    }
}

/// f32 sliding-window dot product with zero padding, span by span.
fn score_f32(
    w: &[f32],
    detector_h: usize,
    detector_w: usize,
    fm: &FeatureMap,
    row: usize,
    col: usize,
) -> f32 {
    let c = fm.channels();
    let r0 = row as isize - (detector_h as isize - 1) / 2;
    let c0 = col as isize - (detector_w as isize - 1) / 2;
    let mut acc = 0.0f32;
    for pr in 0..detector_h {
        let rr = r0 + pr as isize;
        if rr < 0 || rr >= fm.height() as isize {
            continue;
        }
        let pc_lo = (-c0).max(0) as usize;
        let pc_hi = detector_w.min(((fm.width() as isize - c0).max(0)) as usize);
        if pc_lo >= pc_hi {
            continue;
        }
        let fm_base = (rr as usize * fm.width() + (c0 + pc_lo as isize) as usize) * c;
        let w_base = (pr * detector_w + pc_lo) * c;
        let len = (pc_hi - pc_lo) * c;
        acc += sdot(&w[w_base..w_base + len], &fm.data()[fm_base..fm_base + len]);
    }
    acc
}

/// L1 distance between `ref_patch` and the target patch at (row, col) with
/// zero padding: padded positions contribute `|ref|`, folded in via the
/// precomputed `total_abs`.
fn l1_score(
    ref_patch: &[f32],
    detector_h: usize,
    detector_w: usize,
    fm: &FeatureMap,
    row: usize,
    col: usize,
    total_abs: f32,
) -> f32 {
    let c = fm.channels();
    let r0 = row as isize - (detector_h as isize - 1) / 2;
    let c0 = col as isize - (detector_w as isize - 1) / 2;
    let mut acc = total_abs;
    for pr in 0..detector_h {
        let rr = r0 + pr as isize;
        if rr < 0 || rr >= fm.height() as isize {
            continue;
        }
        let pc_lo = (-c0).max(0) as usize;
        let pc_hi = detector_w.min(((fm.width() as isize - c0).max(0)) as usize);
        if pc_lo >= pc_hi {
            continue;
        }
        let fm_base = (rr as usize * fm.width() + (c0 + pc_lo as isize) as usize) * c;
        let w_base = (pr * detector_w + pc_lo) * c;
        let len = (pc_hi - pc_lo) * c;
        let rs = &ref_patch[w_base..w_base + len];
        let fs = &fm.data()[fm_base..fm_base + len];
        for (a, &b) in rs.iter().zip(fs) {
            acc += (a - b).abs() - a.abs();
        }
    }
    acc
}
