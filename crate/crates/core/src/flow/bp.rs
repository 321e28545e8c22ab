//! Loopy min-sum belief propagation on the 4-connected pixel grid.
//!
//! Labels are joint integer displacements `(u, v)` over per-pixel windows.
//! The pairwise term `lambda * (min(|du|, trunc) + min(|dv|, trunc))`
//! separates per axis, so each message is two 1D truncated-L1 lower-envelope
//! passes. Neighboring pixels may have differently-centered windows: the 1D
//! pass evaluates the envelope on the receiver's coordinate range, extending
//! beyond the sender's range at slope `lambda` (exact for an L1 envelope)
//! before applying the truncation cap.
//!
//! Messages are updated synchronously from double-buffered state and the
//! decoded flow is re-scored after every sweep; the best configuration seen
//! (including the initialization) is returned, so the result never has higher
//! energy than the initialization.

use rayon::prelude::*;

use super::{better_label, energy, CostVolume, FlowError, FlowField, FlowParams};

/// Direction index of the neighbor a message came from.
const FROM_LEFT: usize = 0;
const FROM_RIGHT: usize = 1;
const FROM_UP: usize = 2;
const FROM_DOWN: usize = 3;

const OPPOSITE: [usize; 4] = [FROM_RIGHT, FROM_LEFT, FROM_DOWN, FROM_UP];

/// Refines `init` by belief propagation over the cost volume.
pub fn optimize_level(
    vol: &CostVolume,
    params: &FlowParams,
    init: &FlowField,
) -> Result<FlowField, FlowError> {
    params.validate();
    let (w, h) = (vol.width(), vol.height());
    if init.width() != w || init.height() != h {
        return Err(FlowError::DimensionMismatch { expected: w * h, got: init.width() * init.height() });
    }
    let npix = w * h;
    let k = vol.labels();
    let side = vol.side();

    // Node potentials: unary cost plus the small-displacement prior.
    let mut pot = vec![0.0f32; npix * k];
    pot.par_chunks_mut(k).enumerate().for_each(|(px, out)| {
        for (label, o) in out.iter_mut().enumerate() {
            let c = vol.cost(px, label);
            *o = if c.is_finite() {
                let (du, dv) = vol.displacement(px, label);
                c + (params.small_disp_weight * (du.abs() + dv.abs()) as f64) as f32
            } else {
                f32::INFINITY
            };
        }
    });

    let mut best = init.clone();
    let mut best_energy = energy(init, vol, params)?;

    let lambda = params.lambda as f32;
    let trunc_cost = (params.lambda * params.trunc) as f32;

    let mut msgs = vec![0.0f32; 4 * npix * k];
    let mut msgs_next = vec![0.0f32; 4 * npix * k];

    let neighbor = |px: usize, dir: usize| -> Option<usize> {
        let (r, c) = (px / w, px % w);
        match dir {
            FROM_LEFT => (c > 0).then(|| px - 1),
            FROM_RIGHT => (c + 1 < w).then(|| px + 1),
            FROM_UP => (r > 0).then(|| px - w),
            FROM_DOWN => (r + 1 < h).then(|| px + w),
            _ => unreachable!(),
        }
    };

    for _sweep in 0..params.bp_iters {
        {
            let msgs_ref = &msgs;
            let pot_ref = &pot;
            msgs_next
                .par_chunks_mut(w * 4 * k)
                .enumerate()
                .for_each(|(r, row_out)| {
                    let mut q = vec![0.0f32; k];
                    let mut tmp = vec![0.0f32; side * side];
                    let mut env = vec![0.0f32; side];
                    let mut lane = vec![0.0f32; side];
                    for c in 0..w {
                        let px = r * w + c;
                        for dir in 0..4 {
                            let out =
                                &mut row_out[(c * 4 + dir) * k..(c * 4 + dir) * k + k];
                            let Some(j) = neighbor(px, dir) else {
                                out.iter_mut().for_each(|v| *v = 0.0);
                                continue;
                            };
                            // q = potential of j plus all messages into j
                            // except the one coming back from px.
                            let skip = OPPOSITE[dir];
                            for (label, qv) in q.iter_mut().enumerate() {
                                let mut s = pot_ref[j * k + label];
                                for d2 in 0..4 {
                                    if d2 != skip {
                                        s += msgs_ref[(j * 4 + d2) * k + label];
                                    }
                                }
                                *qv = s;
                            }
                            message_2d(
                                &q,
                                vol.center(j),
                                vol.center(px),
                                side,
                                vol.radius() as i32,
                                lambda,
                                trunc_cost,
                                out,
                                &mut tmp,
                                &mut env,
                                &mut lane,
                            );
                        }
                    }
                });
        }
        std::mem::swap(&mut msgs, &mut msgs_next);

        // Decode current beliefs and keep the best configuration seen.
        let decoded = decode(vol, &pot, &msgs, w, h, k)?;
        let e = energy(&decoded, vol, params)?;
        if e < best_energy {
            best_energy = e;
            best = decoded;
        }
    }
    Ok(best)
}

/// Per-pixel argmin of the beliefs with the shared tie-break rule.
fn decode(
    vol: &CostVolume,
    pot: &[f32],
    msgs: &[f32],
    w: usize,
    h: usize,
    k: usize,
) -> Result<FlowField, FlowError> {
    let mut u = vec![0i32; w * h];
    let mut v = vec![0i32; w * h];
    for px in 0..w * h {
        let mut bestl: Option<(f32, i64, usize)> = None;
        for label in 0..k {
            let mut b = pot[px * k + label];
            if !b.is_finite() {
                continue;
            }
            for dir in 0..4 {
                b += msgs[(px * 4 + dir) * k + label];
            }
            let (du, dv) = vol.displacement(px, label);
            let mag = (du as i64).pow(2) + (dv as i64).pow(2);
            if bestl.is_none_or(|(bc, bm, _)| better_label(b, mag, bc, bm)) {
                bestl = Some((b, mag, label));
            }
        }
        let Some((_, _, label)) = bestl else {
            return Err(FlowError::AllInfiniteCosts { row: px / w, col: px % w });
        };
        let (du, dv) = vol.displacement(px, label);
        u[px] = du;
        v[px] = dv;
    }
    Ok(FlowField::from_parts(w, h, u, v, vec![true; w * h]))
}

/// Truncated-L1 min-sum message between two square label windows with
/// different centers: one 1D pass along u, one along v, then min
/// normalization.
#[allow(clippy::too_many_arguments)]
fn message_2d(
    q: &[f32],
    center_j: (i32, i32),
    center_i: (i32, i32),
    side: usize,
    radius: i32,
    lambda: f32,
    trunc_cost: f32,
    out: &mut [f32],
    tmp: &mut [f32],
    env: &mut [f32],
    lane: &mut [f32],
) {
    let (cu_j, cv_j) = center_j;
    let (cu_i, cv_i) = center_i;
    // u origins of the sender's and receiver's windows
    let ju0 = cu_j - radius;
    let iu0 = cu_i - radius;
    let jv0 = cv_j - radius;
    let iv0 = cv_i - radius;

    // Pass 1: along u, sender rows -> receiver u-coordinates.
    for row in 0..side {
        let src = &q[row * side..(row + 1) * side];
        dt_pass_1d(src, ju0, iu0, side, lambda, trunc_cost, env, lane);
        tmp[row * side..(row + 1) * side].copy_from_slice(lane);
    }
    // Pass 2: along v, per receiver u-column.
    let mut col_src = vec![0.0f32; side];
    for col in 0..side {
        for row in 0..side {
            col_src[row] = tmp[row * side + col];
        }
        dt_pass_1d(&col_src, jv0, iv0, side, lambda, trunc_cost, env, lane);
        for row in 0..side {
            out[row * side + col] = lane[row];
        }
    }
    // Normalize so message magnitudes stay bounded across sweeps.
    let mn = out.iter().copied().fold(f32::INFINITY, f32::min);
    if mn.is_finite() {
        out.iter_mut().for_each(|v| *v -= mn);
    }
}

/// 1D truncated-L1 lower envelope of `src` (coordinates `src0..src0+n`)
/// evaluated at coordinates `dst0..dst0+n`.
///
/// The untruncated L1 envelope extends exactly at slope `lambda` beyond the
/// source range; the truncation cap `min(src) + trunc_cost` is applied last.
fn dt_pass_1d(
    src: &[f32],
    src0: i32,
    dst0: i32,
    n: usize,
    lambda: f32,
    trunc_cost: f32,
    env: &mut [f32],
    dst: &mut [f32],
) {
    env.copy_from_slice(src);
    for t in 1..n {
        let cand = env[t - 1] + lambda;
        if cand < env[t] {
            env[t] = cand;
        }
    }
    for t in (0..n - 1).rev() {
        let cand = env[t + 1] + lambda;
        if cand < env[t] {
            env[t] = cand;
        }
    }
    let mn = src.iter().copied().fold(f32::INFINITY, f32::min);
    let cap = mn + trunc_cost;
    for (t, d) in dst.iter_mut().enumerate() {
        let coord = dst0 + t as i32;
        let pos = coord - src0;
        let v = if pos < 0 {
            env[0] + lambda * (-pos) as f32
        } else if pos >= n as i32 {
            env[n - 1] + lambda * (pos - n as i32 + 1) as f32
        } else {
            env[pos as usize]
        };
        *d = v.min(cap);
    }
}
