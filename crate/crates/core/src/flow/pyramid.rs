//! Coarse-to-fine flow estimation over feature-map pyramids.

use crate::covariance::CovarianceFactor;
use crate::sift::FeatureMap;

use super::volume::{build_cost_volume, lda_volume_streaming, UnarySource};
use super::{optimize_level, FlowError, FlowField, FlowParams};

/// Which unary drives the correspondence objective.
pub enum UnaryKind<'a> {
    /// L1 descriptor distance with the given patch support.
    L1 { support: (usize, usize) },
    /// Exemplar classifiers learned per reference pixel at every pyramid
    /// level against the shared covariance factor.
    Lda { factor: &'a CovarianceFactor, prior_mu: f64 },
}

/// Pyramid depth: the explicit request, or when 0, enough 2x decimations to
/// bring `max_dim` down to roughly 16 pixels.
pub fn resolve_levels(requested: usize, max_dim: usize) -> usize {
    if requested > 0 {
        return requested;
    }
    let mut levels = 1;
    let mut d = max_dim;
    while d / 2 >= 16 {
        d = d.div_ceil(2);
        levels += 1;
    }
    levels
}

/// Gaussian pyramid over a feature map: binomial smoothing per channel, then
/// 2x decimation, `levels` entries with the original first.
pub fn feature_pyramid(fm: &FeatureMap, levels: usize) -> Vec<FeatureMap> {
    assert!(levels >= 1);
    let mut out = Vec::with_capacity(levels);
    out.push(fm.clone());
    for _ in 1..levels {
        let prev = out.last().expect("non-empty");
        out.push(decimate(&smooth(prev)));
    }
    out
}

/// Separable binomial [1 4 6 4 1]/16 smoothing per channel, replicated
/// borders.
fn smooth(fm: &FeatureMap) -> FeatureMap {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h, c) = (fm.width(), fm.height(), fm.channels());
    let idx = |r: usize, col: usize, ch: usize| (r * w + col) * c + ch;
    let mut hpass = vec![0.0f32; w * h * c];
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (ti, t) in (-2i32..=2).enumerate() {
                    let cc = (col as i32 + t).clamp(0, w as i32 - 1) as usize;
                    acc += K[ti] * fm.data()[idx(r, cc, ch)];
                }
                hpass[idx(r, col, ch)] = acc;
            }
        }
    }
    let mut data = vec![0.0f32; w * h * c];
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (ti, t) in (-2i32..=2).enumerate() {
                    let rr = (r as i32 + t).clamp(0, h as i32 - 1) as usize;
                    acc += K[ti] * hpass[idx(rr, col, ch)];
                }
                data[idx(r, col, ch)] = acc;
            }
        }
    }
    FeatureMap::new(w, h, c, data)
}

/// Keeps even rows and columns.
fn decimate(fm: &FeatureMap) -> FeatureMap {
    let (w, h, c) = (fm.width(), fm.height(), fm.channels());
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut data = Vec::with_capacity(nw * nh * c);
    for r in 0..nh {
        for col in 0..nw {
            data.extend_from_slice(fm.descriptor(r * 2, col * 2));
        }
    }
    FeatureMap::new(nw, nh, c, data)
}

/// Nearest-neighbor 2x flow upsampling with doubled displacements.
fn upsample_flow(prev: &FlowField, width: usize, height: usize) -> FlowField {
    let mut u = Vec::with_capacity(width * height);
    let mut v = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let (pu, pv) =
                prev.uv((r / 2).min(prev.height() - 1), (c / 2).min(prev.width() - 1));
            u.push(pu * 2);
            v.push(pv * 2);
        }
    }
    FlowField::from_parts(width, height, u, v, vec![true; width * height])
}

/// Estimates the displacement field from the reference to the target feature
/// map: full-window search at the coarsest pyramid level, then windowed
/// refinement of the upsampled, doubled flow at each finer level.
pub fn optimize_flow(
    fm_ref: &FeatureMap,
    fm_tgt: &FeatureMap,
    unary: &UnaryKind,
    params: &FlowParams,
) -> Result<FlowField, FlowError> {
    params.validate();
    if fm_ref.channels() != fm_tgt.channels() {
        return Err(FlowError::DimensionMismatch {
            expected: fm_ref.channels(),
            got: fm_tgt.channels(),
        });
    }
    let max_dim = fm_ref
        .width()
        .max(fm_ref.height())
        .max(fm_tgt.width())
        .max(fm_tgt.height());
    let explicit = params.levels > 0;
    let mut levels = resolve_levels(params.levels, max_dim);

    // Every level must keep both maps at least as large as the unary support.
    let (min_w, min_h) = match unary {
        UnaryKind::L1 { support } => (support.1.max(1), support.0.max(1)),
        UnaryKind::Lda { factor, .. } => (factor.detector_w(), factor.detector_h()),
    };
    let level_dims = |d: usize, l: usize| -> usize {
        let mut v = d;
        for _ in 0..l {
            v = v.div_ceil(2);
        }
        v
    };
    loop {
        let l = levels - 1;
        let ok = [
            (fm_ref.width(), min_w),
            (fm_ref.height(), min_h),
            (fm_tgt.width(), min_w),
            (fm_tgt.height(), min_h),
        ]
        .iter()
        .all(|&(d, m)| level_dims(d, l) >= m);
        if ok {
            break;
        }
        if explicit {
            return Err(FlowError::PyramidTooDeep {
                level: l,
                width: level_dims(fm_ref.width(), l),
                height: level_dims(fm_ref.height(), l),
                min: min_w.max(min_h),
            });
        }
        if levels == 1 {
            break; // single level; the volume builder will cope or error
        }
        levels -= 1;
    }

    let pyr_ref = feature_pyramid(fm_ref, levels);
    let pyr_tgt = feature_pyramid(fm_tgt, levels);

    let mut flow: Option<FlowField> = None;
    for level in (0..levels).rev() {
        let rf = &pyr_ref[level];
        let tf = &pyr_tgt[level];
        let coarsest = level == levels - 1;
        let radius = if coarsest {
            tf.width().max(tf.height())
        } else {
            params.window_radius
        };
        let centers = flow
            .as_ref()
            .map(|f| upsample_flow(f, rf.width(), rf.height()));
        let vol = match unary {
            UnaryKind::L1 { support } => build_cost_volume(
                &UnarySource::L1 { fm_ref: rf, fm_tgt: tf, support: *support },
                radius,
                centers.as_ref(),
            )?,
            UnaryKind::Lda { factor, prior_mu } => {
                lda_volume_streaming(factor, rf, tf, *prior_mu, radius, centers.as_ref())?
            }
        };
        // Initialize at the clamped window centers (the coarse estimate).
        let init = FlowField::from_parts(
            rf.width(),
            rf.height(),
            vol.centers_u.clone(),
            vol.centers_v.clone(),
            vec![true; rf.width() * rf.height()],
        );
        flow = Some(optimize_level(&vol, params, &init)?);
    }
    Ok(flow.expect("at least one level"))
}

#[cfg(test)]
mod tests {
    use super::super::argmax_flow;
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_map(w: usize, h: usize, c: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::new(w, h, c, (0..w * h * c).map(|_| rng.random::<f32>()).collect())
    }

    #[test]
    fn resolve_levels_targets_sixteen() {
        assert_eq!(resolve_levels(3, 1000), 3);
        assert_eq!(resolve_levels(0, 16), 1);
        assert_eq!(resolve_levels(0, 32), 2);
        assert_eq!(resolve_levels(0, 150), 4); // 150 -> 75 -> 38 -> 19
    }

    #[test]
    fn pyramid_halves_dimensions() {
        let fm = random_map(21, 14, 2, 1);
        let pyr = feature_pyramid(&fm, 3);
        assert_eq!((pyr[0].width(), pyr[0].height()), (21, 14));
        assert_eq!((pyr[1].width(), pyr[1].height()), (11, 7));
        assert_eq!((pyr[2].width(), pyr[2].height()), (6, 4));
    }

    #[test]
    fn self_match_is_zero_flow() {
        let fm = random_map(18, 15, 3, 3);
        let params = FlowParams { levels: 1, bp_iters: 6, ..FlowParams::default() };
        let flow =
            optimize_flow(&fm, &fm, &UnaryKind::L1 { support: (1, 1) }, &params).unwrap();
        let mut zero = 0;
        let mut total = 0;
        for r in 2..13 {
            for c in 2..16 {
                total += 1;
                if flow.uv(r, c) == (0, 0) {
                    zero += 1;
                }
            }
        }
        assert!(zero as f64 >= 0.9 * total as f64, "{zero}/{total} interior zeros");
    }

    #[test]
    fn translation_is_recovered() {
        // tgt content equals ref shifted: ref (r, c) matches tgt (r, c + 3)
        let canvas = random_map(40, 20, 2, 5);
        let crop = |c0: usize| {
            let mut data = Vec::new();
            for r in 0..20 {
                for c in 0..30 {
                    data.extend_from_slice(canvas.descriptor(r, c + c0));
                }
            }
            FeatureMap::new(30, 20, 2, data)
        };
        let fm_ref = crop(3);
        let fm_tgt = crop(0);
        let params =
            FlowParams { levels: 1, window_radius: 5, bp_iters: 8, ..FlowParams::default() };
        let flow =
            optimize_flow(&fm_ref, &fm_tgt, &UnaryKind::L1 { support: (1, 1) }, &params).unwrap();
        let mut hit = 0;
        let mut total = 0;
        for r in 2..18 {
            for c in 2..24 {
                total += 1;
                if flow.uv(r, c) == (3, 0) {
                    hit += 1;
                }
            }
        }
        assert!(hit as f64 >= 0.9 * total as f64, "{hit}/{total} recovered (3,0)");
    }

    #[test]
    fn single_level_reduces_to_full_window_level() {
        let fm_ref = random_map(12, 9, 2, 7);
        let fm_tgt = random_map(12, 9, 2, 8);
        let params = FlowParams { levels: 1, bp_iters: 5, ..FlowParams::default() };
        let via_pipeline =
            optimize_flow(&fm_ref, &fm_tgt, &UnaryKind::L1 { support: (1, 1) }, &params).unwrap();
        let radius = 12usize.max(9);
        let vol = build_cost_volume(
            &UnarySource::L1 { fm_ref: &fm_ref, fm_tgt: &fm_tgt, support: (1, 1) },
            radius,
            None,
        )
        .unwrap();
        let init = FlowField::from_parts(
            12,
            9,
            vol.centers_u.clone(),
            vol.centers_v.clone(),
            vec![true; 108],
        );
        let direct = optimize_level(&vol, &params, &init).unwrap();
        assert_eq!(via_pipeline, direct);
    }

    #[test]
    fn zero_smoothness_equals_argmax_per_level() {
        let fm_ref = random_map(10, 8, 2, 11);
        let fm_tgt = random_map(10, 8, 2, 12);
        let params = FlowParams {
            levels: 1,
            lambda: 0.0,
            small_disp_weight: 0.0,
            bp_iters: 3,
            ..FlowParams::default()
        };
        let flow =
            optimize_flow(&fm_ref, &fm_tgt, &UnaryKind::L1 { support: (1, 1) }, &params).unwrap();
        let vol = build_cost_volume(
            &UnarySource::L1 { fm_ref: &fm_ref, fm_tgt: &fm_tgt, support: (1, 1) },
            10,
            None,
        )
        .unwrap();
        assert_eq!(flow, argmax_flow(&vol).unwrap());
    }

    #[test]
    fn too_deep_explicit_pyramid_is_rejected() {
        let fm = random_map(10, 10, 2, 13);
        let eye = ndarray::Array2::<f64>::eye(2 * 9);
        let factor = crate::covariance::factorize(
            &eye,
            crate::covariance::FactorKind::Cholesky,
            3,
            3,
            2,
            &[0.0, 0.0],
            0.0,
        )
        .unwrap();
        let params = FlowParams { levels: 4, ..FlowParams::default() };
        // 10 -> 5 -> 3 -> 2: the last level is smaller than the 3x3 detector
        let err = optimize_flow(
            &fm,
            &fm,
            &UnaryKind::Lda { factor: &factor, prior_mu: 0.0 },
            &params,
        )
        .unwrap_err();
        assert!(matches!(err, FlowError::PyramidTooDeep { .. }));
    }

    #[test]
    fn multi_level_translation_with_lda() {
        // Identity covariance turns the classifiers into whitened matched
        // filters; a translated copy should still be recovered through the
        // pyramid. Descriptors need enough channels for the single-pixel
        // detector to separate matches from noise.
        let c = 8;
        let canvas = random_map(44, 36, c, 21);
        let crop = |c0: usize| {
            let mut data = Vec::new();
            for r in 0..34 {
                for col in 0..40 {
                    data.extend_from_slice(canvas.descriptor(r, col + c0));
                }
            }
            FeatureMap::new(40, 34, c, data)
        };
        let fm_ref = crop(2);
        let fm_tgt = crop(0);
        let eye = ndarray::Array2::<f64>::eye(c);
        let factor = crate::covariance::factorize(
            &eye,
            crate::covariance::FactorKind::Cholesky,
            1,
            1,
            c,
            &vec![0.5; c],
            0.0,
        )
        .unwrap();
        let params =
            FlowParams { levels: 2, window_radius: 3, bp_iters: 20, ..FlowParams::default() };
        let flow = optimize_flow(
            &fm_ref,
            &fm_tgt,
            &UnaryKind::Lda { factor: &factor, prior_mu: 0.0 },
            &params,
        )
        .unwrap();
        let mut hit = 0;
        let mut total = 0;
        for r in 4..30 {
            for c in 4..34 {
                total += 1;
                if flow.uv(r, c) == (2, 0) {
                    hit += 1;
                }
            }
        }
        assert!(hit as f64 >= 0.9 * total as f64, "{hit}/{total} recovered (2,0)");
    }
}
