//! Multi-annotator keypoint annotations, groundtruth Gaussians, Mahalanobis
//! scoring, CDF curves, and alignment baselines.
//!
//! Distances are measured in standard deviations of the annotator
//! distribution, so scores are comparable across image resolutions and
//! keypoints of different distinctiveness: correspondences get slack along
//! directions where annotators themselves disagree.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowField;

/// Covariance floor added to fitted annotator covariances, in px^2.
/// Quarter-pixel annotation noise keeps unanimous keypoints invertible.
pub const COVARIANCE_FLOOR: f64 = 0.25;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("failed to parse annotations: {0}")]
    ParseError(String),
    #[error("pair {pair} keypoint {keypoint}: ({x}, {y}) outside the {which} image {w}x{h}")]
    OutOfBounds {
        pair: String,
        keypoint: String,
        which: &'static str,
        x: f64,
        y: f64,
        w: usize,
        h: usize,
    },
    #[error("pair {pair} keypoint {keypoint}: {n} annotators, at least 2 required")]
    TooFewAnnotators { pair: String, keypoint: String, n: usize },
    #[error("at least 2 points required to fit a groundtruth Gaussian, got {0}")]
    TooFewPoints(usize),
    #[error("groundtruth covariance is singular")]
    SingularCovariance,
    #[error("pair {pair} keypoint {keypoint}: no prediction covers the keypoint")]
    MissingPrediction { pair: String, keypoint: String },
    #[error("no distances to aggregate")]
    EmptyDistances,
}

/// One keypoint in a source image with the annotator labels of its
/// correspondence in the target image. A `null` annotation marks an annotator
/// who skipped the point.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Keypoint {
    pub id: String,
    /// (x, y) position in the source image, original resolution.
    pub source_xy: [f64; 2],
    /// Per-annotator (x, y) labels in the target image; `null` = missing.
    pub annotations: Vec<Option<[f64; 2]>>,
}

impl Keypoint {
    pub fn labelled(&self) -> Vec<[f64; 2]> {
        self.annotations.iter().flatten().copied().collect()
    }
}

/// A source/target image pair with annotated keypoints.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairAnnotation {
    pub source: String,
    pub target: String,
    /// (width, height) of the source image.
    pub source_size: [usize; 2],
    /// (width, height) of the target image.
    pub target_size: [usize; 2],
    pub keypoints: Vec<Keypoint>,
}

/// Multi-annotator keypoint labels over a set of image pairs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AnnotationSet {
    pub pairs: Vec<PairAnnotation>,
}

/// Loads and validates an annotation JSON file.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet, EvalError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| EvalError::ParseError(format!("{}: {e}", path.as_ref().display())))?;
    let set: AnnotationSet =
        serde_json::from_str(&text).map_err(|e| EvalError::ParseError(e.to_string()))?;
    validate_annotations(&set)?;
    Ok(set)
}

pub fn validate_annotations(set: &AnnotationSet) -> Result<(), EvalError> {
    for pair in &set.pairs {
        let n_annotators = pair.keypoints.first().map_or(0, |k| k.annotations.len());
        for kp in &pair.keypoints {
            if kp.annotations.len() != n_annotators {
                return Err(EvalError::ParseError(format!(
                    "pair {}: keypoint {} has {} annotation slots, expected {}",
                    pair.source,
                    kp.id,
                    kp.annotations.len(),
                    n_annotators
                )));
            }
            let [x, y] = kp.source_xy;
            let [sw, sh] = pair.source_size;
            if !(0.0..sw as f64).contains(&x) || !(0.0..sh as f64).contains(&y) {
                return Err(EvalError::OutOfBounds {
                    pair: pair.source.clone(),
                    keypoint: kp.id.clone(),
                    which: "source",
                    x,
                    y,
                    w: sw,
                    h: sh,
                });
            }
            let labelled = kp.labelled();
            if labelled.len() < 2 {
                return Err(EvalError::TooFewAnnotators {
                    pair: pair.source.clone(),
                    keypoint: kp.id.clone(),
                    n: labelled.len(),
                });
            }
            let [tw, th] = pair.target_size;
            for [ax, ay] in labelled {
                if !(0.0..tw as f64).contains(&ax) || !(0.0..th as f64).contains(&ay) {
                    return Err(EvalError::OutOfBounds {
                        pair: pair.source.clone(),
                        keypoint: kp.id.clone(),
                        which: "target",
                        x: ax,
                        y: ay,
                        w: tw,
                        h: th,
                    });
                }
            }
        }
    }
    Ok(())
}

/// 2D Gaussian fitted to the annotator labels of one keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct GtGaussian {
    pub mu: [f64; 2],
    /// Symmetric 2x2 covariance, floored by [`COVARIANCE_FLOOR`] * I.
    pub sigma: [[f64; 2]; 2],
    pub n_annotators: usize,
}

/// Sample mean and (n-1)-denominator sample covariance of the annotator
/// points, plus the quarter-pixel floor. Points are sorted first so the fit
/// is exactly permutation-invariant.
pub fn fit_gt(points: &[[f64; 2]]) -> Result<GtGaussian, EvalError> {
    let n = points.len();
    if n < 2 {
        return Err(EvalError::TooFewPoints(n));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    let nf = n as f64;
    let mut mu = [0.0f64; 2];
    for p in &pts {
        mu[0] += p[0];
        mu[1] += p[1];
    }
    mu[0] /= nf;
    mu[1] /= nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for p in &pts {
        let dx = p[0] - mu[0];
        let dy = p[1] - mu[1];
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let denom = nf - 1.0;
    Ok(GtGaussian {
        mu,
        sigma: [
            [sxx / denom + COVARIANCE_FLOOR, sxy / denom],
            [sxy / denom, syy / denom + COVARIANCE_FLOOR],
        ],
        n_annotators: n,
    })
}

/// Mahalanobis distance of `x` from the groundtruth, in standard deviations.
pub fn mahalanobis(x: [f64; 2], gt: &GtGaussian) -> Result<f64, EvalError> {
    let s = &gt.sigma;
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    if !(det > 0.0) || !det.is_finite() {
        return Err(EvalError::SingularCovariance);
    }
    let dx = x[0] - gt.mu[0];
    let dy = x[1] - gt.mu[1];
    let q = (s[1][1] * dx * dx - 2.0 * s[0][1] * dx * dy + s[0][0] * dy * dy) / det;
    Ok(q.max(0.0).sqrt())
}

/// One scored keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointScore {
    pub pair_index: usize,
    pub keypoint_id: String,
    pub distance: f64,
}

/// Scores explicit predicted points (one per keypoint, original target
/// coordinates) against a pair's annotations.
pub fn score_points(
    pair_index: usize,
    pair: &PairAnnotation,
    predictions: &[[f64; 2]],
) -> Result<Vec<KeypointScore>, EvalError> {
    if predictions.len() != pair.keypoints.len() {
        return Err(EvalError::ParseError(format!(
            "{} predictions for {} keypoints",
            predictions.len(),
            pair.keypoints.len()
        )));
    }
    pair.keypoints
        .iter()
        .zip(predictions)
        .map(|(kp, &pred)| {
            let gt = fit_gt(&kp.labelled())?;
            Ok(KeypointScore {
                pair_index,
                keypoint_id: kp.id.clone(),
                distance: mahalanobis(pred, &gt)?,
            })
        })
        .collect()
}

/// Scores a flow field computed at working resolution.
///
/// Keypoints are scaled from source-image coordinates into the flow frame,
/// looked up at the nearest pixel, displaced, and the predictions are scaled
/// from the working target frame (`flow_tgt_size`) back into original target
/// coordinates. Keypoints outside the flow's validity mask produce
/// [`EvalError::MissingPrediction`].
pub fn score_flow(
    pair_index: usize,
    pair: &PairAnnotation,
    flow: &FlowField,
    flow_tgt_size: (usize, usize),
) -> Result<Vec<KeypointScore>, EvalError> {
    let (scores, misses) = score_flow_partial(pair_index, pair, flow, flow_tgt_size)?;
    if let Some(missed) = misses.first() {
        return Err(EvalError::MissingPrediction {
            pair: pair.source.clone(),
            keypoint: missed.clone(),
        });
    }
    Ok(scores)
}

/// Lenient variant of [`score_flow`]: uncovered keypoints are returned by id
/// instead of failing the whole pair.
pub fn score_flow_partial(
    pair_index: usize,
    pair: &PairAnnotation,
    flow: &FlowField,
    flow_tgt_size: (usize, usize),
) -> Result<(Vec<KeypointScore>, Vec<String>), EvalError> {
    let [sw, sh] = pair.source_size;
    let [tw, th] = pair.target_size;
    let sx = flow.width() as f64 / sw as f64;
    let sy = flow.height() as f64 / sh as f64;
    let tx = tw as f64 / flow_tgt_size.0 as f64;
    let ty = th as f64 / flow_tgt_size.1 as f64;
    let mut scores = Vec::new();
    let mut misses = Vec::new();
    for kp in &pair.keypoints {
        let gt = fit_gt(&kp.labelled())?;
        let wx = kp.source_xy[0] * sx;
        let wy = kp.source_xy[1] * sy;
        let col = wx.round() as isize;
        let row = wy.round() as isize;
        if row < 0
            || col < 0
            || row as usize >= flow.height()
            || col as usize >= flow.width()
            || !flow.is_valid(row as usize, col as usize)
        {
            misses.push(kp.id.clone());
            continue;
        }
        let (u, v) = flow.uv(row as usize, col as usize);
        let pred = [(wx + u as f64) * tx, (wy + v as f64) * ty];
        scores.push(KeypointScore {
            pair_index,
            keypoint_id: kp.id.clone(),
            distance: mahalanobis(pred, &gt)?,
        });
    }
    Ok((scores, misses))
}

/// The no-flow baseline: maps each source keypoint through the span-scaling
/// `W(x) = x * target_size / source_size` per axis.
pub fn identity_baseline(
    keypoints: &[[f64; 2]],
    source_size: (usize, usize),
    target_size: (usize, usize),
) -> Vec<[f64; 2]> {
    let sx = target_size.0 as f64 / source_size.0 as f64;
    let sy = target_size.1 as f64 / source_size.1 as f64;
    keypoints.iter().map(|&[x, y]| [x * sx, y * sy]).collect()
}

/// Fraction of distances at or below each of `bins` evenly spaced thresholds
/// up to `max_sd`.
pub fn cdf(distances: &[f64], max_sd: f64, bins: usize) -> Result<Vec<(f64, f64)>, EvalError> {
    assert!(bins >= 1, "bins must be at least 1");
    assert!(max_sd > 0.0, "max_sd must be positive");
    if distances.is_empty() {
        return Err(EvalError::EmptyDistances);
    }
    let n = distances.len() as f64;
    Ok((1..=bins)
        .map(|k| {
            let t = max_sd * k as f64 / bins as f64;
            let frac = distances.iter().filter(|&&d| d <= t).count() as f64 / n;
            (t, frac)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn minimal_set() -> AnnotationSet {
        AnnotationSet {
            pairs: vec![PairAnnotation {
                source: "a.png".into(),
                target: "b.png".into(),
                source_size: [100, 80],
                target_size: [120, 90],
                keypoints: vec![Keypoint {
                    id: "kp0".into(),
                    source_xy: [10.0, 20.0],
                    annotations: vec![Some([30.0, 40.0]), Some([32.0, 42.0])],
                }],
            }],
        }
    }

    #[test]
    fn minimal_annotation_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.json");
        std::fs::write(&path, serde_json::to_string(&minimal_set()).unwrap()).unwrap();
        let set = load_annotations(&path).unwrap();
        assert_eq!(set.pairs.len(), 1);
        assert_eq!(set.pairs[0].keypoints.len(), 1);
        assert_eq!(set.pairs[0].keypoints[0].labelled().len(), 2);
    }

    #[test]
    fn out_of_bounds_names_pair_and_keypoint() {
        let mut set = minimal_set();
        set.pairs[0].keypoints[0].annotations[1] = Some([500.0, 40.0]);
        let err = validate_annotations(&set).unwrap_err();
        match err {
            EvalError::OutOfBounds { pair, keypoint, .. } => {
                assert_eq!(pair, "a.png");
                assert_eq!(keypoint, "kp0");
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn single_annotator_is_rejected() {
        let mut set = minimal_set();
        set.pairs[0].keypoints[0].annotations = vec![Some([30.0, 40.0]), None];
        assert!(matches!(
            validate_annotations(&set),
            Err(EvalError::TooFewAnnotators { n: 1, .. })
        ));
    }

    #[test]
    fn fit_gt_matches_hand_covariance() {
        let gt = fit_gt(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(gt.mu, [1.0, 0.0]);
        assert_eq!(gt.sigma[0][0], 2.0 + COVARIANCE_FLOOR);
        assert_eq!(gt.sigma[1][1], COVARIANCE_FLOOR);
        assert_eq!(gt.sigma[0][1], 0.0);
    }

    #[test]
    fn unanimous_annotators_fall_back_to_the_floor() {
        let gt = fit_gt(&[[5.0, 7.0]; 4]).unwrap();
        assert_eq!(gt.mu, [5.0, 7.0]);
        assert_eq!(gt.sigma, [[COVARIANCE_FLOOR, 0.0], [0.0, COVARIANCE_FLOOR]]);
    }

    #[test]
    fn collinear_points_become_invertible_after_floor() {
        let pts = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        // rank-1 sample covariance: determinant zero before the floor
        let sxx = 1.0;
        let sxy = 1.0;
        assert_eq!(sxx * sxx - sxy * sxy, 0.0);
        let gt = fit_gt(&pts).unwrap();
        let det = gt.sigma[0][0] * gt.sigma[1][1] - gt.sigma[0][1] * gt.sigma[1][0];
        assert!(det > 0.0);
        assert!(mahalanobis([1.0, 1.0], &gt).is_ok());
    }

    #[test]
    fn fit_gt_is_permutation_invariant() {
        let a = [[1.0, 2.0], [3.5, 0.5], [2.25, 4.0], [0.125, 1.75]];
        let mut b = a;
        b.reverse();
        b.swap(1, 2);
        assert_eq!(fit_gt(&a).unwrap(), fit_gt(&b).unwrap());
    }

    #[test]
    fn too_few_points_is_rejected() {
        assert!(matches!(fit_gt(&[[1.0, 1.0]]), Err(EvalError::TooFewPoints(1))));
    }

    #[test]
    fn mahalanobis_is_zero_at_the_mean() {
        let gt = fit_gt(&[[3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!(mahalanobis(gt.mu, &gt).unwrap(), 0.0);
    }

    #[test]
    fn identity_covariance_reduces_to_euclidean() {
        let gt =
            GtGaussian { mu: [1.0, 2.0], sigma: [[1.0, 0.0], [0.0, 1.0]], n_annotators: 2 };
        assert_eq!(mahalanobis([4.0, 6.0], &gt).unwrap(), 5.0);
    }

    #[test]
    fn slack_follows_the_high_variance_axis() {
        let gt =
            GtGaussian { mu: [0.0, 0.0], sigma: [[4.0, 0.0], [0.0, 1.0]], n_annotators: 2 };
        assert_eq!(mahalanobis([2.0, 0.0], &gt).unwrap(), 1.0);
        assert_eq!(mahalanobis([0.0, 2.0], &gt).unwrap(), 2.0);
    }

    #[test]
    fn affine_maps_leave_the_distance_unchanged() {
        let gt = GtGaussian {
            mu: [1.0, -2.0],
            sigma: [[2.0, 0.5], [0.5, 1.5]],
            n_annotators: 3,
        };
        let x = [3.0, 1.0];
        let d0 = mahalanobis(x, &gt).unwrap();
        // A = [[1.5, 0.7], [-0.3, 2.0]], t = (4, -1)
        let a = [[1.5, 0.7], [-0.3, 2.0]];
        let t = [4.0, -1.0];
        let map = |p: [f64; 2]| {
            [
                a[0][0] * p[0] + a[0][1] * p[1] + t[0],
                a[1][0] * p[0] + a[1][1] * p[1] + t[1],
            ]
        };
        // transformed covariance A Sigma Aᵀ
        let s = gt.sigma;
        let mut asig = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                asig[i][j] = a[i][0] * s[0][j] + a[i][1] * s[1][j];
            }
        }
        let mut new_sigma = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                new_sigma[i][j] = asig[i][0] * a[j][0] + asig[i][1] * a[j][1];
            }
        }
        let gt2 = GtGaussian { mu: map(gt.mu), sigma: new_sigma, n_annotators: 3 };
        let d1 = mahalanobis(map(x), &gt2).unwrap();
        assert!((d0 - d1).abs() < 1e-9, "{d0} vs {d1}");
    }

    #[test]
    fn predictions_at_the_mean_score_zero() {
        let set = minimal_set();
        let pair = &set.pairs[0];
        let gt = fit_gt(&pair.keypoints[0].labelled()).unwrap();
        let scores = score_points(0, pair, &[gt.mu]).unwrap();
        assert_eq!(scores[0].distance, 0.0);
    }

    #[test]
    fn identity_baseline_scales_by_span() {
        let preds = identity_baseline(&[[50.0, 40.0]], (100, 100), (200, 100));
        assert_eq!(preds, vec![[100.0, 40.0]]);
        // corners (as span endpoints) map to corners
        let corners = identity_baseline(&[[0.0, 0.0], [100.0, 100.0]], (100, 100), (200, 100));
        assert_eq!(corners, vec![[0.0, 0.0], [200.0, 100.0]]);
        // equal sizes: identity
        let same = identity_baseline(&[[13.5, 7.25]], (64, 48), (64, 48));
        assert_eq!(same, vec![[13.5, 7.25]]);
    }

    #[test]
    fn flow_scoring_composes_lookup_and_metric() {
        let set = minimal_set();
        let pair = &set.pairs[0];
        // flow at original resolution; constant displacement (+5, +3)
        let n = 100 * 80;
        let flow = FlowField::from_parts(100, 80, vec![5; n], vec![3; n], vec![true; n]);
        let scores = score_flow(0, pair, &flow, (120, 90)).unwrap();
        let gt = fit_gt(&pair.keypoints[0].labelled()).unwrap();
        let want = mahalanobis([15.0, 23.0], &gt).unwrap();
        assert_eq!(scores[0].distance, want);
    }

    #[test]
    fn keypoint_outside_flow_is_missing() {
        let set = minimal_set();
        let pair = &set.pairs[0];
        // tiny flow that does not cover the scaled keypoint
        let flow = FlowField::zeros(5, 5);
        // scaled keypoint = (10 * 5/100, 20 * 5/80) = (0.5, 1.25) -> covered!
        // invalidate that pixel instead
        let mut valid = vec![true; 25];
        valid[1 * 5 + 1] = false;
        let flow = FlowField::from_parts(5, 5, flow.u().to_vec(), flow.v().to_vec(), valid);
        assert!(matches!(
            score_flow(0, pair, &flow, (5, 5)),
            Err(EvalError::MissingPrediction { .. })
        ));
    }

    #[test]
    fn cdf_of_zero_distances_is_one_everywhere() {
        let curve = cdf(&[0.0, 0.0, 0.0], 3.0, 3).unwrap();
        assert_eq!(curve, vec![(1.0, 1.0), (2.0, 1.0), (3.0, 1.0)]);
    }

    #[test]
    fn cdf_counts_by_hand() {
        let curve = cdf(&[1.0, 2.0, 4.0], 3.0, 3).unwrap();
        let fracs: Vec<f64> = curve.iter().map(|&(_, f)| f).collect();
        assert_eq!(fracs, vec![1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn empty_distances_are_rejected() {
        assert!(matches!(cdf(&[], 3.0, 3), Err(EvalError::EmptyDistances)));
    }

    proptest! {
        #[test]
        fn cdf_is_monotone_and_bounded(
            dists in proptest::collection::vec(0.0f64..10.0, 1..40),
            bins in 1usize..20,
        ) {
            let curve = cdf(&dists, 3.0, bins).unwrap();
            let mut prev = 0.0;
            for (_, frac) in curve {
                prop_assert!((0.0..=1.0).contains(&frac));
                prop_assert!(frac >= prev);
                prev = frac;
            }
        }

        #[test]
        fn cdf_ignores_distance_order(
            mut dists in proptest::collection::vec(0.0f64..10.0, 2..30),
        ) {
            let a = cdf(&dists, 3.0, 7).unwrap();
            dists.reverse();
            let b = cdf(&dists, 3.0, 7).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
