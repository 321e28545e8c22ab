//! `semflow eval`: score prediction sources against annotations and emit CDF
//! curves.
//!
//! Prediction sources per `--flow NAME=SPEC`:
//! - a `.sflo` file (single-pair annotation sets),
//! - a directory containing `pair_<index>.sflo`, one per annotation pair,
//! - `baseline:identity` — the span-scaling no-flow baseline,
//! - `baseline:argmax` — the per-keypoint best unary match without
//!   regularization (needs the pair images next to the annotation file, and
//!   `--stats` when the configured unary is `lda`).

use std::io::Write as _;
use std::path::Path;

use semflow_core::covariance::CovarianceFactor;
use semflow_core::eval::{
    cdf, identity_baseline, load_annotations, score_flow_partial, score_points, AnnotationSet,
};
use semflow_core::exemplar::{extract_patch, l1_unary, learn_classifier, likelihood_map};
use semflow_core::io::load_flow;

use crate::config::RunConfig;
use crate::{CliError, EvalArgs};

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let cfg = args.common.load_config()?;
    if args.bins < 1 {
        return Err(CliError::Config("bins: must be at least 1".into()));
    }
    if args.max_sd <= 0.0 {
        return Err(CliError::Config("max-sd: must be positive".into()));
    }
    let ann = load_annotations(&args.annotations).map_err(|e| CliError::Config(e.to_string()))?;
    let ann_dir = args.annotations.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for spec in &args.flows {
        let (name, source) = parse_spec(spec);
        let distances = match source {
            "baseline:identity" => identity_distances(&ann),
            "baseline:argmax" => argmax_distances(&ann, &ann_dir, &cfg, &args)?,
            path => flow_distances(&ann, Path::new(path), &cfg, &name)?,
        };
        if distances.is_empty() {
            return Err(CliError::Config(format!("method {name}: no scored keypoints")));
        }
        let curve =
            cdf(&distances, args.max_sd, args.bins).map_err(|e| CliError::Config(e.to_string()))?;
        println!(
            "{name}: {} keypoints, cdf@{:.1}sd = {:.4}",
            distances.len(),
            args.max_sd,
            curve.last().expect("bins >= 1").1
        );
        names.push(name);
        columns.push(curve.into_iter().map(|(_, f)| f).collect());
    }

    let thresholds: Vec<f64> =
        (1..=args.bins).map(|k| args.max_sd * k as f64 / args.bins as f64).collect();
    write_csv(&args.out, &thresholds, &names, &columns)?;
    println!("wrote {}", args.out.display());
    if let Some(svg_path) = &args.svg {
        let methods: Vec<(String, Vec<f64>)> =
            names.iter().cloned().zip(columns.iter().cloned()).collect();
        std::fs::write(svg_path, crate::svg::render_cdf_svg(&thresholds, &methods))
            .map_err(|e| CliError::Io(format!("{}: {e}", svg_path.display())))?;
        println!("wrote {}", svg_path.display());
    }
    Ok(())
}

fn parse_spec(spec: &str) -> (String, &str) {
    match spec.split_once('=') {
        Some((name, rest)) => (name.to_string(), rest),
        None => {
            let name = Path::new(spec)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.to_string());
            (name, spec)
        }
    }
}

fn identity_distances(ann: &AnnotationSet) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, pair) in ann.pairs.iter().enumerate() {
        let kps: Vec<[f64; 2]> = pair.keypoints.iter().map(|k| k.source_xy).collect();
        let preds = identity_baseline(
            &kps,
            (pair.source_size[0], pair.source_size[1]),
            (pair.target_size[0], pair.target_size[1]),
        );
        let scores = score_points(i, pair, &preds).expect("validated annotations");
        out.extend(scores.into_iter().map(|s| s.distance));
    }
    out
}

fn flow_distances(
    ann: &AnnotationSet,
    path: &Path,
    cfg: &RunConfig,
    name: &str,
) -> Result<Vec<f64>, CliError> {
    let mut out = Vec::new();
    let mut missing = 0usize;
    for (i, pair) in ann.pairs.iter().enumerate() {
        let flow_path = if path.is_dir() {
            path.join(format!("pair_{i}.sflo"))
        } else {
            if ann.pairs.len() > 1 {
                return Err(CliError::Config(format!(
                    "method {name}: {} annotation pairs need a directory of pair_<i>.sflo files",
                    ann.pairs.len()
                )));
            }
            path.to_path_buf()
        };
        let flow = load_flow(&flow_path)
            .map_err(|e| CliError::Io(format!("{}: {e}", flow_path.display())))?;
        let tgt_working =
            super::working_dims(pair.target_size[0], pair.target_size[1], cfg.max_dim);
        let (scores, misses) = score_flow_partial(i, pair, &flow, tgt_working)
            .map_err(|e| CliError::Config(e.to_string()))?;
        missing += misses.len();
        out.extend(scores.into_iter().map(|s| s.distance));
    }
    if missing > 0 {
        eprintln!("warning: method {name}: {missing} keypoints had no prediction and were excluded");
    }
    Ok(out)
}

/// The single best unary match per annotated keypoint, no regularization.
fn argmax_distances(
    ann: &AnnotationSet,
    ann_dir: &Path,
    cfg: &RunConfig,
    args: &EvalArgs,
) -> Result<Vec<f64>, CliError> {
    let (dh, dw) = cfg.detector_dims()?;
    let factor: Option<CovarianceFactor> = if cfg.unary == "lda" {
        let stats_path = args.stats.as_ref().ok_or_else(|| {
            CliError::Config("baseline:argmax with the lda unary requires --stats".into())
        })?;
        let acc = semflow_core::io::load_stats(stats_path)
            .map_err(|e| CliError::Io(format!("{}: {e}", stats_path.display())))?;
        let (mean, tensor) = acc.finalize().map_err(|e| CliError::Config(e.to_string()))?;
        Some(
            CovarianceFactor::from_stats(&mean, &tensor, dh, dw, cfg.factor_kind())
                .map_err(|e| CliError::Numeric(e.to_string()))?,
        )
    } else {
        None
    };

    let mut out = Vec::new();
    for (i, pair) in ann.pairs.iter().enumerate() {
        let (_, fm_ref) = super::load_to_features(&ann_dir.join(&pair.source), cfg)?;
        let (_, fm_tgt) = super::load_to_features(&ann_dir.join(&pair.target), cfg)?;
        let sx = fm_ref.width() as f64 / pair.source_size[0] as f64;
        let sy = fm_ref.height() as f64 / pair.source_size[1] as f64;
        let tx = pair.target_size[0] as f64 / fm_tgt.width() as f64;
        let ty = pair.target_size[1] as f64 / fm_tgt.height() as f64;
        let mut preds = Vec::with_capacity(pair.keypoints.len());
        for kp in &pair.keypoints {
            let wr = ((kp.source_xy[1] * sy).round() as usize).min(fm_ref.height() - 1);
            let wc = ((kp.source_xy[0] * sx).round() as usize).min(fm_ref.width() - 1);
            // best match over the whole target: highest score for lda,
            // lowest cost for l1; ties resolve to the first in row-major
            // order
            let (br, bc) = match &factor {
                Some(f) => {
                    let u_pos = extract_patch(&fm_ref, wr, wc, dh, dw);
                    let (w, _) = learn_classifier(f, &u_pos)
                        .map_err(|e| CliError::Numeric(e.to_string()))?;
                    let map = likelihood_map(&w, dh, dw, &fm_tgt, None)
                        .map_err(|e| CliError::Numeric(e.to_string()))?;
                    arg_best(&map, true)
                }
                None => {
                    let map = l1_unary(&fm_ref, wr, wc, &fm_tgt, (1, 1), None)
                        .map_err(|e| CliError::Numeric(e.to_string()))?;
                    arg_best(&map, false)
                }
            };
            preds.push([bc as f64 * tx, br as f64 * ty]);
        }
        let scores =
            score_points(i, pair, &preds).map_err(|e| CliError::Config(e.to_string()))?;
        out.extend(scores.into_iter().map(|s| s.distance));
    }
    Ok(out)
}

fn arg_best(map: &semflow_core::exemplar::LikelihoodMap, maximize: bool) -> (usize, usize) {
    let mut best = (0usize, 0usize);
    let mut best_v = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
    for r in 0..map.height() {
        for c in 0..map.width() {
            if let Some(v) = map.get(r, c) {
                if (maximize && v > best_v) || (!maximize && v < best_v) {
                    best_v = v;
                    best = (r, c);
                }
            }
        }
    }
    best
}

fn write_csv(
    path: &Path,
    thresholds: &[f64],
    names: &[String],
    columns: &[Vec<f64>],
) -> Result<(), CliError> {
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut f = std::io::BufWriter::new(file);
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    write!(f, "threshold_sd").map_err(io)?;
    for name in names {
        write!(f, ",{name}").map_err(io)?;
    }
    writeln!(f).map_err(io)?;
    for (k, t) in thresholds.iter().enumerate() {
        write!(f, "{t:.6}").map_err(io)?;
        for col in columns {
            write!(f, ",{:.6}", col[k]).map_err(io)?;
        }
        writeln!(f).map_err(io)?;
    }
    f.flush().map_err(io)?;
    Ok(())
}
