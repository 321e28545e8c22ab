//! `semflow match`: estimate the flow between a reference and a target image.

use std::time::Instant;

use semflow_core::covariance::{CovarianceError, CovarianceFactor};
use semflow_core::exemplar::{extract_patch, learn_classifier, posterior_map_from_classifier};
use semflow_core::flow::{optimize_flow, warp_image, FlowError, UnaryKind};
use semflow_core::image::save_png;
use semflow_core::io::{save_feature_map, save_flow, write_flow_csv, write_pgm16};

use crate::manifest::RunManifest;
use crate::{CliError, MatchArgs};

pub fn run(args: MatchArgs) -> Result<(), CliError> {
    let cfg = args.common.load_config()?;
    let (dh, dw) = cfg.detector_dims()?;
    let t_total = Instant::now();
    let mut manifest = RunManifest::new(&cfg);
    manifest.inputs.insert("ref".into(), args.reference.display().to_string());
    manifest.inputs.insert("tgt".into(), args.tgt.display().to_string());

    let t = Instant::now();
    let (_img_ref, fm_ref) = super::load_to_features(&args.reference, &cfg)?;
    let (img_tgt, fm_tgt) = super::load_to_features(&args.tgt, &cfg)?;
    manifest.timings.insert("features_ms".into(), t.elapsed().as_millis());

    // The LDA unary needs statistics; the L1 baseline does not.
    let factor: Option<CovarianceFactor> = if cfg.unary == "lda" {
        let stats_path = args.stats.as_ref().ok_or_else(|| {
            CliError::Config("--unary lda requires --stats pointing at a .scov file".into())
        })?;
        if !stats_path.exists() {
            return Err(CliError::Config(format!(
                "stats file {} does not exist",
                stats_path.display()
            )));
        }
        manifest.inputs.insert("stats".into(), stats_path.display().to_string());
        let t = Instant::now();
        let acc = semflow_core::io::load_stats(stats_path)
            .map_err(|e| CliError::Io(format!("{}: {e}", stats_path.display())))?;
        if acc.channels() != fm_ref.channels() {
            return Err(CliError::Config(format!(
                "stats have {} channels but features have {}",
                acc.channels(),
                fm_ref.channels()
            )));
        }
        let (mean, tensor) =
            acc.finalize().map_err(|e| CliError::Config(e.to_string()))?;
        let factor = CovarianceFactor::from_stats(&mean, &tensor, dh, dw, cfg.factor_kind())
            .map_err(|e| match e {
                CovarianceError::BandwidthTooSmall { .. } => CliError::Config(e.to_string()),
                other => CliError::Numeric(other.to_string()),
            })?;
        manifest.timings.insert("factorize_ms".into(), t.elapsed().as_millis());
        manifest
            .summary
            .insert("eig_shift".into(), format!("{:.6e}", factor.eig_shift()));
        Some(factor)
    } else {
        None
    };

    let unary = match &factor {
        Some(f) => UnaryKind::Lda { factor: f, prior_mu: cfg.prior_mu },
        None => UnaryKind::L1 { support: (1, 1) },
    };
    let t = Instant::now();
    let flow = optimize_flow(&fm_ref, &fm_tgt, &unary, &cfg.flow_params()).map_err(|e| match e {
        FlowError::AllInfiniteCosts { .. } => CliError::Numeric(e.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    manifest.timings.insert("flow_ms".into(), t.elapsed().as_millis());

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    let out = |name: &str| args.out.join(name);
    let io_err = |p: &std::path::Path| {
        let p = p.display().to_string();
        move |e: semflow_core::io::FormatError| CliError::Io(format!("{p}: {e}"))
    };

    save_flow(&flow, out("flow.sflo")).map_err(io_err(&out("flow.sflo")))?;
    write_flow_csv(&flow, out("flow.csv")).map_err(io_err(&out("flow.csv")))?;
    save_png(&warp_image(&img_tgt, &flow), out("warped.png"))
        .map_err(|e| CliError::Io(e.to_string()))?;
    manifest.outputs.extend(["flow.sflo".into(), "flow.csv".into(), "warped.png".into()]);

    if args.dump_features {
        save_feature_map(&fm_ref, out("ref.sfea")).map_err(io_err(&out("ref.sfea")))?;
        save_feature_map(&fm_tgt, out("tgt.sfea")).map_err(io_err(&out("tgt.sfea")))?;
        manifest.outputs.extend(["ref.sfea".into(), "tgt.sfea".into()]);
    }

    if let Some(points) = &args.points {
        let factor = factor.as_ref().ok_or_else(|| {
            CliError::Config("--points posterior dumps require --unary lda".into())
        })?;
        for (r, c) in parse_points(points, fm_ref.height(), fm_ref.width())? {
            let u_pos = extract_patch(&fm_ref, r, c, dh, dw);
            let (w, bias) =
                learn_classifier(factor, &u_pos).map_err(|e| CliError::Numeric(e.to_string()))?;
            let map = posterior_map_from_classifier(
                &w,
                bias,
                dh,
                dw,
                &fm_tgt,
                cfg.prior_mu,
                None,
            )
            .map_err(|e| CliError::Numeric(e.to_string()))?;
            let name = format!("posterior_{r}_{c}.pgm");
            write_pgm16(map.values(), map.width(), map.height(), out(&name))
                .map_err(io_err(&out(&name)))?;
            manifest.outputs.push(name);
        }
    }

    let margin = cfg.sift_params().window_radius() + dh.max(dw) / 2;
    let mean_flow = flow.mean_magnitude(margin);
    manifest.summary.insert("mean_flow_px".into(), format!("{mean_flow:.4}"));
    manifest
        .summary
        .insert("flow_dims".into(), format!("{}x{}", flow.width(), flow.height()));
    manifest.timings.insert("total_ms".into(), t_total.elapsed().as_millis());
    manifest
        .write(out("manifest.json"))
        .map_err(|e| CliError::Io(format!("manifest.json: {e}")))?;
    println!(
        "flow {}x{} ({} unary): mean |flow| = {:.3} px over the valid interior -> {}",
        flow.width(),
        flow.height(),
        cfg.unary,
        mean_flow,
        args.out.display()
    );
    Ok(())
}

fn parse_points(spec: &str, height: usize, width: usize) -> Result<Vec<(usize, usize)>, CliError> {
    let mut out = Vec::new();
    for part in spec.split(';').filter(|s| !s.trim().is_empty()) {
        let coords: Vec<&str> = part.split(',').collect();
        let parsed = match coords.as_slice() {
            [r, c] => r
                .trim()
                .parse::<usize>()
                .ok()
                .zip(c.trim().parse::<usize>().ok()),
            _ => None,
        };
        let (r, c) = parsed.ok_or_else(|| {
            CliError::Config(format!("points: {part:?} is not of the form r,c"))
        })?;
        if r >= height || c >= width {
            return Err(CliError::Config(format!(
                "points: ({r},{c}) outside the {width}x{height} working frame"
            )));
        }
        out.push((r, c));
    }
    Ok(out)
}
