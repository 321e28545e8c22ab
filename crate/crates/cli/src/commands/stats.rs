//! `semflow stats`: accumulate stationary statistics over a corpus.

use std::path::PathBuf;

use rayon::prelude::*;

use semflow_core::io::save_stats;
use semflow_core::stats::StatsAccumulator;

use crate::{CliError, StatsArgs};

pub fn run(args: StatsArgs) -> Result<(), CliError> {
    let cfg = args.common.load_config()?;
    let paths = corpus_paths(&args.corpus)?;
    if paths.is_empty() {
        return Err(CliError::Config(format!(
            "corpus {}: no PNG/JPEG/PGM images found",
            args.corpus.display()
        )));
    }
    let channels = cfg.sift_params().channels();
    let bandwidth = cfg.bandwidth;

    // Per-image accumulators merge exactly (integer sums), so any reduction
    // order — and therefore any worker count — produces identical bytes.
    let acc = paths
        .par_iter()
        .try_fold(
            || StatsAccumulator::new(channels, bandwidth),
            |mut acc, path| -> Result<StatsAccumulator, CliError> {
                let (_, fm) = super::load_to_features(path, &cfg)?;
                acc.accumulate(&fm)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                Ok(acc)
            },
        )
        .try_reduce(
            || StatsAccumulator::new(channels, bandwidth),
            |a, b| a.merge(&b).map_err(|e| CliError::Config(e.to_string())),
        )?;

    save_stats(&acc, &args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    println!(
        "processed {} images ({} channels, bandwidth {}, {} pixels) -> {}",
        acc.n_images(),
        acc.channels(),
        acc.bandwidth(),
        acc.n_pixels(),
        args.out.display()
    );
    Ok(())
}

fn corpus_paths(dir: &std::path::Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("corpus {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg" | "pgm"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}
