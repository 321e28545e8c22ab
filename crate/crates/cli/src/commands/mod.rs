pub mod eval_cmd;
pub mod match_cmd;
pub mod plot;
pub mod stats;

use std::path::Path;

use semflow_core::image::{load_image, resize_max_dim, ImageGray};
use semflow_core::sift::{dense_sift, FeatureMap};

use crate::config::RunConfig;
use crate::CliError;

/// Shared front of the pipeline: load, resize to the working resolution,
/// extract dense SIFT.
pub fn load_to_features(
    path: &Path,
    cfg: &RunConfig,
) -> Result<(ImageGray, FeatureMap), CliError> {
    let img = load_image(path).map_err(|e| match e {
        semflow_core::image::ImageError::NotFound(_) => CliError::Io(e.to_string()),
        semflow_core::image::ImageError::DecodeFailed { .. } => CliError::Io(e.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    let img = resize_max_dim(&img, cfg.max_dim);
    let fm = dense_sift(&img, &cfg.sift_params())
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((img, fm))
}

/// Working-resolution dimensions of an image under the resize rule, without
/// decoding pixel data twice.
pub fn working_dims(width: usize, height: usize, max_dim: usize) -> (usize, usize) {
    if width.max(height) <= max_dim {
        return (width, height);
    }
    let scale = max_dim as f64 / width.max(height) as f64;
    if width >= height {
        (max_dim, ((height as f64 * scale).round() as usize).max(1))
    } else {
        (((width as f64 * scale).round() as usize).max(1), max_dim)
    }
}
