//! Declarative run configuration: TOML file with CLI-flag override
//! precedence (defaults < config file < flags).

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SiftConfig {
    pub cell_size: usize,
    pub clamp: f32,
    pub smoothing_sigma: f32,
}

impl Default for SiftConfig {
    fn default() -> Self {
        let p = semflow_core::sift::SiftParams::default();
        Self { cell_size: p.cell_size, clamp: p.clamp, smoothing_sigma: p.smoothing_sigma }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub lambda: f64,
    pub trunc: f64,
    pub small_disp_weight: f64,
    pub levels: usize,
    pub window_radius: usize,
    pub bp_iters: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        let p = semflow_core::flow::FlowParams::default();
        Self {
            lambda: p.lambda,
            trunc: p.trunc,
            small_disp_weight: p.small_disp_weight,
            levels: p.levels,
            window_radius: p.window_radius,
            bp_iters: p.bp_iters,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Working-resolution bound: images are downsampled so max(W, H) equals
    /// this.
    pub max_dim: usize,
    /// Detector geometry as "HxW", e.g. "5x5".
    pub detector: String,
    /// Displacement bandwidth of gathered statistics.
    pub bandwidth: usize,
    /// Prior log-ratio added to every classifier score.
    pub prior_mu: f64,
    /// Unary kind: "lda" or "l1".
    pub unary: String,
    /// Covariance factorization: "cholesky" or "inverse".
    pub factor: String,
    pub seed: u64,
    pub sift: SiftConfig,
    pub flow: FlowConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_dim: 150,
            detector: "5x5".into(),
            bandwidth: 8,
            prior_mu: 0.0,
            unary: "lda".into(),
            factor: "cholesky".into(),
            seed: 0,
            sift: SiftConfig::default(),
            flow: FlowConfig::default(),
        }
    }
}

/// CLI-flag overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub max_dim: Option<usize>,
    pub detector: Option<String>,
    pub bandwidth: Option<usize>,
    pub prior_mu: Option<f64>,
    pub unary: Option<String>,
    pub factor: Option<String>,
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub levels: Option<usize>,
    pub window_radius: Option<usize>,
    pub bp_iters: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&std::path::Path>, over: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("config {}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = over.max_dim {
            cfg.max_dim = v;
        }
        if let Some(v) = &over.detector {
            cfg.detector = v.clone();
        }
        if let Some(v) = over.bandwidth {
            cfg.bandwidth = v;
        }
        if let Some(v) = over.prior_mu {
            cfg.prior_mu = v;
        }
        if let Some(v) = &over.unary {
            cfg.unary = v.clone();
        }
        if let Some(v) = &over.factor {
            cfg.factor = v.clone();
        }
        if let Some(v) = over.seed {
            cfg.seed = v;
        }
        if let Some(v) = over.lambda {
            cfg.flow.lambda = v;
        }
        if let Some(v) = over.levels {
            cfg.flow.levels = v;
        }
        if let Some(v) = over.window_radius {
            cfg.flow.window_radius = v;
        }
        if let Some(v) = over.bp_iters {
            cfg.flow.bp_iters = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rejects out-of-range fields with a message naming the field.
    pub fn validate(&self) -> Result<(), CliError> {
        let err = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        if self.max_dim < 16 {
            return err("max_dim", format!("{} is below the minimum of 16", self.max_dim));
        }
        let (dh, dw) = self.detector_dims()?;
        for (name, v) in [("detector height", dh), ("detector width", dw)] {
            if !(1..=9).contains(&v) || v % 2 == 0 {
                return err("detector", format!("{name} {v} must be odd and within 1..=9"));
            }
        }
        if self.bandwidth < dh.max(dw) - 1 {
            return err(
                "bandwidth",
                format!("{} cannot cover a {dh}x{dw} detector (needs {})", self.bandwidth, dh.max(dw) - 1),
            );
        }
        if self.bandwidth > 16 {
            return err("bandwidth", format!("{} exceeds the supported maximum of 16", self.bandwidth));
        }
        match self.unary.as_str() {
            "lda" | "l1" => {}
            other => return err("unary", format!("{other:?} is not one of \"lda\", \"l1\"")),
        }
        match self.factor.as_str() {
            "cholesky" | "inverse" => {}
            other => return err("factor", format!("{other:?} is not one of \"cholesky\", \"inverse\"")),
        }
        if self.sift.cell_size < 1 {
            return err("sift.cell_size", "must be at least 1".into());
        }
        if !(self.sift.clamp > 0.0 && self.sift.clamp <= 1.0) {
            return err("sift.clamp", format!("{} outside (0, 1]", self.sift.clamp));
        }
        if self.sift.smoothing_sigma < 0.0 {
            return err("sift.smoothing_sigma", "must be non-negative".into());
        }
        if self.flow.lambda < 0.0 {
            return err("flow.lambda", "must be non-negative".into());
        }
        if self.flow.trunc <= 0.0 {
            return err("flow.trunc", "must be positive".into());
        }
        if self.flow.small_disp_weight < 0.0 {
            return err("flow.small_disp_weight", "must be non-negative".into());
        }
        if self.flow.window_radius < 1 {
            return err("flow.window_radius", "must be at least 1".into());
        }
        if self.flow.bp_iters < 1 {
            return err("flow.bp_iters", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn detector_dims(&self) -> Result<(usize, usize), CliError> {
        let parts: Vec<&str> = self.detector.split('x').collect();
        let parse = |s: &str| s.trim().parse::<usize>().ok();
        match parts.as_slice() {
            [h, w] => match (parse(h), parse(w)) {
                (Some(h), Some(w)) => Ok((h, w)),
                _ => Err(CliError::Config(format!(
                    "detector: {:?} is not of the form HxW",
                    self.detector
                ))),
            },
            _ => Err(CliError::Config(format!(
                "detector: {:?} is not of the form HxW",
                self.detector
            ))),
        }
    }

    pub fn sift_params(&self) -> semflow_core::sift::SiftParams {
        semflow_core::sift::SiftParams {
            cell_size: self.sift.cell_size,
            clamp: self.sift.clamp,
            smoothing_sigma: self.sift.smoothing_sigma,
            ..semflow_core::sift::SiftParams::default()
        }
    }

    pub fn flow_params(&self) -> semflow_core::flow::FlowParams {
        semflow_core::flow::FlowParams {
            lambda: self.flow.lambda,
            trunc: self.flow.trunc,
            small_disp_weight: self.flow.small_disp_weight,
            levels: self.flow.levels,
            window_radius: self.flow.window_radius,
            bp_iters: self.flow.bp_iters,
        }
    }

    pub fn factor_kind(&self) -> semflow_core::covariance::FactorKind {
        match self.factor.as_str() {
            "inverse" => semflow_core::covariance::FactorKind::ExplicitInverse,
            _ => semflow_core::covariance::FactorKind::Cholesky,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_detector_names_the_field() {
        let cfg = RunConfig { detector: "4x4".into(), ..RunConfig::default() };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("detector"), "{msg}");
    }

    #[test]
    fn bad_unary_names_the_field() {
        let cfg = RunConfig { unary: "zncc".into(), ..RunConfig::default() };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("unary"), "{msg}");
    }

    #[test]
    fn bandwidth_must_cover_detector() {
        let cfg = RunConfig { bandwidth: 1, detector: "5x5".into(), ..RunConfig::default() };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("bandwidth"), "{msg}");
    }

    #[test]
    fn toml_round_trip_with_overrides() {
        let text = "max_dim = 120\n[flow]\nlambda = 0.5\n";
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.toml");
        std::fs::write(&p, text).unwrap();
        let over = Overrides { lambda: Some(0.75), ..Overrides::default() };
        let cfg = RunConfig::load(Some(&p), &over).unwrap();
        assert_eq!(cfg.max_dim, 120);
        assert_eq!(cfg.flow.lambda, 0.75, "flag overrides file");
    }
}
