//! Discrete displacement fields: windowed cost volumes over a unary source
//! and coarse-to-fine min-sum belief propagation on a 4-connected grid.
//!
//! The objective being minimized is
//! `sum_i cost_i(d_i) + small_disp_weight * sum_i (|u_i| + |v_i|)
//!  + lambda * sum_{(i,j) in 4-neighbors} min(|u_i - u_j|, trunc) + min(|v_i - v_j|, trunc)`
//! over integer displacements `d_i = (u_i, v_i)` constrained to per-pixel
//! search windows.

mod bp;
mod pyramid;
mod volume;

pub use bp::optimize_level;
pub use pyramid::{feature_pyramid, optimize_flow, resolve_levels, UnaryKind};
pub use volume::{build_cost_volume, UnarySource};

use thiserror::Error;

use crate::image::ImageGray;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("search window does not intersect the target image")]
    EmptyWindow,
    #[error("flow at ({row},{col}) lies outside the cost volume window")]
    FlowOutsideVolume { row: usize, col: usize },
    #[error("all displacements of pixel ({row},{col}) have infinite cost")]
    AllInfiniteCosts { row: usize, col: usize },
    #[error("pyramid level {level} is {width}x{height}, smaller than the required {min} px")]
    PyramidTooDeep { level: usize, width: usize, height: usize, min: usize },
}

/// Per-pixel integer displacement estimates in the reference frame.
/// `u` is the column displacement, `v` the row displacement: reference pixel
/// `(r, c)` maps to target pixel `(r + v, c + u)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<i32>,
    v: Vec<i32>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0; width * height],
            v: vec![0; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn from_parts(width: usize, height: usize, u: Vec<i32>, v: Vec<i32>, valid: Vec<bool>) -> Self {
        assert_eq!(u.len(), width * height);
        assert_eq!(v.len(), width * height);
        assert_eq!(valid.len(), width * height);
        Self { width, height, u, v, valid }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn uv(&self, row: usize, col: usize) -> (i32, i32) {
        let i = row * self.width + col;
        (self.u[i], self.v[i])
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn u(&self) -> &[i32] {
        &self.u
    }

    pub fn v(&self) -> &[i32] {
        &self.v
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Mean displacement magnitude over valid pixels of the given interior
    /// margin.
    pub fn mean_magnitude(&self, margin: usize) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for r in margin..self.height.saturating_sub(margin) {
            for c in margin..self.width.saturating_sub(margin) {
                if self.is_valid(r, c) {
                    let (u, v) = self.uv(r, c);
                    sum += ((u * u + v * v) as f64).sqrt();
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Hyperparameters of the flow objective and its coarse-to-fine solver.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    /// Smoothness weight on the truncated-L1 pairwise term.
    pub lambda: f64,
    /// Truncation threshold of the pairwise term, in pixels.
    pub trunc: f64,
    /// Weight on the small-displacement prior `|u| + |v|`.
    pub small_disp_weight: f64,
    /// Pyramid depth; 0 resolves automatically so the coarsest level has a
    /// maximum dimension of about 16 pixels.
    pub levels: usize,
    /// Search window radius at refinement levels (the coarsest level uses a
    /// full window).
    pub window_radius: usize,
    /// Synchronous message-passing sweeps per level.
    pub bp_iters: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            trunc: 10.0,
            small_disp_weight: 0.02,
            levels: 0,
            window_radius: 5,
            bp_iters: 40,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) {
        assert!(self.lambda >= 0.0, "lambda must be non-negative");
        assert!(self.trunc > 0.0, "trunc must be positive");
        assert!(self.small_disp_weight >= 0.0, "small_disp_weight must be non-negative");
        assert!(self.window_radius >= 1, "window_radius must be at least 1");
        assert!(self.bp_iters >= 1, "bp_iters must be at least 1");
    }
}

/// What the costs of a [`CostVolume`] are.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    /// Raw L1 descriptor distances.
    L1,
    /// Negative log posterior of the exemplar classifiers, with the posterior
    /// clamped to `[1e-12, 1 - 1e-12]`.
    LdaNegLogPosterior,
}

/// Per-pixel unary costs over a square displacement window centered at a
/// per-pixel offset. Out-of-target displacements carry infinite cost.
#[derive(Debug, Clone)]
pub struct CostVolume {
    width: usize,
    height: usize,
    radius: usize,
    kind: CostKind,
    centers_u: Vec<i32>,
    centers_v: Vec<i32>,
    /// `(height * width) * side^2` costs, row-major over pixels, then over
    /// the window in (dv, du) row-major order.
    costs: Vec<f32>,
}

impl CostVolume {
    /// Wraps explicit per-pixel window costs (for custom unary sources).
    /// `costs` is indexed by pixel then by (dv, du) row-major window offset;
    /// out-of-target displacements should carry `f32::INFINITY`.
    pub fn from_parts(
        width: usize,
        height: usize,
        radius: usize,
        kind: CostKind,
        centers_u: Vec<i32>,
        centers_v: Vec<i32>,
        costs: Vec<f32>,
    ) -> Self {
        let side = 2 * radius + 1;
        assert_eq!(centers_u.len(), width * height);
        assert_eq!(centers_v.len(), width * height);
        assert_eq!(costs.len(), width * height * side * side);
        assert!(costs.iter().all(|c| !c.is_nan()), "costs must not be NaN");
        Self { width, height, radius, kind, centers_u, centers_v, costs }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    /// Window side length `2 * radius + 1`.
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Displacement labels per pixel.
    pub fn labels(&self) -> usize {
        self.side() * self.side()
    }

    #[inline]
    pub fn cost(&self, pixel: usize, label: usize) -> f32 {
        self.costs[pixel * self.labels() + label]
    }

    pub fn pixel_costs(&self, pixel: usize) -> &[f32] {
        let k = self.labels();
        &self.costs[pixel * k..(pixel + 1) * k]
    }

    pub fn center(&self, pixel: usize) -> (i32, i32) {
        (self.centers_u[pixel], self.centers_v[pixel])
    }

    /// Displacement `(u, v)` of the given label at the given pixel.
    #[inline]
    pub fn displacement(&self, pixel: usize, label: usize) -> (i32, i32) {
        let side = self.side();
        let r = self.radius as i32;
        let du = (label % side) as i32 - r + self.centers_u[pixel];
        let dv = (label / side) as i32 - r + self.centers_v[pixel];
        (du, dv)
    }

    /// Label index of displacement `(u, v)` at the given pixel, if inside the
    /// window.
    pub fn label_of(&self, pixel: usize, u: i32, v: i32) -> Option<usize> {
        let r = self.radius as i32;
        let du = u - self.centers_u[pixel] + r;
        let dv = v - self.centers_v[pixel] + r;
        let side = self.side() as i32;
        (du >= 0 && du < side && dv >= 0 && dv < side).then(|| (dv * side + du) as usize)
    }
}

/// Lexicographic label preference: lower cost, then smaller displacement
/// magnitude, then row-major window order.
#[inline]
pub(crate) fn better_label(cost: f32, mag: i64, best_cost: f32, best_mag: i64) -> bool {
    cost < best_cost || (cost == best_cost && mag < best_mag)
}

/// Independent per-pixel minimum-cost displacement.
pub fn argmax_flow(vol: &CostVolume) -> Result<FlowField, FlowError> {
    let (w, h) = (vol.width(), vol.height());
    let k = vol.labels();
    let mut u = vec![0i32; w * h];
    let mut v = vec![0i32; w * h];
    let valid = vec![true; w * h];
    for px in 0..w * h {
        let mut best: Option<(f32, i64, usize)> = None;
        for label in 0..k {
            let c = vol.cost(px, label);
            if !c.is_finite() {
                continue;
            }
            let (du, dv) = vol.displacement(px, label);
            let mag = (du as i64).pow(2) + (dv as i64).pow(2);
            if best.is_none_or(|(bc, bm, _)| better_label(c, mag, bc, bm)) {
                best = Some((c, mag, label));
            }
        }
        let Some((_, _, label)) = best else {
            return Err(FlowError::AllInfiniteCosts { row: px / w, col: px % w });
        };
        let (du, dv) = vol.displacement(px, label);
        u[px] = du;
        v[px] = dv;
    }
    Ok(FlowField::from_parts(w, h, u, v, valid))
}

/// Total objective value of a flow under a cost volume.
pub fn energy(flow: &FlowField, vol: &CostVolume, params: &FlowParams) -> Result<f64, FlowError> {
    if flow.width() != vol.width() || flow.height() != vol.height() {
        return Err(FlowError::DimensionMismatch {
            expected: vol.width() * vol.height(),
            got: flow.width() * flow.height(),
        });
    }
    let (w, h) = (vol.width(), vol.height());
    let mut total = 0.0f64;
    for r in 0..h {
        for c in 0..w {
            if !flow.is_valid(r, c) {
                continue;
            }
            let px = r * w + c;
            let (u, v) = flow.uv(r, c);
            let label = vol
                .label_of(px, u, v)
                .ok_or(FlowError::FlowOutsideVolume { row: r, col: c })?;
            total += vol.cost(px, label) as f64;
            total += params.small_disp_weight * (u.abs() + v.abs()) as f64;
            // right and down edges, each undirected edge once
            for (nr, nc) in [(r, c + 1), (r + 1, c)] {
                if nr < h && nc < w && flow.is_valid(nr, nc) {
                    let (nu, nv) = flow.uv(nr, nc);
                    let du = (u - nu).abs() as f64;
                    let dv = (v - nv).abs() as f64;
                    total += params.lambda * (du.min(params.trunc) + dv.min(params.trunc));
                }
            }
        }
    }
    Ok(total)
}

/// Warps the target image into the reference frame: output pixel `(r, c)`
/// reads `tgt(r + v, c + u)`. Unmapped or invalid pixels come out black.
pub fn warp_image(tgt: &ImageGray, flow: &FlowField) -> ImageGray {
    ImageGray::from_fn(flow.width(), flow.height(), |r, c| {
        if !flow.is_valid(r, c) {
            return 0.0;
        }
        let (u, v) = flow.uv(r, c);
        let tr = r as i32 + v;
        let tc = c as i32 + u;
        if tr < 0 || tc < 0 || tr >= tgt.height() as i32 || tc >= tgt.width() as i32 {
            0.0
        } else {
            tgt.get(tr as usize, tc as usize)
        }
    })
}
