//! Spatially-variant line blur driven by the flow field.
//!
//! Each pixel owns a box kernel along the segment `{α·u′ : |α| ≤ 1/2}` where
//! `u′ = λ·u` is the displacement during the exposure and `λ = T / Δt`. The
//! segment is rasterized by equispaced samples read with bilinear
//! interpolation, which keeps the operator linear in the image and gives it an
//! exact adjoint (bilinear splatting).

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{row_ordered_sum, BilinearTap, FlowField, ScalarGrid, VecGrid};

/// Exposure-flow length below which the kernel collapses to a Dirac delta.
pub const DELTA_CUTOFF_PX: f64 = 0.5;

/// Finite-difference step (pixels of flow) for the flow gradient of the blur term.
pub const BLUR_FD_STEP: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum BlurError {
    #[error("non-finite flow ({0}, {1})")]
    NonFiniteFlow(f64, f64),
    #[error("exposure and flow window must be positive, got T = {exposure}, dt = {window}")]
    InvalidExposure { exposure: f64, window: f64 },
}

/// Exposure time `T` and flow window `Δt`, both seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureParams {
    exposure: f64,
    window: f64,
}

impl ExposureParams {
    pub fn new(exposure: f64, window: f64) -> Result<Self, BlurError> {
        if exposure > 0.0 && window > 0.0 && exposure.is_finite() && window.is_finite() {
            Ok(Self { exposure, window })
        } else {
            Err(BlurError::InvalidExposure { exposure, window })
        }
    }

    pub fn exposure(&self) -> f64 {
        self.exposure
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// `λ = T / Δt`: converts per-window flow to exposure displacement.
    pub fn lambda(&self) -> f64 {
        self.exposure / self.window
    }
}

/// Per-pixel normalized line kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct LineKernel {
    /// Displacement during the exposure, pixels.
    pub exposure_flow: [f64; 2],
    /// Sample offsets `α·u′`, pixels.
    pub offsets: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl LineKernel {
    pub fn is_delta(&self) -> bool {
        self.offsets.len() == 1
    }
}

#[inline]
fn sample_count(exposure_flow: [f64; 2]) -> usize {
    let len = exposure_flow[0].hypot(exposure_flow[1]);
    if len < DELTA_CUTOFF_PX {
        1
    } else {
        ((2.0 * len).ceil() as usize + 1).max(3)
    }
}

/// Calls `f(dx, dy, weight)` for every kernel sample. Weights are `1/S` and sum
/// to one.
#[inline]
fn for_each_sample(exposure_flow: [f64; 2], mut f: impl FnMut(f64, f64, f64)) {
    let s = sample_count(exposure_flow);
    if s == 1 {
        f(0.0, 0.0, 1.0);
        return;
    }
    let w = 1.0 / s as f64;
    let step = 1.0 / (s - 1) as f64;
    for k in 0..s {
        let alpha = -0.5 + k as f64 * step;
        f(alpha * exposure_flow[0], alpha * exposure_flow[1], w);
    }
}

/// Builds the line kernel for one pixel's flow.
pub fn build_kernel(flow: [f64; 2], exp: &ExposureParams) -> Result<LineKernel, BlurError> {
    if !flow[0].is_finite() || !flow[1].is_finite() {
        return Err(BlurError::NonFiniteFlow(flow[0], flow[1]));
    }
    let lambda = exp.lambda();
    let exposure_flow = [lambda * flow[0], lambda * flow[1]];
    let mut offsets = Vec::new();
    let mut weights = Vec::new();
    for_each_sample(exposure_flow, |dx, dy, w| {
        offsets.push([dx, dy]);
        weights.push(w);
    });
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(LineKernel {
        exposure_flow,
        offsets,
        weights,
    })
}

/// Blurred value at pixel `(x, y)` when that pixel's flow is `flow`.
#[inline]
fn blur_at(l: &ScalarGrid, x: usize, y: usize, flow: [f64; 2], lambda: f64) -> f64 {
    let (w, h) = l.dims();
    let vals = l.values();
    let mut acc = 0.0;
    for_each_sample([lambda * flow[0], lambda * flow[1]], |dx, dy, wk| {
        let tap = BilinearTap::new(x as f64 - dx, y as f64 - dy, w, h);
        let mut v = 0.0;
        for j in 0..4 {
            v += tap.weights[j] * vals[tap.indices[j]];
        }
        acc += wk * v;
    });
    acc
}

/// `B̂(x) = Σ_k w_k · L(x − offset_k)` with bilinear reads and replicate boundary.
pub fn apply_blur(l: &ScalarGrid, u: &FlowField, exp: &ExposureParams) -> ScalarGrid {
    assert_eq!(l.dims(), u.dims(), "image / flow shape mismatch");
    let (w, h) = l.dims();
    let lambda = exp.lambda();
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = blur_at(l, x, y, u.values()[y * w + x], lambda);
        }
    });
    ScalarGrid::new(w, h, out).expect("blur of finite inputs is finite")
}

/// Exact adjoint of [`apply_blur`]: splats each residual along its pixel's kernel.
pub fn apply_blur_adjoint(r: &ScalarGrid, u: &FlowField, exp: &ExposureParams) -> ScalarGrid {
    assert_eq!(r.dims(), u.dims(), "residual / flow shape mismatch");
    let (w, h) = r.dims();
    let lambda = exp.lambda();
    let mut out = vec![0.0; w * h];
    // Sequential splat keeps accumulation order fixed.
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let ri = r.values()[i];
            if ri == 0.0 {
                continue;
            }
            let flow = u.values()[i];
            for_each_sample([lambda * flow[0], lambda * flow[1]], |dx, dy, wk| {
                let tap = BilinearTap::new(x as f64 - dx, y as f64 - dy, w, h);
                for j in 0..4 {
                    out[tap.indices[j]] += wk * tap.weights[j] * ri;
                }
            });
        }
    }
    ScalarGrid::new(w, h, out).expect("adjoint blur of finite inputs is finite")
}

/// Value and gradients of the blur data term.
#[derive(Debug, Clone)]
pub struct BlurTerm {
    /// `Σ (B̂ − B)²`
    pub value: f64,
    /// `2·A*(B̂ − B)`
    pub grad_l: ScalarGrid,
    /// Per-pixel central difference of the squared residual, step [`BLUR_FD_STEP`].
    pub grad_u: FlowField,
}

/// Blur data term `Σ_x (B̂(x) − B(x))²` and its gradients.
pub fn phi_blur(l: &ScalarGrid, u: &FlowField, b: &ScalarGrid, exp: &ExposureParams) -> BlurTerm {
    let residual = apply_blur(l, u, exp).zip_map(b, |a, b| a - b);
    let value = residual.dot(&residual);
    let grad_l = apply_blur_adjoint(&residual, u, exp).map(|v| 2.0 * v);
    let grad_u = blur_flow_gradient(l, u, b, exp);
    BlurTerm {
        value,
        grad_l,
        grad_u,
    }
}

/// Value of the blur data term only.
pub fn phi_blur_value(l: &ScalarGrid, u: &FlowField, b: &ScalarGrid, exp: &ExposureParams) -> f64 {
    let (w, _) = l.dims();
    let bhat = apply_blur(l, u, exp);
    row_ordered_sum(l.height(), |y| {
        let r = y * w..(y + 1) * w;
        bhat.values()[r.clone()]
            .iter()
            .zip(&b.values()[r])
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

/// Flow gradient of the blur term. Each pixel's residual depends only on its
/// own flow vector, so the central differences are taken independently per pixel.
pub fn blur_flow_gradient(
    l: &ScalarGrid,
    u: &FlowField,
    b: &ScalarGrid,
    exp: &ExposureParams,
) -> FlowField {
    assert_eq!(l.dims(), u.dims(), "image / flow shape mismatch");
    assert_eq!(l.dims(), b.dims(), "image / blurred shape mismatch");
    let (w, h) = l.dims();
    let lambda = exp.lambda();
    let hstep = BLUR_FD_STEP;
    let mut out = vec![[0.0; 2]; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let i = y * w + x;
            let f = u.values()[i];
            let bv = b.values()[i];
            let sq = |flow: [f64; 2]| {
                let r = blur_at(l, x, y, flow, lambda) - bv;
                r * r
            };
            o[0] = (sq([f[0] + hstep, f[1]]) - sq([f[0] - hstep, f[1]])) / (2.0 * hstep);
            o[1] = (sq([f[0], f[1] + hstep]) - sq([f[0], f[1] - hstep])) / (2.0 * hstep);
        }
    });
    VecGrid::new(w, h, out).expect("finite gradient")
}
