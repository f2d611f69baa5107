//! Primal–dual latent-image estimation with the flow held fixed.
//!
//! The anisotropic TV term and the event term are dualized (`p` for `∇L`,
//! `q` for `μ₁·K_e L`, both box-constrained); the blur term is handled by its
//! proximal map, solved matrix-free with conjugate gradients.

use crate::blur::{apply_blur, apply_blur_adjoint, ExposureParams};
use crate::energy::{EnergyModel, EventOperator};
use crate::grid::{grad, grad_adjoint, project_box, project_box_scalar, FlowField, ScalarGrid, VecGrid};
use crate::SolverError;

pub const DEFAULT_DEBLUR_ITERS: usize = 5;
pub const DEFAULT_CG_ITERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeblurOptions {
    pub iters: usize,
    pub cg_iters: usize,
}

impl Default for DeblurOptions {
    fn default() -> Self {
        Self {
            iters: DEFAULT_DEBLUR_ITERS,
            cg_iters: DEFAULT_CG_ITERS,
        }
    }
}

/// Primal, extrapolated and dual variables of the deblurring solver.
#[derive(Debug, Clone)]
pub struct DeblurState {
    pub l: ScalarGrid,
    pub l_bar: ScalarGrid,
    pub p: VecGrid<2>,
    pub q: ScalarGrid,
    pub gamma: f64,
    pub eta: f64,
    pub iteration: usize,
}

/// `γ = η = 1/√(8 + μ₁²·‖K_e‖²_bound)`, so that `γη‖(∇; μ₁K_e)‖² ≤ 1`.
pub fn deblur_step_sizes(theta2: &ScalarGrid, u: &FlowField, mu1: f64) -> (f64, f64) {
    let kb = EventOperator::new(theta2, u).norm_bound();
    let s = 1.0 / (8.0 + mu1 * mu1 * kb * kb).sqrt();
    (s, s)
}

/// Outcome of one proximal blur solve.
#[derive(Debug, Clone)]
pub struct ProxResult {
    pub image: ScalarGrid,
    /// `‖rhs − M·L‖` of the normal equations at return.
    pub residual_norm: f64,
    pub cg_iterations: usize,
    /// CG hit non-positive curvature and fell back to a gradient step.
    pub fallback: bool,
}

/// Proximal map of `η·μ₂·φ_blur`: solves `(2ημ₂·A*A + I) L = 2ημ₂·A*B + L̄`
/// by conjugate gradients started at `L̄`.
pub fn prox_blur(
    l_bar: &ScalarGrid,
    b: &ScalarGrid,
    u: &FlowField,
    exp: &ExposureParams,
    eta: f64,
    mu2: f64,
    cg_iters: usize,
) -> ProxResult {
    assert!(cg_iters >= 1, "prox needs at least one CG iteration");
    let alpha = 2.0 * eta * mu2;
    if alpha == 0.0 {
        return ProxResult {
            image: l_bar.clone(),
            residual_norm: 0.0,
            cg_iterations: 0,
            fallback: false,
        };
    }
    let normal = |x: &ScalarGrid| -> ScalarGrid {
        let mut out = apply_blur_adjoint(&apply_blur(x, u, exp), u, exp);
        for (o, &xi) in out.values_mut().iter_mut().zip(x.values()) {
            *o = alpha * *o + xi;
        }
        out
    };
    let mut rhs = apply_blur_adjoint(b, u, exp);
    for (o, &li) in rhs.values_mut().iter_mut().zip(l_bar.values()) {
        *o = alpha * *o + li;
    }

    let mut x = l_bar.clone();
    let mut r = rhs.clone();
    r.axpy(-1.0, &normal(&x));
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    let stop = (1e-14 * rhs.norm()).powi(2);
    let mut iterations = 0;
    let mut fallback = false;
    while iterations < cg_iters && rs > stop {
        let mp = normal(&p);
        let curvature = p.dot(&mp);
        if !(curvature > 0.0) || !curvature.is_finite() {
            // ‖M‖ ≤ 1 + α because the blur is an averaging operator.
            x.axpy(1.0 / (1.0 + alpha), &r);
            fallback = true;
            break;
        }
        let step = rs / curvature;
        x.axpy(step, &p);
        r.axpy(-step, &mp);
        let rs_new = r.dot(&r);
        let beta = rs_new / rs;
        for (pi, &ri) in p.values_mut().iter_mut().zip(r.values()) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
        iterations += 1;
    }
    let mut res = rhs;
    res.axpy(-1.0, &normal(&x));
    ProxResult {
        residual_norm: res.norm(),
        image: x,
        cg_iterations: iterations,
        fallback,
    }
}

/// Result of one deblurring stage.
#[derive(Debug, Clone)]
pub struct DeblurReport {
    /// Final iterate clamped to `[0, 1]`.
    pub latent: ScalarGrid,
    pub energy_initial: f64,
    pub energy_final: f64,
    pub iterations: usize,
    pub cg_fallbacks: usize,
    pub last_prox_residual: f64,
}

/// Runs the deblurring stage from `l0` with the flow fixed to `u`.
pub fn solve_deblur(
    model: &EnergyModel,
    u: &FlowField,
    l0: &ScalarGrid,
    opts: &DeblurOptions,
) -> Result<DeblurReport, SolverError> {
    assert!(opts.iters >= 1, "deblur solver needs at least one iteration");
    assert_eq!(l0.dims(), model.dims(), "image / model shape mismatch");
    assert_eq!(u.dims(), model.dims(), "flow / model shape mismatch");

    let mw = model.weights;
    let energy_initial = model.energy(l0, u).total;
    if !energy_initial.is_finite() {
        return Err(SolverError::Diverged {
            stage: "deblur",
            iteration: 0,
        });
    }
    let (gamma, eta) = deblur_step_sizes(&model.theta2, u, mw.mu1);
    let ke = EventOperator::new(&model.theta2, u);
    let (w, h) = l0.dims();
    let mut st = DeblurState {
        l: l0.clone(),
        l_bar: l0.clone(),
        p: VecGrid::zeros(w, h),
        q: ScalarGrid::zeros(w, h),
        gamma,
        eta,
        iteration: 0,
    };
    let mut cg_fallbacks = 0;
    let mut last_prox_residual = 0.0;

    while st.iteration < opts.iters {
        // dual ascent in p and q, componentwise clamp
        let mut p = st.p;
        p.axpy(st.gamma, &grad(&st.l_bar));
        st.p = project_box(&p);
        if mw.mu1 > 0.0 {
            let mut q = st.q;
            q.axpy(st.gamma * mw.mu1, &ke.apply(&st.l_bar));
            st.q = project_box_scalar(&q);
        }

        // primal descent followed by the blur prox
        let mut l_tilde = st.l.clone();
        l_tilde.axpy(-st.eta, &grad_adjoint(&st.p));
        if mw.mu1 > 0.0 {
            l_tilde.axpy(-st.eta * mw.mu1, &ke.adjoint(&st.q));
        }
        let prox = prox_blur(
            &l_tilde,
            &model.blurred,
            u,
            &model.exposure,
            st.eta,
            mw.mu2,
            opts.cg_iters,
        );
        if prox.fallback {
            cg_fallbacks += 1;
            log::warn!("deblur iteration {}: CG breakdown, gradient fallback", st.iteration);
        }
        last_prox_residual = prox.residual_norm;
        let l_new = prox.image;
        if !l_new.is_finite() {
            return Err(SolverError::Diverged {
                stage: "deblur",
                iteration: st.iteration + 1,
            });
        }

        // extrapolation, θ = 1
        let l_bar = l_new.zip_map(&st.l, |a, b| 2.0 * a - b);
        st.l_bar = l_bar;
        st.l = l_new;
        st.iteration += 1;
    }

    let latent = st.l.clamp(0.0, 1.0);
    let energy_final = model.energy(&latent, u).total;
    if !energy_final.is_finite() {
        return Err(SolverError::Diverged {
            stage: "deblur",
            iteration: st.iteration,
        });
    }
    Ok(DeblurReport {
        latent,
        energy_initial,
        energy_final,
        iterations: st.iteration,
        cg_fallbacks,
        last_prox_residual,
    })
}
