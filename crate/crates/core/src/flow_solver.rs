//! Primal–dual flow estimation with the latent image held fixed.
//!
//! Iterates dual ascent on the weighted flow gradient with per-pixel
//! projection onto the unit 2-ball, an explicit gradient step on the data
//! terms (evaluated at the current iterate), and extrapolation with θ = 1.

use crate::blur::blur_flow_gradient;
use crate::energy::{phi_eve, EnergyModel};
use crate::grid::{flow_grad, flow_grad_adjoint, project_ball2, EdgeWeights, FlowField, ScalarGrid, VecGrid};
use crate::SolverError;

/// Inner iteration count of the flow stage.
pub const DEFAULT_FLOW_ITERS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSolverOptions {
    pub iters: usize,
    /// Recompute the blur-term flow gradient every `blur_grad_every`
    /// iterations; in between the last value is reused.
    pub blur_grad_every: usize,
}

impl Default for FlowSolverOptions {
    fn default() -> Self {
        Self {
            iters: DEFAULT_FLOW_ITERS,
            blur_grad_every: 1,
        }
    }
}

/// Primal, extrapolated and dual variables of the flow solver.
#[derive(Debug, Clone)]
pub struct FlowSolverState {
    pub u: FlowField,
    pub u_bar: FlowField,
    pub p: VecGrid<4>,
    pub iteration: usize,
    pub sigma: f64,
    pub tau: f64,
}

/// `σ = τ = 1/√(8·max(w)²)`, so that `στ‖K‖² ≤ 1` with `‖K‖² ≤ 8·max(w)²`.
pub fn step_sizes(w: &EdgeWeights) -> (f64, f64) {
    let m = w.max_weight();
    let s = 1.0 / (8.0 * m * m).sqrt();
    (s, s)
}

impl FlowSolverState {
    pub fn new(u0: FlowField, w: &EdgeWeights) -> Self {
        let (sigma, tau) = step_sizes(w);
        let (width, height) = u0.dims();
        Self {
            u_bar: u0.clone(),
            u: u0,
            p: VecGrid::zeros(width, height),
            iteration: 0,
            sigma,
            tau,
        }
    }
}

/// Result of one flow stage.
#[derive(Debug, Clone)]
pub struct FlowSolveReport {
    pub flow: FlowField,
    pub energy_initial: f64,
    pub energy_final: f64,
    pub iterations: usize,
}

/// Gradient of `μ₁·φ_eve + μ₂·φ_blur` with respect to the flow.
pub fn data_gradient(model: &EnergyModel, l_hat: &ScalarGrid, u: &FlowField, include_blur: bool) -> (FlowField, Option<FlowField>) {
    let mw = &model.weights;
    let mut g = FlowField::zeros(u.width(), u.height());
    if mw.mu1 > 0.0 {
        let eve = phi_eve(l_hat, u, &model.theta2, mw.eps_l1);
        g.axpy(mw.mu1, &eve.grad_u);
    }
    let blur = if include_blur && mw.mu2 > 0.0 {
        Some(blur_flow_gradient(l_hat, u, &model.blurred, &model.exposure))
    } else {
        None
    };
    (g, blur)
}

/// Runs the flow stage from `u0` with the latent image fixed to `l_hat`.
pub fn solve_flow(
    model: &EnergyModel,
    l_hat: &ScalarGrid,
    u0: &FlowField,
    opts: &FlowSolverOptions,
) -> Result<FlowSolveReport, SolverError> {
    assert!(opts.iters >= 1, "flow solver needs at least one iteration");
    assert!(opts.blur_grad_every >= 1);
    assert_eq!(l_hat.dims(), model.dims(), "image / model shape mismatch");
    assert_eq!(u0.dims(), model.dims(), "flow / model shape mismatch");

    let w = &model.edge_weights;
    let mu2 = model.weights.mu2;
    let energy_initial = model.energy(l_hat, u0).total;
    if !energy_initial.is_finite() {
        return Err(SolverError::Diverged {
            stage: "flow",
            iteration: 0,
        });
    }

    let mut st = FlowSolverState::new(u0.clone(), w);
    let mut blur_grad: Option<FlowField> = None;
    while st.iteration < opts.iters {
        let n = st.iteration;
        // dual ascent
        let mut p = st.p;
        p.axpy(st.sigma, &flow_grad(&st.u_bar, w));
        st.p = project_ball2(&p);

        // primal descent with the data gradient frozen at u^n
        let refresh = n % opts.blur_grad_every == 0;
        let (mut g, fresh_blur) = data_gradient(model, l_hat, &st.u, refresh);
        if fresh_blur.is_some() {
            blur_grad = fresh_blur;
        }
        if let Some(bg) = &blur_grad {
            g.axpy(mu2, bg);
        }
        g.axpy(1.0, &flow_grad_adjoint(&st.p, w));
        let mut u_new = st.u.clone();
        u_new.axpy(-st.tau, &g);
        if !u_new.is_finite() {
            return Err(SolverError::Diverged {
                stage: "flow",
                iteration: n + 1,
            });
        }

        // extrapolation, θ = 1
        let mut u_bar = u_new.clone();
        u_bar.axpy(1.0, &u_new);
        u_bar.axpy(-1.0, &st.u);
        st.u_bar = u_bar;
        st.u = u_new;
        st.iteration += 1;
    }

    let energy_final = model.energy(l_hat, &st.u).total;
    if !energy_final.is_finite() {
        return Err(SolverError::Diverged {
            stage: "flow",
            iteration: st.iteration,
        });
    }
    Ok(FlowSolveReport {
        flow: st.u,
        energy_initial,
        energy_final,
        iterations: st.iteration,
    })
}
