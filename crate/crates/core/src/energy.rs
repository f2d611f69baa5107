//! Terms of the joint flow / latent-image energy
//!
//! `E(L, u) = μ₁·φ_eve(L, u) + μ₂·φ_blur(L, u) + φ_flow(u) + φ_im(L)`.

use thiserror::Error;

use crate::blur::{phi_blur_value, ExposureParams};
use crate::grid::{grad, grad_adjoint, row_ordered_sum, EdgeWeights, FlowField, ScalarGrid, VecGrid};

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("energy weight `{name}` must be positive and finite, got {value}")]
    InvalidWeight { name: &'static str, value: f64 },
}

/// Weights of the energy terms and the smoothing constant of the L1 data term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyWeights {
    /// Event data term weight.
    pub mu1: f64,
    /// Blur data term weight.
    pub mu2: f64,
    /// Edge-weight scale.
    pub mu3: f64,
    /// Edge-weight gradient scale (intensity units).
    pub mu4: f64,
    /// Charbonnier smoothing of the event term (intensity units).
    pub eps_l1: f64,
}

impl EnergyWeights {
    /// `mu1` and `mu2` may be zero to switch a data term off; the others must
    /// be strictly positive.
    pub fn validate(&self) -> Result<(), EnergyError> {
        let nonneg = [("mu1", self.mu1), ("mu2", self.mu2)];
        for (name, value) in nonneg {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(EnergyError::InvalidWeight { name, value });
            }
        }
        let pos = [("mu3", self.mu3), ("mu4", self.mu4), ("eps_l1", self.eps_l1)];
        for (name, value) in pos {
            if !(value > 0.0 && value.is_finite()) {
                return Err(EnergyError::InvalidWeight { name, value });
            }
        }
        Ok(())
    }
}

/// Smoothed absolute value `√(r² + ε²) − ε`.
#[inline]
pub fn charbonnier(r: f64, eps: f64) -> f64 {
    (r * r + eps * eps).sqrt() - eps
}

#[inline]
pub fn charbonnier_derivative(r: f64, eps: f64) -> f64 {
    r / (r * r + eps * eps).sqrt()
}

/// Event photometric residual `r = L·θ₂ + u·∂xL + v·∂yL`.
pub fn eve_residual(l: &ScalarGrid, u: &FlowField, theta2: &ScalarGrid) -> ScalarGrid {
    assert_eq!(l.dims(), u.dims(), "image / flow shape mismatch");
    assert_eq!(l.dims(), theta2.dims(), "image / theta2 shape mismatch");
    let g = grad(l);
    let (w, h) = l.dims();
    let data = (0..w * h)
        .map(|i| {
            let gi = g.values()[i];
            let ui = u.values()[i];
            l.values()[i] * theta2.values()[i] + ui[0] * gi[0] + ui[1] * gi[1]
        })
        .collect();
    ScalarGrid::new(w, h, data).expect("finite residual")
}

/// Smoothed-L1 event term and its flow gradient.
#[derive(Debug, Clone)]
pub struct EventTerm {
    pub value: f64,
    pub grad_u: FlowField,
}

pub fn phi_eve(l: &ScalarGrid, u: &FlowField, theta2: &ScalarGrid, eps_l1: f64) -> EventTerm {
    let r = eve_residual(l, u, theta2);
    let g = grad(l);
    let value = charbonnier_sum(&r, eps_l1);
    let grad_u = VecGrid::new(
        l.width(),
        l.height(),
        r.values()
            .iter()
            .zip(g.values())
            .map(|(&ri, gi)| {
                let d = charbonnier_derivative(ri, eps_l1);
                [d * gi[0], d * gi[1]]
            })
            .collect(),
    )
    .expect("finite gradient");
    EventTerm { value, grad_u }
}

pub fn phi_eve_value(l: &ScalarGrid, u: &FlowField, theta2: &ScalarGrid, eps_l1: f64) -> f64 {
    charbonnier_sum(&eve_residual(l, u, theta2), eps_l1)
}

fn charbonnier_sum(r: &ScalarGrid, eps: f64) -> f64 {
    row_ordered_sum(r.height(), |y| r.row(y).iter().map(|&v| charbonnier(v, eps)).sum())
}

/// Linear map `K_e L = θ₂∘L + u∘∂xL + v∘∂yL` (the event residual seen as an
/// operator on the image, flow fixed) and its exact adjoint.
#[derive(Debug, Clone, Copy)]
pub struct EventOperator<'a> {
    pub theta2: &'a ScalarGrid,
    pub flow: &'a FlowField,
}

impl<'a> EventOperator<'a> {
    pub fn new(theta2: &'a ScalarGrid, flow: &'a FlowField) -> Self {
        assert_eq!(theta2.dims(), flow.dims(), "theta2 / flow shape mismatch");
        Self { theta2, flow }
    }

    pub fn apply(&self, l: &ScalarGrid) -> ScalarGrid {
        eve_residual(l, self.flow, self.theta2)
    }

    /// `K_e* q = θ₂∘q + ∂x*(u∘q) + ∂y*(v∘q)`
    pub fn adjoint(&self, q: &ScalarGrid) -> ScalarGrid {
        assert_eq!(q.dims(), self.theta2.dims(), "dual shape mismatch");
        let scaled = VecGrid::new(
            q.width(),
            q.height(),
            q.values()
                .iter()
                .zip(self.flow.values())
                .map(|(&qi, f)| [f[0] * qi, f[1] * qi])
                .collect(),
        )
        .expect("finite");
        let mut out = grad_adjoint(&scaled);
        for (o, (&qi, &t)) in out
            .values_mut()
            .iter_mut()
            .zip(q.values().iter().zip(self.theta2.values()))
        {
            *o += t * qi;
        }
        out
    }

    /// Upper bound on the operator norm: `max|θ₂| + 2·max|u| + 2·max|v|`
    /// (each forward difference has norm at most 2).
    pub fn norm_bound(&self) -> f64 {
        self.theta2.max_abs()
            + 2.0 * self.flow.max_abs_component(0)
            + 2.0 * self.flow.max_abs_component(1)
    }
}

/// Edge-aware flow smoothness weights `μ₃·exp(−(∂L̂/μ₄)²)` per axis.
pub fn edge_weights(l_hat: &ScalarGrid, mu3: f64, mu4: f64) -> EdgeWeights {
    let g = grad(l_hat);
    let weight = |d: f64| (mu3 * (-(d / mu4).powi(2)).exp()).max(f64::MIN_POSITIVE);
    EdgeWeights {
        wx: g.component(0).map(weight),
        wy: g.component(1).map(weight),
    }
}

/// Mixed 1-2 norm of the weighted flow gradient.
pub fn phi_flow(u: &FlowField, w: &EdgeWeights) -> f64 {
    let k = crate::grid::flow_grad(u, w);
    let width = k.width();
    row_ordered_sum(k.height(), |y| {
        k.values()[y * width..(y + 1) * width]
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]).sqrt())
            .sum()
    })
}

/// Anisotropic total variation `Σ |∂xL| + |∂yL|`.
pub fn phi_im(l: &ScalarGrid) -> f64 {
    let g = grad(l);
    let width = g.width();
    row_ordered_sum(g.height(), |y| {
        g.values()[y * width..(y + 1) * width]
            .iter()
            .map(|v| v[0].abs() + v[1].abs())
            .sum()
    })
}

/// Individual terms of the energy and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub eve: f64,
    pub blur: f64,
    pub flow: f64,
    pub image: f64,
    pub total: f64,
}

/// Fixed data of one problem instance: the blurred frame, event weights
/// `θ₂`, the flow edge weights and all scalar parameters.
#[derive(Debug, Clone)]
pub struct EnergyModel {
    pub blurred: ScalarGrid,
    pub theta2: ScalarGrid,
    pub edge_weights: EdgeWeights,
    pub weights: EnergyWeights,
    pub exposure: ExposureParams,
}

impl EnergyModel {
    pub fn dims(&self) -> (usize, usize) {
        self.blurred.dims()
    }

    pub fn energy(&self, l: &ScalarGrid, u: &FlowField) -> EnergyBreakdown {
        total_energy(self, l, u)
    }
}

/// `μ₁·φ_eve + μ₂·φ_blur + φ_flow + φ_im`.
pub fn total_energy(model: &EnergyModel, l: &ScalarGrid, u: &FlowField) -> EnergyBreakdown {
    let mw = &model.weights;
    let eve = phi_eve_value(l, u, &model.theta2, mw.eps_l1);
    let blur = phi_blur_value(l, u, &model.blurred, &model.exposure);
    let flow = phi_flow(u, &model.edge_weights);
    let image = phi_im(l);
    EnergyBreakdown {
        eve,
        blur,
        flow,
        image,
        total: mw.mu1 * eve + mw.mu2 * blur + flow + image,
    }
}
