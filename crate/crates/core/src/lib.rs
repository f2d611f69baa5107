//! Joint optical flow and latent sharp image estimation from one (possibly
//! motion-blurred) intensity frame and an event stream.
//!
//! The energy couples an event data term, a blur data term, an edge-weighted
//! flow regularizer and a TV image prior. [`pipeline::run`] alternates a
//! primal–dual flow stage ([`flow_solver`]) with a primal–dual deblurring stage
//! ([`deblur`]) starting from an event double-integral estimate.

pub mod bench;
pub mod blur;
pub mod deblur;
pub mod energy;
pub mod events;
pub mod filter;
pub mod flow_solver;
pub mod grid;
pub mod horn_schunck;
pub mod pipeline;
pub mod synth;

use thiserror::Error;

pub use blur::{apply_blur, apply_blur_adjoint, build_kernel, phi_blur, ExposureParams, LineKernel};
pub use deblur::{solve_deblur, DeblurOptions, DeblurReport};
pub use energy::{total_energy, EnergyBreakdown, EnergyModel, EnergyWeights};
pub use events::{edi_propagate, integrate, theta2, Event, EventFrame, EventStream, Polarity, Threshold};
pub use flow_solver::{solve_flow, FlowSolveReport, FlowSolverOptions};
pub use grid::{EdgeWeights, FlowField, GridError, ScalarGrid, VecGrid};
pub use pipeline::{run, PipelineConfig, PipelineError, PipelineResult};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolverError {
    #[error("{stage} solver diverged at iteration {iteration}")]
    Diverged { stage: &'static str, iteration: usize },
}
