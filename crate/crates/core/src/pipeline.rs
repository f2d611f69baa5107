//! End-to-end estimation: event-based initialization, then alternating flow
//! and deblurring stages until the energy stops decreasing.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::blur::{BlurError, ExposureParams};
use crate::deblur::{solve_deblur, DeblurOptions};
use crate::energy::{edge_weights, EnergyError, EnergyModel, EnergyWeights};
use crate::events::{integrate, theta2, EventError, EventStream, Threshold};
use crate::filter::gaussian_blur;
use crate::flow_solver::{solve_flow, FlowSolverOptions};
use crate::grid::{FlowField, ScalarGrid};
use crate::horn_schunck::{horn_schunck, HornSchunckParams};
use crate::SolverError;

/// Sub-intervals of the midpoint rule in the event-based initial deblur.
pub const EDI_SUBINTERVALS: usize = 32;
/// An outer round raising the energy by more than this factor is divergence.
pub const DIVERGENCE_FACTOR: f64 = 1.10;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("`{key}` is invalid: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("blurred image is {image:?} but event sensor is {sensor:?}")]
    ShapeMismatch {
        image: (usize, usize),
        sensor: (usize, usize),
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Blur(#[from] BlurError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// All tunables of the joint estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub mu4: f64,
    /// Contrast threshold, log-intensity units.
    pub c: f64,
    /// Exposure time `T`, seconds.
    pub exposure: f64,
    /// Flow window `Δt`, seconds.
    pub dt: f64,
    pub outer_iters: usize,
    pub flow_iters: usize,
    pub deblur_iters: usize,
    pub cg_iters: usize,
    pub eps_l1: f64,
    pub energy_tol: f64,
    pub seed: u64,
    pub blur_grad_every: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mu1: 2.0,
            mu2: 25.0,
            mu3: 1.0,
            mu4: 0.05,
            c: 0.22,
            exposure: 0.01,
            dt: 0.01,
            outer_iters: 5,
            flow_iters: 20,
            deblur_iters: 5,
            cg_iters: 10,
            eps_l1: 1e-3,
            energy_tol: 1e-4,
            seed: 0,
            blur_grad_every: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &'static str, reason: &str| {
            Err(ConfigError::Invalid {
                key,
                reason: reason.to_string(),
            })
        };
        for (key, v) in [("mu1", self.mu1), ("mu2", self.mu2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(key, "must be non-negative and finite");
            }
        }
        for (key, v) in [
            ("mu3", self.mu3),
            ("mu4", self.mu4),
            ("c", self.c),
            ("exposure", self.exposure),
            ("dt", self.dt),
            ("eps_l1", self.eps_l1),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(key, "must be positive and finite");
            }
        }
        if !(self.energy_tol >= 0.0 && self.energy_tol.is_finite()) {
            return invalid("energy_tol", "must be non-negative and finite");
        }
        for (key, v) in [
            ("outer_iters", self.outer_iters),
            ("flow_iters", self.flow_iters),
            ("deblur_iters", self.deblur_iters),
            ("cg_iters", self.cg_iters),
            ("blur_grad_every", self.blur_grad_every),
        ] {
            if v < 1 {
                return invalid(key, "must be at least 1");
            }
        }
        Ok(())
    }

    pub fn energy_weights(&self) -> EnergyWeights {
        EnergyWeights {
            mu1: self.mu1,
            mu2: self.mu2,
            mu3: self.mu3,
            mu4: self.mu4,
            eps_l1: self.eps_l1,
        }
    }

    /// Parses flat `key = value` lines. `#` starts a comment; unknown keys are
    /// errors; keys not mentioned keep their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
            };
            let real = || value.parse::<f64>().map_err(|_| bad());
            let count = || value.parse::<usize>().map_err(|_| bad());
            match key {
                "mu1" => cfg.mu1 = real()?,
                "mu2" => cfg.mu2 = real()?,
                "mu3" => cfg.mu3 = real()?,
                "mu4" => cfg.mu4 = real()?,
                "c" => cfg.c = real()?,
                "exposure" => cfg.exposure = real()?,
                "dt" => cfg.dt = real()?,
                "outer_iters" => cfg.outer_iters = count()?,
                "flow_iters" => cfg.flow_iters = count()?,
                "deblur_iters" => cfg.deblur_iters = count()?,
                "cg_iters" => cfg.cg_iters = count()?,
                "eps_l1" => cfg.eps_l1 = real()?,
                "energy_tol" => cfg.energy_tol = real()?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
                "blur_grad_every" => cfg.blur_grad_every = count()?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mu1 = {}", self.mu1);
        let _ = writeln!(s, "mu2 = {}", self.mu2);
        let _ = writeln!(s, "mu3 = {}", self.mu3);
        let _ = writeln!(s, "mu4 = {}", self.mu4);
        let _ = writeln!(s, "c = {}", self.c);
        let _ = writeln!(s, "exposure = {}", self.exposure);
        let _ = writeln!(s, "dt = {}", self.dt);
        let _ = writeln!(s, "outer_iters = {}", self.outer_iters);
        let _ = writeln!(s, "flow_iters = {}", self.flow_iters);
        let _ = writeln!(s, "deblur_iters = {}", self.deblur_iters);
        let _ = writeln!(s, "cg_iters = {}", self.cg_iters);
        let _ = writeln!(s, "eps_l1 = {}", self.eps_l1);
        let _ = writeln!(s, "energy_tol = {}", self.energy_tol);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "blur_grad_every = {}", self.blur_grad_every);
        s
    }
}

/// Wall-clock time spent per stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    pub init: Duration,
    pub flow: Duration,
    pub deblur: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Flow,
    Deblur,
}

/// What happened to one stage's candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRecord {
    pub round: usize,
    pub stage: Stage,
    /// Energy of the stage's output before the accept/reject decision.
    pub candidate_energy: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub flow: FlowField,
    pub latent: ScalarGrid,
    /// Initial energy, then one entry after every flow and deblur stage.
    pub energy_trace: Vec<f64>,
    pub timings: StageTimings,
    pub rounds: usize,
    /// An outer round raised the energy by more than 10%; the returned
    /// estimate is the best one seen before that round.
    pub diverged: bool,
    pub stages: Vec<StageRecord>,
}

/// Sharp latent estimate at `f` from the blurred frame and the events fired
/// during the exposure: `L = B·T / ∫ exp(c·E(f, s)) ds`, midpoint rule over
/// `subintervals` pieces of the exposure centred on `f`.
pub fn edi_initial_latent(
    blurred: &ScalarGrid,
    stream: &EventStream,
    exposure: f64,
    c: Threshold,
    subintervals: usize,
) -> ScalarGrid {
    let f = stream.reference_time;
    let start = f - 0.5 * exposure;
    let step = exposure / subintervals as f64;
    let mut denom = ScalarGrid::zeros(blurred.width(), blurred.height());
    for k in 0..subintervals {
        let s = start + (k as f64 + 0.5) * step;
        let e = integrate(stream, f, s);
        for (d, &n) in denom.values_mut().iter_mut().zip(e.counts.values()) {
            *d += (c.value() * n).exp();
        }
    }
    let n = subintervals as f64;
    blurred.zip_map(&denom, |b, d| b * n / d)
}

/// Initial flow: Horn–Schunck between Gaussian-smoothed event frames of the
/// two halves of the flow window, scaled to the full window.
pub fn init_flow(stream: &EventStream, cfg: &PipelineConfig) -> FlowField {
    let (w, h) = (stream.width(), stream.height());
    let f = stream.reference_time;
    let mid = f + 0.5 * cfg.dt;
    let end = f + cfg.dt;
    if stream.window(f, end).is_empty() {
        return FlowField::zeros(w, h);
    }
    let first = gaussian_blur(&integrate(stream, f, mid).counts, 1.0);
    let second = gaussian_blur(&integrate(stream, mid, end).counts, 1.0);
    horn_schunck(&first, &second, &HornSchunckParams::default()).map(|v| [2.0 * v[0], 2.0 * v[1]])
}

/// Runs the joint estimator on a blurred frame and its event stream.
pub fn run(blurred: &ScalarGrid, stream: &EventStream, cfg: &PipelineConfig) -> Result<PipelineResult, PipelineError> {
    cfg.validate()?;
    let sensor = (stream.width(), stream.height());
    if blurred.dims() != sensor {
        return Err(PipelineError::ShapeMismatch {
            image: blurred.dims(),
            sensor,
        });
    }
    let t0 = Instant::now();
    let c = Threshold::new(cfg.c)?;
    let exposure = ExposureParams::new(cfg.exposure, cfg.dt)?;
    let weights = cfg.energy_weights();
    weights.validate()?;
    let f = stream.reference_time;

    let th2 = theta2(&integrate(stream, f, f + cfg.dt), c);
    let mut latent = edi_initial_latent(blurred, stream, cfg.exposure, c, EDI_SUBINTERVALS).clamp(0.0, 1.0);
    let mut flow = init_flow(stream, cfg);
    let model = EnergyModel {
        blurred: blurred.clone(),
        theta2: th2,
        edge_weights: edge_weights(&latent, cfg.mu3, cfg.mu4),
        weights,
        exposure,
    };
    let mut energy = model.energy(&latent, &flow).total;
    let mut trace = vec![energy];
    let mut timings = StageTimings {
        init: t0.elapsed(),
        ..Default::default()
    };
    let flow_opts = FlowSolverOptions {
        iters: cfg.flow_iters,
        blur_grad_every: cfg.blur_grad_every,
    };
    let deblur_opts = DeblurOptions {
        iters: cfg.deblur_iters,
        cg_iters: cfg.cg_iters,
    };

    enum Candidate {
        Flow(FlowField),
        Latent(ScalarGrid),
    }

    let mut stages = Vec::new();
    let mut diverged = false;
    let mut rounds = 0;
    for round in 0..cfg.outer_iters {
        let round_start = energy;
        rounds = round + 1;
        for stage in [Stage::Flow, Stage::Deblur] {
            let ts = Instant::now();
            let (candidate_energy, candidate) = match stage {
                Stage::Flow => {
                    let rep = solve_flow(&model, &latent, &flow, &flow_opts)?;
                    timings.flow += ts.elapsed();
                    (rep.energy_final, Candidate::Flow(rep.flow))
                }
                Stage::Deblur => {
                    let rep = solve_deblur(&model, &flow, &latent, &deblur_opts)?;
                    timings.deblur += ts.elapsed();
                    (rep.energy_final, Candidate::Latent(rep.latent))
                }
            };
            if candidate_energy > DIVERGENCE_FACTOR * round_start {
                log::warn!(
                    "round {round}: {stage:?} stage raised energy {round_start:.6e} -> {candidate_energy:.6e}; stopping"
                );
                diverged = true;
            }
            let accepted = !diverged && candidate_energy <= energy;
            if accepted {
                match candidate {
                    Candidate::Flow(u) => flow = u,
                    Candidate::Latent(l) => latent = l,
                }
                energy = candidate_energy;
            } else if !diverged {
                log::debug!("round {round}: {stage:?} stage rejected ({candidate_energy:.6e} > {energy:.6e})");
            }
            stages.push(StageRecord {
                round,
                stage,
                candidate_energy,
                accepted,
            });
            trace.push(energy);
            if diverged {
                break;
            }
        }
        if diverged {
            // keep one trace entry per stage of every round that ran
            trace.resize(1 + 2 * rounds, energy);
            break;
        }
        let drop = (round_start - energy) / round_start.abs().max(f64::MIN_POSITIVE);
        if drop < cfg.energy_tol {
            break;
        }
    }

    Ok(PipelineResult {
        flow,
        latent,
        energy_trace: trace,
        timings,
        rounds,
        diverged,
        stages,
    })
}
