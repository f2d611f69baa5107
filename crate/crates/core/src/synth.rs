//! Synthetic scenes with known ground truth.
//!
//! A base texture is warped bilinearly along a parametric motion. The
//! exposure frame is the mean of latent frames sampled across the exposure,
//! and events come from an idealized per-pixel threshold-crossing sensor with
//! log intensity interpolated linearly in time between rendered frames.
//!
//! Timeline: the sensor starts at `−pre_roll`, the exposure covers `[0, T]`,
//! the latent reference time is its midpoint `f = T/2`, and the flow window is
//! `[f, f + Δt]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::blur::{BlurError, ExposureParams};
use crate::events::{edi_propagate, integrate, Event, EventStream, Polarity, Threshold};
use crate::filter::gaussian_blur;
use crate::grid::{FlowField, ScalarGrid};
use crate::pipeline::PipelineConfig;

/// Intensity floor applied before taking logs in the simulated sensor.
pub const LOG_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("substeps must be at least 8, got {0}")]
    TooFewSubsteps(usize),
    #[error("non-finite motion parameters")]
    NonFiniteMotion,
    #[error("contrast threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("pre-roll must be non-negative, got {0}")]
    InvalidPreRoll(f64),
    #[error("scene dimensions must be non-zero")]
    Empty,
    #[error(transparent)]
    Exposure(#[from] BlurError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    /// Alternating squares of side `square` px, edges softened by a Gaussian of
    /// std `softness` px (0 keeps them hard).
    Checkerboard {
        square: usize,
        low: f64,
        high: f64,
        softness: f64,
    },
    /// `count` random Gaussian blobs on a mid-grey background.
    GaussianBlobs {
        count: usize,
        sigma_min: f64,
        sigma_max: f64,
        amplitude: f64,
    },
    /// Random Gaussian bumps summed in log intensity around `base`, giving
    /// smooth features with large log contrast. Values are clamped to
    /// `[0.02, 1]`.
    LogBlobs {
        count: usize,
        sigma_min: f64,
        sigma_max: f64,
        log_amplitude: f64,
        base: f64,
    },
    /// A vertical step between `left` and `right` at column `at` (real valued).
    StepEdge { at: f64, left: f64, right: f64 },
    /// An explicit image, read with replicate boundary.
    Image(ScalarGrid),
}

/// Velocity field, pixels per second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Translation { velocity: [f64; 2] },
    /// `v(x) = velocity + matrix·(x − centre)`, centre at the image middle.
    Affine {
        velocity: [f64; 2],
        matrix: [[f64; 2]; 2],
    },
}

impl Motion {
    fn velocity_at(&self, x: f64, y: f64, cx: f64, cy: f64) -> [f64; 2] {
        match *self {
            Motion::Translation { velocity } => velocity,
            Motion::Affine { velocity, matrix } => {
                let (dx, dy) = (x - cx, y - cy);
                [
                    velocity[0] + matrix[0][0] * dx + matrix[0][1] * dy,
                    velocity[1] + matrix[1][0] * dx + matrix[1][1] * dy,
                ]
            }
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Motion::Translation { velocity } => velocity.iter().all(|v| v.is_finite()),
            Motion::Affine { velocity, matrix } => velocity
                .iter()
                .chain(matrix.iter().flatten())
                .all(|v| v.is_finite()),
        }
    }
}

/// Sensor imperfections. Both knobs default to off.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EventNoise {
    pub drop_probability: f64,
    /// Uniform timestamp jitter half-width, seconds.
    pub timestamp_jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub texture: Texture,
    pub motion: Motion,
    /// Flow window `Δt`, seconds.
    pub window: f64,
    /// Exposure `T`, seconds.
    pub exposure: f64,
    pub threshold: f64,
    /// Latent frames averaged over the exposure.
    pub substeps: usize,
    /// Rendered frames per flow window for event generation.
    pub event_substeps: usize,
    /// Motion simulated before the exposure starts, seconds. Gives the sensor
    /// a history so that per-pixel reference levels at `f` are not aligned
    /// with the reference frame.
    pub pre_roll: f64,
    pub noise: EventNoise,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::Empty);
        }
        if self.substeps < 8 {
            return Err(SceneError::TooFewSubsteps(self.substeps));
        }
        if self.event_substeps < 8 {
            return Err(SceneError::TooFewSubsteps(self.event_substeps));
        }
        if !self.motion.is_finite() {
            return Err(SceneError::NonFiniteMotion);
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(SceneError::InvalidThreshold(self.threshold));
        }
        let p = self.noise.drop_probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(SceneError::InvalidProbability(p));
        }
        if !(self.pre_roll >= 0.0 && self.pre_roll.is_finite()) {
            return Err(SceneError::InvalidPreRoll(self.pre_roll));
        }
        ExposureParams::new(self.exposure, self.window)?;
        Ok(())
    }

    pub fn reference_time(&self) -> f64 {
        0.5 * self.exposure
    }

    /// Simulated interval `[−pre_roll, max(T, f + Δt)]`.
    pub fn time_span(&self) -> (f64, f64) {
        (-self.pre_roll, self.exposure.max(self.reference_time() + self.window))
    }
}

/// Everything rendered for one scene.
#[derive(Debug, Clone)]
pub struct SceneOutput {
    pub blurred: ScalarGrid,
    pub stream: EventStream,
    /// Displacement over the flow window, pixels.
    pub gt_flow: FlowField,
    /// Latent image at the reference time `f`.
    pub gt_sharp: ScalarGrid,
    /// Latent image at the end of the flow window `f + Δt`.
    pub gt_window_end: ScalarGrid,
    pub reference_time: f64,
    pub exposure: ExposureParams,
    /// The texture became constant, so no events can fire.
    pub degenerate_texture: bool,
}

/// Base texture with a margin large enough that warping never reads past it.
struct Canvas {
    tex: ScalarGrid,
    margin: f64,
}

impl Canvas {
    fn build(spec: &SceneSpec, seed: u64) -> Self {
        let (t0, t1) = spec.time_span();
        let f = spec.reference_time();
        let max_dt = (f - t0).abs().max((t1 - f).abs());
        let (cx, cy) = centre(spec);
        let mut vmax: f64 = 0.0;
        for &(x, y) in &[
            (0.0, 0.0),
            (spec.width as f64, 0.0),
            (0.0, spec.height as f64),
            (spec.width as f64, spec.height as f64),
        ] {
            let v = spec.motion.velocity_at(x, y, cx, cy);
            vmax = vmax.max(v[0].hypot(v[1]));
        }
        let margin = (vmax * max_dt).ceil() as usize + 4;
        let (w, h) = (spec.width + 2 * margin, spec.height + 2 * margin);
        let m = margin as f64;
        let tex = match &spec.texture {
            Texture::Checkerboard {
                square,
                low,
                high,
                softness,
            } => {
                let sq = (*square).max(1);
                let hard = ScalarGrid::from_fn(w, h, |x, y| {
                    // squares aligned to the visible image origin
                    let gx = ((x as f64 - m) / sq as f64).floor() as i64;
                    let gy = ((y as f64 - m) / sq as f64).floor() as i64;
                    if (gx + gy).rem_euclid(2) == 0 {
                        *high
                    } else {
                        *low
                    }
                });
                gaussian_blur(&hard, *softness)
            }
            Texture::GaussianBlobs {
                count,
                sigma_min,
                sigma_max,
                amplitude,
            } => {
                let bumps = random_bumps(seed, w, h, *count, *sigma_min, *sigma_max, *amplitude);
                ScalarGrid::from_fn(w, h, |x, y| (0.5 + bumps.get(x, y)).clamp(0.05, 0.95))
            }
            Texture::LogBlobs {
                count,
                sigma_min,
                sigma_max,
                log_amplitude,
                base,
            } => {
                let bumps = random_bumps(seed, w, h, *count, *sigma_min, *sigma_max, *log_amplitude);
                bumps.map(|v| (base * v.exp()).clamp(0.02, 1.0))
            }
            Texture::StepEdge { at, left, right } => ScalarGrid::from_fn(w, h, |x, _| {
                let sx = x as f64 - m;
                // area coverage of the unit pixel [sx − ½, sx + ½]
                let frac = (sx + 0.5 - at).clamp(0.0, 1.0);
                left + (right - left) * frac
            }),
            Texture::Image(img) => {
                ScalarGrid::from_fn(w, h, |x, y| img.sample_bilinear(x as f64 - m, y as f64 - m))
            }
        };
        Self { tex, margin: m }
    }

    #[inline]
    fn sample(&self, x: f64, y: f64) -> f64 {
        self.tex.sample_bilinear(x + self.margin, y + self.margin)
    }
}

/// Sum of `count` Gaussian bumps with random centres, widths and signed
/// amplitudes in `[−amplitude, amplitude)`.
fn random_bumps(
    seed: u64,
    w: usize,
    h: usize,
    count: usize,
    sigma_min: f64,
    sigma_max: f64,
    amplitude: f64,
) -> ScalarGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            let bx = rng.gen_range(0.0..w as f64);
            let by = rng.gen_range(0.0..h as f64);
            let s = if sigma_max > sigma_min {
                rng.gen_range(sigma_min..sigma_max)
            } else {
                sigma_min
            };
            let a = rng.gen_range(-amplitude..amplitude);
            (bx, by, s, a)
        })
        .collect();
    ScalarGrid::from_fn(w, h, |x, y| {
        let mut v = 0.0;
        for &(bx, by, s, a) in &blobs {
            let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
            if d2 < 25.0 * s * s {
                v += a * (-d2 / (2.0 * s * s)).exp();
            }
        }
        v
    })
}

fn centre(spec: &SceneSpec) -> (f64, f64) {
    (0.5 * (spec.width as f64 - 1.0), 0.5 * (spec.height as f64 - 1.0))
}

/// Latent frame at time `t`: backward warp of the reference frame by the
/// displacement accumulated since `f`.
fn latent_at(canvas: &Canvas, spec: &SceneSpec, t: f64) -> ScalarGrid {
    let f = spec.reference_time();
    let (cx, cy) = centre(spec);
    let s = t - f;
    let mut data = vec![0.0; spec.width * spec.height];
    data.par_chunks_mut(spec.width).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let v = spec.motion.velocity_at(x as f64, y as f64, cx, cy);
            *o = canvas.sample(x as f64 - s * v[0], y as f64 - s * v[1]);
        }
    });
    ScalarGrid::new(spec.width, spec.height, data).expect("finite texture")
}

/// Per-pixel threshold-crossing sensor between consecutive log frames.
/// Returns each pixel's events in time order.
fn simulate_pixel_events(
    log_frames: &[Vec<f64>],
    times: &[f64],
    c: f64,
    pixel: usize,
    out: &mut Vec<(f64, Polarity)>,
) {
    let mut reference = log_frames[0][pixel];
    for k in 0..log_frames.len() - 1 {
        let a = log_frames[k][pixel];
        let b = log_frames[k + 1][pixel];
        let (t0, t1) = (times[k], times[k + 1]);
        if b == a {
            continue;
        }
        loop {
            let (level, pol) = if b - reference >= c {
                (reference + c, Polarity::Positive)
            } else if reference - b >= c {
                (reference - c, Polarity::Negative)
            } else {
                break;
            };
            let frac = ((level - a) / (b - a)).clamp(0.0, 1.0);
            out.push((t0 + frac * (t1 - t0), pol));
            reference = level;
        }
    }
}

/// Renders a scene: blurred exposure frame, events, ground-truth flow and the
/// sharp latent image at the reference time.
pub fn render_scene(spec: &SceneSpec, seed: u64) -> Result<SceneOutput, SceneError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let canvas = Canvas::build(spec, seed);
    let f = spec.reference_time();
    let exposure = ExposureParams::new(spec.exposure, spec.window)?;

    let gt_sharp = latent_at(&canvas, spec, f);
    let gt_window_end = latent_at(&canvas, spec, f + spec.window);

    // exposure average, accumulated as deviations from the sharp frame
    let s = spec.substeps;
    let mut acc = ScalarGrid::zeros(w, h);
    for k in 0..s {
        let t = spec.exposure * k as f64 / (s - 1) as f64;
        let frame = latent_at(&canvas, spec, t);
        acc.axpy(1.0, &frame.zip_map(&gt_sharp, |a, b| a - b));
    }
    let blurred = gt_sharp.zip_map(&acc, |sharp, d| sharp + d / s as f64);

    // events
    let (t0, t1) = spec.time_span();
    let steps = ((t1 - t0) / spec.window * spec.event_substeps as f64).ceil().max(1.0) as usize;
    let times: Vec<f64> = (0..=steps).map(|k| t0 + (t1 - t0) * k as f64 / steps as f64).collect();
    let log_frames: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| {
            latent_at(&canvas, spec, t)
                .into_values()
                .into_iter()
                .map(|v| v.max(LOG_FLOOR).ln())
                .collect()
        })
        .collect();
    let degenerate_texture = {
        let first = canvas.tex.values()[0];
        canvas.tex.values().iter().all(|&v| v == first)
    };
    if degenerate_texture {
        log::warn!("scene texture is constant; no events will fire");
    }

    let noise = spec.noise;
    let rows: Vec<Vec<Event>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            rng.set_stream(y as u64);
            let mut row = Vec::new();
            let mut buf = Vec::new();
            for x in 0..w {
                buf.clear();
                simulate_pixel_events(&log_frames, &times, spec.threshold, y * w + x, &mut buf);
                for &(t, polarity) in &buf {
                    if noise.drop_probability > 0.0 && rng.gen::<f64>() < noise.drop_probability {
                        continue;
                    }
                    let t = if noise.timestamp_jitter > 0.0 {
                        t + rng.gen_range(-noise.timestamp_jitter..=noise.timestamp_jitter)
                    } else {
                        t
                    };
                    row.push(Event {
                        t,
                        x: x as u32,
                        y: y as u32,
                        polarity,
                    });
                }
            }
            row
        })
        .collect();
    let events: Vec<Event> = rows.into_iter().flatten().collect();
    let stream = EventStream::new(events, w, h)
        .with_reference_time(f)
        .with_exposure(0.0, spec.exposure);

    let (cx, cy) = centre(spec);
    let gt_flow = FlowField::from_fn(w, h, |x, y| {
        let v = spec.motion.velocity_at(x as f64, y as f64, cx, cy);
        [v[0] * spec.window, v[1] * spec.window]
    });

    Ok(SceneOutput {
        blurred,
        stream,
        gt_flow,
        gt_sharp,
        gt_window_end,
        reference_time: f,
        exposure,
        degenerate_texture,
    })
}

/// Outcome of the event/intensity round-trip check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyReport {
    /// Fraction of pixels whose log-intensity error is within `c`.
    pub fraction_within: f64,
    pub max_log_error: f64,
    pub pixels: usize,
    pub passed: bool,
}

/// Minimum fraction of pixels that must satisfy the quantization bound.
pub const CONSISTENCY_FRACTION: f64 = 0.99;

/// Propagates the sharp reference frame through the window's events and
/// compares it with the rendered frame at the end of the window in log space.
pub fn verify_consistency(scene: &SceneOutput, c: Threshold) -> ConsistencyReport {
    let f = scene.reference_time;
    let end = f + scene.exposure.window();
    let e = integrate(&scene.stream, f, end);
    let predicted = edi_propagate(&scene.gt_sharp, &e, c);
    let bound = c.value() + 1e-9;
    let mut within = 0usize;
    let mut max_err: f64 = 0.0;
    for (&p, &t) in predicted.values().iter().zip(scene.gt_window_end.values()) {
        let err = (p.max(LOG_FLOOR).ln() - t.max(LOG_FLOOR).ln()).abs();
        max_err = max_err.max(err);
        if err <= bound {
            within += 1;
        }
    }
    let pixels = predicted.len();
    let fraction_within = within as f64 / pixels as f64;
    ConsistencyReport {
        fraction_within,
        max_log_error: max_err,
        pixels,
        passed: fraction_within >= CONSISTENCY_FRACTION,
    }
}

/// A scene together with the seed and estimator settings it is evaluated with.
#[derive(Debug, Clone)]
pub struct ScenePreset {
    pub name: &'static str,
    pub spec: SceneSpec,
    pub seed: u64,
    pub config: PipelineConfig,
}

impl ScenePreset {
    pub fn render(&self) -> Result<SceneOutput, SceneError> {
        render_scene(&self.spec, self.seed)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "sharp-translation" => Some(sharp_translation()),
            "blurred-translation" => Some(blurred_translation()),
            _ => None,
        }
    }
}

/// 64×64 soft checkerboard translating (2, 0) px per window with a
/// negligible exposure, so the frame is sharp.
pub fn sharp_translation() -> ScenePreset {
    let window = 0.01;
    let exposure = 1e-4;
    let spec = SceneSpec {
        width: 64,
        height: 64,
        texture: Texture::Checkerboard {
            square: 16,
            low: 0.2,
            high: 0.8,
            softness: 2.5,
        },
        motion: Motion::Translation {
            velocity: [2.0 / window, 0.0],
        },
        window,
        exposure,
        threshold: 0.22,
        substeps: 9,
        event_substeps: 32,
        pre_roll: window,
        noise: EventNoise::default(),
    };
    let config = PipelineConfig {
        c: spec.threshold,
        exposure,
        dt: window,
        ..PipelineConfig::default()
    };
    ScenePreset {
        name: "sharp-translation",
        spec,
        seed: 0,
        config,
    }
}

/// 128×128 smooth log-contrast texture moving (8, 0) px during the exposure
/// (17 averaged substeps); the flow window is an eighth of the exposure, so
/// the window flow is (1, 0) px.
pub fn blurred_translation() -> ScenePreset {
    let exposure = 0.01;
    let window = exposure / 8.0;
    let spec = SceneSpec {
        width: 128,
        height: 128,
        texture: Texture::LogBlobs {
            count: 300,
            sigma_min: 4.0,
            sigma_max: 7.0,
            log_amplitude: 2.0,
            base: 0.3,
        },
        motion: Motion::Translation {
            velocity: [8.0 / exposure, 0.0],
        },
        window,
        exposure,
        threshold: 0.1,
        substeps: 17,
        event_substeps: 32,
        pre_roll: window,
        noise: EventNoise::default(),
    };
    let config = PipelineConfig {
        c: spec.threshold,
        exposure,
        dt: window,
        flow_iters: 200,
        ..PipelineConfig::default()
    };
    ScenePreset {
        name: "blurred-translation",
        spec,
        seed: 7,
        config,
    }
}
