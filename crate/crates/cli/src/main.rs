use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use eventflow::bench::{colorize_flow, flow_metrics, psnr, read_flo, read_gray, write_flo, write_gray_png, write_metrics_csv, write_rgb_png};
use eventflow::pipeline::{run, PipelineConfig, PipelineError, PipelineResult, Stage};
use eventflow::synth::{EventNoise, Motion, SceneSpec, ScenePreset, Texture};
use eventflow::EventStream;

/// Joint optical flow and deblurring from a blurred frame and an event stream.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// Verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate flow and a sharp latent image.
    Estimate(EstimateArgs),
    /// Render a synthetic dataset with ground truth.
    Simulate(SimulateArgs),
    /// Compare an estimated flow (and optionally an image) to ground truth.
    Evaluate(EvaluateArgs),
    /// Color-code a .flo file as a PNG.
    Visualize(VisualizeArgs),
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Blurred grayscale frame (PNG or PGM)
    #[arg(long)]
    image: PathBuf,
    /// Event file, one `t x y p` per line
    #[arg(long)]
    events: PathBuf,
    /// `key = value` configuration; missing keys take defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Latent reference time in seconds. Defaults to the exposure midpoint,
    /// with the exposure starting at t = 0.
    #[arg(long)]
    ref_time: Option<f64>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum TextureKind {
    Checkerboard,
    LogBlobs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Named scene; the remaining scene flags are ignored when set
    #[arg(long, value_parser = ["sharp-translation", "blurred-translation"])]
    preset: Option<String>,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, value_enum, default_value_t = TextureKind::Checkerboard)]
    texture: TextureKind,
    /// Checkerboard square size, pixels
    #[arg(long, default_value_t = 16)]
    square: usize,
    /// Horizontal displacement per flow window, pixels
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    flow_x: f64,
    /// Vertical displacement per flow window, pixels
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    flow_y: f64,
    /// Flow window, seconds
    #[arg(long, default_value_t = 0.01)]
    window: f64,
    /// Exposure, seconds
    #[arg(long, default_value_t = 0.01)]
    exposure: f64,
    /// Contrast threshold
    #[arg(long, default_value_t = 0.22)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability of dropping each event
    #[arg(long, default_value_t = 0.0)]
    drop: f64,
    /// Uniform timestamp jitter half-width, seconds
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Estimated flow
    #[arg(long)]
    flow: PathBuf,
    /// Ground-truth flow
    #[arg(long)]
    gt: PathBuf,
    /// Estimated latent image, for PSNR
    #[arg(long, requires = "gt_image")]
    image: Option<PathBuf>,
    /// Ground-truth sharp image, for PSNR
    #[arg(long, requires = "image")]
    gt_image: Option<PathBuf>,
    /// Write the metrics CSV here instead of stdout
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VisualizeArgs {
    #[arg(long)]
    flow: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Magnitude mapped to full saturation; defaults to the 99th percentile
    #[arg(long)]
    max_mag: Option<f64>,
}

enum Failure {
    Input(anyhow::Error),
    Diverged(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match cli.command {
        Command::Estimate(a) => estimate(&a),
        Command::Simulate(a) => simulate(&a).map_err(Failure::from),
        Command::Evaluate(a) => evaluate(&a).map_err(Failure::from),
        Command::Visualize(a) => visualize(&a).map_err(Failure::from),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Diverged(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn estimate(a: &EstimateArgs) -> Result<(), Failure> {
    let cfg = match &a.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    let blurred = read_gray(&a.image).with_context(|| format!("reading image {}", a.image.display()))?;
    let (w, h) = blurred.dims();
    let f = a.ref_time.unwrap_or(0.5 * cfg.exposure);
    if !f.is_finite() {
        return Err(anyhow!("--ref-time must be finite").into());
    }
    let exposure_start = f - 0.5 * cfg.exposure;
    let stream = EventStream::load(&a.events, w, h)
        .with_context(|| format!("reading events {}", a.events.display()))?
        .with_reference_time(f)
        .with_exposure(exposure_start, exposure_start + cfg.exposure);
    log::info!("{} events on a {w}x{h} sensor, reference time {f}", stream.len());

    let result = match run(&blurred, &stream, &cfg) {
        Ok(r) => r,
        Err(PipelineError::Solver(e)) => return Err(Failure::Diverged(e.into())),
        Err(e) => return Err(Failure::Input(e.into())),
    };
    log::info!(
        "{} rounds, energy {:.6e} -> {:.6e}",
        result.rounds,
        result.energy_trace[0],
        result.energy_trace.last().copied().unwrap_or(f64::NAN)
    );

    create_dir(&a.out)?;
    write_flo(a.out.join("flow.flo"), &result.flow).context("writing flow.flo")?;
    write_rgb_png(a.out.join("flow.png"), &colorize_flow(&result.flow, None)).context("writing flow.png")?;
    write_gray_png(a.out.join("deblurred.png"), &result.latent).context("writing deblurred.png")?;
    write_energy_csv(&a.out.join("energy.csv"), &result).context("writing energy.csv")?;

    if result.diverged {
        return Err(Failure::Diverged(anyhow!(
            "energy rose by more than 10% in round {}; outputs hold the last accepted estimate",
            result.rounds - 1
        )));
    }
    Ok(())
}

fn write_energy_csv(path: &Path, r: &PipelineResult) -> anyhow::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "step,round,stage,accepted,energy")?;
    writeln!(w, "0,,init,,{:e}", r.energy_trace[0])?;
    for (i, (s, e)) in r.stages.iter().zip(&r.energy_trace[1..]).enumerate() {
        let stage = match s.stage {
            Stage::Flow => "flow",
            Stage::Deblur => "deblur",
        };
        writeln!(w, "{},{},{stage},{},{e:e}", i + 1, s.round, s.accepted)?;
    }
    w.flush()?;
    Ok(())
}

fn custom_preset(a: &SimulateArgs) -> ScenePreset {
    let texture = match a.texture {
        TextureKind::Checkerboard => Texture::Checkerboard {
            square: a.square,
            low: 0.2,
            high: 0.8,
            softness: 2.5,
        },
        TextureKind::LogBlobs => Texture::LogBlobs {
            count: (a.width * a.height / 55).max(1),
            sigma_min: 4.0,
            sigma_max: 7.0,
            log_amplitude: 2.0,
            base: 0.3,
        },
    };
    let spec = SceneSpec {
        width: a.width,
        height: a.height,
        texture,
        motion: Motion::Translation {
            velocity: [a.flow_x / a.window, a.flow_y / a.window],
        },
        window: a.window,
        exposure: a.exposure,
        threshold: a.threshold,
        substeps: 17,
        event_substeps: 32,
        pre_roll: a.window,
        noise: EventNoise {
            drop_probability: a.drop,
            timestamp_jitter: a.jitter,
        },
    };
    let config = PipelineConfig {
        c: a.threshold,
        exposure: a.exposure,
        dt: a.window,
        ..PipelineConfig::default()
    };
    ScenePreset {
        name: "custom",
        spec,
        seed: a.seed,
        config,
    }
}

fn simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    if !(a.window > 0.0 && a.window.is_finite()) {
        bail!("--window must be positive");
    }
    let preset = match &a.preset {
        Some(name) => ScenePreset::by_name(name).ok_or_else(|| anyhow!("unknown preset `{name}`"))?,
        None => custom_preset(a),
    };
    let scene = preset.render().context("rendering scene")?;
    create_dir(&a.out)?;
    write_gray_png(a.out.join("blurred.png"), &scene.blurred).context("writing blurred.png")?;
    write_gray_png(a.out.join("gt_sharp.png"), &scene.gt_sharp).context("writing gt_sharp.png")?;
    write_flo(a.out.join("gt_flow.flo"), &scene.gt_flow).context("writing gt_flow.flo")?;
    scene.stream.save(a.out.join("events.txt")).context("writing events.txt")?;
    fs::write(a.out.join("config.txt"), preset.config.to_text()).context("writing config.txt")?;
    log::info!(
        "{}: {} events, reference time {}",
        preset.name,
        scene.stream.len(),
        scene.reference_time
    );
    if scene.degenerate_texture {
        log::warn!("texture has no gradient; flow is unobservable");
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    let est = read_flo(&a.flow).with_context(|| format!("reading {}", a.flow.display()))?;
    let gt = read_flo(&a.gt).with_context(|| format!("reading {}", a.gt.display()))?;
    let m = flow_metrics(&est, &gt, None)?;
    let p = match (&a.image, &a.gt_image) {
        (Some(img), Some(gt_img)) => {
            let x = read_gray(img).with_context(|| format!("reading {}", img.display()))?;
            let y = read_gray(gt_img).with_context(|| format!("reading {}", gt_img.display()))?;
            if x.dims() != y.dims() {
                bail!("image is {:?} but ground truth is {:?}", x.dims(), y.dims());
            }
            Some(psnr(&x, &y))
        }
        _ => None,
    };
    match &a.csv {
        Some(path) => {
            let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
            write_metrics_csv(&mut w, &m, p)?;
            w.flush()?;
        }
        None => write_metrics_csv(std::io::stdout().lock(), &m, p)?,
    }
    Ok(())
}

fn visualize(a: &VisualizeArgs) -> anyhow::Result<()> {
    let flow = read_flo(&a.flow).with_context(|| format!("reading {}", a.flow.display()))?;
    if let Some(m) = a.max_mag {
        if !(m > 0.0 && m.is_finite()) {
            bail!("--max-mag must be positive");
        }
    }
    write_rgb_png(&a.out, &colorize_flow(&flow, a.max_mag)).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}
