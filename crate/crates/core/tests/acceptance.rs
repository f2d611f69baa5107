//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eventflow::bench::{colorize_flow, flow_metrics, psnr, write_flo, write_gray_png, write_rgb_png, FlowMetrics};
use eventflow::blur::{apply_blur, apply_blur_adjoint, blur_flow_gradient, phi_blur_value, ExposureParams, BLUR_FD_STEP};
use eventflow::energy::{phi_eve, phi_eve_value, EventOperator};
use eventflow::events::{edi_propagate, integrate, Threshold};
use eventflow::grid::{flow_grad, flow_grad_adjoint, grad, grad_adjoint, EdgeWeights, FlowField, ScalarGrid, VecGrid};
use eventflow::pipeline::{run, PipelineConfig, PipelineResult};
use eventflow::synth::{blurred_translation, sharp_translation, verify_consistency, SceneOutput, ScenePreset};

const ADJOINT_INSTANCES: usize = 50;
const ADJOINT_REL_TOL: f64 = 1e-10;
const ADJOINT_BUDGET: Duration = Duration::from_secs(1);

const GRADIENT_SIZE: usize = 8;
const GRADIENT_INSTANCES: usize = 5;
const EVE_FD_STEP: f64 = 1e-4;
const EVE_REL_TOL: f64 = 1e-6;
const BLUR_ABS_TOL: f64 = 1e-8;
const GRADIENT_BUDGET: Duration = Duration::from_secs(10);

const EDI_ROUND_TRIP_TOL: f64 = 1e-12;
const CONSISTENCY_FRACTION: f64 = 0.99;

const SHARP_AEE_MAX: f64 = 0.5;
const SHARP_BUDGET: Duration = Duration::from_secs(30);

const BLURRED_AEE_MAX: f64 = 1.0;
const BLURRED_PSNR_GAIN_DB: f64 = 3.0;
const BLURRED_BUDGET: Duration = Duration::from_secs(120);

const TRACE_STEP_TOL: f64 = 1e-6;
const METRIC_INSTANCES: usize = 100;

struct Suite {
    results: Vec<(u32, bool)>,
}

impl Suite {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        // written past the test harness capture so the lines always show
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "criterion {id} [{name}]: {verdict} ({detail})");
        let _ = out.flush();
        self.results.push((id, pass));
    }
}

fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f64, hi: f64) -> ScalarGrid {
    ScalarGrid::new(w, h, (0..w * h).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn random_vec<const K: usize>(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f64, hi: f64) -> VecGrid<K> {
    let data = (0..w * h)
        .map(|_| {
            let mut v = [0.0; K];
            for c in v.iter_mut() {
                *c = rng.gen_range(lo..hi);
            }
            v
        })
        .collect();
    VecGrid::new(w, h, data).unwrap()
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn adjoint_suite(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = [0.0f64; 4];
    for _ in 0..ADJOINT_INSTANCES {
        let w = rng.gen_range(3..20);
        let h = rng.gen_range(3..20);

        let x = random_grid(&mut rng, w, h, -1.0, 1.0);
        let y: VecGrid<2> = random_vec(&mut rng, w, h, -1.0, 1.0);
        worst[0] = worst[0].max(rel_gap(grad(&x).dot(&y), x.dot(&grad_adjoint(&y))));

        let u: FlowField = random_vec(&mut rng, w, h, -1.0, 1.0);
        let p: VecGrid<4> = random_vec(&mut rng, w, h, -1.0, 1.0);
        let ew = EdgeWeights {
            wx: random_grid(&mut rng, w, h, 0.01, 2.0),
            wy: random_grid(&mut rng, w, h, 0.01, 2.0),
        };
        worst[1] = worst[1].max(rel_gap(flow_grad(&u, &ew).dot(&p), u.dot(&flow_grad_adjoint(&p, &ew))));

        let th = random_grid(&mut rng, w, h, -0.5, 0.5);
        let flow: FlowField = random_vec(&mut rng, w, h, -3.0, 3.0);
        let q = random_grid(&mut rng, w, h, -1.0, 1.0);
        let ke = EventOperator::new(&th, &flow);
        worst[2] = worst[2].max(rel_gap(ke.apply(&x).dot(&q), x.dot(&ke.adjoint(&q))));

        let exposure = rng.gen_range(0.5..4.0);
        let exp = ExposureParams::new(exposure, 1.0).unwrap();
        worst[3] = worst[3].max(rel_gap(
            apply_blur(&x, &flow, &exp).dot(&q),
            x.dot(&apply_blur_adjoint(&q, &flow, &exp)),
        ));
    }
    let elapsed = start.elapsed();
    let max = worst.iter().cloned().fold(0.0, f64::max);
    suite.record(
        1,
        "adjoint identities",
        max < ADJOINT_REL_TOL && elapsed < ADJOINT_BUDGET,
        format!(
            "worst rel err grad {:.1e}, flow_grad {:.1e}, K_e {:.1e}, blur {:.1e}; tol {ADJOINT_REL_TOL:.0e}; {:.3} s of {} s",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            elapsed.as_secs_f64(),
            ADJOINT_BUDGET.as_secs()
        ),
    );
}

fn gradient_suite(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = GRADIENT_SIZE;
    let (mu1, mu2, eps) = (2.0, 25.0, 1e-3);
    let start = Instant::now();
    let mut eve_rel: f64 = 0.0;
    let mut blur_abs: f64 = 0.0;
    for _ in 0..GRADIENT_INSTANCES {
        let l = random_grid(&mut rng, n, n, 0.0, 1.0);
        let th = random_grid(&mut rng, n, n, -0.5, 0.5);
        let b = random_grid(&mut rng, n, n, 0.0, 1.0);
        let u: FlowField = random_vec(&mut rng, n, n, -2.0, 2.0);
        let exp = ExposureParams::new(2.0, 1.0).unwrap();

        let analytic_eve = phi_eve(&l, &u, &th, eps).grad_u;
        let analytic_blur = blur_flow_gradient(&l, &u, &b, &exp);
        let mut diff_sq = 0.0;
        let mut norm_sq = 0.0;
        for i in 0..n * n {
            for k in 0..2 {
                let shifted = |d: f64| {
                    let mut v = u.clone();
                    v.values_mut()[i][k] += d;
                    v
                };
                let fd_eve = mu1
                    * (phi_eve_value(&l, &shifted(EVE_FD_STEP), &th, eps)
                        - phi_eve_value(&l, &shifted(-EVE_FD_STEP), &th, eps))
                    / (2.0 * EVE_FD_STEP);
                let a = mu1 * analytic_eve.values()[i][k];
                diff_sq += (a - fd_eve) * (a - fd_eve);
                norm_sq += a * a;

                let fd_blur = (phi_blur_value(&l, &shifted(BLUR_FD_STEP), &b, &exp)
                    - phi_blur_value(&l, &shifted(-BLUR_FD_STEP), &b, &exp))
                    / (2.0 * BLUR_FD_STEP);
                blur_abs = blur_abs.max((mu2 * analytic_blur.values()[i][k] - mu2 * fd_blur).abs());
            }
        }
        eve_rel = eve_rel.max((diff_sq / norm_sq).sqrt());
    }
    let elapsed = start.elapsed();
    suite.record(
        2,
        "flow gradients vs finite differences",
        eve_rel < EVE_REL_TOL && blur_abs < BLUR_ABS_TOL && elapsed < GRADIENT_BUDGET,
        format!(
            "event term rel err {eve_rel:.1e} (tol {EVE_REL_TOL:.0e}, h {EVE_FD_STEP:.0e}), blur term abs err {blur_abs:.1e} (tol {BLUR_ABS_TOL:.0e}, h {BLUR_FD_STEP}); {:.2} s of {} s",
            elapsed.as_secs_f64(),
            GRADIENT_BUDGET.as_secs()
        ),
    );
}

fn edi_suite(suite: &mut Suite, scenes: &[(&ScenePreset, &SceneOutput)]) {
    let mut worst: f64 = 0.0;
    let mut fractions = Vec::new();
    let mut consistent = true;
    for (preset, scene) in scenes {
        let c = Threshold::new(preset.spec.threshold).unwrap();
        let f = scene.reference_time;
        let t = f + preset.spec.window;
        let forward = edi_propagate(&scene.gt_sharp, &integrate(&scene.stream, f, t), c);
        let back = edi_propagate(&forward, &integrate(&scene.stream, t, f), c);
        for (a, b) in back.values().iter().zip(scene.gt_sharp.values()) {
            worst = worst.max((a - b).abs());
        }
        let report = verify_consistency(scene, c);
        consistent &= report.passed && report.fraction_within >= CONSISTENCY_FRACTION;
        fractions.push(format!("{} {:.4}", preset.name, report.fraction_within));
    }
    suite.record(
        3,
        "EDI round trip and simulator consistency",
        worst < EDI_ROUND_TRIP_TOL && consistent,
        format!(
            "round-trip max err {worst:.1e} (tol {EDI_ROUND_TRIP_TOL:.0e}); fraction within c: {} (min {CONSISTENCY_FRACTION})",
            fractions.join(", ")
        ),
    );
}

fn run_single_threaded(scene: &SceneOutput, cfg: &PipelineConfig) -> (PipelineResult, Duration) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let start = Instant::now();
        let r = run(&scene.blurred, &scene.stream, cfg).expect("pipeline run");
        (r, start.elapsed())
    })
}

fn run_timed(scene: &SceneOutput, cfg: &PipelineConfig) -> (PipelineResult, Duration) {
    let start = Instant::now();
    let r = run(&scene.blurred, &scene.stream, cfg).expect("pipeline run");
    (r, start.elapsed())
}

fn metrics(r: &PipelineResult, scene: &SceneOutput) -> FlowMetrics {
    flow_metrics(&r.flow, &scene.gt_flow, None).unwrap()
}

fn trace_ok(trace: &[f64]) -> (bool, f64) {
    let worst_rise = trace.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let ok = worst_rise <= TRACE_STEP_TOL && trace.last() <= trace.first();
    (ok, worst_rise)
}

fn output_bytes(r: &PipelineResult, tag: &str) -> Vec<Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let flo = dir.path().join(format!("{tag}.flo"));
    let latent = dir.path().join(format!("{tag}_latent.png"));
    let color = dir.path().join(format!("{tag}_flow.png"));
    write_flo(&flo, &r.flow).unwrap();
    write_gray_png(&latent, &r.latent).unwrap();
    write_rgb_png(&color, &colorize_flow(&r.flow, None)).unwrap();
    [flo, latent, color].iter().map(|p| std::fs::read(p).unwrap()).collect()
}

fn naive_flow_metrics(est: &FlowField, gt: &FlowField, mask: &[bool]) -> (f64, f64, f64) {
    let (w, h) = est.dims();
    let (mut ee_sum, mut sq_sum, mut bad, mut n) = (0.0, 0.0, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let e = est.get(x, y);
            let g = gt.get(x, y);
            let du = e[0] - g[0];
            let dv = e[1] - g[1];
            let ee = (du * du + dv * dv).sqrt();
            ee_sum += ee;
            sq_sum += du * du + dv * dv;
            if ee > 3.0 && ee > 0.05 * (g[0] * g[0] + g[1] * g[1]).sqrt() {
                bad += 1;
            }
            n += 1;
        }
    }
    (ee_sum / n as f64, sq_sum / n as f64, bad as f64 / n as f64)
}

fn naive_psnr(a: &ScalarGrid, b: &ScalarGrid) -> f64 {
    let (w, h) = a.dims();
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            let d = a.get(x, y) - b.get(x, y);
            acc += d * d;
        }
    }
    let mse = acc / (w * h) as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

fn metric_oracles(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    for i in 0..METRIC_INSTANCES {
        let w = rng.gen_range(1..24);
        let h = rng.gen_range(1..24);
        let gt: FlowField = random_vec(&mut rng, w, h, -12.0, 12.0);
        let est: FlowField = random_vec(&mut rng, w, h, -12.0, 12.0);
        let mut mask: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.8)).collect();
        mask[rng.gen_range(0..w * h)] = true;
        let m = flow_metrics(&est, &gt, Some(&mask)).unwrap();
        let (aee, mse, fe) = naive_flow_metrics(&est, &gt, &mask);
        if m.aee != aee || m.mse != mse || m.fe != fe {
            mismatches += 1;
        }
        let a = random_grid(&mut rng, w, h, 0.0, 1.0);
        let b = if i % 10 == 0 { a.clone() } else { random_grid(&mut rng, w, h, 0.0, 1.0) };
        let p = psnr(&a, &b);
        let q = naive_psnr(&a, &b);
        if p != q {
            mismatches += 1;
        }
    }
    suite.record(
        9,
        "metric oracles",
        mismatches == 0,
        format!("{mismatches} mismatches over {METRIC_INSTANCES} flow_metrics and {METRIC_INSTANCES} psnr instances (exact equality)"),
    );
}

#[test]
fn acceptance_criteria() {
    let mut suite = Suite { results: Vec::new() };

    adjoint_suite(&mut suite);
    gradient_suite(&mut suite);

    let sharp = sharp_translation();
    let blurred = blurred_translation();
    let sharp_scene = sharp.render().unwrap();
    let blurred_scene = blurred.render().unwrap();
    edi_suite(&mut suite, &[(&sharp, &sharp_scene), (&blurred, &blurred_scene)]);

    // sharp translation
    let (sharp_run, sharp_time) = run_single_threaded(&sharp_scene, &sharp.config);
    let sharp_m = metrics(&sharp_run, &sharp_scene);
    suite.record(
        4,
        "sharp translation",
        sharp_m.aee < SHARP_AEE_MAX && sharp_time < SHARP_BUDGET,
        format!(
            "AEE {:.4} px (max {SHARP_AEE_MAX}); {:.2} s single-threaded of {} s",
            sharp_m.aee,
            sharp_time.as_secs_f64(),
            SHARP_BUDGET.as_secs()
        ),
    );

    // blurred translation
    let (blurred_run, blurred_time) = run_timed(&blurred_scene, &blurred.config);
    let blurred_m = metrics(&blurred_run, &blurred_scene);
    let psnr_in = psnr(&blurred_scene.blurred, &blurred_scene.gt_sharp);
    let psnr_out = psnr(&blurred_run.latent, &blurred_scene.gt_sharp);
    suite.record(
        5,
        "blurred translation",
        psnr_out >= psnr_in + BLURRED_PSNR_GAIN_DB && blurred_m.aee < BLURRED_AEE_MAX && blurred_time < BLURRED_BUDGET,
        format!(
            "PSNR {psnr_in:.2} -> {psnr_out:.2} dB (gain {:.2}, min {BLURRED_PSNR_GAIN_DB}); AEE {:.4} px (max {BLURRED_AEE_MAX}); {:.1} s of {} s",
            psnr_out - psnr_in,
            blurred_m.aee,
            blurred_time.as_secs_f64(),
            BLURRED_BUDGET.as_secs()
        ),
    );

    // ablations
    let no_event = PipelineConfig {
        mu1: 0.0,
        ..blurred.config.clone()
    };
    let no_blur = PipelineConfig {
        mu2: 0.0,
        ..blurred.config.clone()
    };
    let aee_no_event = metrics(&run_timed(&blurred_scene, &no_event).0, &blurred_scene).aee;
    let aee_no_blur = metrics(&run_timed(&blurred_scene, &no_blur).0, &blurred_scene).aee;
    suite.record(
        6,
        "ablation direction",
        aee_no_event > blurred_m.aee && aee_no_blur > blurred_m.aee,
        format!(
            "AEE full {:.4}, without event term {aee_no_event:.4}, without blur term {aee_no_blur:.4}",
            blurred_m.aee
        ),
    );

    // energy monotonicity
    let (sharp_ok, sharp_rise) = trace_ok(&sharp_run.energy_trace);
    let (blurred_ok, blurred_rise) = trace_ok(&blurred_run.energy_trace);
    suite.record(
        7,
        "energy monotonicity",
        sharp_ok && blurred_ok,
        format!(
            "largest step rise {sharp_rise:.2e} / {blurred_rise:.2e} (tol {TRACE_STEP_TOL:.0e}); energy {:.4e} -> {:.4e} and {:.4e} -> {:.4e}",
            sharp_run.energy_trace[0],
            sharp_run.energy_trace.last().unwrap(),
            blurred_run.energy_trace[0],
            blurred_run.energy_trace.last().unwrap()
        ),
    );

    // determinism: repeat with a different thread count
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let (sharp_again, blurred_again) = pool.install(|| {
        (
            run(&sharp_scene.blurred, &sharp_scene.stream, &sharp.config).unwrap(),
            run(&blurred_scene.blurred, &blurred_scene.stream, &blurred.config).unwrap(),
        )
    });
    let same_sharp = output_bytes(&sharp_run, "a") == output_bytes(&sharp_again, "a");
    let same_blurred = output_bytes(&blurred_run, "b") == output_bytes(&blurred_again, "b");
    suite.record(
        8,
        "determinism",
        same_sharp && same_blurred,
        format!("sharp scene outputs identical: {same_sharp}; blurred scene outputs identical: {same_blurred} (.flo, latent PNG, flow PNG)"),
    );

    metric_oracles(&mut suite);

    let failed: Vec<u32> = suite.results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
