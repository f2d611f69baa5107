use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eventflow::blur::{apply_blur, apply_blur_adjoint, ExposureParams};
use eventflow::deblur::{deblur_step_sizes, prox_blur};
use eventflow::energy::{charbonnier, charbonnier_derivative, EventOperator};
use eventflow::flow_solver::step_sizes;
use eventflow::grid::{
    flow_grad, flow_grad_adjoint, grad, grad_adjoint, project_ball2, project_box, EdgeWeights, FlowField, ScalarGrid,
    VecGrid,
};
use eventflow::pipeline::init_flow;
use eventflow::synth::{blurred_translation, sharp_translation};

fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f64, hi: f64) -> ScalarGrid {
    ScalarGrid::new(w, h, (0..w * h).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn random_flow(rng: &mut ChaCha8Rng, w: usize, h: usize, amp: f64) -> FlowField {
    let data = (0..w * h).map(|_| [rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)]).collect();
    FlowField::new(w, h, data).unwrap()
}

fn basis(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

#[test]
fn gradient_adjoint_is_dense_transpose() {
    let (w, h) = (4, 4);
    let n = w * h;
    let mut forward = DMatrix::<f64>::zeros(2 * n, n);
    for j in 0..n {
        let g = grad(&ScalarGrid::new(w, h, basis(n, j)).unwrap());
        for (i, v) in g.values().iter().enumerate() {
            forward[(2 * i, j)] = v[0];
            forward[(2 * i + 1, j)] = v[1];
        }
    }
    let mut adjoint = DMatrix::<f64>::zeros(n, 2 * n);
    for j in 0..2 * n {
        let e = basis(2 * n, j);
        let v = VecGrid::<2>::new(w, h, e.chunks(2).map(|c| [c[0], c[1]]).collect()).unwrap();
        for (i, x) in grad_adjoint(&v).values().iter().enumerate() {
            adjoint[(i, j)] = *x;
        }
    }
    assert_eq!(forward.transpose(), adjoint);
}

fn flow_operator_norm_sq(u0: &FlowField, w: &EdgeWeights) -> f64 {
    let mut x = u0.clone();
    let mut estimate = 0.0;
    for _ in 0..300 {
        let n = x.norm();
        x = x.map(|v| [v[0] / n, v[1] / n]);
        let y = flow_grad_adjoint(&flow_grad(&x, w), w);
        estimate = x.dot(&y);
        x = y;
    }
    estimate
}

#[test]
fn flow_step_sizes_satisfy_norm_condition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let (w, h) = (rng.gen_range(4..16), rng.gen_range(4..16));
        let weights = EdgeWeights {
            wx: random_grid(&mut rng, w, h, 0.05, 3.0),
            wy: random_grid(&mut rng, w, h, 0.05, 3.0),
        };
        let (sigma, tau) = step_sizes(&weights);
        let norm_sq = flow_operator_norm_sq(&random_flow(&mut rng, w, h, 1.0), &weights);
        assert!(sigma * tau * norm_sq <= 1.0 + 1e-12, "στ‖K‖² = {}", sigma * tau * norm_sq);
    }
}

#[test]
fn deblur_step_sizes_satisfy_norm_condition() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let (w, h) = (rng.gen_range(4..16), rng.gen_range(4..16));
        let theta2 = random_grid(&mut rng, w, h, -0.5, 0.5);
        let u = random_flow(&mut rng, w, h, 3.0);
        let mu1 = rng.gen_range(0.0..5.0);
        let (gamma, eta) = deblur_step_sizes(&theta2, &u, mu1);
        let ke = EventOperator::new(&theta2, &u);
        let mut x = random_grid(&mut rng, w, h, -1.0, 1.0);
        let mut estimate = 0.0;
        for _ in 0..300 {
            let n = x.norm();
            x = x.map(|v| v / n);
            let mut y = grad_adjoint(&grad(&x));
            y.axpy(mu1 * mu1, &ke.adjoint(&ke.apply(&x)));
            estimate = x.dot(&y);
            x = y;
        }
        assert!(gamma * eta * estimate <= 1.0 + 1e-12, "γη‖K‖² = {}", gamma * eta * estimate);
    }
}

#[test]
fn prox_blur_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (w, h) = (6, 5);
    let n = w * h;
    let exp = ExposureParams::new(2.5, 1.0).unwrap();
    let u = random_flow(&mut rng, w, h, 1.5);
    let b = random_grid(&mut rng, w, h, 0.0, 1.0);
    let l_bar = random_grid(&mut rng, w, h, 0.0, 1.0);
    let (eta, mu2) = (0.3, 4.0);
    let alpha = 2.0 * eta * mu2;

    let mut a = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let col = apply_blur(&ScalarGrid::new(w, h, basis(n, j)).unwrap(), &u, &exp);
        for (i, v) in col.values().iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let m = DMatrix::<f64>::identity(n, n) + alpha * a.transpose() * &a;
    let rhs = alpha * a.transpose() * DVector::from_row_slice(b.values()) + DVector::from_row_slice(l_bar.values());
    let dense = m.lu().solve(&rhs).unwrap();

    let prox = prox_blur(&l_bar, &b, &u, &exp, eta, mu2, 4 * n);
    assert!(!prox.fallback);
    for (x, y) in prox.image.values().iter().zip(dense.iter()) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }

    let adj = apply_blur_adjoint(&b, &u, &exp);
    let dense_adj = a.transpose() * DVector::from_row_slice(b.values());
    for (x, y) in adj.values().iter().zip(dense_adj.iter()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn simulated_blur_matches_blur_model() {
    let scene = blurred_translation().render().unwrap();
    let model = apply_blur(&scene.gt_sharp, &scene.gt_flow, &scene.exposure);
    let (w, h) = model.dims();
    let mse = model
        .values()
        .iter()
        .zip(scene.blurred.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / (w * h) as f64;
    assert!(mse.sqrt() < 0.02, "rmse {}", mse.sqrt());
}

fn mean_angle_error_deg(est: &FlowField, gt: &FlowField) -> f64 {
    let sum = |f: &FlowField| {
        f.values()
            .iter()
            .fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]])
    };
    let a = sum(est);
    let b = sum(gt);
    let cos = (a[0] * b[0] + a[1] * b[1]) / ((a[0] * a[0] + a[1] * a[1]).sqrt() * (b[0] * b[0] + b[1] * b[1]).sqrt());
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

#[test]
fn initial_flow_points_along_motion() {
    for preset in [sharp_translation(), blurred_translation()] {
        let scene = preset.render().unwrap();
        let u0 = init_flow(&scene.stream, &preset.config);
        let angle = mean_angle_error_deg(&u0, &scene.gt_flow);
        assert!(angle < 20.0, "{}: {angle} degrees", preset.name);
    }
}

fn vec_grid2() -> impl Strategy<Value = VecGrid<2>> {
    (1usize..6, 1usize..6).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop::array::uniform2(-5.0f64..5.0), w * h)
            .prop_map(move |d| VecGrid::new(w, h, d).unwrap())
    })
}

fn vec_grid4() -> impl Strategy<Value = VecGrid<4>> {
    (1usize..6, 1usize..6).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop::array::uniform4(-5.0f64..5.0), w * h)
            .prop_map(move |d| VecGrid::new(w, h, d).unwrap())
    })
}

proptest! {
    #[test]
    fn ball_projection_lands_in_ball_and_is_idempotent(p in vec_grid2()) {
        let q = project_ball2(&p);
        for (a, b) in q.values().iter().zip(p.values()) {
            let na = (a[0] * a[0] + a[1] * a[1]).sqrt();
            let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
            prop_assert!(na <= 1.0 + 1e-12);
            if nb <= 1.0 {
                prop_assert_eq!(a, b);
            }
        }
        let qq = project_ball2(&q);
        for (a, b) in qq.values().iter().zip(q.values()) {
            prop_assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn box_projection_clamps_componentwise(p in vec_grid4()) {
        let q = project_box(&p);
        for (a, b) in q.values().iter().zip(p.values()) {
            for k in 0..4 {
                prop_assert_eq!(a[k], b[k].clamp(-1.0, 1.0));
            }
        }
    }

    #[test]
    fn charbonnier_is_close_to_abs(r in -100.0f64..100.0, eps in 1e-6f64..1.0) {
        let v = charbonnier(r, eps);
        prop_assert!(v <= r.abs() + 1e-12);
        prop_assert!(v >= r.abs() - eps - 1e-12);
        prop_assert!(v >= 0.0);
        prop_assert!(charbonnier_derivative(r, eps).abs() <= 1.0);
        prop_assert_eq!(charbonnier(-r, eps), v);
    }

    #[test]
    fn flow_grad_adjoint_identity(
        seed in any::<u64>(),
        w in 1usize..10,
        h in 1usize..10,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_flow(&mut rng, w, h, 2.0);
        let weights = EdgeWeights {
            wx: random_grid(&mut rng, w, h, 0.01, 2.0),
            wy: random_grid(&mut rng, w, h, 0.01, 2.0),
        };
        let p = flow_grad(&random_flow(&mut rng, w, h, 1.0), &weights);
        let lhs = flow_grad(&u, &weights).dot(&p);
        let rhs = u.dot(&flow_grad_adjoint(&p, &weights));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));
    }
}
