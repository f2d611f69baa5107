//! Classic Horn–Schunck flow between two frames, used to initialize the flow
//! from a pair of smoothed event frames.

use crate::grid::{FlowField, ScalarGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HornSchunckParams {
    /// Smoothness weight α².
    pub alpha_sq: f64,
    pub iterations: usize,
}

impl Default for HornSchunckParams {
    fn default() -> Self {
        Self {
            alpha_sq: 0.5,
            iterations: 200,
        }
    }
}

/// Central difference with replicate boundary (one-sided at the border).
fn central_dx(g: &ScalarGrid, x: usize, y: usize) -> f64 {
    let w = g.width();
    let xl = x.saturating_sub(1);
    let xr = (x + 1).min(w - 1);
    if xr == xl {
        return 0.0;
    }
    (g.get(xr, y) - g.get(xl, y)) / (xr - xl) as f64
}

fn central_dy(g: &ScalarGrid, x: usize, y: usize) -> f64 {
    let h = g.height();
    let yu = y.saturating_sub(1);
    let yd = (y + 1).min(h - 1);
    if yd == yu {
        return 0.0;
    }
    (g.get(x, yd) - g.get(x, yu)) / (yd - yu) as f64
}

/// Horn–Schunck neighbourhood average: 1/6 for edge neighbours, 1/12 for
/// diagonals, replicate boundary.
fn local_average(u: &[[f64; 2]], w: usize, h: usize, x: usize, y: usize) -> [f64; 2] {
    let at = |dx: isize, dy: isize| {
        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
        u[yy * w + xx]
    };
    let mut acc = [0.0; 2];
    for (dx, dy, wt) in [
        (-1, 0, 1.0 / 6.0),
        (1, 0, 1.0 / 6.0),
        (0, -1, 1.0 / 6.0),
        (0, 1, 1.0 / 6.0),
        (-1, -1, 1.0 / 12.0),
        (1, -1, 1.0 / 12.0),
        (-1, 1, 1.0 / 12.0),
        (1, 1, 1.0 / 12.0),
    ] {
        let v = at(dx, dy);
        acc[0] += wt * v[0];
        acc[1] += wt * v[1];
    }
    acc
}

/// Flow carrying `first` onto `second` via Jacobi iterations of the
/// Horn–Schunck Euler–Lagrange equations.
pub fn horn_schunck(first: &ScalarGrid, second: &ScalarGrid, params: &HornSchunckParams) -> FlowField {
    assert_eq!(first.dims(), second.dims(), "frame shape mismatch");
    let (w, h) = first.dims();
    let mut ix = vec![0.0; w * h];
    let mut iy = vec![0.0; w * h];
    let mut it = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            ix[i] = 0.5 * (central_dx(first, x, y) + central_dx(second, x, y));
            iy[i] = 0.5 * (central_dy(first, x, y) + central_dy(second, x, y));
            it[i] = second.get(x, y) - first.get(x, y);
        }
    }

    let mut u = vec![[0.0; 2]; w * h];
    let mut next = u.clone();
    for _ in 0..params.iterations {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let avg = local_average(&u, w, h, x, y);
                let num = ix[i] * avg[0] + iy[i] * avg[1] + it[i];
                let den = params.alpha_sq + ix[i] * ix[i] + iy[i] * iy[i];
                next[i] = [avg[0] - ix[i] * num / den, avg[1] - iy[i] * num / den];
            }
        }
        std::mem::swap(&mut u, &mut next);
    }
    FlowField::new(w, h, u).expect("Horn–Schunck iterates stay finite")
}
