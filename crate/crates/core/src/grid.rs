//! Dense pixel grids, forward-difference operators and their exact adjoints,
//! and the dual-ball projections used by both primal–dual solvers.
//!
//! Every gradient uses forward differences with a replicate (Neumann)
//! boundary: the difference across the last column (row) is zero. Adjoints
//! are derived algebraically from that stencil so `<Ax, y> == <x, A*y>`
//! holds to rounding error.

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid {width}x{height} needs {expected} values, got {actual}")]
    LengthMismatch {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("grid dimensions must be non-zero")]
    Empty,
}

/// Sums per-row partial results in row order. Row partials may be computed in
/// parallel; the final reduction order is fixed, so results are identical
/// across runs and thread counts.
pub(crate) fn row_ordered_sum<F>(height: usize, row_sum: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let partials: Vec<f64> = (0..height).into_par_iter().map(row_sum).collect();
    partials.iter().sum()
}

/// H×W real-valued image stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::Empty);
        }
        if data.len() != width * height {
            return Err(GridError::LengthMismatch {
                width,
                height,
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be non-zero");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be non-zero");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bilinear sample at a real-valued position; coordinates outside the grid
    /// are clamped (replicate boundary).
    pub fn sample_bilinear(&self, px: f64, py: f64) -> f64 {
        let s = BilinearTap::new(px, py, self.width, self.height);
        s.weights
            .iter()
            .zip(s.indices.iter())
            .map(|(w, &i)| w * self.data[i])
            .sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        self.assert_same_shape(other.dims());
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        self.assert_same_shape(other.dims());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.assert_same_shape(other.dims());
        let w = self.width;
        row_ordered_sum(self.height, |y| {
            let r = y * w..(y + 1) * w;
            self.data[r.clone()]
                .iter()
                .zip(&other.data[r])
                .map(|(a, b)| a * b)
                .sum()
        })
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn sum(&self) -> f64 {
        let w = self.width;
        row_ordered_sum(self.height, |y| self.data[y * w..(y + 1) * w].iter().sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    pub(crate) fn assert_same_shape(&self, dims: (usize, usize)) {
        assert_eq!(self.dims(), dims, "grid shape mismatch");
    }
}

/// Four-tap bilinear stencil with replicate boundary. Weights always sum to 1.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BilinearTap {
    pub indices: [usize; 4],
    pub weights: [f64; 4],
}

impl BilinearTap {
    #[inline]
    pub fn new(px: f64, py: f64, width: usize, height: usize) -> Self {
        let px = px.clamp(0.0, (width - 1) as f64);
        let py = py.clamp(0.0, (height - 1) as f64);
        let x0 = px.floor() as usize;
        let y0 = py.floor() as usize;
        let x1 = (x0 + 1).min(width - 1);
        let y1 = (y0 + 1).min(height - 1);
        let fx = px - x0 as f64;
        let fy = py - y0 as f64;
        Self {
            indices: [
                y0 * width + x0,
                y0 * width + x1,
                y1 * width + x0,
                y1 * width + x1,
            ],
            weights: [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
        }
    }
}

/// H×W grid of K-vectors (K = 2 for image gradients and flow, K = 4 for flow
/// gradients and the flow dual variable).
#[derive(Debug, Clone, PartialEq)]
pub struct VecGrid<const K: usize> {
    width: usize,
    height: usize,
    data: Vec<[f64; K]>,
}

/// Dense optical flow field, `(u, v)` per pixel in pixels per flow window.
pub type FlowField = VecGrid<2>;

impl<const K: usize> VecGrid<K> {
    pub fn new(width: usize, height: usize, data: Vec<[f64; K]>) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::Empty);
        }
        if data.len() != width * height {
            return Err(GridError::LengthMismatch {
                width,
                height,
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; K])
    }

    pub fn filled(width: usize, height: usize, value: [f64; K]) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be non-zero");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; K]) -> Self {
        assert!(width > 0 && height > 0, "grid dimensions must be non-zero");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; K] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f64; K]) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn values(&self) -> &[[f64; K]] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [[f64; K]] {
        &mut self.data
    }

    /// One component as a scalar grid.
    pub fn component(&self, k: usize) -> ScalarGrid {
        assert!(k < K);
        ScalarGrid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v[k]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }

    pub fn map(&self, f: impl Fn([f64; K]) -> [f64; K]) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        assert_eq!(self.dims(), other.dims(), "grid shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for k in 0..K {
                a[k] += alpha * b[k];
            }
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.dims(), other.dims(), "grid shape mismatch");
        let w = self.width;
        row_ordered_sum(self.height, |y| {
            let r = y * w..(y + 1) * w;
            self.data[r.clone()]
                .iter()
                .zip(&other.data[r])
                .map(|(a, b)| (0..K).map(|k| a[k] * b[k]).sum::<f64>())
                .sum()
        })
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Largest per-pixel Euclidean norm.
    pub fn max_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest absolute value of component `k`.
    pub fn max_abs_component(&self, k: usize) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v[k].abs()))
    }
}

/// Per-pixel positive edge weights applied to the flow gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeights {
    pub wx: ScalarGrid,
    pub wy: ScalarGrid,
}

impl EdgeWeights {
    pub fn uniform(width: usize, height: usize, value: f64) -> Self {
        Self {
            wx: ScalarGrid::filled(width, height, value),
            wy: ScalarGrid::filled(width, height, value),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.wx.dims()
    }

    pub fn max_weight(&self) -> f64 {
        self.wx.max_abs().max(self.wy.max_abs())
    }
}

/// Forward-difference gradient `(dx, dy)`; the last column's x-difference and
/// the last row's y-difference are zero.
pub fn grad(g: &ScalarGrid) -> VecGrid<2> {
    let (w, h) = g.dims();
    let mut out = vec![[0.0; 2]; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let c = g.data[y * w + x];
            if x + 1 < w {
                o[0] = g.data[y * w + x + 1] - c;
            }
            if y + 1 < h {
                o[1] = g.data[(y + 1) * w + x] - c;
            }
        }
    });
    VecGrid {
        width: w,
        height: h,
        data: out,
    }
}

/// Exact adjoint of [`grad`]: the negative backward-difference divergence.
pub fn grad_adjoint(v: &VecGrid<2>) -> ScalarGrid {
    let (w, h) = v.dims();
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let i = y * w + x;
            let mut acc = 0.0;
            if x + 1 < w {
                acc -= v.data[i][0];
            }
            if x >= 1 {
                acc += v.data[i - 1][0];
            }
            if y + 1 < h {
                acc -= v.data[i][1];
            }
            if y >= 1 {
                acc += v.data[i - w][1];
            }
            *o = acc;
        }
    });
    ScalarGrid {
        width: w,
        height: h,
        data: out,
    }
}

/// Weighted flow gradient `K u = w ∇u`: per pixel
/// `(wx·∂x u, wy·∂y u, wx·∂x v, wy·∂y v)`.
pub fn flow_grad(u: &FlowField, w: &EdgeWeights) -> VecGrid<4> {
    assert_eq!(u.dims(), w.dims(), "flow / weight shape mismatch");
    let (width, height) = u.dims();
    let mut out = vec![[0.0; 4]; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let i = y * width + x;
            let c = u.data[i];
            let (wx, wy) = (w.wx.data[i], w.wy.data[i]);
            if x + 1 < width {
                let r = u.data[i + 1];
                o[0] = wx * (r[0] - c[0]);
                o[2] = wx * (r[1] - c[1]);
            }
            if y + 1 < height {
                let d = u.data[i + width];
                o[1] = wy * (d[0] - c[0]);
                o[3] = wy * (d[1] - c[1]);
            }
        }
    });
    VecGrid {
        width,
        height,
        data: out,
    }
}

/// Exact adjoint of [`flow_grad`].
pub fn flow_grad_adjoint(p: &VecGrid<4>, w: &EdgeWeights) -> FlowField {
    assert_eq!(p.dims(), w.dims(), "dual / weight shape mismatch");
    let (width, height) = p.dims();
    let wx = w.wx.values();
    let wy = w.wy.values();
    let mut out = vec![[0.0; 2]; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let i = y * width + x;
            let mut acc = [0.0; 2];
            if x + 1 < width {
                acc[0] -= wx[i] * p.data[i][0];
                acc[1] -= wx[i] * p.data[i][2];
            }
            if x >= 1 {
                acc[0] += wx[i - 1] * p.data[i - 1][0];
                acc[1] += wx[i - 1] * p.data[i - 1][2];
            }
            if y + 1 < height {
                acc[0] -= wy[i] * p.data[i][1];
                acc[1] -= wy[i] * p.data[i][3];
            }
            if y >= 1 {
                acc[0] += wy[i - width] * p.data[i - width][1];
                acc[1] += wy[i - width] * p.data[i - width][3];
            }
            *o = acc;
        }
    });
    VecGrid {
        width,
        height,
        data: out,
    }
}

/// Per-pixel projection onto the Euclidean unit ball: `p / max(1, ‖p‖₂)`.
pub fn project_ball2<const K: usize>(p: &VecGrid<K>) -> VecGrid<K> {
    p.map(|v| {
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        let s = 1.0 / n.max(1.0);
        let mut o = v;
        for c in o.iter_mut() {
            *c *= s;
        }
        o
    })
}

/// Componentwise clamp to `[-1, 1]`, i.e. `p / max(1, |p|)`.
pub fn project_box<const K: usize>(p: &VecGrid<K>) -> VecGrid<K> {
    p.map(|v| v.map(|c| c / c.abs().max(1.0)))
}

/// Scalar-grid variant of [`project_box`].
pub fn project_box_scalar(p: &ScalarGrid) -> ScalarGrid {
    p.map(|c| c / c.abs().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scalar(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ScalarGrid {
        ScalarGrid::new(w, h, (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_vec<const K: usize>(rng: &mut ChaCha8Rng, w: usize, h: usize) -> VecGrid<K> {
        let data = (0..w * h)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
            .collect();
        VecGrid::new(w, h, data).unwrap()
    }

    #[test]
    fn constructor_validates_length_and_finiteness() {
        assert!(matches!(
            ScalarGrid::new(2, 2, vec![0.0; 3]),
            Err(GridError::LengthMismatch { .. })
        ));
        assert_eq!(
            ScalarGrid::new(2, 1, vec![0.0, f64::NAN]),
            Err(GridError::NonFinite(1))
        );
        assert_eq!(ScalarGrid::new(0, 1, vec![]), Err(GridError::Empty));
    }

    #[test]
    fn grad_of_constant_is_zero() {
        let g = ScalarGrid::filled(5, 4, 0.7);
        assert!(grad(&g).values().iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn grad_forward_difference_with_zero_boundary() {
        let g = ScalarGrid::new(3, 1, vec![0.0, 1.0, 3.0]).unwrap();
        let d = grad(&g);
        let dx: Vec<f64> = d.values().iter().map(|v| v[0]).collect();
        assert_eq!(dx, vec![1.0, 2.0, 0.0]);
        assert!(d.values().iter().all(|v| v[1] == 0.0));
    }

    #[test]
    fn grad_adjoint_of_zero_is_zero() {
        let v = VecGrid::<2>::zeros(4, 3);
        assert!(grad_adjoint(&v).values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn grad_adjoint_identity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(w, h) in &[(8, 8), (5, 7), (1, 6), (6, 1)] {
            let g = random_scalar(&mut rng, w, h);
            let v = random_vec::<2>(&mut rng, w, h);
            let lhs = grad(&g).dot(&v);
            let rhs = g.dot(&grad_adjoint(&v));
            assert!((lhs - rhs).abs() / (g.norm() * v.norm()) < 1e-12);
        }
    }

    #[test]
    fn flow_grad_unit_weights_is_componentwise_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_vec::<2>(&mut rng, 6, 5);
        let k = flow_grad(&u, &EdgeWeights::uniform(6, 5, 1.0));
        let gu = grad(&u.component(0));
        let gv = grad(&u.component(1));
        for i in 0..u.len() {
            let a = k.values()[i];
            assert_eq!(a, [gu.values()[i][0], gu.values()[i][1], gv.values()[i][0], gv.values()[i][1]]);
        }
    }

    #[test]
    fn flow_grad_of_constant_flow_is_zero() {
        let u = FlowField::filled(4, 4, [1.5, -2.0]);
        let k = flow_grad(&u, &EdgeWeights::uniform(4, 4, 3.0));
        assert!(k.values().iter().all(|v| *v == [0.0; 4]));
    }

    #[test]
    fn projections_examples() {
        let p = VecGrid::new(2, 1, vec![[0.3, 0.1, 0.0, 0.0], [3.0, 4.0, 0.0, 0.0]]).unwrap();
        let q = project_ball2(&p);
        assert_eq!(q.values()[0], [0.3, 0.1, 0.0, 0.0]);
        assert!((q.values()[1][0] - 0.6).abs() < 1e-15);
        assert!((q.values()[1][1] - 0.8).abs() < 1e-15);

        let b = ScalarGrid::new(3, 1, vec![0.5, -2.0, 7.0]).unwrap();
        assert_eq!(project_box_scalar(&b).values(), &[0.5, -1.0, 1.0]);
    }

    #[test]
    fn bilinear_sample_replicates_boundary() {
        let g = ScalarGrid::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.sample_bilinear(0.5, 0.0), 0.5);
        assert_eq!(g.sample_bilinear(-3.0, -1.0), 0.0);
        assert_eq!(g.sample_bilinear(5.0, 5.0), 3.0);
        assert!((g.sample_bilinear(0.5, 0.5) - 1.5).abs() < 1e-15);
    }
}
