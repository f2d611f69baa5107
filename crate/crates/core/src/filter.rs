use crate::grid::ScalarGrid;

/// Normalized 1-D Gaussian taps with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0);
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian smoothing with replicate boundary. `sigma <= 0` returns
/// the input unchanged.
pub fn gaussian_blur(g: &ScalarGrid, sigma: f64) -> ScalarGrid {
    if sigma <= 0.0 {
        return g.clone();
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let (w, h) = g.dims();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let horiz = ScalarGrid::from_fn(w, h, |x, y| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * g.get(clamp(x as isize + k as isize - r, w), y))
            .sum()
    });
    ScalarGrid::from_fn(w, h, |x, y| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * horiz.get(x, clamp(y as isize + k as isize - r, h)))
            .sum()
    })
}
