use std::io::Write;

use thiserror::Error;

use crate::grid::{FlowField, ScalarGrid};

pub const METRICS_CSV_HEADER: &str = "aee,mse,fe,psnr";

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("valid mask selects no pixels")]
    EmptyMask,
}

/// Flow accuracy over the valid pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMetrics {
    /// Average endpoint error, px.
    pub aee: f64,
    /// Mean of `Δu² + Δv²`, px².
    pub mse: f64,
    /// Fraction of pixels with endpoint error above 3 px and 5% of `‖gt‖`.
    pub fe: f64,
    pub valid: usize,
}

/// Sums run sequentially in row-major order so results are reproducible bit
/// for bit.
pub fn flow_metrics(est: &FlowField, gt: &FlowField, valid_mask: Option<&[bool]>) -> Result<FlowMetrics, MetricsError> {
    if est.dims() != gt.dims() {
        return Err(MetricsError::ShapeMismatch(est.dims(), gt.dims()));
    }
    if let Some(m) = valid_mask {
        assert_eq!(m.len(), est.len(), "mask length mismatch");
    }
    let mut n = 0usize;
    let mut ee_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut bad = 0usize;
    for (i, (e, g)) in est.values().iter().zip(gt.values()).enumerate() {
        if valid_mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let du = e[0] - g[0];
        let dv = e[1] - g[1];
        let sq = du * du + dv * dv;
        let ee = sq.sqrt();
        ee_sum += ee;
        sq_sum += sq;
        if ee > 3.0 && ee > 0.05 * (g[0] * g[0] + g[1] * g[1]).sqrt() {
            bad += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    Ok(FlowMetrics {
        aee: ee_sum / n as f64,
        mse: sq_sum / n as f64,
        fe: bad as f64 / n as f64,
        valid: n,
    })
}

/// `10·log10(1/MSE)` for images in `[0, 1]`; identical images give `+∞`.
pub fn psnr(a: &ScalarGrid, b: &ScalarGrid) -> f64 {
    assert_eq!(a.dims(), b.dims(), "image shape mismatch");
    let mut acc = 0.0;
    for (x, y) in a.values().iter().zip(b.values()) {
        let d = x - y;
        acc += d * d;
    }
    let mse = acc / a.len() as f64;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    -10.0 * mse.log10()
}

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Writes the header and one row. `psnr` is optional and left empty when absent.
pub fn write_metrics_csv<W: Write>(mut w: W, m: &FlowMetrics, psnr: Option<f64>) -> std::io::Result<()> {
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    writeln!(
        w,
        "{},{},{},{}",
        fmt_value(m.aee),
        fmt_value(m.mse),
        fmt_value(m.fe),
        psnr.map(fmt_value).unwrap_or_default()
    )
}
