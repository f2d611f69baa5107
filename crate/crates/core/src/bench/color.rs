use crate::grid::FlowField;

/// Interleaved 8-bit RGB, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Direction of `(u, v)` as a hue in degrees, `[0, 360)`, counter-clockwise
/// from the +x axis in image coordinates.
pub fn flow_hue(u: f64, v: f64) -> f64 {
    let deg = v.atan2(u).to_degrees();
    if deg < 0.0 {
        deg + 360.0
    } else {
        deg
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h / 60.0) % 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn percentile_99(mut mags: Vec<f64>) -> f64 {
    mags.sort_by(f64::total_cmp);
    let idx = ((mags.len() as f64 - 1.0) * 0.99).round() as usize;
    mags[idx]
}

/// Color wheel rendering: hue encodes direction, saturation the magnitude
/// relative to `max_mag` (defaults to the 99th-percentile magnitude). Zero
/// flow is white.
pub fn colorize_flow(u: &FlowField, max_mag: Option<f64>) -> RgbImage {
    let mags: Vec<f64> = u.values().iter().map(|v| v[0].hypot(v[1])).collect();
    let scale = match max_mag {
        Some(m) if m > 0.0 => m,
        _ => {
            let p = percentile_99(mags.clone());
            if p > 0.0 {
                p
            } else {
                1.0
            }
        }
    };
    let mut data = Vec::with_capacity(3 * u.len());
    for (v, m) in u.values().iter().zip(&mags) {
        let s = (m / scale).min(1.0);
        let rgb = hsv_to_rgb(flow_hue(v[0], v[1]), s, 1.0);
        data.extend(rgb.iter().map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    RgbImage {
        width: u.width(),
        height: u.height(),
        data,
    }
}
