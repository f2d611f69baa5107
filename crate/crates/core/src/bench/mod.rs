//! Evaluation metrics, flow visualization and file formats.

mod color;
mod flo;
mod image_io;
mod metrics;

pub use color::{colorize_flow, flow_hue, RgbImage};
pub use flo::{read_flo, read_flo_from, write_flo, write_flo_to, FLO_MAGIC};
pub use image_io::{read_gray, write_gray_png, write_gray_pgm, write_rgb_png};
pub use metrics::{flow_metrics, psnr, write_metrics_csv, FlowMetrics, MetricsError, METRICS_CSV_HEADER};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoFormatError {
    #[error("bad .flo magic {0}")]
    BadMagic(f32),
    #[error("invalid dimensions {width}x{height}")]
    BadDimensions { width: i64, height: i64 },
    #[error("truncated file: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("non-finite value in field")]
    NonFinite,
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
