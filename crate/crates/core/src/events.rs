//! Event streams: text parsing, windowed polarity integration and the
//! exponential intensity propagation that links two instants through the
//! events fired between them.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::grid::ScalarGrid;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: pixel ({x}, {y}) outside {width}x{height} sensor")]
    OutOfBounds {
        line: usize,
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },
    #[error("contrast threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sign of a brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Negative => -1.0,
            Polarity::Positive => 1.0,
        }
    }

    /// On-disk bit: 0 for negative, 1 for positive.
    #[inline]
    pub fn bit(self) -> u8 {
        match self {
            Polarity::Negative => 0,
            Polarity::Positive => 1,
        }
    }
}

/// One asynchronous brightness-change report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    /// Seconds.
    pub t: f64,
    pub x: u32,
    pub y: u32,
    pub polarity: Polarity,
}

/// Time-sorted events from one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    width: usize,
    height: usize,
    /// Latent-image reference time `f`, seconds.
    pub reference_time: f64,
    /// Exposure interval of the intensity frame, seconds.
    pub exposure: Option<(f64, f64)>,
}

impl EventStream {
    /// Builds a stream, stably sorting events by timestamp. Panics if an event
    /// lies outside the sensor.
    pub fn new(mut events: Vec<Event>, width: usize, height: usize) -> Self {
        for e in &events {
            assert!(
                (e.x as usize) < width && (e.y as usize) < height,
                "event ({}, {}) outside {}x{} sensor",
                e.x,
                e.y,
                width,
                height
            );
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Self {
            events,
            width,
            height,
            reference_time: 0.0,
            exposure: None,
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::new(Vec::new(), width, height)
    }

    pub fn with_reference_time(mut self, f: f64) -> Self {
        self.reference_time = f;
        self
    }

    pub fn with_exposure(mut self, start: f64, end: f64) -> Self {
        self.exposure = Some((start, end));
        self
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// First and last timestamp, if any.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.events.first()?.t, self.events.last()?.t))
    }

    /// Events with timestamp in the half-open window `(from, to]`.
    pub fn window(&self, from: f64, to: f64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t <= from);
        let hi = self.events.partition_point(|e| e.t <= to);
        &self.events[lo..hi.max(lo)]
    }

    /// Reads the `t x y p` text format (seconds, integer pixel, `p ∈ {0, 1}`).
    /// Blank lines and lines starting with `#` are skipped.
    pub fn read_text<R: Read>(reader: R, width: usize, height: usize) -> Result<Self, EventError> {
        let mut events = Vec::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            events.push(parse_line(trimmed, lineno, width, height)?);
        }
        Ok(Self::new(events, width, height))
    }

    pub fn load(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Self, EventError> {
        let file = std::fs::File::open(path)?;
        Self::read_text(file, width, height)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut buf = String::with_capacity(self.events.len() * 24);
        for e in &self.events {
            let _ = writeln!(buf, "{:.9} {} {} {}", e.t, e.x, e.y, e.polarity.bit());
        }
        w.write_all(buf.as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_text(&mut w)?;
        w.flush()
    }
}

fn parse_line(line: &str, lineno: usize, width: usize, height: usize) -> Result<Event, EventError> {
    let err = |message: String| EventError::Parse {
        line: lineno,
        message,
    };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(err(format!("expected 4 fields `t x y p`, got {}", fields.len())));
    }
    let t: f64 = fields[0]
        .parse()
        .map_err(|_| err(format!("bad timestamp `{}`", fields[0])))?;
    if !t.is_finite() {
        return Err(err(format!("non-finite timestamp `{}`", fields[0])));
    }
    let x: i64 = fields[1]
        .parse()
        .map_err(|_| err(format!("bad x coordinate `{}`", fields[1])))?;
    let y: i64 = fields[2]
        .parse()
        .map_err(|_| err(format!("bad y coordinate `{}`", fields[2])))?;
    let polarity = match fields[3] {
        "0" => Polarity::Negative,
        "1" => Polarity::Positive,
        other => return Err(err(format!("polarity must be 0 or 1, got `{other}`"))),
    };
    if x < 0 || y < 0 || x as usize >= width || y as usize >= height {
        return Err(EventError::OutOfBounds {
            line: lineno,
            x,
            y,
            width,
            height,
        });
    }
    Ok(Event {
        t,
        x: x as u32,
        y: y as u32,
        polarity,
    })
}

/// Positive contrast threshold in log-intensity units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(c: f64) -> Result<Self, EventError> {
        if c > 0.0 && c.is_finite() {
            Ok(Self(c))
        } else {
            Err(EventError::InvalidThreshold(c))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Signed per-pixel event count over a time window.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFrame {
    pub counts: ScalarGrid,
    pub window: (f64, f64),
}

/// Sums polarities over `(f, t]`. For `t < f` the window is integrated
/// backwards, so `integrate(s, f, t) == -integrate(s, t, f)`.
pub fn integrate(stream: &EventStream, f: f64, t: f64) -> EventFrame {
    let (w, h) = (stream.width, stream.height);
    let mut counts = ScalarGrid::zeros(w, h);
    let (lo, hi, sign) = if t >= f { (f, t, 1.0) } else { (t, f, -1.0) };
    let data = counts.values_mut();
    // Integer sums are exact in f64, so accumulation order is irrelevant.
    for e in stream.window(lo, hi) {
        data[e.y as usize * w + e.x as usize] += sign * e.polarity.sign();
    }
    EventFrame {
        counts,
        window: (f, t),
    }
}

/// Intensity at the far end of the frame's window: `L_f · exp(c·E)`.
pub fn edi_propagate(l_f: &ScalarGrid, e: &EventFrame, c: Threshold) -> ScalarGrid {
    let c = c.value();
    l_f.zip_map(&e.counts, |l, n| l * (c * n).exp())
}

/// Event weight factor `exp(c·E) − 1`.
pub fn theta2(e: &EventFrame, c: Threshold) -> ScalarGrid {
    let c = c.value();
    e.counts.map(|n| (c * n).exp_m1())
}
