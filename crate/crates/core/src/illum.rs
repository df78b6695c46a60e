//! Ambient-illumination grids, their text file format, and a seeded
//! generator of synthetic night-light sequences.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const MAGIC: &str = "ILLUMGRID";
const VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid side {0} is too small (need at least 2)")]
    SideTooSmall(usize),
    #[error("expected {expected} grid values, got {actual}")]
    ValueCount { expected: usize, actual: usize },
    #[error("grid value {value} at index {index} is negative or not finite")]
    InvalidValue { index: usize, value: f64 },
    #[error("query ({v}, {w}) lies outside the grid footprint")]
    OutOfBounds { v: f64, w: f64 },
    #[error("sequence must contain at least one frame")]
    EmptySequence,
    #[error("frame {0} does not share the geometry of frame 0")]
    GeometryMismatch(usize),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: negative value {value}")]
    NegativeValue { line: usize, value: f64 },
    #[error("line {line}: cannot parse `{token}` as a finite number")]
    BadNumber { line: usize, token: String },
    #[error("payload truncated: expected {expected} data lines, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unexpected data after line {0}")]
    TrailingData(usize),
    #[error("invalid synthetic configuration: {0}")]
    InvalidSynth(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Square field of ambient illumination, row-major. Column index runs
/// along the `v` (x) axis, row index along `w` (y).
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationGrid {
    side: usize,
    values: Vec<f64>,
    cell_size: f64,
    origin: (f64, f64),
}

impl IlluminationGrid {
    pub fn new(side: usize, values: Vec<f64>, cell_size: f64, origin: (f64, f64)) -> Result<Self, GridError> {
        if side < 2 {
            return Err(GridError::SideTooSmall(side));
        }
        if values.len() != side * side {
            return Err(GridError::ValueCount { expected: side * side, actual: values.len() });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(GridError::InvalidValue { index, value });
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(GridError::InvalidSynth(format!("cell size {cell_size} must be positive")));
        }
        Ok(Self { side, values, cell_size, origin })
    }

    pub fn uniform(side: usize, value: f64, cell_size: f64) -> Result<Self, GridError> {
        Self::new(side, vec![value; side * side], cell_size, (0.0, 0.0))
    }

    /// Grid with the given geometry and every cell zero.
    pub fn zeros_like(other: &Self) -> Self {
        Self { values: vec![0.0; other.values.len()], ..other.clone() }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Edge length of the square footprint in metres.
    pub fn extent(&self) -> f64 {
        self.side as f64 * self.cell_size
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.side + col]
    }

    /// Same geometry, values multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.side == other.side && self.cell_size == other.cell_size && self.origin == other.origin
    }

    /// Cell indices `(row, col)` containing the point; the far edge belongs
    /// to the last cell.
    pub fn cell_of(&self, v: f64, w: f64) -> Result<(usize, usize), GridError> {
        let col = self.axis_index(v - self.origin.0);
        let row = self.axis_index(w - self.origin.1);
        match (row, col) {
            (Some(r), Some(c)) => Ok((r, c)),
            _ => Err(GridError::OutOfBounds { v, w }),
        }
    }

    fn axis_index(&self, offset: f64) -> Option<usize> {
        if !(offset >= 0.0 && offset <= self.extent()) {
            return None;
        }
        Some(((offset / self.cell_size).floor() as usize).min(self.side - 1))
    }

    /// Nearest-cell lookup of the ambient illumination at `(v, w)`.
    pub fn sample(&self, v: f64, w: f64) -> Result<f64, GridError> {
        let (r, c) = self.cell_of(v, w)?;
        Ok(self.get(r, c))
    }

    /// Centre of cell `(row, col)` in metres.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin.0 + (col as f64 + 0.5) * self.cell_size,
            self.origin.1 + (row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Mean squared difference per cell.
    pub fn mse(&self, other: &Self) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "grid shapes differ");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.values.len() as f64
    }
}

/// Time-ordered illumination frames sharing one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSequence {
    frames: Vec<IlluminationGrid>,
    /// Minutes between consecutive frames.
    pub dt: f64,
}

impl GridSequence {
    pub fn new(frames: Vec<IlluminationGrid>, dt: f64) -> Result<Self, GridError> {
        let first = frames.first().ok_or(GridError::EmptySequence)?;
        if let Some(bad) = frames.iter().position(|f| !f.same_geometry(first)) {
            return Err(GridError::GeometryMismatch(bad));
        }
        Ok(Self { frames, dt })
    }

    pub fn frames(&self) -> &[IlluminationGrid] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn side(&self) -> usize {
        self.frames[0].side
    }

    pub fn cell_size(&self) -> f64 {
        self.frames[0].cell_size
    }

    /// Contiguous sub-sequence `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self, GridError> {
        if len == 0 || start + len > self.frames.len() {
            return Err(GridError::EmptySequence);
        }
        Self::new(self.frames[start..start + len].to_vec(), self.dt)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            frames: self.frames.iter().map(|f| f.scaled(factor)).collect(),
            dt: self.dt,
        }
    }

    /// Text encoding; see [`parse_grid_sequence`] for the layout.
    pub fn to_text(&self) -> String {
        let side = self.side();
        let mut out = format!(
            "{MAGIC} {VERSION} {side} {} {} {}\n",
            self.frames.len(),
            self.cell_size(),
            self.dt
        );
        for frame in &self.frames {
            for row in frame.values.chunks(side) {
                for (k, v) in row.iter().enumerate() {
                    if k > 0 {
                        out.push(' ');
                    }
                    // LowerExp prints the shortest digits that round-trip.
                    write!(out, "{v:e}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Parses the grid-sequence text format:
///
/// ```text
/// ILLUMGRID v1 <side> <frames> <cell_size_m> <dt_min>
/// <side floats>            # frames × side lines, row-major, frame-major
/// ```
///
/// The loaded grids have their origin at `(0, 0)`.
pub fn parse_grid_sequence(text: &str) -> Result<GridSequence, GridError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| GridError::MalformedHeader("empty file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != MAGIC || fields[1] != VERSION {
        return Err(GridError::MalformedHeader(header.to_string()));
    }
    let bad = |what: &str| GridError::MalformedHeader(format!("invalid {what} in `{header}`"));
    let side: usize = fields[2].parse().map_err(|_| bad("side"))?;
    let n_frames: usize = fields[3].parse().map_err(|_| bad("frame count"))?;
    let cell_size: f64 = fields[4].parse().map_err(|_| bad("cell size"))?;
    let dt: f64 = fields[5].parse().map_err(|_| bad("time step"))?;
    if side < 2 || n_frames == 0 || !(cell_size.is_finite() && cell_size > 0.0) || !(dt.is_finite() && dt > 0.0) {
        return Err(bad("dimensions"));
    }

    let expected_lines = n_frames * side;
    let mut frames = Vec::with_capacity(n_frames);
    let mut values = Vec::with_capacity(side * side);
    let mut found = 0;
    for (idx, line) in lines.by_ref().take(expected_lines) {
        let line_no = idx + 1;
        let mut count = 0;
        for token in line.split_whitespace() {
            let value: f64 = token
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| GridError::BadNumber { line: line_no, token: token.to_string() })?;
            if value < 0.0 {
                return Err(GridError::NegativeValue { line: line_no, value });
            }
            values.push(value);
            count += 1;
        }
        if count != side {
            return Err(GridError::DimensionMismatch { line: line_no, expected: side, found: count });
        }
        found += 1;
        if values.len() == side * side {
            frames.push(IlluminationGrid::new(side, std::mem::take(&mut values), cell_size, (0.0, 0.0))?);
        }
    }
    if found < expected_lines {
        return Err(GridError::Truncated { expected: expected_lines, found });
    }
    if let Some((idx, _)) = lines.next() {
        return Err(GridError::TrailingData(idx));
    }
    GridSequence::new(frames, dt)
}

pub fn load_grid_sequence(path: impl AsRef<Path>) -> Result<GridSequence, GridError> {
    parse_grid_sequence(&fs::read_to_string(path)?)
}

pub fn save_grid_sequence(seq: &GridSequence, path: impl AsRef<Path>) -> Result<(), GridError> {
    fs::write(path, seq.to_text())?;
    Ok(())
}

/// Knobs of the synthetic night-light generator. Lengths in metres, times
/// in minutes, blob widths in cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub side: usize,
    pub frames: usize,
    pub cell_size: f64,
    pub dt: f64,
    /// Uniform floor added to every cell.
    pub background: f64,
    pub static_blobs: usize,
    pub drifting_blobs: usize,
    pub pulsing_blobs: usize,
    /// Peak amplitude range (raw units).
    pub amplitude: (f64, f64),
    /// Gaussian standard deviation range, in cells.
    pub sigma_cells: (f64, f64),
    /// Drift speed range, m/min.
    pub speed: (f64, f64),
    /// Fixed drift heading in degrees; random per blob when `None`.
    pub heading: Option<f64>,
    /// Pulsation period range, minutes.
    pub period: (f64, f64),
    /// Relative pulsation depth in `[0, 1]`.
    pub depth: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            side: 32,
            frames: 12,
            cell_size: 2.5,
            dt: 10.0,
            background: 0.05,
            static_blobs: 2,
            drifting_blobs: 2,
            pulsing_blobs: 2,
            amplitude: (0.3, 1.0),
            sigma_cells: (1.5, 3.0),
            speed: (0.1, 0.25),
            heading: None,
            period: (40.0, 80.0),
            depth: 0.8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), GridError> {
        let fail = |msg: String| Err(GridError::InvalidSynth(msg));
        if self.side < 2 {
            return fail(format!("side {} < 2", self.side));
        }
        if self.frames == 0 {
            return fail("frames must be >= 1".into());
        }
        for (name, v) in [("cell_size", self.cell_size), ("dt", self.dt)] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} = {v} must be positive"));
            }
        }
        if !(self.background.is_finite() && self.background >= 0.0) {
            return fail(format!("background = {} must be >= 0", self.background));
        }
        for (name, (lo, hi), min) in [
            ("amplitude", self.amplitude, 0.0),
            ("sigma_cells", self.sigma_cells, f64::MIN_POSITIVE),
            ("speed", self.speed, 0.0),
            ("period", self.period, f64::MIN_POSITIVE),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo >= min && hi >= lo) {
                return fail(format!("{name} range ({lo}, {hi}) is invalid"));
            }
        }
        if !(0.0..=1.0).contains(&self.depth) {
            return fail(format!("depth = {} outside [0, 1]", self.depth));
        }
        Ok(())
    }

    /// Upper bound on any cell value of any generated frame.
    pub fn peak_bound(&self) -> f64 {
        let n = (self.static_blobs + self.drifting_blobs + self.pulsing_blobs) as f64;
        self.background + n * self.amplitude.1 * (1.0 + self.depth)
    }
}

#[derive(Debug, Clone, Copy)]
enum Motion {
    Static,
    Drifting { vx: f64, vy: f64 },
    Pulsing { period: f64, phase: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    x: f64,
    y: f64,
    amplitude: f64,
    sigma: f64,
    motion: Motion,
}

/// Reflects `u` into `[0, len]` as if bouncing between the walls.
fn reflect(u: f64, len: f64) -> f64 {
    let m = u.rem_euclid(2.0 * len);
    if m > len {
        2.0 * len - m
    } else {
        m
    }
}

impl Blob {
    fn state_at(&self, t: f64, extent: f64, depth: f64) -> (f64, f64, f64) {
        match self.motion {
            Motion::Static => (self.x, self.y, self.amplitude),
            Motion::Drifting { vx, vy } => (
                reflect(self.x + vx * t, extent),
                reflect(self.y + vy * t, extent),
                self.amplitude,
            ),
            Motion::Pulsing { period, phase } => {
                let s = (2.0 * std::f64::consts::PI * t / period + phase).sin();
                (self.x, self.y, self.amplitude * (1.0 + depth * s))
            }
        }
    }
}

/// Generates a deterministic sequence of Gaussian light blobs: static
/// sources, drifting sources bouncing inside the area (traffic), and
/// sources pulsing sinusoidally in intensity (commercial areas).
pub fn synth_sequence(seed: u64, config: &SynthConfig) -> Result<GridSequence, GridError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = config.side as f64 * config.cell_size;
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };

    let kinds = std::iter::repeat(0)
        .take(config.static_blobs)
        .chain(std::iter::repeat(1).take(config.drifting_blobs))
        .chain(std::iter::repeat(2).take(config.pulsing_blobs));
    let mut blobs = Vec::new();
    for kind in kinds {
        let x = rng.gen_range(0.0..extent);
        let y = rng.gen_range(0.0..extent);
        let amplitude = uniform(&mut rng, config.amplitude);
        let sigma = uniform(&mut rng, config.sigma_cells) * config.cell_size;
        let motion = match kind {
            0 => Motion::Static,
            1 => {
                let speed = uniform(&mut rng, config.speed);
                let heading = match config.heading {
                    Some(h) => h.to_radians(),
                    None => rng.gen_range(0.0..std::f64::consts::TAU),
                };
                Motion::Drifting { vx: speed * heading.cos(), vy: speed * heading.sin() }
            }
            _ => Motion::Pulsing {
                period: uniform(&mut rng, config.period),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
            },
        };
        blobs.push(Blob { x, y, amplitude, sigma, motion });
    }
    render(&blobs, config)
}

fn render(blobs: &[Blob], config: &SynthConfig) -> Result<GridSequence, GridError> {
    let side = config.side;
    let extent = side as f64 * config.cell_size;
    let mut frames = Vec::with_capacity(config.frames);
    for k in 0..config.frames {
        let t = k as f64 * config.dt;
        let states: Vec<_> = blobs
            .iter()
            .map(|b| (b.state_at(t, extent, config.depth), b.sigma))
            .collect();
        let mut values = vec![config.background; side * side];
        for row in 0..side {
            let cy = (row as f64 + 0.5) * config.cell_size;
            for col in 0..side {
                let cx = (col as f64 + 0.5) * config.cell_size;
                let cell = &mut values[row * side + col];
                for &((bx, by, amp), sigma) in &states {
                    let r2 = (cx - bx).powi(2) + (cy - by).powi(2);
                    *cell += amp * (-r2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
        frames.push(IlluminationGrid::new(side, values, config.cell_size, (0.0, 0.0))?);
    }
    GridSequence::new(frames, config.dt)
}
