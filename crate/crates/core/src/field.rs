//! Gridded velocity fields, their time mean, and the flow map they generate.
//!
//! A [`VectorField`] stores nodal samples of a planar velocity on a uniform
//! rectilinear grid and is evaluated by bilinear interpolation. Trajectories of
//! `dx/dt = f(x)` are integrated with fixed-step RK4 (or forward Euler), and
//! leave the domain according to the field's [`BoundaryPolicy`].

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when checking that snapshot coordinates form a
/// uniform grid.
const GRID_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn axpy(self, a: f64, d: Point) -> Point {
        Point::new(self.x + a * d.x, self.y + a * d.y)
    }
}

/// Axis-aligned rectangle `[xmin, xmax] × [ymin, ymax]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Domain {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let all_finite = [xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite());
        if !all_finite || xmax <= xmin || ymax <= ymin {
            return Err(Error::InvalidDomain(format!("[{xmin}, {xmax}] x [{ymin}, {ymax}]")));
        }
        Ok(Domain { xmin, ymin, xmax, ymax })
    }

    /// Parses the `[xmin, ymin, xmax, ymax]` array form.
    pub fn from_rect(r: [f64; 4]) -> Result<Self> {
        Self::new(r[0], r[1], r[2], r[3])
    }

    pub fn as_rect(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    pub fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(self.xmin, self.xmax), p.y.clamp(self.ymin, self.ymax))
    }

    pub fn intersects(&self, other: &Domain) -> bool {
        self.xmin <= other.xmax && other.xmin <= self.xmax && self.ymin <= other.ymax && other.ymin <= self.ymax
    }
}

/// What happens to a trajectory that reaches the edge of the domain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryPolicy {
    /// Project back onto the boundary and keep integrating.
    #[default]
    #[serde(rename = "clamp-to-boundary", alias = "clamp")]
    Clamp,
    /// The trajectory is lost once it leaves the domain.
    #[serde(rename = "absorb-outside", alias = "absorb")]
    Absorb,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dt_integrate: f64,
    #[serde(default)]
    pub method: Integrator,
}

impl FlowConfig {
    pub fn new(dt_integrate: f64, method: Integrator) -> Result<Self> {
        if !(dt_integrate > 0.0 && dt_integrate.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt_integrate must be positive, got {dt_integrate}")));
        }
        Ok(FlowConfig { dt_integrate, method })
    }

    /// RK4 with ten substeps per transfer step.
    pub fn for_step(dt: f64) -> Result<Self> {
        Self::new(dt / 10.0, Integrator::Rk4)
    }
}

/// Planar velocity samples on a uniform `nx × ny` node grid spanning `domain`.
/// Node `(i, j)` sits at `(xmin + i·dx, ymin + j·dy)` and is stored at
/// `j·nx + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    domain: Domain,
    nx: usize,
    ny: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    boundary: BoundaryPolicy,
}

impl VectorField {
    pub fn new(
        domain: Domain,
        nx: usize,
        ny: usize,
        u: Vec<f64>,
        v: Vec<f64>,
        boundary: BoundaryPolicy,
    ) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidField(format!("grid needs at least 2x2 nodes, got {nx}x{ny}")));
        }
        if u.len() != nx * ny || v.len() != nx * ny {
            return Err(Error::InvalidField(format!(
                "expected {} samples per component, got u={} v={}",
                nx * ny,
                u.len(),
                v.len()
            )));
        }
        if let Some(k) = u.iter().chain(&v).position(|x| !x.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite velocity at node {}", k % (nx * ny))));
        }
        Ok(VectorField { domain, nx, ny, u, v, boundary })
    }

    /// Samples `f` at every grid node.
    pub fn from_fn(
        domain: Domain,
        nx: usize,
        ny: usize,
        boundary: BoundaryPolicy,
        f: impl Fn(Point) -> Point,
    ) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidField(format!("grid needs at least 2x2 nodes, got {nx}x{ny}")));
        }
        let mut u = Vec::with_capacity(nx * ny);
        let mut v = Vec::with_capacity(nx * ny);
        let (dx, dy) = grid_spacing(&domain, nx, ny);
        for j in 0..ny {
            for i in 0..nx {
                let w = f(Point::new(domain.xmin + i as f64 * dx, domain.ymin + j as f64 * dy));
                u.push(w.x);
                v.push(w.y);
            }
        }
        Self::new(domain, nx, ny, u, v, boundary)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn boundary(&self) -> BoundaryPolicy {
        self.boundary
    }

    pub fn with_boundary(mut self, boundary: BoundaryPolicy) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn node(&self, i: usize, j: usize) -> Point {
        let (dx, dy) = grid_spacing(&self.domain, self.nx, self.ny);
        Point::new(self.domain.xmin + i as f64 * dx, self.domain.ymin + j as f64 * dy)
    }

    fn same_grid(&self, other: &VectorField) -> bool {
        let tol = GRID_TOL * self.domain.width().max(self.domain.height());
        self.nx == other.nx
            && self.ny == other.ny
            && self.domain.as_rect().iter().zip(other.domain.as_rect()).all(|(a, b)| (a - b).abs() <= tol)
    }

    /// Bilinear interpolation of the nodal samples. Points outside the domain
    /// are evaluated at the nearest boundary point.
    pub fn velocity_at(&self, p: Point) -> Point {
        let d = &self.domain;
        let p = d.clamp(p);
        let sx = (p.x - d.xmin) / d.width() * (self.nx - 1) as f64;
        let sy = (p.y - d.ymin) / d.height() * (self.ny - 1) as f64;
        let i = (sx.floor() as usize).min(self.nx - 2);
        let j = (sy.floor() as usize).min(self.ny - 2);
        let fx = sx - i as f64;
        let fy = sy - j as f64;

        let k00 = j * self.nx + i;
        let k10 = k00 + 1;
        let k01 = k00 + self.nx;
        let k11 = k01 + 1;
        let lerp2 = |c: &[f64]| {
            let bottom = (1.0 - fx) * c[k00] + fx * c[k10];
            let top = (1.0 - fx) * c[k01] + fx * c[k11];
            (1.0 - fy) * bottom + fy * top
        };
        Point::new(lerp2(&self.u), lerp2(&self.v))
    }

    /// Endpoint of the trajectory through `p` after `duration` seconds
    /// (negative durations integrate backwards). Returns `None` when the
    /// trajectory leaves the domain under [`BoundaryPolicy::Absorb`].
    pub fn flow_map(&self, p: Point, duration: f64, cfg: &FlowConfig) -> Option<Point> {
        self.trace(p, duration, cfg, |_| {})
    }

    /// Same as [`flow_map`](Self::flow_map) but calls `visit` on the start
    /// point and after every substep.
    pub fn trace(&self, p: Point, duration: f64, cfg: &FlowConfig, mut visit: impl FnMut(Point)) -> Option<Point> {
        let mut x = match self.boundary {
            BoundaryPolicy::Clamp => self.domain.clamp(p),
            BoundaryPolicy::Absorb if self.domain.contains(p) => p,
            BoundaryPolicy::Absorb => return None,
        };
        visit(x);
        if duration == 0.0 {
            return Some(x);
        }

        let h = cfg.dt_integrate;
        let sign = duration.signum();
        let total = duration.abs();
        let full = (total / h).floor();
        let rem = total - full * h;
        let n_full = full as u64;
        let tail = if rem > h * 1e-9 { Some(rem) } else { None };

        for step in (0..n_full).map(|_| h).chain(tail) {
            x = self.step(x, sign * step, cfg.method);
            match self.boundary {
                BoundaryPolicy::Clamp => x = self.domain.clamp(x),
                BoundaryPolicy::Absorb if !self.domain.contains(x) => return None,
                BoundaryPolicy::Absorb => {}
            }
            visit(x);
        }
        Some(x)
    }

    fn step(&self, x: Point, h: f64, method: Integrator) -> Point {
        match method {
            Integrator::Euler => x.axpy(h, self.velocity_at(x)),
            Integrator::Rk4 => {
                let k1 = self.velocity_at(x);
                let k2 = self.velocity_at(x.axpy(0.5 * h, k1));
                let k3 = self.velocity_at(x.axpy(0.5 * h, k2));
                let k4 = self.velocity_at(x.axpy(h, k3));
                Point::new(
                    x.x + h / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
                    x.y + h / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
                )
            }
        }
    }

    /// Central-difference divergence `∂u/∂x + ∂v/∂y` at `p`.
    pub fn divergence_at(&self, p: Point, h: f64) -> Result<f64> {
        let d = &self.domain;
        if !(h > 0.0) || p.x - h < d.xmin || p.x + h > d.xmax || p.y - h < d.ymin || p.y + h > d.ymax {
            return Err(Error::TooCloseToBoundary { h });
        }
        let du = self.velocity_at(Point::new(p.x + h, p.y)).x - self.velocity_at(Point::new(p.x - h, p.y)).x;
        let dv = self.velocity_at(Point::new(p.x, p.y + h)).y - self.velocity_at(Point::new(p.x, p.y - h)).y;
        Ok(du / (2.0 * h) + dv / (2.0 * h))
    }
}

fn grid_spacing(domain: &Domain, nx: usize, ny: usize) -> (f64, f64) {
    (domain.width() / (nx - 1) as f64, domain.height() / (ny - 1) as f64)
}

/// Nodewise arithmetic mean of equally spaced snapshots.
pub fn mean_field(snapshots: &[VectorField]) -> Result<VectorField> {
    let first = snapshots.first().ok_or(Error::NoSnapshots)?;
    if snapshots.len() == 1 {
        return Ok(first.clone());
    }
    if let Some(k) = snapshots.iter().position(|s| !first.same_grid(s)) {
        return Err(Error::InconsistentGrids(format!("snapshot {k} does not match snapshot 0")));
    }
    let n = snapshots.len() as f64;
    let mean = |get: fn(&VectorField) -> &[f64]| -> Vec<f64> {
        (0..first.nx * first.ny).map(|k| snapshots.iter().map(|s| get(s)[k]).sum::<f64>() / n).collect()
    };
    VectorField::new(first.domain, first.nx, first.ny, mean(VectorField::u), mean(VectorField::v), first.boundary)
}

/// Reads one snapshot CSV (`x,y,u,v`, y outer, x inner).
pub fn read_snapshot(path: impl AsRef<Path>) -> Result<VectorField> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_snapshot(BufReader::new(file), path)
}

pub fn parse_snapshot(reader: impl BufRead, path: &Path) -> Result<VectorField> {
    let perr = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };

    let mut rows: Vec<[f64; 4]> = Vec::new();
    let mut header_seen = false;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| perr(lineno, e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != ["x", "y", "u", "v"] {
                return Err(perr(lineno, format!("expected header x,y,u,v, got {line:?}")));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(perr(lineno, format!("expected 4 columns, got {}", fields.len())));
        }
        let mut row = [0.0; 4];
        for (slot, (name, text)) in row.iter_mut().zip(["x", "y", "u", "v"].iter().zip(&fields)) {
            let value: f64 = text.parse().map_err(|_| perr(lineno, format!("column {name}: cannot parse {text:?}")))?;
            if !value.is_finite() {
                return Err(perr(lineno, format!("column {name}: non-finite value {text}")));
            }
            *slot = value;
        }
        rows.push(row);
    }
    if !header_seen {
        return Err(perr(1, "missing header".into()));
    }
    if rows.is_empty() {
        return Err(perr(2, "no data rows".into()));
    }

    let x0 = rows[0][0];
    let y0 = rows[0][1];
    let last = rows[rows.len() - 1];
    let span = (last[0] - x0).abs().max((last[1] - y0).abs()).max(1.0);
    let tol = GRID_TOL * span;

    let nx = rows.iter().take_while(|r| (r[1] - y0).abs() <= tol).count();
    if nx < 2 || !rows.len().is_multiple_of(nx) {
        return Err(perr(2, format!("{} rows do not form a rectilinear grid with {nx} nodes per row", rows.len())));
    }
    let ny = rows.len() / nx;
    if ny < 2 {
        return Err(perr(2, "grid needs at least two rows of nodes".into()));
    }
    let x1 = rows[nx - 1][0];
    let y1 = last[1];
    let domain = Domain::new(x0, y0, x1, y1).map_err(|e| perr(2, e.to_string()))?;
    let (dx, dy) = grid_spacing(&domain, nx, ny);
    for (k, r) in rows.iter().enumerate() {
        let (i, j) = (k % nx, k / nx);
        let ex = x0 + i as f64 * dx;
        let ey = y0 + j as f64 * dy;
        if (r[0] - ex).abs() > tol || (r[1] - ey).abs() > tol {
            return Err(perr(
                k + 2,
                format!("node ({}, {}) expected at ({ex}, {ey}), found ({}, {})", i, j, r[0], r[1]),
            ));
        }
    }
    let u = rows.iter().map(|r| r[2]).collect();
    let v = rows.iter().map(|r| r[3]).collect();
    VectorField::new(domain, nx, ny, u, v, BoundaryPolicy::default())
}

/// Loads a set of snapshots that must share one grid, in the given order.
pub fn load_snapshots<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<VectorField>> {
    let mut out: Vec<VectorField> = Vec::with_capacity(paths.len());
    for path in paths {
        let field = read_snapshot(path)?;
        if let Some(first) = out.first() {
            if !first.same_grid(&field) {
                return Err(Error::InconsistentGrids(format!(
                    "{} has a {}x{} grid on {:?}, expected {}x{} on {:?}",
                    PathBuf::from(path.as_ref()).display(),
                    field.nx,
                    field.ny,
                    field.domain.as_rect(),
                    first.nx,
                    first.ny,
                    first.domain.as_rect()
                )));
            }
        }
        out.push(field);
    }
    Ok(out)
}

/// Writes a field in the snapshot CSV format.
pub fn write_snapshot(field: &VectorField, mut w: impl std::io::Write) -> std::io::Result<()> {
    writeln!(w, "x,y,u,v")?;
    for j in 0..field.ny {
        for i in 0..field.nx {
            let p = field.node(i, j);
            let k = j * field.nx + i;
            writeln!(w, "{:?},{:?},{:?},{:?}", p.x, p.y, field.u[k], field.v[k])?;
        }
    }
    Ok(())
}

/// Closed-form velocity fields available by name.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnalyticField {
    /// `(-x, -y)`
    LinearSink,
    /// `(-y, x)`
    Rotation,
    /// `(x, -y)`
    Saddle,
    Uniform {
        ux: f64,
        uy: f64,
    },
    /// `(a·x + b·y, c·x + d·y)`
    Linear {
        a: f64,
        b: f64,
        c: f64,
        d: f64,
    },
}

impl AnalyticField {
    pub fn velocity(&self, p: Point) -> Point {
        match *self {
            AnalyticField::LinearSink => Point::new(-p.x, -p.y),
            AnalyticField::Rotation => Point::new(-p.y, p.x),
            AnalyticField::Saddle => Point::new(p.x, -p.y),
            AnalyticField::Uniform { ux, uy } => Point::new(ux, uy),
            AnalyticField::Linear { a, b, c, d } => Point::new(a * p.x + b * p.y, c * p.x + d * p.y),
        }
    }

    pub fn sample(&self, domain: Domain, nx: usize, ny: usize, boundary: BoundaryPolicy) -> Result<VectorField> {
        VectorField::from_fn(domain, nx, ny, boundary, |p| self.velocity(p))
    }
}

impl fmt::Display for AnalyticField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalyticField::LinearSink => write!(f, "linear-sink"),
            AnalyticField::Rotation => write!(f, "rotation"),
            AnalyticField::Saddle => write!(f, "saddle"),
            AnalyticField::Uniform { ux, uy } => write!(f, "uniform({ux},{uy})"),
            AnalyticField::Linear { a, b, c, d } => write!(f, "linear({a},{b},{c},{d})"),
        }
    }
}

impl FromStr for AnalyticField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidField(format!("unknown analytic field {s:?}"));
        match s {
            "linear-sink" => return Ok(AnalyticField::LinearSink),
            "rotation" => return Ok(AnalyticField::Rotation),
            "saddle" => return Ok(AnalyticField::Saddle),
            _ => {}
        }
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let args = rest.strip_suffix(')').ok_or_else(bad)?;
        let args: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        if args.iter().any(|a| !a.is_finite()) {
            return Err(bad());
        }
        match (name.trim(), args.as_slice()) {
            ("uniform", &[ux, uy]) => Ok(AnalyticField::Uniform { ux, uy }),
            ("linear", &[a, b, c, d]) => Ok(AnalyticField::Linear { a, b, c, d }),
            _ => Err(bad()),
        }
    }
}
