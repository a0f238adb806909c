//! Minimum-energy open-loop steering of a density under the discrete
//! controlled dynamics `ρ_{k+1} = PF(ρ_k) + dt·(χ_B ⊙ u_k)`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gramian::controllability_gramian;
use crate::partition::{BoxPartition, CellSet, ScalarField};
use crate::transfer::{apply_koopman, apply_pf, evolve, Evolution, Propagator};

/// Largest reachable set handled by the dense exact solver.
pub const MAX_EXACT_CELLS: usize = 2000;

/// Per-step control fields, each zero outside the actuation set.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSchedule {
    set: CellSet,
    dt: f64,
    u: Vec<ScalarField>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScheduleHeader {
    #[serde(rename = "B")]
    pub set: Vec<usize>,
    pub dt: f64,
    #[serde(rename = "K")]
    pub steps: usize,
    pub px: usize,
    pub py: usize,
    pub domain: [f64; 4],
}

impl ControlSchedule {
    pub fn new(set: CellSet, dt: f64, u: Vec<ScalarField>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        for (k, f) in u.iter().enumerate() {
            f.check_partition(set.partition())?;
            let stray = f.values().iter().enumerate().find(|&(i, &v)| v != 0.0 && !set.contains(i));
            if let Some((i, _)) = stray {
                return Err(Error::InvalidArgument(format!(
                    "control at step {k} is nonzero in cell {i} outside the actuation set"
                )));
            }
        }
        Ok(ControlSchedule { set, dt, u })
    }

    pub fn zeros(set: CellSet, dt: f64, steps: usize) -> Result<Self> {
        let zero = ScalarField::zeros(*set.partition());
        ControlSchedule::new(set, dt, vec![zero; steps])
    }

    pub fn set(&self) -> &CellSet {
        &self.set
    }

    pub fn partition(&self) -> &BoxPartition {
        self.set.partition()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.u.len()
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.u
    }

    pub fn scale(&self, c: f64) -> ControlSchedule {
        ControlSchedule { set: self.set.clone(), dt: self.dt, u: self.u.iter().map(|f| f.scale(c)).collect() }
    }

    pub fn header(&self) -> ScheduleHeader {
        let (px, py) = self.partition().dims();
        ScheduleHeader {
            set: self.set.indices().to_vec(),
            dt: self.dt,
            steps: self.steps(),
            px,
            py,
            domain: self.partition().domain().as_rect(),
        }
    }

    /// `step,cell,value` for every step and every actuated cell.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "step,cell,value")?;
        for (k, f) in self.u.iter().enumerate() {
            for &c in self.set.indices() {
                writeln!(w, "{k},{c},{:?}", f.values()[c])?;
            }
        }
        Ok(())
    }

    pub fn read_csv(header: &ScheduleHeader, reader: impl BufRead) -> Result<Self> {
        let domain = crate::field::Domain::from_rect(header.domain)?;
        let part = BoxPartition::new(domain, header.px, header.py)?;
        let set = CellSet::new(part, header.set.clone())?;
        let mut u = vec![vec![0.0; part.len()]; header.steps];
        let bad = |line: usize, msg: String| Error::Parse { path: "<schedule>".into(), line, msg };
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| bad(n + 1, e.to_string()))?;
            if n == 0 {
                if line.trim() != "step,cell,value" {
                    return Err(bad(1, format!("expected header step,cell,value, got {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(bad(n + 1, "expected 3 columns".into()));
            }
            let k: usize = parts[0].parse().map_err(|e| bad(n + 1, format!("step: {e}")))?;
            let c: usize = parts[1].parse().map_err(|e| bad(n + 1, format!("cell: {e}")))?;
            let v: f64 = parts[2].parse().map_err(|e| bad(n + 1, format!("value: {e}")))?;
            if k >= header.steps || c >= part.len() {
                return Err(bad(n + 1, format!("step {k} or cell {c} out of range")));
            }
            u[k][c] = v;
        }
        let u = u.into_iter().map(|v| ScalarField::new(part, v)).collect::<Result<Vec<_>>>()?;
        ControlSchedule::new(set, header.dt, u)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMethod {
    /// Pointwise division by the controllability gramian.
    #[default]
    Multiplication,
    /// Minimum-norm least squares on the reachable set via a dense SVD.
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteeringResult {
    pub schedule: ControlSchedule,
    pub terminal: ScalarField,
    /// `‖ρ_K − target‖ / ‖d‖`, or the absolute error when `d = 0`.
    pub target_error: f64,
    pub energy: f64,
    pub method: ControlMethod,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlOptions {
    pub method: ControlMethod,
    /// Relative support threshold on the gramian.
    pub eps: f64,
    /// Relative singular-value cutoff for the exact pseudo-inverse.
    pub rcond: f64,
    /// Largest acceptable relative residual of the exact solve.
    pub tol: f64,
}

impl Default for ControlOptions {
    fn default() -> Self {
        ControlOptions { method: ControlMethod::Multiplication, eps: 1e-9, rcond: 1e-10, tol: 1e-8 }
    }
}

impl ControlOptions {
    pub fn method(method: ControlMethod) -> Self {
        ControlOptions { method, ..Default::default() }
    }
}

/// Runs the controlled recursion and returns `[ρ_0, …, ρ_K]`.
pub fn simulate_forward<P: Propagator + ?Sized>(
    op: &P,
    rho0: &ScalarField,
    sched: &ControlSchedule,
) -> Result<Vec<ScalarField>> {
    rho0.check_partition(op.partition())?;
    if sched.partition() != op.partition() {
        return Err(Error::PartitionMismatch);
    }
    let dt = op.dt();
    let mut traj = Vec::with_capacity(sched.steps() + 1);
    traj.push(rho0.clone());
    for u in sched.fields() {
        let mut next = apply_pf(op, traj.last().expect("nonempty"))?.into_values();
        for &c in sched.set().indices() {
            next[c] += dt * u.values()[c];
        }
        traj.push(ScalarField::new(*op.partition(), next)?);
    }
    Ok(traj)
}

/// `dt · Σ_k Σ_{i∈B} u_k[i]² · cell_measure`.
pub fn control_energy(sched: &ControlSchedule) -> f64 {
    let squares: f64 = sched
        .fields()
        .iter()
        .map(|f| sched.set().indices().iter().map(|&c| f.values()[c] * f.values()[c]).sum::<f64>())
        .sum();
    sched.dt() * sched.partition().cell_measure() * squares
}

/// `u_k = χ_B ⊙ Koopman^{K−1−k} w`.
fn adjoint_schedule<P: Propagator + ?Sized>(
    op: &P,
    b: &CellSet,
    steps: usize,
    w: ScalarField,
) -> Result<ControlSchedule> {
    let part = *op.partition();
    let mut u = vec![ScalarField::zeros(part); steps];
    let mut z = w;
    for j in 0..steps {
        let mut masked = vec![0.0; part.len()];
        for &c in b.indices() {
            masked[c] = z.values()[c];
        }
        u[steps - 1 - j] = ScalarField::new(part, masked)?;
        if j + 1 < steps {
            z = apply_koopman(op, &z)?;
        }
    }
    ControlSchedule::new(b.clone(), op.dt(), u)
}

/// Steers `rho0` to `rho_target` in `steps` steps with the least control
/// energy, acting only on `b`.
pub fn min_energy_control<P: Propagator + ?Sized>(
    op: &P,
    rho0: &ScalarField,
    rho_target: &ScalarField,
    b: &CellSet,
    steps: usize,
    opts: &ControlOptions,
) -> Result<SteeringResult> {
    let part = *op.partition();
    rho0.check_partition(&part)?;
    rho_target.check_partition(&part)?;
    if b.partition() != &part {
        return Err(Error::PartitionMismatch);
    }
    if b.is_empty() {
        return Err(Error::EmptySet);
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("steering needs at least one step".into()));
    }
    let free = evolve(op, rho0, steps, Evolution::Pf)?;
    let d = rho_target.sub(&free)?;
    let rho_b = controllability_gramian(op, b, steps)?.field;

    let d_max = d.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let threshold = opts.eps * rho_b.max();
    let reach = match opts.method {
        ControlMethod::Multiplication => rho_b.support(threshold),
        ControlMethod::Exact => rho_b.support(0.0),
    };
    if let Some(i) = (0..part.len()).find(|&i| !reach.contains(i) && d.values()[i].abs() > opts.eps * d_max) {
        return Err(Error::Unreachable(format!(
            "cell {i} needs a change of {:e} but the controllability gramian vanishes there",
            d.values()[i]
        )));
    }

    let schedule = if d_max == 0.0 {
        ControlSchedule::zeros(b.clone(), op.dt(), steps)?
    } else {
        match opts.method {
            ControlMethod::Multiplication => {
                let w = d.zip_with(&rho_b, |di, r| if r > threshold { di / r } else { 0.0 })?;
                adjoint_schedule(op, b, steps, w)?
            }
            ControlMethod::Exact => exact_schedule(op, b, steps, &d, &rho_b, opts)?,
        }
    };
    let terminal = simulate_forward(op, rho0, &schedule)?.pop().expect("K+1 states");
    let err = terminal.sub(rho_target)?.l2_norm();
    let dn = d.l2_norm();
    Ok(SteeringResult {
        energy: control_energy(&schedule),
        target_error: if dn > 0.0 { err / dn } else { err },
        schedule,
        terminal,
        method: opts.method,
    })
}

/// Minimum-norm solution of `dt·R u = d` on `S = {ρ_B > 0}`, where column
/// `(m, b)` of `R` is `PFᵐ e_b` and carries `u_{K−1−m}` at cell `b`.
///
/// In exact arithmetic this is `u = 𝓑*C⁺d` with `C = dt·R Rᵀ`. Working from
/// a singular value decomposition of `R` avoids squaring the conditioning of
/// `C`.
fn exact_schedule<P: Propagator + ?Sized>(
    op: &P,
    b: &CellSet,
    steps: usize,
    d: &ScalarField,
    rho_b: &ScalarField,
    opts: &ControlOptions,
) -> Result<ControlSchedule> {
    let part = *op.partition();
    let dt = op.dt();
    let support: Vec<usize> = (0..part.len()).filter(|&i| rho_b.values()[i] > 0.0).collect();
    let s = support.len();
    if s > MAX_EXACT_CELLS {
        return Err(Error::InvalidArgument(format!(
            "exact method supports at most {MAX_EXACT_CELLS} reachable cells, got {s}"
        )));
    }
    let mut local = vec![usize::MAX; part.len()];
    for (a, &c) in support.iter().enumerate() {
        local[c] = a;
    }

    let mut r = DMatrix::<f64>::zeros(s, steps * b.len());
    for (jb, &cell) in b.indices().iter().enumerate() {
        let mut e = vec![0.0; part.len()];
        e[cell] = 1.0;
        let mut x = ScalarField::new(part, e)?;
        for m in 0..steps {
            for (i, &v) in x.values().iter().enumerate() {
                if v != 0.0 {
                    r[(local[i], m * b.len() + jb)] = v;
                }
            }
            if m + 1 < steps {
                x = apply_pf(op, &x)?;
            }
        }
    }
    let rhs = DVector::from_iterator(s, support.iter().map(|&i| d.values()[i]));

    let fm = faer::Mat::<f64>::from_fn(s, r.ncols(), |i, j| r[(i, j)]);
    let svd = fm.thin_svd().map_err(|_| Error::IllConditioned { condition: f64::INFINITY })?;
    let (left, sigma, right) = (svd.U(), svd.S().column_vector(), svd.V());
    let smax = (0..sigma.nrows()).fold(0.0f64, |m, k| m.max(sigma[k]));
    let cut = opts.rcond * smax;
    let mut coeff = DVector::<f64>::zeros(sigma.nrows());
    let mut smin = f64::INFINITY;
    let mut rank = 0;
    for k in 0..sigma.nrows() {
        let sv = sigma[k];
        if sv > cut {
            coeff[k] = (0..s).map(|i| left[(i, k)] * rhs[i]).sum::<f64>() / sv;
            smin = smin.min(sv);
            rank += 1;
        }
    }
    let right = DMatrix::from_fn(right.nrows(), right.ncols(), |i, j| right[(i, j)]);
    let flat = (right * coeff) / dt;
    let rel = ((&r * &flat) * dt - &rhs).norm() / rhs.norm();
    if !(rel <= opts.tol) {
        // A full-rank map reaches every target on S, so a large residual is
        // numerical; otherwise the target has a component outside the range.
        return Err(if rank < s {
            Error::Unreachable(format!(
                "target is not in the range of the {steps}-step controllability map (relative residual {rel:e})"
            ))
        } else {
            Error::IllConditioned { condition: smax / smin }
        });
    }

    let mut u = vec![vec![0.0; part.len()]; steps];
    for (jb, &cell) in b.indices().iter().enumerate() {
        for m in 0..steps {
            u[steps - 1 - m][cell] = flat[m * b.len() + jb];
        }
    }
    let u = u.into_iter().map(|v| ScalarField::new(part, v)).collect::<Result<Vec<_>>>()?;
    ControlSchedule::new(b.clone(), dt, u)
}
