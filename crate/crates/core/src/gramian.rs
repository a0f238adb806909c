//! Controllability and observability gramians as per-cell multiplication
//! fields.
//!
//! For an actuation set `B` the controllability gramian acts on `L²(X)` as
//! pointwise multiplication by `ρ_B^τ = ∫₀^τ 𝕡ₜ χ_B dt`; the observability
//! gramian of a sensing set `A` is multiplication by `∫₀^τ 𝕌ₜ χ_A dt`. On the
//! partition both integrals become left-endpoint sums of transfer-operator
//! iterates. Infinite horizons are Neumann series that converge only when
//! every trajectory from the source eventually leaks out (or, for
//! observability, never returns to the sensed set from a recurrent class).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{CellSet, ScalarField};
use crate::transfer::{
    apply, evolve, forward_closure, persistent_cells, strongly_connected_classes, Evolution, Propagator,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GramianKind {
    Controllability,
    Observability,
}

impl GramianKind {
    fn evolution(self) -> Evolution {
        match self {
            GramianKind::Controllability => Evolution::Pf,
            GramianKind::Observability => Evolution::Koopman,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    #[default]
    LeftEndpoint,
    Trapezoid,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfiniteSolver {
    /// Truncated Neumann series; doubles as a convergence detector.
    #[default]
    Summation,
    /// Block-triangular elimination over strongly connected classes.
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfiniteOptions {
    pub tol: f64,
    pub max_steps: usize,
    #[serde(default)]
    pub solver: InfiniteSolver,
}

impl Default for InfiniteOptions {
    fn default() -> Self {
        InfiniteOptions { tol: 1e-10, max_steps: 1_000_000, solver: InfiniteSolver::Summation }
    }
}

/// Largest strongly connected class the direct solver will factor densely.
pub const MAX_DIRECT_BLOCK: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct GramianField {
    pub kind: GramianKind,
    pub horizon: Horizon,
    pub source_set: CellSet,
    pub field: ScalarField,
    pub dt: f64,
    /// `‖(I − E)·field − dt·χ‖∞` for infinite horizons.
    pub residual: Option<f64>,
}

impl GramianField {
    /// `1e-9 · max(field)`, the default support threshold.
    pub fn default_eps(&self) -> f64 {
        1e-9 * self.field.max().max(0.0)
    }
}

fn check_source<P: Propagator + ?Sized>(op: &P, set: &CellSet) -> Result<()> {
    if set.partition() != op.partition() {
        return Err(Error::PartitionMismatch);
    }
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(())
}

/// `dt · Σ_{k<K} Eᵏ χ` with `E` the Perron-Frobenius (controllability) or
/// Koopman (observability) step.
pub fn finite_gramian<P: Propagator + ?Sized>(
    op: &P,
    kind: GramianKind,
    set: &CellSet,
    steps: usize,
    quadrature: Quadrature,
) -> Result<GramianField> {
    check_source(op, set)?;
    let mode = kind.evolution();
    let n = op.partition().len();
    let mut sum = vec![0.0; n];
    let mut x = set.indicator();
    for k in 0..steps {
        let w = if quadrature == Quadrature::Trapezoid && k == 0 { 0.5 } else { 1.0 };
        for (s, v) in sum.iter_mut().zip(x.values()) {
            *s += w * v;
        }
        x = apply(op, &x, mode)?;
    }
    if quadrature == Quadrature::Trapezoid && steps > 0 {
        for (s, v) in sum.iter_mut().zip(x.values()) {
            *s += 0.5 * v;
        }
    }
    let dt = op.dt();
    Ok(GramianField {
        kind,
        horizon: Horizon::Finite(steps),
        source_set: set.clone(),
        field: ScalarField::new(*op.partition(), sum.into_iter().map(|s| dt * s).collect())?,
        dt,
        residual: None,
    })
}

pub fn controllability_gramian<P: Propagator + ?Sized>(op: &P, b: &CellSet, steps: usize) -> Result<GramianField> {
    finite_gramian(op, GramianKind::Controllability, b, steps, Quadrature::LeftEndpoint)
}

pub fn observability_gramian<P: Propagator + ?Sized>(op: &P, a: &CellSet, steps: usize) -> Result<GramianField> {
    finite_gramian(op, GramianKind::Observability, a, steps, Quadrature::LeftEndpoint)
}

/// The controllability gramian as an operator composition,
/// `dt · Σ_{k<K} PFᵏ(χ_B ⊙ Koopmanᵏ z)`, without using the multiplication
/// form.
pub fn gramian_composition<P: Propagator + ?Sized>(
    op: &P,
    b: &CellSet,
    steps: usize,
    z: &ScalarField,
) -> Result<ScalarField> {
    check_source(op, b)?;
    z.check_partition(op.partition())?;
    let chi = b.indicator();
    let mut acc = ScalarField::zeros(*op.partition());
    let mut pulled = z.clone();
    for k in 0..steps {
        let masked = chi.hadamard(&pulled)?;
        acc = acc.add(&evolve(op, &masked, k, Evolution::Pf)?)?;
        pulled = apply(op, &pulled, Evolution::Koopman)?;
    }
    Ok(acc.scale(op.dt()))
}

/// Why a Neumann series was abandoned.
#[derive(Clone, Debug)]
pub(crate) enum Divergence {
    /// Mass from the source reaches a class that never loses it.
    Recurrent,
    /// Still not below tolerance after `max_steps` terms.
    Exhausted { partial: ScalarField, residual: f64 },
}

impl Divergence {
    fn describe(&self, max_steps: usize) -> String {
        match self {
            Divergence::Recurrent => "source feeds a recurrent class with no outflow".into(),
            Divergence::Exhausted { residual, .. } => {
                format!("no convergence within {max_steps} steps (residual {residual:e})")
            }
        }
    }
}

/// Would `Σₖ Eᵏ x` diverge because `x` communicates with a class of
/// spectral radius one?
fn feeds_recurrent_class<P: Propagator + ?Sized>(op: &P, x: &ScalarField, mode: Evolution) -> bool {
    let persistent = persistent_cells(op);
    if !persistent.iter().any(|&p| p) {
        return false;
    }
    let support: Vec<bool> = x.values().iter().map(|&v| v != 0.0).collect();
    match mode {
        // Mass flows along i → j.
        Evolution::Pf => forward_closure(op.matrix(), &support).iter().zip(&persistent).any(|(&r, &p)| r && p),
        // Values are pulled back from successors.
        Evolution::Koopman => forward_closure(op.matrix(), &persistent).iter().zip(&support).any(|(&r, &s)| r && s),
    }
}

/// `‖(I − E)·y − dt·x‖∞`.
fn fixed_point_residual<P: Propagator + ?Sized>(
    op: &P,
    y: &ScalarField,
    x: &ScalarField,
    mode: Evolution,
) -> Result<f64> {
    let ey = apply(op, y, mode)?;
    let dt = op.dt();
    Ok(y.values().iter().zip(ey.values()).zip(x.values()).map(|((a, b), c)| (a - b - dt * c).abs()).fold(0.0, f64::max))
}

/// Solves `(I − E) y = dt·x`, returning `(y, residual)`.
pub(crate) fn neumann_solve<P: Propagator + ?Sized>(
    op: &P,
    x: &ScalarField,
    mode: Evolution,
    opts: &InfiniteOptions,
) -> Result<std::result::Result<(ScalarField, f64), Divergence>> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {}", opts.tol)));
    }
    x.check_partition(op.partition())?;
    if feeds_recurrent_class(op, x, mode) {
        return Ok(Err(Divergence::Recurrent));
    }
    let y = match opts.solver {
        InfiniteSolver::Summation => {
            let dt = op.dt();
            let mut sum = vec![0.0; x.values().len()];
            let mut term = x.clone();
            let mut steps = 0usize;
            loop {
                for (s, v) in sum.iter_mut().zip(term.values()) {
                    *s += v;
                }
                term = apply(op, &term, mode)?;
                steps += 1;
                let tail = dt * term.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if tail <= 0.5 * opts.tol {
                    break;
                }
                if steps >= opts.max_steps {
                    let partial = ScalarField::new(*op.partition(), sum.iter().map(|s| dt * s).collect())?;
                    return Ok(Err(Divergence::Exhausted { partial, residual: tail }));
                }
            }
            ScalarField::new(*op.partition(), sum.into_iter().map(|s| dt * s).collect())?
        }
        InfiniteSolver::Direct => block_triangular_solve(op, x, mode)?,
    };
    let residual = fixed_point_residual(op, &y, x, mode)?;
    Ok(Ok((y, residual)))
}

/// Eliminates class by class in dependency order, factoring each strongly
/// connected block densely.
fn block_triangular_solve<P: Propagator + ?Sized>(op: &P, x: &ScalarField, mode: Evolution) -> Result<ScalarField> {
    let m = op.matrix();
    let n = m.dim();
    let dt = op.dt();
    let mut classes = strongly_connected_classes(m);
    // Koopman values depend on successors (sinks first, Tarjan order);
    // Perron-Frobenius mass depends on predecessors.
    let incoming = match mode {
        Evolution::Pf => {
            classes.reverse();
            Some(m.transpose())
        }
        Evolution::Koopman => None,
    };
    // Row i of `deps` lists (j, weight) with y_i = dt·x_i + Σ weight·y_j.
    let deps = incoming.as_ref().unwrap_or(m);
    // Cells that can never see the source stay zero, and their blocks may
    // well be singular.
    let support: Vec<bool> = x.values().iter().map(|&v| v != 0.0).collect();
    let relevant = match mode {
        Evolution::Pf => forward_closure(m, &support),
        Evolution::Koopman => forward_closure(&m.transpose(), &support),
    };

    let mut y = vec![0.0; n];
    let mut local = vec![usize::MAX; n];
    for cells in classes {
        if !relevant[cells[0]] {
            continue;
        }
        let s = cells.len();
        if s > MAX_DIRECT_BLOCK {
            return Err(Error::InvalidArgument(format!(
                "strongly connected block of {s} cells exceeds the direct-solve limit {MAX_DIRECT_BLOCK}"
            )));
        }
        for (a, &c) in cells.iter().enumerate() {
            local[c] = a;
        }
        let mut a_mat = DMatrix::<f64>::identity(s, s);
        let mut rhs = DVector::<f64>::zeros(s);
        for (a, &i) in cells.iter().enumerate() {
            rhs[a] = dt * x.values()[i];
            let (cs, vs) = deps.row(i);
            for (&j, &w) in cs.iter().zip(vs) {
                if local[j] != usize::MAX {
                    a_mat[(a, local[j])] -= w;
                } else {
                    rhs[a] += w * y[j];
                }
            }
        }
        let sol = if s == 1 {
            let d = a_mat[(0, 0)];
            if d <= 0.0 {
                return Err(Error::IllConditioned { condition: f64::INFINITY });
            }
            DVector::from_element(1, rhs[0] / d)
        } else {
            a_mat.lu().solve(&rhs).ok_or(Error::IllConditioned { condition: f64::INFINITY })?
        };
        for (a, &c) in cells.iter().enumerate() {
            y[c] = sol[a];
            local[c] = usize::MAX;
        }
    }
    ScalarField::new(*op.partition(), y)
}

fn infinite_gramian<P: Propagator + ?Sized>(
    op: &P,
    kind: GramianKind,
    set: &CellSet,
    opts: &InfiniteOptions,
) -> Result<GramianField> {
    check_source(op, set)?;
    match neumann_solve(op, &set.indicator(), kind.evolution(), opts)? {
        Ok((field, residual)) => Ok(GramianField {
            kind,
            horizon: Horizon::Infinite,
            source_set: set.clone(),
            field,
            dt: op.dt(),
            residual: Some(residual),
        }),
        Err(div) => Err(Error::DivergentHorizon {
            source_set: match kind {
                GramianKind::Controllability => "B".into(),
                GramianKind::Observability => "A".into(),
            },
            detail: div.describe(opts.max_steps),
        }),
    }
}

/// `ρ_B = ∫₀^∞ 𝕡ₜ χ_B dt`, the steady solution of `∇·(fρ) = χ_B`.
pub fn infinite_controllability_gramian<P: Propagator + ?Sized>(
    op: &P,
    b: &CellSet,
    opts: &InfiniteOptions,
) -> Result<GramianField> {
    infinite_gramian(op, GramianKind::Controllability, b, opts)
}

/// `V = ∫₀^∞ 𝕌ₜ χ_A dt`, the solution of `f·∇v = −χ_A` vanishing on outflow.
pub fn infinite_observability_gramian<P: Propagator + ?Sized>(
    op: &P,
    a: &CellSet,
    opts: &InfiniteOptions,
) -> Result<GramianField> {
    infinite_gramian(op, GramianKind::Observability, a, opts)
}

/// Measure of the cells where the gramian exceeds `eps`.
pub fn support_measure(g: &GramianField, eps: f64) -> f64 {
    g.field.support(eps).measure()
}

/// `sqrt(Σ valueᵢ²·cell_measure)`.
pub fn l2_norm(g: &GramianField) -> f64 {
    g.field.l2_norm()
}

/// Time that trajectories started in `B` spend in `A` before leaving:
/// `∫_A ρ_B dx` for the infinite-horizon controllability gramian of `B`.
pub fn residence_time(g: &GramianField, a: &CellSet) -> Result<f64> {
    if g.kind != GramianKind::Controllability || g.horizon != Horizon::Infinite {
        return Err(Error::InvalidArgument("residence time needs an infinite-horizon controllability gramian".into()));
    }
    g.field.integrate(a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    CertifiedStable,
    NotCertified,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub classification: Stability,
    pub residual: f64,
    pub min_value: f64,
    /// Converged `v`, or the partial sum reached before giving up.
    pub solution: ScalarField,
    pub reason: Option<String>,
}

/// Looks for a nonnegative solution of the steady transport equation
/// `f·∇v = −v₀` as `v = dt·Σ Koopmanᵏ v₀`. `v₀` must be nonnegative and vanish
/// on the equilibrium neighbourhood.
pub fn stability_certificate<P: Propagator + ?Sized>(
    op: &P,
    v0: &ScalarField,
    neighborhood: &CellSet,
    opts: &InfiniteOptions,
) -> Result<StabilityReport> {
    v0.check_partition(op.partition())?;
    if neighborhood.partition() != op.partition() {
        return Err(Error::PartitionMismatch);
    }
    if let Some(i) = v0.values().iter().position(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(format!("v0 is negative in cell {i}")));
    }
    if let Some(&i) = neighborhood.indices().iter().find(|&&i| v0.values()[i] != 0.0) {
        return Err(Error::InvalidArgument(format!(
            "v0 must vanish on the equilibrium neighbourhood, but cell {i} is {}",
            v0.values()[i]
        )));
    }
    let report = match neumann_solve(op, v0, Evolution::Koopman, opts)? {
        Ok((solution, residual)) => {
            let min_value = solution.min();
            let ok = residual <= opts.tol && min_value >= 0.0;
            StabilityReport {
                classification: if ok { Stability::CertifiedStable } else { Stability::NotCertified },
                residual,
                min_value,
                solution,
                reason: (!ok).then(|| "solution failed the residual or positivity check".to_string()),
            }
        }
        Err(div) => {
            let reason = Some(div.describe(opts.max_steps));
            let (solution, residual) = match div {
                Divergence::Exhausted { partial, residual } => (partial, residual),
                Divergence::Recurrent => {
                    let first = v0.scale(op.dt());
                    let r = fixed_point_residual(op, &first, v0, Evolution::Koopman)?;
                    (first, r)
                }
            };
            StabilityReport {
                classification: Stability::NotCertified,
                residual,
                min_value: solution.min(),
                solution,
                reason,
            }
        }
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{AnalyticField, BoundaryPolicy, Domain};
    use crate::partition::BoxPartition;
    use crate::transfer::{Sampling, TransferOperator, UlamSettings};
    use proptest::prelude::*;

    fn line(px: usize) -> BoxPartition {
        BoxPartition::new(Domain::new(0.0, 0.0, 1.0, 1.0).unwrap(), px, 1).unwrap()
    }

    /// `i → i+1`, last cell leaks.
    fn shift(px: usize, dt: f64) -> TransferOperator {
        let rows = (0..px).map(|i| if i + 1 < px { vec![(i + 1, 1.0)] } else { vec![] }).collect();
        TransferOperator::from_rows(line(px), dt, rows).unwrap()
    }

    fn rotation_op(n: usize) -> TransferOperator {
        let d = Domain::new(-1.0, -1.0, 1.0, 1.0).unwrap();
        let field = AnalyticField::Rotation.sample(d, 5, 5, BoundaryPolicy::Clamp).unwrap();
        let part = BoxPartition::new(d, n, n).unwrap();
        TransferOperator::build(&field, part, &UlamSettings::new(0.2).unwrap().samples(20)).unwrap()
    }

    fn cells(part: BoxPartition, c: &[usize]) -> CellSet {
        CellSet::new(part, c.to_vec()).unwrap()
    }

    #[test]
    fn zero_horizon_is_zero() {
        let op = shift(6, 0.5);
        let b = cells(*op.partition(), &[1]);
        let g = controllability_gramian(&op, &b, 0).unwrap();
        assert_eq!(g.field, ScalarField::zeros(*op.partition()));
        let g = observability_gramian(&op, &b, 0).unwrap();
        assert_eq!(g.field, ScalarField::zeros(*op.partition()));
    }

    #[test]
    fn identity_operator_accumulates_on_source() {
        let part = line(5);
        let op = TransferOperator::identity(part, 0.25).unwrap();
        let b = cells(part, &[1, 3]);
        for g in [controllability_gramian(&op, &b, 8).unwrap(), observability_gramian(&op, &b, 8).unwrap()] {
            assert_eq!(g.field.values(), &[0.0, 2.0, 0.0, 2.0, 0.0]);
            assert!((support_measure(&g, g.default_eps()) - b.measure()).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_source_is_rejected() {
        let op = shift(4, 1.0);
        let empty = CellSet::empty(*op.partition());
        assert!(matches!(controllability_gramian(&op, &empty, 3), Err(Error::EmptySet)));
        assert!(matches!(
            infinite_observability_gramian(&op, &empty, &InfiniteOptions::default()),
            Err(Error::EmptySet)
        ));
    }

    #[test]
    fn shift_gramian_covers_reached_cells() {
        let op = shift(10, 1.0);
        let part = *op.partition();
        let g = controllability_gramian(&op, &cells(part, &[2]), 5).unwrap();
        assert_eq!(g.field.support(0.0).indices(), &[2, 3, 4, 5, 6]);
        let g = observability_gramian(&op, &cells(part, &[2]), 5).unwrap();
        assert_eq!(g.field.support(0.0).indices(), &[0, 1, 2]);
    }

    #[test]
    fn trapezoid_halves_the_endpoints() {
        let part = line(3);
        let op = TransferOperator::identity(part, 1.0).unwrap();
        let g =
            finite_gramian(&op, GramianKind::Controllability, &cells(part, &[0]), 4, Quadrature::Trapezoid).unwrap();
        assert_eq!(g.field.values()[0], 4.0);
        let op = shift(3, 1.0);
        let g =
            finite_gramian(&op, GramianKind::Controllability, &cells(part, &[0]), 2, Quadrature::Trapezoid).unwrap();
        assert_eq!(g.field.values(), &[0.5, 1.0, 0.5]);
    }

    #[test]
    fn full_leak_gives_one_step() {
        let part = line(4);
        let op = TransferOperator::from_rows(part, 0.3, vec![vec![]; 4]).unwrap();
        let b = cells(part, &[0, 2]);
        for solver in [InfiniteSolver::Summation, InfiniteSolver::Direct] {
            let opts = InfiniteOptions { solver, ..Default::default() };
            let g = infinite_controllability_gramian(&op, &b, &opts).unwrap();
            assert_eq!(g.field, b.indicator().scale(0.3));
            assert_eq!(g.residual, Some(0.0));
            let v = infinite_observability_gramian(&op, &b, &opts).unwrap();
            assert_eq!(v.field, b.indicator().scale(0.3));
            let t = residence_time(&g, &b).unwrap();
            assert!((t - 0.3 * b.measure()).abs() < 1e-15);
        }
    }

    #[test]
    fn rotation_without_leak_diverges() {
        let op = rotation_op(10);
        let b = CellSet::from_rect(*op.partition(), &Domain::new(0.3, -0.2, 0.7, 0.2).unwrap()).unwrap();
        let err = infinite_controllability_gramian(&op, &b, &InfiniteOptions::default()).unwrap_err();
        assert!(err.to_string().starts_with("divergent horizon"), "{err}");
        assert!(infinite_observability_gramian(&op, &b, &InfiniteOptions::default()).is_err());
    }

    #[test]
    fn slow_leak_exhausts_max_steps() {
        let part = line(1);
        let op = TransferOperator::from_rows(part, 1.0, vec![vec![(0, 0.999)]]).unwrap();
        let opts = InfiniteOptions { tol: 1e-12, max_steps: 100, solver: InfiniteSolver::Summation };
        let err = infinite_controllability_gramian(&op, &cells(part, &[0]), &opts).unwrap_err();
        assert!(err.to_string().contains("within 100 steps"), "{err}");
        let ok = infinite_controllability_gramian(
            &op,
            &cells(part, &[0]),
            &InfiniteOptions { tol: 1e-9, ..Default::default() },
        )
        .unwrap();
        assert!((ok.field.values()[0] - 1000.0).abs() < 1e-6);
    }

    #[test]
    fn direct_and_summation_agree() {
        let d = Domain::new(-1.0, -1.0, 1.0, 1.0).unwrap();
        let field = AnalyticField::Saddle.sample(d, 5, 5, BoundaryPolicy::Absorb).unwrap();
        let part = BoxPartition::new(d, 16, 16).unwrap();
        let op = TransferOperator::build(&field, part, &UlamSettings::new(0.1).unwrap().samples(16)).unwrap();
        let b = CellSet::from_rect(part, &Domain::new(-0.3, 0.4, 0.3, 0.9).unwrap()).unwrap();
        let opts = InfiniteOptions { tol: 1e-12, ..Default::default() };
        for kind in [GramianKind::Controllability, GramianKind::Observability] {
            let s = infinite_gramian(&op, kind, &b, &opts).unwrap();
            let dopts = InfiniteOptions { solver: InfiniteSolver::Direct, ..opts };
            let g = infinite_gramian(&op, kind, &b, &dopts).unwrap();
            assert!(g.residual.unwrap() < 1e-12);
            let diff = s.field.sub(&g.field).unwrap().l2_norm();
            assert!(diff <= 1e-9 * g.field.l2_norm(), "{kind:?} {diff}");
        }
    }

    #[test]
    fn duality_with_transpose_is_exact() {
        let op = rotation_op(8);
        let a = CellSet::from_rect(*op.partition(), &Domain::new(-0.5, 0.0, 0.0, 0.5).unwrap()).unwrap();
        let obs = observability_gramian(&op, &a, 17).unwrap();
        let ctrl = controllability_gramian(&op.transposed(), &a, 17).unwrap();
        assert_eq!(obs.field, ctrl.field);
    }

    #[test]
    fn composition_equals_multiplication_on_permutations() {
        let op = shift(12, 0.125);
        let part = *op.partition();
        let b = cells(part, &[0, 1, 5]);
        let z = ScalarField::from_fn(part, |p| (p.x * 40.0).floor() / 64.0 - 0.25).unwrap();
        let rho = controllability_gramian(&op, &b, 7).unwrap().field;
        assert_eq!(gramian_composition(&op, &b, 7, &z).unwrap(), rho.hadamard(&z).unwrap());
    }

    #[test]
    fn residence_requires_infinite_controllability() {
        let op = shift(4, 1.0);
        let b = cells(*op.partition(), &[0]);
        let g = controllability_gramian(&op, &b, 3).unwrap();
        assert!(residence_time(&g, &b).is_err());
        let t = residence_time(
            &infinite_controllability_gramian(&op, &b, &InfiniteOptions::default()).unwrap(),
            &cells(*op.partition(), &[2, 3]),
        )
        .unwrap();
        assert!((t - 2.0 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn stability_preconditions_and_trivial_case() {
        let op = rotation_op(6);
        let part = *op.partition();
        let hood = cells(part, &[14, 15, 20, 21]);
        let zero = ScalarField::zeros(part);
        let rep = stability_certificate(&op, &zero, &hood, &InfiniteOptions::default()).unwrap();
        assert_eq!(rep.classification, Stability::CertifiedStable);
        assert_eq!(rep.solution, zero);
        let bad = hood.indicator();
        assert!(stability_certificate(&op, &bad, &hood, &InfiniteOptions::default()).is_err());
        let neg = ScalarField::constant(part, -1.0);
        assert!(stability_certificate(&op, &neg, &CellSet::empty(part), &InfiniteOptions::default()).is_err());
        let ring = hood.complement().indicator();
        let rep = stability_certificate(&op, &ring, &hood, &InfiniteOptions::default()).unwrap();
        assert_eq!(rep.classification, Stability::NotCertified);
        assert!(rep.reason.is_some());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn monotone_and_additive(seed in 0u64..500, k1 in 0usize..15, extra in 0usize..15,
                                 picks in proptest::collection::vec(0usize..64, 1..12)) {
            let d = Domain::new(-1.0, -1.0, 1.0, 1.0).unwrap();
            let field = AnalyticField::Saddle.sample(d, 5, 5, BoundaryPolicy::Absorb).unwrap();
            let part = BoxPartition::new(d, 8, 8).unwrap();
            let op = TransferOperator::build(&field, part, &UlamSettings::new(0.2).unwrap().samples(9).seed(seed)
                .sampling(Sampling::MonteCarlo)).unwrap();
            let b = CellSet::new(part, picks).unwrap();
            for kind in [GramianKind::Controllability, GramianKind::Observability] {
                let g1 = finite_gramian(&op, kind, &b, k1, Quadrature::LeftEndpoint).unwrap();
                let g2 = finite_gramian(&op, kind, &b, k1 + extra, Quadrature::LeftEndpoint).unwrap();
                prop_assert!(g1.field.values().iter().zip(g2.field.values()).all(|(a, b)| a <= b));
                prop_assert!(g2.field.min() >= 0.0);
            }
            let (left, right): (Vec<usize>, Vec<usize>) = b.indices().iter().partition(|&&c| c % 2 == 0);
            if !left.is_empty() && !right.is_empty() {
                let gl = controllability_gramian(&op, &CellSet::new(part, left).unwrap(), 9).unwrap();
                let gr = controllability_gramian(&op, &CellSet::new(part, right).unwrap(), 9).unwrap();
                let gb = controllability_gramian(&op, &b, 9).unwrap();
                let sum = gl.field.add(&gr.field).unwrap();
                for (s, g) in sum.values().iter().zip(gb.field.values()) {
                    prop_assert!((s - g).abs() <= 1e-12 * g.abs().max(1e-300));
                }
            }
        }
    }
}
