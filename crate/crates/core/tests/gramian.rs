use gramflow::gramian::{
    controllability_gramian, finite_gramian, infinite_controllability_gramian, observability_gramian,
    stability_certificate, InfiniteSolver, Quadrature, Stability,
};
use gramflow::*;

fn square() -> Domain {
    Domain::new(-1.0, -1.0, 1.0, 1.0).unwrap()
}

#[test]
fn sink_stability_matches_occupation_time() {
    let part = BoxPartition::new(square(), 100, 100).unwrap();
    let f = AnalyticField::LinearSink.sample(square(), 9, 9, BoundaryPolicy::Clamp).unwrap();
    let op = TransferOperator::build(&f, part, &UlamSettings::new(0.1).unwrap().samples(64).seed(9)).unwrap();
    let radius = |p: Point| (p.x * p.x + p.y * p.y).sqrt();
    let v0 = ScalarField::from_fn(part, |p| if (0.3..=0.6).contains(&radius(p)) { 1.0 } else { 0.0 }).unwrap();
    let nbhd = CellSet::from_rect(part, &Domain::new(-0.1, -0.1, 0.1, 0.1).unwrap()).unwrap();
    let rep = stability_certificate(&op, &v0, &nbhd, &InfiniteOptions::default()).unwrap();
    assert_eq!(rep.classification, Stability::CertifiedStable);
    assert!(rep.min_value >= 0.0);

    // Time a trajectory from radius r spends in the annulus 0.3 ≤ r ≤ 0.6.
    let exact = ScalarField::from_fn(part, |p| {
        let r = radius(p);
        if r < 0.3 {
            0.0
        } else {
            (r.min(0.6) / 0.3).ln()
        }
    })
    .unwrap();
    let err = rep.solution.sub(&exact).unwrap().l2_norm() / exact.l2_norm();
    assert!(err < 0.05, "relative error {err}");
}

#[test]
fn controllability_is_observability_of_the_transpose() {
    let part = BoxPartition::new(square(), 24, 24).unwrap();
    let f = AnalyticField::Saddle.sample(square(), 9, 9, BoundaryPolicy::Absorb).unwrap();
    let op = TransferOperator::build(&f, part, &UlamSettings::new(0.1).unwrap().samples(16)).unwrap();
    let b = CellSet::from_rect(part, &Domain::new(-0.5, -0.5, 0.0, 0.5).unwrap()).unwrap();
    let wc = controllability_gramian(&op, &b, 12).unwrap();
    let wo = observability_gramian(&op.transposed(), &b, 12).unwrap();
    assert_eq!(wc.field, wo.field);
}

#[test]
fn trapezoid_differs_from_left_endpoint_by_the_end_terms() {
    let part = BoxPartition::new(square(), 16, 16).unwrap();
    let f = AnalyticField::Rotation.sample(square(), 9, 9, BoundaryPolicy::Clamp).unwrap();
    let op = TransferOperator::build(&f, part, &UlamSettings::new(0.1).unwrap().samples(16)).unwrap();
    let b = CellSet::from_rect(part, &Domain::new(0.2, 0.2, 0.6, 0.6).unwrap()).unwrap();
    let k = 7;
    let left = finite_gramian(&op, GramianKind::Controllability, &b, k, Quadrature::LeftEndpoint).unwrap();
    let trap = finite_gramian(&op, GramianKind::Controllability, &b, k, Quadrature::Trapezoid).unwrap();
    let last = gramflow::transfer::evolve(&op, &b.indicator(), k, gramflow::transfer::Evolution::Pf).unwrap();
    let expected = left.field.add(&last.sub(&b.indicator()).unwrap().scale(0.5 * op.dt())).unwrap();
    let diff = trap.field.sub(&expected).unwrap().l2_norm();
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn infinite_solvers_agree_on_a_leaky_flow() {
    let part = BoxPartition::new(square(), 30, 30).unwrap();
    let f = AnalyticField::Uniform { ux: 0.7, uy: 0.3 }.sample(square(), 3, 3, BoundaryPolicy::Absorb).unwrap();
    let op = TransferOperator::build(&f, part, &UlamSettings::new(0.1).unwrap().samples(25)).unwrap();
    let b = CellSet::from_rect(part, &Domain::new(-0.9, -0.9, -0.5, -0.5).unwrap()).unwrap();
    let sum = infinite_controllability_gramian(&op, &b, &InfiniteOptions::default()).unwrap();
    let direct = InfiniteOptions { solver: InfiniteSolver::Direct, ..Default::default() };
    let lu = infinite_controllability_gramian(&op, &b, &direct).unwrap();
    let diff = sum.field.sub(&lu.field).unwrap().l2_norm() / lu.field.l2_norm();
    assert!(diff < 1e-9, "{diff}");
    assert!(lu.residual.unwrap() < 1e-10);
}

#[test]
fn closed_flow_has_no_infinite_gramian() {
    let part = BoxPartition::new(square(), 16, 16).unwrap();
    let f = AnalyticField::Rotation.sample(square(), 9, 9, BoundaryPolicy::Clamp).unwrap();
    let op = TransferOperator::build(&f, part, &UlamSettings::new(0.1).unwrap().samples(16)).unwrap();
    let b = CellSet::from_rect(part, &Domain::new(0.2, 0.2, 0.6, 0.6).unwrap()).unwrap();
    let err = infinite_controllability_gramian(&op, &b, &InfiniteOptions::default()).unwrap_err();
    assert!(matches!(err, Error::DivergentHorizon { .. }), "{err}");
}
