use gramflow::control::{control_energy, min_energy_control, simulate_forward, ControlOptions, ControlSchedule};
use gramflow::transfer::apply_koopman;
use gramflow::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup() -> (TransferOperator, CellSet) {
    let d = Domain::new(-1.0, -1.0, 1.0, 1.0).unwrap();
    let part = BoxPartition::new(d, 12, 12).unwrap();
    let f = AnalyticField::Saddle.sample(d, 9, 9, BoundaryPolicy::Absorb).unwrap();
    let op = TransferOperator::build(&f, part, &UlamSettings::new(0.15).unwrap().samples(16).seed(2)).unwrap();
    let b = CellSet::from_rect(part, &Domain::new(-0.5, -0.5, 0.5, 0.5).unwrap()).unwrap();
    (op, b)
}

#[test]
fn exact_control_is_optimal_under_perturbations() {
    let (op, b) = setup();
    let part = *op.partition();
    let k = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rho0 = ScalarField::from_fn(part, |p| 1.0 + 0.3 * p.x).unwrap();

    let mut y = ScalarField::new(part, (0..part.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut u = vec![ScalarField::zeros(part); k];
    for j in 0..k {
        u[k - 1 - j] = y.hadamard(&b.indicator()).unwrap();
        y = apply_koopman(&op, &y).unwrap();
    }
    let sched = ControlSchedule::new(b.clone(), op.dt(), u).unwrap();
    let target = simulate_forward(&op, &rho0, &sched).unwrap().pop().unwrap();

    let best = min_energy_control(&op, &rho0, &target, &b, k, &ControlOptions::method(ControlMethod::Exact)).unwrap();
    assert!(best.target_error < 1e-9);
    // The target came from an adjoint control, which is already minimal.
    assert!((best.energy - control_energy(&sched)).abs() <= 1e-8 * best.energy);

    // Each perturbed schedule is feasible for its own target, so the
    // minimum for that target cannot cost more.
    for _ in 0..5 {
        let pert: Vec<ScalarField> = (0..k)
            .map(|_| {
                ScalarField::new(
                    part,
                    (0..part.len()).map(|i| if b.contains(i) { rng.random_range(-0.1..0.1) } else { 0.0 }).collect(),
                )
                .unwrap()
            })
            .collect();
        let other = ControlSchedule::new(
            b.clone(),
            op.dt(),
            sched.fields().iter().zip(&pert).map(|(a, p)| a.add(p).unwrap()).collect(),
        )
        .unwrap();
        let reached = simulate_forward(&op, &rho0, &other).unwrap().pop().unwrap();
        let r = min_energy_control(&op, &rho0, &reached, &b, k, &ControlOptions::method(ControlMethod::Exact)).unwrap();
        assert!(r.energy <= control_energy(&other) * (1.0 + 1e-10));
    }
}

#[test]
fn multiplication_method_steers_on_a_shift() {
    let d = Domain::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let part = BoxPartition::new(d, 8, 1).unwrap();
    let rows = (0..8).map(|i| if i + 1 < 8 { vec![(i + 1, 1.0)] } else { vec![] }).collect();
    let op = TransferOperator::from_rows(part, 0.5, rows).unwrap();
    let b = CellSet::new(part, vec![0]).unwrap();
    let mut t = vec![0.0; 8];
    t[3] = 2.0;
    let target = ScalarField::new(part, t).unwrap();
    let r = min_energy_control(&op, &ScalarField::zeros(part), &target, &b, 4, &ControlOptions::default()).unwrap();
    assert!(r.target_error < 1e-12);
    // One pulse of height 2/dt at step 0 is the only option.
    assert!((r.energy - 0.5 * part.cell_measure() * 16.0).abs() < 1e-12);
}

#[test]
fn unreachable_targets_are_rejected() {
    let (op, b) = setup();
    let part = *op.partition();
    let far = ScalarField::from_fn(part, |p| if p.x > 0.9 && p.y > 0.9 { 1.0 } else { 0.0 }).unwrap();
    for m in [ControlMethod::Multiplication, ControlMethod::Exact] {
        let err =
            min_energy_control(&op, &ScalarField::zeros(part), &far, &b, 2, &ControlOptions::method(m)).unwrap_err();
        assert!(err.is_infeasible(), "{err}");
    }
}
