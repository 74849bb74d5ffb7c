use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ring_bifurcate::continuation::{branch_from_event, continue_branch, Branch, PeriodicProblem, StepControl, Termination};
use ring_bifurcate::dynamics::{Mechanics, SatelliteSystem, State};
use ring_bifurcate::equilibria::{find_satellite_equilibria, maxwell_ring, EquilibriumLabel, EquilibriumPoint, SearchGrid};
use ring_bifurcate::spectral::{default_nu_max, satellite_blocks_at, scan_bifurcations, ScanOptions};
use ring_bifurcate::symmetry::{act_state, GroupElement, IsotropyLabel};
use ring_bifurcate::verification::{closure_error, integrate, DT_CLOSURE};

/// Eight branch from a triangular point of the equal-mass restricted problem.
fn eight_branch(eps: f64) -> (PeriodicProblem, Branch, EquilibriumPoint) {
    let cfg = maxwell_ring(2, 0.0).unwrap();
    let eqs = find_satellite_equilibria(&cfg, &SearchGrid::default()).unwrap();
    let eq = eqs.iter().find(|e| e.det > 0.0).unwrap().clone();
    let sys = cfg.satellite_system();
    let [_, spatial] = satellite_blocks_at(&eq, &cfg).unwrap();
    let nu_max = default_nu_max(&sys.hessian(&eq.position()).unwrap());
    let ev = scan_bifurcations(&spatial, &ScanOptions::up_to(nu_max)).unwrap();
    let problem = PeriodicProblem::satellite(sys, 16, IsotropyLabel::EightZ2).unwrap();
    let ones = DVector::from_element(3, 1.0);
    let branch = branch_from_event(&problem, &ev[0], &spatial, &eq.position(), &ones, eps).unwrap();
    (problem, branch, eq)
}

#[test]
fn triangular_point_spatial_event_at_unit_frequency() {
    let (_, branch, _) = eight_branch(1e-3);
    assert!((branch.origin.nu0 - 1.0).abs() < 1e-8, "{}", branch.origin.nu0);
    assert!(branch.points[0].symmetry_residual < 1e-10);
}

#[test]
fn shrinking_amplitude_keeps_the_tangent() {
    let (_, a, _) = eight_branch(2e-4);
    let (_, b, _) = eight_branch(1e-4);
    let (ta, tb) = (a.initial_tangent(), b.initial_tangent());
    let gap = (&ta - &tb).norm().min((&ta + &tb).norm());
    assert!(gap < 1e-4, "{gap:.3e}");
}

#[test]
fn twenty_steps_keep_isotropy_and_advance() {
    let (problem, branch, _) = eight_branch(1e-3);
    let branch = continue_branch(&problem, branch, 20, StepControl::default());
    assert_eq!(branch.termination, Some(Termination::MaxSteps));
    assert_eq!(branch.points.len(), 21);
    for w in branch.points.windows(2) {
        assert!(w[1].arclength > w[0].arclength);
    }
    for p in &branch.points {
        assert!(p.symmetry_residual < 1e-8);
        assert!(p.residual < 1e-10);
        assert!(p.lambda.iter().all(|l| l.abs() < 1e-8));
    }
}

#[test]
fn doubling_the_truncation_barely_moves_a_point() {
    let (problem, branch, _) = eight_branch(1e-3);
    let branch = continue_branch(&problem, branch, 8, StepControl::default());
    let p = branch.points.last().unwrap();
    let order = p.coefficients.order();
    let fine = problem.with_order(2 * order).unwrap();
    let again = fine.correct_at_fixed_nu(&p.coefficients.with_order(2 * order)).unwrap();
    let moved = (again.coefficients.to_real() - p.coefficients.with_order(2 * order).to_real()).norm();
    assert!(moved < 1e-6, "{moved:.3e} at amplitude {}", p.amplitude);
}

#[test]
fn eight_symmetry_survives_integration() {
    let (problem, branch, _) = eight_branch(1e-3);
    let branch = continue_branch(&problem, branch, 6, StepControl::default());
    let lp = &branch.points.last().unwrap().coefficients;
    let s0 = State::new(lp.evaluate(0.0), lp.derivative(0.0)).unwrap();
    let half = integrate(problem.system(), &s0, lp.nu, PI, DT_CLOSURE).unwrap().final_state();
    let kappa = GroupElement::reflection();
    let pos = act_state(&kappa, &s0.position).unwrap();
    let vel = act_state(&kappa, &s0.velocity).unwrap();
    let gap = (half.position - pos).amax().max((half.velocity - vel).amax());
    assert!(gap < 1e-6, "{gap:.3e}");
}

#[test]
fn closure_of_a_small_eight_orbit() {
    let (problem, branch, _) = eight_branch(1e-3);
    let lp = &branch.points[0].coefficients;
    assert!(closure_error(lp, problem.system(), DT_CLOSURE).unwrap() < 1e-6);
}

#[test]
fn closure_detects_perturbed_coefficients() {
    let (problem, branch, _) = eight_branch(1e-3);
    let branch = continue_branch(&problem, branch, 6, StepControl::default());
    let lp = &branch.points.last().unwrap().coefficients;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noisy = lp.to_real().map(|x| x + rng.random_range(-1e-3..1e-3));
    let noisy = ring_bifurcate::fourier::FourierLoop::from_real(lp.dim(), lp.order(), lp.nu, &noisy).unwrap();
    assert!(closure_error(&noisy, problem.system(), DT_CLOSURE).unwrap() >= 1e-4);
}

#[test]
fn planar_branch_at_r3_stays_in_the_plane() {
    let cfg = maxwell_ring(3, 100.0).unwrap();
    let eqs = find_satellite_equilibria(&cfg, &SearchGrid::default()).unwrap();
    let eq = eqs.iter().find(|e| e.label == EquilibriumLabel::R3).unwrap();
    let sys = cfg.satellite_system();
    let [planar, _] = satellite_blocks_at(eq, &cfg).unwrap();
    let nu_max = default_nu_max(&sys.hessian(&eq.position()).unwrap());
    let events = scan_bifurcations(&planar, &ScanOptions::up_to(nu_max)).unwrap();
    assert!(!events.is_empty());
    let problem = PeriodicProblem::satellite(sys, 16, IsotropyLabel::PlanarZ2).unwrap();
    let ones = DVector::from_element(3, 1.0);
    let branch = branch_from_event(&problem, &events[0], &planar, &eq.position(), &ones, 1e-3).unwrap();
    let branch = continue_branch(&problem, branch, 5, StepControl::default());
    for p in &branch.points {
        for l in 0..=p.coefficients.order() {
            assert_eq!(p.coefficients.mode(l as i64)[2].norm(), 0.0);
        }
        assert!(p.amplitude > 0.0);
    }
}

#[test]
fn satellite_problem_rejects_ring_labels() {
    let sys = SatelliteSystem::new(vec![[1.0, 0.0]], vec![1.0]).unwrap();
    assert!(PeriodicProblem::satellite(sys, 8, IsotropyLabel::SpatialZnk(1)).is_err());
}

#[test]
fn massless_center_is_not_continued() {
    let cfg = maxwell_ring(3, 0.0).unwrap();
    assert!(PeriodicProblem::bodies(cfg.body_system(), 8, IsotropyLabel::SpatialZnk(3)).is_err());
}
