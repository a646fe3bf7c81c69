mod common;

use nalgebra::{dvector, DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use sparobs::certify::{certify_instance, recovery_error_bound, Certificate};
use sparobs::harness::{gen_gaussian_matrix, noise_on_sphere};
use sparobs::model::{best_s_term, weighted_l1_norm, DynamicalSystem, MeasurementModel, SparseProblem};
use sparobs::ode::{flow, IntegrationConfig};
use sparobs::recover::{l0_oracle, recover_initial_state, solve_weighted_bpdn, SolverConfig, DEFAULT_ORACLE_BUDGET};
use sparobs::rip::{rip_balancing_scale, rip_constant_exact, DEFAULT_EXACT_BUDGET};
use sparobs::Error;

const ICFG: IntegrationConfig = IntegrationConfig::Rk4 { steps: 256 };

fn support(x: &DVector<f64>, tol: f64) -> Vec<usize> {
    (0..x.len()).filter(|&i| x[i].abs() > tol).collect()
}

/// First seeded `n × 12` Gaussian whose rescaled isometry constant of order `order` is below `below`.
fn well_conditioned(n: usize, order: usize, below: f64) -> DMatrix<f64> {
    for seed in 0..200 {
        let raw = gen_gaussian_matrix(n, 12, seed, 1.0).unwrap();
        let a = &raw * rip_balancing_scale(&raw, order, DEFAULT_EXACT_BUDGET).unwrap();
        if rip_constant_exact(&a, order, DEFAULT_EXACT_BUDGET).unwrap().delta < below {
            return a;
        }
    }
    panic!("no seed below {below}");
}

fn planted_problem(
    sys: &DynamicalSystem,
    a: &DMatrix<f64>,
    x0: &DVector<f64>,
    t: f64,
    eps: f64,
    s: usize,
    noise_seed: u64,
) -> SparseProblem {
    let e = noise_on_sphere(a.nrows(), eps, &mut common::rng(noise_seed));
    let b = a * flow(sys, x0, t, ICFG).unwrap() + e;
    let mm = MeasurementModel::unweighted(a.clone(), t, eps).unwrap();
    SparseProblem::new(sys.clone(), mm, b, s).unwrap()
}

fn certify(a: &DMatrix<f64>, sys: &DynamicalSystem, s: usize, t: f64) -> Certificate {
    let w = DVector::from_element(a.ncols(), 1.0);
    certify_instance(a, sys, s, &w, t, DEFAULT_EXACT_BUDGET).unwrap().0
}

#[test]
fn bpdn_examples() {
    let cfg = SolverConfig::default();
    let i2 = DMatrix::identity(2, 2);
    let ones = dvector![1.0, 1.0];
    let z = DVector::zeros(2);
    let x = solve_weighted_bpdn(&i2, &z, &dvector![1.0, 0.0], &ones, 0.0, &cfg).unwrap();
    assert!((x - dvector![1.0, 0.0]).norm() < 1e-12);
    let x = solve_weighted_bpdn(&i2, &z, &dvector![1.0, 0.0], &ones, 1.0, &cfg).unwrap();
    assert_eq!(x, DVector::zeros(2));
    let rank1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
    let err = solve_weighted_bpdn(&rank1, &z, &dvector![1.0, -1.0], &ones, 0.1, &cfg).unwrap_err();
    match err {
        Error::Infeasible { min_residual, .. } => assert!((min_residual - 2f64.sqrt()).abs() < 1e-12),
        other => panic!("{other}"),
    }
}

#[test]
fn bpdn_recovers_planted_one_sparse_and_agrees_with_oracle() {
    let a = well_conditioned(64, 2, std::f64::consts::SQRT_2 - 1.0);
    let zero = DynamicalSystem::zero(12).unwrap();
    let mut rng = common::rng(5);
    for _ in 0..10 {
        let x0 = common::sparse_vector(&mut rng, 12, 1);
        let b = &a * &x0;
        let x = solve_weighted_bpdn(
            &a,
            &DVector::zeros(a.nrows()),
            &b,
            &DVector::from_element(12, 1.0),
            0.0,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!((&x - &x0).norm() < 1e-6);
        let problem = planted_problem(&zero, &a, &x0, 1.0, 0.0, 1, 0);
        let oracle = l0_oracle(&problem, ICFG, &SolverConfig::default(), DEFAULT_ORACLE_BUDGET).unwrap();
        assert_eq!(support(&oracle.estimate, 1e-9), support(&x, 1e-9));
        assert!((oracle.estimate - x).norm() < 1e-6);
    }
}

#[test]
fn oracle_recovers_planted_support_through_decay() {
    let a = gen_gaussian_matrix(3, 6, 36, 1.0).unwrap();
    let sys = DynamicalSystem::linear(-DMatrix::identity(6, 6)).unwrap();
    for i in 0..6 {
        let mut x0 = DVector::zeros(6);
        x0[i] = 0.8;
        let problem = planted_problem(&sys, &a, &x0, 0.3, 0.0, 1, 0);
        let out = l0_oracle(&problem, ICFG, &SolverConfig::default(), DEFAULT_ORACLE_BUDGET).unwrap();
        assert!(out.converged);
        assert_eq!(support(&out.estimate, 1e-9), vec![i]);
        assert!((out.estimate - &x0).norm() < 1e-8);
    }
}

#[test]
fn tanh_recovery_within_noise_bound() {
    let raw = gen_gaussian_matrix(160, 12, 4, 1.0).unwrap();
    let a = &raw * rip_balancing_scale(&raw, 2, DEFAULT_EXACT_BUDGET).unwrap();
    let (_, sys) = common::catalog(12, 9, 0.5).remove(3);
    let probe = certify(&a, &sys, 1, 1e-3);
    let t = 0.9 * probe.recovery_horizon.value().unwrap();
    let cert = certify(&a, &sys, 1, t);
    assert!(cert.feasible, "{:?}", cert.reasons);
    let mut rng = common::rng(6);
    for k in 0..5 {
        let x0 = common::sparse_vector(&mut rng, 12, 1);
        let problem = planted_problem(&sys, &a, &x0, t, 1e-3, 1, k);
        let out = recover_initial_state(&problem, ICFG, &SolverConfig::default()).unwrap();
        assert!(out.converged);
        let bound = cert.c1.unwrap() * 1e-3;
        assert!((out.estimate - &x0).norm() <= bound + 1e-6);
    }
}

#[test]
fn outcome_fields_are_consistent() {
    let raw = gen_gaussian_matrix(40, 8, 1, 1.0).unwrap();
    let (_, sys) = common::catalog(8, 2, 0.8).remove(3);
    let x0 = common::sparse_vector(&mut common::rng(3), 8, 2);
    let w = DVector::from_fn(8, |i, _| 1.0 + 0.1 * i as f64);
    let b = &raw * flow(&sys, &x0, 0.2, ICFG).unwrap();
    let mm = MeasurementModel::new(raw.clone(), 0.2, 1e-3, w.clone()).unwrap();
    let problem = SparseProblem::new(sys.clone(), mm, b.clone(), 2).unwrap();
    let out = recover_initial_state(&problem, ICFG, &SolverConfig::default()).unwrap();
    let recomputed = (&b - &raw * flow(&sys, &out.estimate, 0.2, ICFG).unwrap()).norm();
    assert!((recomputed - out.residual).abs() < 1e-12);
    assert!((weighted_l1_norm(&out.estimate, &w).unwrap() - out.weighted_l1).abs() < 1e-15);
}

/// Random instance in the certified regime: balanced tall matrix, random catalog
/// member, time at a fraction of the recovery horizon.
struct Instance {
    a: DMatrix<f64>,
    sys: DynamicalSystem,
    time: f64,
    cert: Certificate,
}

fn certified_instance(seed: u64, family: usize, s: usize, frac: f64) -> Option<Instance> {
    let raw = gen_gaussian_matrix(160, 8, seed, 1.0).unwrap();
    let a = &raw * rip_balancing_scale(&raw, 2 * s, DEFAULT_EXACT_BUDGET).unwrap();
    let (_, sys) = common::catalog(8, seed ^ 0xabc, 0.6).remove(family);
    let probe = certify(&a, &sys, s, 1e-3);
    let t = match probe.recovery_horizon.value()? {
        h if h.is_finite() => frac * h,
        _ => 1.0,
    };
    let cert = certify(&a, &sys, s, t);
    cert.feasible.then_some(Instance { a, sys, time: t, cert })
}

proptest! {
    #![proptest_config(common::proptest_config(24))]

    #[test]
    fn converged_outcomes_are_feasible_and_dominate_truth(
        seed in any::<u64>(),
        family in 0usize..4,
        s in 1usize..3,
        eps in prop_oneof![Just(0.0), 1e-4..1e-2f64],
        frac in 0.1..0.95f64,
    ) {
        let Some(inst) = certified_instance(seed, family, s, frac) else { return Ok(()); };
        let x0 = common::sparse_vector(&mut common::rng(seed), 8, s);
        let problem = planted_problem(&inst.sys, &inst.a, &x0, inst.time, eps, s, seed);
        let cfg = SolverConfig::default();
        let out = recover_initial_state(&problem, ICFG, &cfg).unwrap();
        prop_assert!(out.converged);
        let r = (problem.observation() - &inst.a * flow(&inst.sys, &out.estimate, inst.time, ICFG).unwrap()).norm();
        prop_assert!(r <= eps + cfg.residual_match_tol);
        let ones = DVector::from_element(8, 1.0);
        prop_assert!(out.weighted_l1 <= weighted_l1_norm(&x0, &ones).unwrap() + cfg.inner_tol);
        let bound = recovery_error_bound(&inst.cert, &x0, s, eps).unwrap();
        prop_assert!((&out.estimate - &x0).norm() <= bound + 1e-6);
    }

    #[test]
    fn compressible_signals_respect_the_bound(
        seed in any::<u64>(),
        family in 0usize..4,
        tail in 1e-4..0.05f64,
        eps in prop_oneof![Just(0.0), 1e-4..1e-2f64],
    ) {
        let s = 1;
        let Some(inst) = certified_instance(seed, family, s, 0.5) else { return Ok(()); };
        let mut rng = common::rng(seed);
        let mut x0 = common::sparse_vector(&mut rng, 8, s);
        for i in 0..8 {
            if x0[i] == 0.0 {
                x0[i] = tail * rng.random_range(-1.0..1.0);
            }
        }
        prop_assert!(best_s_term(&x0, s).unwrap() != x0);
        let problem = planted_problem(&inst.sys, &inst.a, &x0, inst.time, eps, s, seed);
        let out = recover_initial_state(&problem, ICFG, &SolverConfig::default()).unwrap();
        let bound = recovery_error_bound(&inst.cert, &x0, s, eps).unwrap();
        prop_assert!((&out.estimate - &x0).norm() <= bound + 1e-6);
    }

    #[test]
    fn scaling_weights_leaves_the_estimate(seed in any::<u64>(), c in 0.05..20.0f64, eps in 0.0..0.05f64) {
        let mut rng = common::rng(seed);
        let a = common::gaussian_matrix(&mut rng, 10, 16, 0.3);
        let w = DVector::from_fn(16, |_, _| rng.random_range(0.5..2.0));
        let x0 = common::sparse_vector(&mut rng, 16, 2);
        let b = &a * &x0;
        let cfg = SolverConfig::default();
        let off = DVector::zeros(10);
        let x1 = solve_weighted_bpdn(&a, &off, &b, &w, eps, &cfg).unwrap();
        let x2 = solve_weighted_bpdn(&a, &off, &b, &(&w * c), eps, &cfg).unwrap();
        prop_assert!((&x1 - &x2).norm() <= cfg.inner_tol, "{}", (&x1 - &x2).norm());
    }

    #[test]
    fn bpdn_output_is_feasible_and_no_worse_than_truth(seed in any::<u64>(), eps in 0.0..0.2f64) {
        let mut rng = common::rng(seed);
        let a = common::gaussian_matrix(&mut rng, 8, 14, 0.35);
        let w = DVector::from_fn(14, |_, _| rng.random_range(0.5..2.0));
        let x0 = common::sparse_vector(&mut rng, 14, 3);
        let e = noise_on_sphere(8, eps, &mut rng);
        let b = &a * &x0 + e;
        let cfg = SolverConfig::default();
        let x = solve_weighted_bpdn(&a, &DVector::zeros(8), &b, &w, eps, &cfg).unwrap();
        prop_assert!((&b - &a * &x).norm() <= eps + cfg.residual_match_tol);
        let obj = weighted_l1_norm(&x, &w).unwrap();
        prop_assert!(obj <= weighted_l1_norm(&x0, &w).unwrap() + cfg.inner_tol);
    }
}
