//! Series assembly and theorem checks on systems with closed forms.

use semiprop::classical::{shoot, SolverOptions};
use semiprop::jacobi::{jacobi_frame, mixed_hessian};
use semiprop::potential::{Potential, PotentialSpec, Term};
use semiprop::series::{compute_v, logdet_half, propagator_parts, DiagramSet, SeriesOptions};
use semiprop::verify::{
    hamilton_jacobi_residual, log_slope, FdStep, schrodinger_residual, semigroup_leading_check, short_time_suite,
};
use std::f64::consts::PI;

fn opts() -> SeriesOptions {
    SeriesOptions {
        solver: SolverOptions::with_tol(1e-12),
        ..SeriesOptions::default()
    }
}

fn harmonic_action(t: f64, q0: f64, q1: f64) -> f64 {
    ((q0 * q0 + q1 * q1) * t.cos() - 2.0 * q0 * q1) / (2.0 * t.sin())
}

fn magnetic() -> PotentialSpec {
    PotentialSpec::new(
        2,
        vec![Term::new(0.5, vec![2, 0]), Term::new(0.2, vec![1, 2]), Term::new(0.1, vec![0, 4])],
        vec![
            vec![Term::new(-0.5, vec![0, 1]), Term::new(0.3, vec![2, 1])],
            vec![Term::new(0.5, vec![1, 0]), Term::new(-0.2, vec![0, 2])],
        ],
        6,
    )
    .unwrap()
}

#[test]
fn free_particle_series() {
    let ds = DiagramSet::new(3).unwrap();
    for n in [1, 2] {
        let free = PotentialSpec::free(n);
        let (q0, q1) = (vec![0.2; n], vec![-0.4; n]);
        let t = 1.7;
        let r = compute_v(&free, t, &q0, &q1, 3, None, &ds, &opts()).unwrap();
        let dist2 = n as f64 * 0.36;
        assert!((r.series.get(0) + dist2 / (2.0 * t)).abs() < 1e-12);
        assert!((r.series.get(1) - 0.5 * (1.0 / t.powi(n as i32)).ln()).abs() < 1e-12);
        assert_eq!(r.series.get(2), 0.0);
        assert_eq!(r.series.get(3), 0.0);
        let parts = propagator_parts(&r.series);
        assert!(parts.correction.coeffs().iter().skip(1).all(|&c| c == 0.0));
        assert_eq!(parts.correction.get(0), 1.0);
    }
}

#[test]
fn logdet_examples() {
    let cases: [(PotentialSpec, f64, f64); 3] = [
        (PotentialSpec::free(1), 2.0, 0.5 * 0.5f64.ln()),
        (PotentialSpec::harmonic(1, 1.0), 1.0, 0.5 * (1.0 / 1f64.sin()).ln()),
        (PotentialSpec::free(2), 1.0, 0.0),
    ];
    for (sys, t, want) in cases {
        let n = sys.dim();
        let path = shoot(&sys, t, &vec![0.0; n], &vec![0.3; n], None, &opts().solver).unwrap();
        let frame = jacobi_frame(&path, 1e-8).unwrap();
        assert!((logdet_half(&frame) - want).abs() < 1e-10);
        // transposed block gives the same value
        let blocks = mixed_hessian(&sys, &frame).unwrap();
        assert!((0.5 * blocks.s01.transpose().determinant().abs().ln() - want).abs() < 1e-10);
    }
}

#[test]
fn harmonic_series_closed_form() {
    let ds = DiagramSet::new(3).unwrap();
    let h = PotentialSpec::harmonic(1, 1.0);
    let r = compute_v(&h, 1.0, &[0.0], &[1.0], 3, None, &ds, &opts()).unwrap();
    assert!((r.series.get(0) + harmonic_action(1.0, 0.0, 1.0)).abs() < 1e-8);
    assert!((r.series.get(1) - 0.5 * (1.0 / 1f64.sin()).ln()).abs() < 1e-8);
    assert!(r.series.get(2).abs() < 1e-9);
    assert!(r.series.get(3).abs() < 1e-9);
    let parts = propagator_parts(&r.series);
    assert!(parts.correction.coeffs().iter().skip(1).all(|c| c.abs() < 1e-9));
    assert!((parts.vanvleck - (1.0 / 1f64.sin()).sqrt()).abs() < 1e-8);
}

#[test]
fn quartic_resting_path_second_order() {
    let ds = DiagramSet::new(2).unwrap();
    let quartic = PotentialSpec::quartic(1.0);
    let r = compute_v(&quartic, 1.0, &[0.0], &[0.0], 2, None, &ds, &opts()).unwrap();
    // only the unmarked figure-eight survives on γ ≡ 0: (24 ∫ τ²(1−τ)²) / 8
    let want = 24.0 * (1.0 / 3.0 - 0.5 + 0.2) / 8.0;
    assert!((r.series.get(2) - want).abs() < 1e-9);
    let nonzero: Vec<&str> = r
        .diagrams
        .iter()
        .filter(|d| d.value.abs() > 1e-12)
        .map(|d| d.key.as_str())
        .collect();
    assert_eq!(nonzero, vec!["0-0,0-0"]);
    let parts = propagator_parts(&r.series);
    assert_eq!(parts.correction.get(1), r.series.get(2));
    // every contribution lands in the order of its loop number
    assert!(r.diagrams.iter().all(|d| d.lambda == 2));
}

#[test]
fn schrodinger_residual_free_and_harmonic() {
    let ds = DiagramSet::new(2).unwrap();
    let free = PotentialSpec::free(2);
    let r = schrodinger_residual(&free, 0.9, &[0.1, 0.2], &[0.5, -0.3], 2, None, &ds, &opts(), FdStep::richardson(4e-3)).unwrap();
    assert!(r.orders.iter().all(|&x| x < 1e-10), "{:?}", r.orders);
    let h = PotentialSpec::harmonic(1, 1.0);
    let r = schrodinger_residual(&h, 1.0, &[0.0], &[1.0], 2, None, &ds, &opts(), FdStep::central(1e-3)).unwrap();
    assert!(r.orders.iter().all(|&x| x < 1e-5), "{:?}", r.orders);
}

#[test]
fn schrodinger_residual_magnetic_second_order() {
    let ds = DiagramSet::new(2).unwrap();
    let sys = magnetic();
    let coarse = schrodinger_residual(&sys, 0.7, &[0.1, -0.2], &[0.5, 0.3], 2, None, &ds, &opts(), FdStep::central(2e-3)).unwrap();
    let fine = schrodinger_residual(&sys, 0.7, &[0.1, -0.2], &[0.5, 0.3], 2, None, &ds, &opts(), FdStep::central(1e-3)).unwrap();
    assert!(fine.passed(), "{:?}", fine.orders);
    for k in 0..2 {
        assert!(coarse.orders[k] / fine.orders[k] > 3.0, "{:?} {:?}", coarse.orders, fine.orders);
    }
    assert!(fine.orders[2] < 1e-6, "{:?}", fine.orders);
}

#[test]
fn order_zero_residual_is_the_target_hj_residual() {
    let ds = DiagramSet::new(0).unwrap();
    let sys = magnetic();
    let o = opts();
    let h = 1e-3;
    let r = schrodinger_residual(&sys, 0.7, &[0.1, -0.2], &[0.5, 0.3], 0, None, &ds, &o, FdStep::central(h)).unwrap();
    let path = shoot(&sys, 0.7, &[0.1, -0.2], &[0.5, 0.3], None, &o.solver).unwrap();
    let hj = hamilton_jacobi_residual(&sys, &path, FdStep::central(h), &o.solver).unwrap();
    assert!((r.orders[0] - hj.target).abs() < 1e-8, "{} vs {}", r.orders[0], hj.target);
}

#[test]
fn hamilton_jacobi_examples() {
    let o = opts().solver;
    let free = PotentialSpec::free(1);
    let path = shoot(&free, 1.0, &[0.0], &[1.0], None, &o).unwrap();
    let r = hamilton_jacobi_residual(&free, &path, FdStep::richardson(1e-3), &o).unwrap();
    assert!(r.source < 1e-9 && r.target < 1e-9, "{r:?}");
    let r = hamilton_jacobi_residual(&free, &path, FdStep::central(1e-3), &o).unwrap();
    assert!(r.source < 1e-6 && r.target < 1e-6, "{r:?}");
    let h = PotentialSpec::harmonic(1, 1.0);
    let path = shoot(&h, 1.0, &[0.0], &[1.0], None, &o).unwrap();
    let r = hamilton_jacobi_residual(&h, &path, FdStep::central(1e-3), &o).unwrap();
    assert!(r.source < 1e-6 && r.target < 1e-6, "{r:?}");
    let field = PotentialSpec::uniform_field(1.0);
    let path = shoot(&field, 0.8, &[0.1, 0.2], &[0.6, -0.1], None, &o).unwrap();
    let r = hamilton_jacobi_residual(&field, &path, FdStep::central(1e-3), &o).unwrap();
    assert!(r.source < 1e-6 && r.target < 1e-6, "{r:?}");
}

const TIMES: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

fn within(measured: Option<f64>, derived: f64) -> bool {
    measured.is_some_and(|m| (m - derived).abs() <= 0.2 * derived)
}

#[test]
fn short_time_harmonic_matches_closed_form_rates() {
    let h = PotentialSpec::harmonic(1, 1.0);
    let q1 = 0.5;
    let rep = short_time_suite(&h, &[q1], &TIMES, None, &opts()).unwrap();
    // closed forms along q₀* = q₁ / cos t
    let t = TIMES;
    let derived = |f: &dyn Fn(f64) -> f64| log_slope(&t, &t.map(f)).unwrap();
    let a = derived(&|t| (t / t.sin() - 1.0).abs());
    let b = derived(&|t| harmonic_action(t, q1 / t.cos(), q1).abs());
    let c = derived(&|t| q1 * (1.0 / t.cos() - 1.0));
    let d = derived(&|t| 1.0 / t.cos().sqrt() - 1.0);
    assert!(within(rep.slope_hessian, a), "{:?} vs {a}", rep.slope_hessian);
    assert!(within(rep.slope_action, b), "{:?} vs {b}", rep.slope_action);
    assert!(within(rep.slope_drift, c), "{:?} vs {c}", rep.slope_drift);
    assert!(within(rep.slope_ratio, d), "{:?} vs {d}", rep.slope_ratio);
    assert!(rep.ratio_monotone);
    for row in &rep.rows {
        assert!((row.q0[0] - q1 / row.t.cos()).abs() < 1e-8);
    }
}

#[test]
fn short_time_uniform_field_rates() {
    let field = PotentialSpec::uniform_field(1.0);
    let rep = short_time_suite(&field, &[0.5, -0.3], &TIMES, None, &opts()).unwrap();
    // t·S₀₁ − I has the off-diagonal t·b/2; S ≈ −½|B(q₁)|² t; drift ≈ ½ t² F B; ratio = 1/cos(bt/2)
    assert!(within(rep.slope_hessian, 1.0), "{:?}", rep.slope_hessian);
    assert!(within(rep.slope_action, 1.0), "{:?}", rep.slope_action);
    assert!(within(rep.slope_drift, 2.0), "{:?}", rep.slope_drift);
    assert!(within(rep.slope_ratio, 2.0), "{:?}", rep.slope_ratio);
    assert!(rep.ratio_monotone);
    for row in &rep.rows {
        let want = 1.0 / (0.5 * row.t).cos();
        assert!((row.ratio - want).abs() < 1e-7, "{} vs {want}", row.ratio);
    }
}

#[test]
fn short_time_free_particle_is_exact() {
    let free = PotentialSpec::free(2);
    let rep = short_time_suite(&free, &[0.3, 0.1], &TIMES, None, &opts()).unwrap();
    for row in &rep.rows {
        assert!(row.hessian_deviation < 1e-10);
        assert!(row.drift < 1e-12);
        assert!((row.ratio - 1.0).abs() < 1e-10);
    }
}

#[test]
fn semigroup_free_and_harmonic() {
    let o = opts().solver;
    let free = PotentialSpec::free(1);
    let r = semigroup_leading_check(&free, 0.3, 0.5, &[0.0], &[1.0], None, &o).unwrap();
    assert!(r.action_defect < 1e-12 && r.vanvleck_defect < 1e-12, "{r:?}");
    assert!((r.q_star[0] - 0.375).abs() < 1e-12);
    assert_eq!((r.morse_full, r.hessian_index), (0, 0));

    let h = PotentialSpec::harmonic(1, 1.0);
    let r = semigroup_leading_check(&h, 0.4, 0.4, &[0.0], &[1.0], None, &o).unwrap();
    assert!(r.action_defect < 1e-8, "{r:?}");
    assert!(r.vanvleck_defect < 1e-7, "{r:?}");
    assert_eq!((r.morse_full, r.morse_first, r.morse_second, r.hessian_index), (0, 0, 0, 0));

    let r = semigroup_leading_check(&h, 0.6 * PI, 0.6 * PI, &[0.2], &[0.5], None, &o).unwrap();
    assert_eq!(r.morse_full, 1);
    assert_eq!(r.hessian_index, 1);
    assert!(r.morse_additive);
    assert!(r.action_defect < 1e-8 && r.vanvleck_defect < 1e-6, "{r:?}");
}
