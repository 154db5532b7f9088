//! Diagram values against independent quadrature.

use semiprop::classical::{shoot, SolverOptions};
use semiprop::diagram::{enumerate_topologies, MarkedDiagram};
use semiprop::evaluate::{evaluate, EvalOptions};
use semiprop::jacobi::{jacobi_frame, GreenKernel};
use semiprop::potential::{PotentialSpec, Term};

fn tight() -> SolverOptions {
    SolverOptions::with_tol(1e-12)
}

fn diagram(key: &str) -> MarkedDiagram {
    key.parse().unwrap()
}

/// Adaptive Simpson on `[a, b]`.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

/// `∫∫_{[0,t]²} f` split along the diagonal.
fn square(f: &dyn Fn(f64, f64) -> f64, t: f64, tol: f64) -> f64 {
    let inner = |s: f64| simpson(&|u| f(s, u), 0.0, s, tol) + simpson(&|u| f(s, u), s, t, tol);
    simpson(&inner, 0.0, t, tol * t)
}

#[test]
fn free_particle_values_vanish() {
    let free = PotentialSpec::free(1);
    let path = shoot(&free, 1.0, &[0.0], &[0.5], None, &tight()).unwrap();
    let kernel = GreenKernel::new(jacobi_frame(&path, 1e-8).unwrap());
    for d in semiprop::diagram::enumerate_connected(3).unwrap() {
        let v = evaluate(&free, &kernel, &d, &EvalOptions::default()).unwrap();
        assert_eq!(v.value, 0.0);
    }
}

#[test]
fn figure_eight_on_resting_quartic_path() {
    let quartic = PotentialSpec::quartic(1.0);
    // 24 ∫₀¹ τ²(1−τ)² dτ = 24 (1/3 − 1/2 + 1/5)
    let exact = 24.0 * (1.0 / 3.0 - 2.0 / 4.0 + 1.0 / 5.0);
    let path = shoot(&quartic, 1.0, &[0.0], &[0.0], None, &tight()).unwrap();
    let kernel = GreenKernel::new(jacobi_frame(&path, 1e-8).unwrap());
    let fig8 = evaluate(&quartic, &kernel, &diagram("0-0,0-0"), &EvalOptions::default()).unwrap();
    assert!((fig8.value - exact).abs() < 1e-8, "{}", fig8.value);
    for key in ["0-1,0-1,0-1", "0-0,0-1,1-1"] {
        let v = evaluate(&quartic, &kernel, &diagram(key), &EvalOptions::default()).unwrap();
        assert!(v.value.abs() < 1e-10, "{key}: {}", v.value);
    }
    // t³ scaling
    let path = shoot(&quartic, 0.7, &[0.0], &[0.0], None, &tight()).unwrap();
    let kernel = GreenKernel::new(jacobi_frame(&path, 1e-8).unwrap());
    let v = evaluate(&quartic, &kernel, &diagram("0-0,0-0"), &EvalOptions::default()).unwrap();
    assert!((v.value - exact * 0.7f64.powi(3)).abs() < 1e-10);
}

#[test]
fn theta_on_generic_quartic_path_matches_square_quadrature() {
    let quartic = PotentialSpec::quartic(1.0);
    let t = 0.8;
    let path = shoot(&quartic, t, &[0.1], &[0.4], None, &tight()).unwrap();
    let kernel = GreenKernel::new(jacobi_frame(&path, 1e-8).unwrap());
    let value = evaluate(&quartic, &kernel, &diagram("0-1,0-1,0-1"), &EvalOptions::default())
        .unwrap()
        .value;
    let gamma = |s: f64| path.point(s).q[0];
    let oracle = square(
        &|s, u| 576.0 * gamma(s) * gamma(u) * kernel.green(s, u)[(0, 0)].powi(3),
        t,
        1e-11,
    );
    assert!((value - oracle).abs() < 1e-7, "{value} vs {oracle}");
}

#[test]
fn doubly_marked_edge_matches_gaussian_smoothing() {
    // one dimension, B = 0.3 q³ + 0.2 q², C = ½ q²: marked vertices weigh −B''(γ)
    let sys = PotentialSpec::new(
        1,
        vec![Term::new(0.5, vec![2])],
        vec![vec![Term::new(0.3, vec![3]), Term::new(0.2, vec![2])]],
        6,
    )
    .unwrap();
    let t = 0.9;
    let path = shoot(&sys, t, &[0.2], &[0.7], None, &tight()).unwrap();
    let kernel = GreenKernel::new(jacobi_frame(&path, 1e-8).unwrap());
    let value = evaluate(&sys, &kernel, &diagram("0*-1*,0-1,0-1"), &EvalOptions::default())
        .unwrap()
        .value;

    let w = |s: f64| -(1.8 * path.point(s).q[0] + 0.4);
    let smooth = square(
        &|s, u| {
            let d = kernel.green_derivatives(s, u);
            w(s) * w(u) * d.d11_smooth[(0, 0)] * kernel.green(s, u)[(0, 0)].powi(2)
        },
        t,
        1e-11,
    );
    // δ part through a normalized Gaussian of width σ; G² has a kink on the diagonal,
    // so the smoothing error is linear in σ
    let smeared = |sigma: f64| {
        let g = |x: f64| (-(x * x) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let inner = |u: f64| {
            let c = kernel.green_derivatives(u, u).delta_coefficient()[(0, 0)];
            let lo = (u - 10.0 * sigma).max(0.0);
            let hi = (u + 10.0 * sigma).min(t);
            let f = |s: f64| w(s) * w(u) * c * g(s - u) * kernel.green(s, u)[(0, 0)].powi(2);
            simpson(&f, lo, u, 1e-13) + simpson(&f, u, hi, 1e-13)
        };
        simpson(&inner, 0.0, t, 1e-12)
    };
    let (a, b) = (smeared(1e-2 * t), smeared(1e-3 * t));
    let extrapolated = (10.0 * b - a) / 9.0;
    assert!((a - b).abs() > 1e-7, "smoothing should matter at σ = 1e-2 t");
    assert!((value - (smooth + extrapolated)).abs() < 1e-5, "{value} vs {}", smooth + extrapolated);
}

#[test]
fn isotropic_relabeling_invariance() {
    // C = (q₁² + q₂²)² is rotation invariant; rotating the endpoints leaves values unchanged
    let sys = PotentialSpec::new(
        2,
        vec![Term::new(1.0, vec![4, 0]), Term::new(2.0, vec![2, 2]), Term::new(1.0, vec![0, 4])],
        vec![vec![], vec![]],
        6,
    )
    .unwrap();
    let (c, s) = (0.6f64.cos(), 0.6f64.sin());
    let rot = |x: [f64; 2]| [c * x[0] - s * x[1], s * x[0] + c * x[1]];
    let (q0, q1) = ([0.1, 0.3], [0.5, -0.2]);
    let t = 0.6;
    let opts = EvalOptions::default();
    for top in enumerate_topologies(2).unwrap() {
        let a = {
            let path = shoot(&sys, t, &q0, &q1, None, &tight()).unwrap();
            let k = GreenKernel::new(jacobi_frame(&path, 1e-8).unwrap());
            evaluate(&sys, &k, &top, &opts).unwrap().value
        };
        let b = {
            let path = shoot(&sys, t, &rot(q0), &rot(q1), None, &tight()).unwrap();
            let k = GreenKernel::new(jacobi_frame(&path, 1e-8).unwrap());
            evaluate(&sys, &k, &top, &opts).unwrap().value
        };
        assert!((a - b).abs() < 1e-8 * a.abs().max(1.0), "{top}: {a} vs {b}");
    }
}

#[test]
fn labeling_order_and_node_refinement() {
    let quartic = PotentialSpec::quartic(1.0);
    let t = 0.8;
    let path = shoot(&quartic, t, &[0.1], &[0.4], None, &tight()).unwrap();
    let kernel = GreenKernel::new(jacobi_frame(&path, 1e-8).unwrap());
    let a = evaluate(&quartic, &kernel, &diagram("0-0,0-1,1-1"), &EvalOptions::default()).unwrap();
    let b = evaluate(&quartic, &kernel, &diagram("1-1,1-0,0-0"), &EvalOptions::default()).unwrap();
    assert!((a.value - b.value).abs() < 1e-12);
    let coarse = EvalOptions {
        gauss_nodes: 8,
        tol: 1.0,
        ..EvalOptions::default()
    };
    let c = evaluate(&quartic, &kernel, &diagram("0-1,0-1,0-1"), &coarse).unwrap();
    let f = evaluate(&quartic, &kernel, &diagram("0-1,0-1,0-1"), &EvalOptions::default()).unwrap();
    assert!((c.value - f.value).abs() < 1e-6);
    assert!(f.est_error < 1e-10);
}

#[test]
fn insufficient_derivative_order_is_rejected() {
    let quartic = PotentialSpec::quartic(1.0).with_max_order(3);
    let path = shoot(&quartic, 0.5, &[0.0], &[0.1], None, &tight()).unwrap();
    let kernel = GreenKernel::new(jacobi_frame(&path, 1e-8).unwrap());
    assert!(evaluate(&quartic, &kernel, &diagram("0-0,0-0"), &EvalOptions::default()).is_err());
}
