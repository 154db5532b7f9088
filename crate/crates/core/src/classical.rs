//! Classical paths: the Euler–Lagrange flow for `L = ½|γ̇|² + B·γ̇ − C`,
//! two-point shooting, the Hamilton function and its boundary identities.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ode::{integrate, Dynamics, IntegratorOptions, StepGrid, Trajectory, TrajectoryPoint};
use crate::potential::Potential;

/// Position and velocity at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, v: Vec<f64>) -> Self {
        Self { q, v }
    }
}

/// Lorentz-type dynamics `γ̈ⁱ = −Fᵢⱼ γ̇ʲ − ∂ᵢC` with `Fᵢⱼ = ∂ⱼBᵢ − ∂ᵢBⱼ`.
pub struct LorentzDynamics<'a> {
    potential: &'a dyn Potential,
}

impl<'a> LorentzDynamics<'a> {
    pub fn new(potential: &'a dyn Potential) -> Self {
        Self { potential }
    }
}

fn unit(n: usize, axes: &[usize]) -> Vec<u32> {
    let mut alpha = vec![0; n];
    for &a in axes {
        alpha[a] += 1;
    }
    alpha
}

/// `∂ⱼBᵢ(q)` as a matrix with row `i`, column `j`.
pub fn magnetic_gradient(p: &dyn Potential, q: &[f64]) -> DMatrix<f64> {
    let n = p.dim();
    DMatrix::from_fn(n, n, |i, j| {
        p.partial_b(i, q, &unit(n, &[j])).expect("first derivatives available")
    })
}

/// Field strength `Fᵢⱼ = ∂ⱼBᵢ − ∂ᵢBⱼ`.
pub fn field_strength(p: &dyn Potential, q: &[f64]) -> DMatrix<f64> {
    let g = magnetic_gradient(p, q);
    &g - g.transpose()
}

impl Dynamics for LorentzDynamics<'_> {
    fn dim(&self) -> usize {
        self.potential.dim()
    }

    fn accel(&self, q: &[f64], v: &[f64], out: &mut [f64]) {
        let n = q.len();
        let p = self.potential;
        let f = field_strength(p, q);
        for i in 0..n {
            let mut acc = -p.partial_c(q, &unit(n, &[i])).expect("force available");
            for j in 0..n {
                acc -= f[(i, j)] * v[j];
            }
            out[i] = acc;
        }
    }

    fn accel_jacobian(&self, q: &[f64], v: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = q.len();
        let p = self.potential;
        let second = |k: usize, axes: &[usize]| {
            p.partial_b(k, q, &unit(n, axes)).expect("second derivatives available")
        };
        // ∂aᵢ/∂q_k = −(∂ₖ∂ⱼBᵢ − ∂ₖ∂ᵢBⱼ) vʲ − ∂ᵢ∂ₖC
        let dq = DMatrix::from_fn(n, n, |i, k| {
            let mut acc = -p.partial_c(q, &unit(n, &[i, k])).expect("hessian available");
            for j in 0..n {
                acc -= (second(i, &[k, j]) - second(j, &[k, i])) * v[j];
            }
            acc
        });
        let dv = -field_strength(p, q);
        (dq, dv)
    }

    fn lagrangian(&self, q: &[f64], v: &[f64]) -> f64 {
        let b = self.potential.eval_b(q);
        let kinetic: f64 = v.iter().map(|x| 0.5 * x * x).sum();
        let magnetic: f64 = b.iter().zip(v).map(|(bi, vi)| bi * vi).sum();
        kinetic + magnetic - self.potential.eval_c(q)
    }
}

/// The rescaled equation `γ̈ + ε F γ̇ + ε² ∇C = 0` on unit duration.
///
/// If `γ_ε` solves it on `[0, 1]` then `τ ↦ γ_ε(τ/ε)` solves the original
/// equation on `[0, ε]`.
pub struct RescaledDynamics<'a> {
    inner: LorentzDynamics<'a>,
    eps: f64,
}

impl<'a> RescaledDynamics<'a> {
    pub fn new(potential: &'a dyn Potential, eps: f64) -> Self {
        Self {
            inner: LorentzDynamics::new(potential),
            eps,
        }
    }
}

impl Dynamics for RescaledDynamics<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn accel(&self, q: &[f64], v: &[f64], out: &mut [f64]) {
        // a_ε(q, v) = ε² a(q, v/ε)
        let scaled: Vec<f64> = v.iter().map(|x| x / self.eps).collect();
        self.inner.accel(q, &scaled, out);
        for x in out.iter_mut() {
            *x *= self.eps * self.eps;
        }
    }

    fn accel_jacobian(&self, q: &[f64], v: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let scaled: Vec<f64> = v.iter().map(|x| x / self.eps).collect();
        let (dq, dv) = self.inner.accel_jacobian(q, &scaled);
        (dq * (self.eps * self.eps), dv * self.eps)
    }

    fn lagrangian(&self, q: &[f64], v: &[f64]) -> f64 {
        let scaled: Vec<f64> = v.iter().map(|x| x / self.eps).collect();
        self.eps * self.inner.lagrangian(q, &scaled)
    }
}

/// Integrator and shooting settings.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub integrator: IntegratorOptions,
    pub grid: StepGrid,
    pub max_iterations: usize,
    pub bvp_tol: f64,
    /// Relative threshold on `|det ∂q(t)/∂v₀|` below which the path is declared degenerate.
    pub singular_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            integrator: IntegratorOptions::default(),
            grid: StepGrid::Adaptive,
            max_iterations: 50,
            bvp_tol: 1e-9,
            singular_tol: 1e-8,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            integrator: IntegratorOptions::with_tol(tol),
            ..Self::default()
        }
    }

    /// Same settings with the step grid frozen to `fractions`.
    pub fn frozen(&self, fractions: Arc<Vec<f64>>) -> Self {
        Self {
            grid: StepGrid::Fixed(fractions),
            ..self.clone()
        }
    }
}

/// A classical trajectory with dense output and its variational frame.
#[derive(Debug, Clone)]
pub struct ClassicalPath {
    pub duration: f64,
    pub q0: DVector<f64>,
    pub q1: DVector<f64>,
    pub v0: DVector<f64>,
    /// Newton iterations used by the shooting solve (0 for a plain flow).
    pub iterations: usize,
    /// `|γ(t) − q₁|`.
    pub terminal_error: f64,
    trajectory: Trajectory,
}

impl ClassicalPath {
    pub fn dim(&self) -> usize {
        self.q0.len()
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    /// `S_γ = ∫ ½|γ̇|² + B·γ̇ − C`, accumulated alongside the flow.
    pub fn action(&self) -> f64 {
        self.trajectory.action()
    }

    pub fn point(&self, tau: f64) -> TrajectoryPoint {
        self.trajectory.point(tau)
    }

    pub fn end(&self) -> TrajectoryPoint {
        self.trajectory.final_point()
    }

    /// Terminal velocity `γ̇(t)`.
    pub fn v1(&self) -> DVector<f64> {
        self.end().v
    }

    /// `∂q(τ)/∂v₀` block of the variational frame.
    pub fn position_velocity_block(&self, tau: f64) -> DMatrix<f64> {
        let n = self.dim();
        self.point(tau).phi.view((0, n), (n, n)).into_owned()
    }

    /// Step grid (fractions of the duration) to freeze for neighbouring solves.
    pub fn grid_fractions(&self) -> Arc<Vec<f64>> {
        self.trajectory.grid_fractions()
    }

    /// Largest EOM defect `|γ̈ − a(γ, γ̇)|` of the interpolant at grid midpoints.
    pub fn eom_residual(&self, potential: &dyn Potential) -> f64 {
        let dynamics = LorentzDynamics::new(potential);
        let nodes = self.trajectory.nodes();
        let mut worst = 0.0f64;
        let mut acc = vec![0.0; self.dim()];
        for w in nodes.windows(2) {
            let p = self.point(0.5 * (w[0] + w[1]));
            dynamics.accel(p.q.as_slice(), p.v.as_slice(), &mut acc);
            for (x, y) in p.a.iter().zip(&acc) {
                worst = worst.max((x - y).abs());
            }
        }
        worst
    }
}

/// Integrates the classical equation from `start` for duration `t`.
pub fn flow(
    potential: &dyn Potential,
    start: &PhaseState,
    t: f64,
    opts: &SolverOptions,
) -> Result<ClassicalPath> {
    let dynamics = LorentzDynamics::new(potential);
    let trajectory = integrate(&dynamics, &start.q, &start.v, t, &opts.integrator, &opts.grid)?;
    let end = trajectory.final_point();
    Ok(ClassicalPath {
        duration: t,
        q0: DVector::from_column_slice(&start.q),
        q1: end.q.clone(),
        v0: DVector::from_column_slice(&start.v),
        iterations: 0,
        terminal_error: 0.0,
        trajectory,
    })
}

/// Straight-line initial velocity `(q₁ − q₀)/t`.
pub fn straight_line_guess(t: f64, q0: &[f64], q1: &[f64]) -> Vec<f64> {
    q0.iter().zip(q1).map(|(a, b)| (b - a) / t).collect()
}

// The free-particle value `t·I` sets the scale of `∂q(t)/∂v₀`.
fn degenerate_check(block: &DMatrix<f64>, t: f64, singular_tol: f64) -> Result<()> {
    let n = block.nrows();
    let det = block.determinant();
    let scale = t.max(block.norm()).powi(n as i32);
    let threshold = singular_tol * scale;
    if !(det.abs() >= threshold) {
        return Err(Error::DegenerateJacobian { det, threshold });
    }
    Ok(())
}

/// Solves `γ(0) = q₀, γ(t) = q₁` by damped Newton shooting on `v₀`.
///
/// After reaching `bvp_tol` a couple of extra Newton steps are taken while the
/// residual keeps shrinking, so the returned path is a solution to roundoff.
pub fn shoot(
    potential: &dyn Potential,
    t: f64,
    q0: &[f64],
    q1: &[f64],
    guess: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<ClassicalPath> {
    let n = potential.dim();
    for x in [q0, q1] {
        if x.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: x.len(),
            });
        }
    }
    let mut v0: Vec<f64> = match guess {
        Some(g) => {
            if g.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: g.len(),
                });
            }
            g.to_vec()
        }
        None => straight_line_guess(t, q0, q1),
    };
    if v0.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("velocity guess is not finite".into()));
    }
    let target = DVector::from_column_slice(q1);
    let residual_of = |path: &ClassicalPath| -> DVector<f64> { &path.end().q - &target };

    let mut path = flow(potential, &PhaseState::new(q0.to_vec(), v0.clone()), t, opts)?;
    let mut residual = residual_of(&path);
    let mut err = residual.norm();
    let scale = 1.0 + target.norm();
    let mut iterations = 0;
    let mut converged_at: Option<usize> = None;
    loop {
        if err <= opts.bvp_tol * scale && converged_at.is_none() {
            converged_at = Some(iterations);
        }
        if let Some(k) = converged_at {
            if iterations >= k + 2 || err == 0.0 {
                break;
            }
        }
        if iterations >= opts.max_iterations {
            if converged_at.is_some() {
                break;
            }
            return Err(Error::NonConvergence {
                iterations,
                residual: err,
            });
        }
        let jac = path.position_velocity_block(t);
        degenerate_check(&jac, t, opts.singular_tol)?;
        let step = jac
            .lu()
            .solve(&residual)
            .ok_or(Error::DegenerateJacobian {
                det: 0.0,
                threshold: opts.singular_tol,
            })?;
        // Backtracking on the residual norm.
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = v0.iter().zip(step.iter()).map(|(v, s)| v - lambda * s).collect();
            match flow(potential, &PhaseState::new(q0.to_vec(), trial.clone()), t, opts) {
                Ok(candidate) => {
                    let r = residual_of(&candidate);
                    let e = r.norm();
                    if e < err || (converged_at.is_none() && e <= opts.bvp_tol * scale) {
                        accepted = Some((trial, candidate, r, e));
                        break;
                    }
                    if converged_at.is_some() {
                        break;
                    }
                }
                Err(e @ Error::StepUnderflow { .. }) if lambda < 1e-6 => return Err(e),
                Err(_) => {}
            }
            lambda *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((trial, candidate, r, e)) => {
                v0 = trial;
                path = candidate;
                residual = r;
                err = e;
            }
            None if converged_at.is_some() => break,
            None => {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: err,
                })
            }
        }
    }
    degenerate_check(&path.position_velocity_block(t), t, opts.singular_tol)?;
    path.q1 = target;
    path.iterations = iterations;
    path.terminal_error = err;
    Ok(path)
}

/// Action `S_γ` of a solved path.
pub fn action(path: &ClassicalPath) -> f64 {
    path.action()
}

/// Central-difference gradients of `S` with respect to both endpoints,
/// re-shooting every neighbour from the centre path's `v₀`.
pub fn action_gradients_fd(
    potential: &dyn Potential,
    path: &ClassicalPath,
    h: f64,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = path.dim();
    let frozen = opts.frozen(path.grid_fractions());
    let t = path.duration;
    let guess: Vec<f64> = path.v0.iter().copied().collect();
    let q0: Vec<f64> = path.q0.iter().copied().collect();
    let q1: Vec<f64> = path.q1.iter().copied().collect();
    let s_at = |a: &[f64], b: &[f64]| -> Result<f64> {
        Ok(shoot(potential, t, a, b, Some(&guess), &frozen)?.action())
    };
    let mut g0 = DVector::zeros(n);
    let mut g1 = DVector::zeros(n);
    for i in 0..n {
        let (mut plus, mut minus) = (q0.clone(), q0.clone());
        plus[i] += h;
        minus[i] -= h;
        g0[i] = (s_at(&plus, &q1)? - s_at(&minus, &q1)?) / (2.0 * h);
        let (mut plus, mut minus) = (q1.clone(), q1.clone());
        plus[i] += h;
        minus[i] -= h;
        g1[i] = (s_at(&q0, &plus)? - s_at(&q0, &minus)?) / (2.0 * h);
    }
    Ok((g0, g1))
}

/// Residuals of `∂(−S)/∂q₀ = γ̇(0) + B(q₀)` and `∂S/∂q₁ = γ̇(t) + B(q₁)`,
/// with the gradients of `S` taken by central differences of step `h`.
pub fn boundary_momentum_residual(
    potential: &dyn Potential,
    path: &ClassicalPath,
    h: f64,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (g0, g1) = action_gradients_fd(potential, path, h, opts)?;
    let b0 = DVector::from_vec(potential.eval_b(path.q0.as_slice()));
    let b1 = DVector::from_vec(potential.eval_b(path.q1.as_slice()));
    let r0 = -g0 - (&path.v0 + b0);
    let r1 = g1 - (path.v1() + b1);
    Ok((r0, r1))
}

/// Finds the source point `q₀` whose path launched with `γ̇(0) = −B(q₀)`
/// reaches `q₁` at time `t`, where `∂S/∂q₀` vanishes.
pub fn stationary_source_point(
    potential: &dyn Potential,
    t: f64,
    q1: &[f64],
    opts: &SolverOptions,
) -> Result<(DVector<f64>, ClassicalPath)> {
    let n = potential.dim();
    if q1.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: q1.len(),
        });
    }
    let target = DVector::from_column_slice(q1);
    let launch = |q: &DVector<f64>| -> Result<ClassicalPath> {
        let b: Vec<f64> = potential.eval_b(q.as_slice()).iter().map(|x| -x).collect();
        flow(potential, &PhaseState::new(q.iter().copied().collect(), b), t, opts)
    };
    // q₁ − q₀ ≈ −t B(q₀)
    let b1 = DVector::from_vec(potential.eval_b(q1));
    let mut q = &target + b1 * t;
    let scale = 1.0 + target.norm();
    let mut converged_at: Option<usize> = None;
    for k in 0..opts.max_iterations {
        let path = launch(&q)?;
        let end = path.end();
        let residual = &end.q - &target;
        let err = residual.norm();
        if err <= opts.bvp_tol * scale && converged_at.is_none() {
            converged_at = Some(k);
        }
        if let Some(c) = converged_at {
            if k >= c + 2 || err == 0.0 {
                let mut path = path;
                path.q1 = target.clone();
                path.iterations = k;
                path.terminal_error = err;
                return Ok((q, path));
            }
        }
        // d γ(t)/dq = ∂q/∂q₀ − ∂q/∂v₀ · ∇B(q)
        let phi = &end.phi;
        let a = phi.view((0, 0), (n, n)).into_owned();
        let bm = phi.view((0, n), (n, n)).into_owned();
        let jac = a - bm * magnetic_gradient(potential, q.as_slice());
        let step = jac.lu().solve(&residual).ok_or_else(|| {
            Error::StationaryPointNotFound("singular Jacobian in source-point Newton".into())
        })?;
        q -= step;
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        residual: f64::NAN,
    })
}
