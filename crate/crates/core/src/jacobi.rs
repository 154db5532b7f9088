//! Jacobi fields along a classical path, the mixed action Hessian, the
//! fluctuation Green's function and the Morse index.
//!
//! With `A(τ) = ∂γ(τ)/∂q₀` and `Y(τ) = ∂γ(τ)/∂v₀` taken from the variational
//! frame, the boundary-adapted fields are
//!
//! ```text
//! φ₁(τ) = Y(τ) Y(t)⁻¹              φ₁(0) = 0, φ₁(t) = I
//! φ₀(τ) = A(τ) − φ₁(τ) A(t)        φ₀(0) = I, φ₀(t) = 0
//! ```
//!
//! and `∂²(−S)/∂q₀∂q₁ = φ̇₁(0) = Y(t)⁻¹`. The Green's function is
//!
//! ```text
//! G(ς, τ) = φ₀(ς) S₀₁⁻ᵀ φ₁(τ)ᵀ   for ς > τ
//!         = φ₁(ς) S₀₁⁻¹ φ₀(τ)ᵀ   for ς < τ
//! ```
//!
//! which vanishes on the boundary of the square, is symmetric under
//! `G(ς, τ) = G(τ, ς)ᵀ`, and satisfies `D_τ G = −δ`.

use nalgebra::{DMatrix, DVector};

use crate::classical::{magnetic_gradient, ClassicalPath};
use crate::error::{Error, Result};
use crate::potential::{axes_to_multi_index, Potential};
use crate::quadrature::GaussLegendre;

/// Coefficients of the fluctuation operator
/// `D[ξ] = ξ̈ + F ξ̇ + W ξ` at one point of the path.
#[derive(Debug, Clone)]
pub struct FluctuationCoefficients {
    /// `Fᵢⱼ = ∂ⱼBᵢ − ∂ᵢBⱼ`.
    pub first: DMatrix<f64>,
    /// `Wᵢⱼ = ∂ⱼ∂ₖBᵢ γ̇ᵏ − ∂ᵢ∂ⱼBₖ γ̇ᵏ + ∂ᵢ∂ⱼC`.
    pub zeroth: DMatrix<f64>,
}

/// Linearization of the equation of motion about `(q, v)`.
pub fn fluctuation_coefficients(p: &dyn Potential, q: &[f64], v: &[f64]) -> FluctuationCoefficients {
    let n = p.dim();
    let grad = magnetic_gradient(p, q);
    let first = &grad - grad.transpose();
    let d2b = |comp: usize, a: usize, b: usize| {
        p.partial_b(comp, q, &axes_to_multi_index(n, &[a, b]))
            .expect("second derivatives available")
    };
    let zeroth = DMatrix::from_fn(n, n, |i, j| {
        let mut w = p
            .partial_c(q, &axes_to_multi_index(n, &[i, j]))
            .expect("second derivatives available");
        for k in 0..n {
            w += (d2b(i, j, k) - d2b(k, i, j)) * v[k];
        }
        w
    });
    FluctuationCoefficients { first, zeroth }
}

/// Boundary-adapted Jacobi fields and their first two derivatives at one time.
#[derive(Debug, Clone)]
pub struct FramePoint {
    pub tau: f64,
    pub phi0: DMatrix<f64>,
    pub phi1: DMatrix<f64>,
    pub dphi0: DMatrix<f64>,
    pub dphi1: DMatrix<f64>,
    pub ddphi0: DMatrix<f64>,
    pub ddphi1: DMatrix<f64>,
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

/// Jacobi fields `φ₀ = ∂γ/∂q₀`, `φ₁ = ∂γ/∂q₁` along a solved path.
#[derive(Debug, Clone)]
pub struct JacobiFrame<'a> {
    path: &'a ClassicalPath,
    // A(t), Y(t)⁻¹
    a_end: DMatrix<f64>,
    y_end_inv: DMatrix<f64>,
    det_m0: f64,
}

impl<'a> JacobiFrame<'a> {
    pub fn path(&self) -> &'a ClassicalPath {
        self.path
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    pub fn duration(&self) -> f64 {
        self.path.duration
    }

    /// `det M(0)` for `M = [[φ₀, φ₁], [φ̇₀, φ̇₁]]`.
    pub fn det_m(&self) -> f64 {
        self.det_m0
    }

    pub fn at(&self, tau: f64) -> FramePoint {
        let n = self.dim();
        let p = self.path.point(tau);
        let block = |m: &DMatrix<f64>, r: usize, c: usize| m.view((r, c), (n, n)).into_owned();
        let a = block(&p.phi, 0, 0);
        let y = block(&p.phi, 0, n);
        let da = block(&p.dphi, 0, 0);
        let dy = block(&p.dphi, 0, n);
        let dda = block(&p.dphi, n, 0);
        let ddy = block(&p.dphi, n, n);
        let dphi1 = &dy * &self.y_end_inv;
        let ddphi1 = &ddy * &self.y_end_inv;
        // Dirichlet data hold exactly at the ends
        let (phi0, phi1) = if p.tau >= self.duration() {
            (DMatrix::zeros(n, n), DMatrix::identity(n, n))
        } else {
            let phi1 = &y * &self.y_end_inv;
            (&a - &phi1 * &self.a_end, phi1)
        };
        let dphi0 = &da - &dphi1 * &self.a_end;
        let ddphi0 = &dda - &ddphi1 * &self.a_end;
        FramePoint {
            tau: p.tau,
            phi0,
            phi1,
            dphi0,
            dphi1,
            ddphi0,
            ddphi1,
            q: p.q,
            v: p.v,
        }
    }

    /// `det M(τ)`.
    pub fn det_m_at(&self, tau: f64) -> f64 {
        let f = self.at(tau);
        let n = self.dim();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&f.phi0);
        m.view_mut((0, n), (n, n)).copy_from(&f.phi1);
        m.view_mut((n, 0), (n, n)).copy_from(&f.dphi0);
        m.view_mut((n, n), (n, n)).copy_from(&f.dphi1);
        m.determinant()
    }

    /// Largest `|det M(τ)/det M(0) − 1|` over the integrator grid.
    pub fn liouville_spread(&self) -> f64 {
        self.path
            .trajectory()
            .nodes()
            .iter()
            .map(|&tau| (self.det_m_at(tau) / self.det_m0 - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|D[φ_a]|` over grid midpoints, for both families.
    pub fn jacobi_residual(&self, potential: &dyn Potential) -> f64 {
        let nodes = self.path.trajectory().nodes();
        let mut worst = 0.0f64;
        for w in nodes.windows(2) {
            let f = self.at(0.5 * (w[0] + w[1]));
            let c = fluctuation_coefficients(potential, f.q.as_slice(), f.v.as_slice());
            for (x, dx, ddx) in [(&f.phi0, &f.dphi0, &f.ddphi0), (&f.phi1, &f.dphi1, &f.ddphi1)] {
                let d = ddx + &c.first * dx + &c.zeroth * x;
                worst = worst.max(d.amax());
            }
        }
        worst
    }
}

/// Builds the Jacobi frame of a solved path.
pub fn jacobi_frame(path: &ClassicalPath, singular_tol: f64) -> Result<JacobiFrame<'_>> {
    let n = path.dim();
    let t = path.duration;
    let end = path.end();
    let a_end = end.phi.view((0, 0), (n, n)).into_owned();
    let y_end = end.phi.view((0, n), (n, n)).into_owned();
    let det = y_end.determinant();
    let threshold = singular_tol * t.max(y_end.norm()).powi(n as i32);
    if !(det.abs() >= threshold) {
        return Err(Error::DegenerateJacobian { det, threshold });
    }
    let y_end_inv = y_end
        .try_inverse()
        .ok_or(Error::DegenerateJacobian { det, threshold })?;
    let mut frame = JacobiFrame {
        path,
        a_end,
        y_end_inv,
        det_m0: 0.0,
    };
    frame.det_m0 = frame.det_m_at(0.0);
    Ok(frame)
}

/// Second derivatives of the Hamilton function.
#[derive(Debug, Clone)]
pub struct HessianBlocks {
    /// `∂²(−S)/∂q₀ⁱ∂q₁ʲ`, row `i`, column `j`.
    pub s01: DMatrix<f64>,
    /// `s01⁻¹`.
    pub s01_inv: DMatrix<f64>,
    /// `∂²S/∂q₀²`.
    pub s00: DMatrix<f64>,
    /// `∂²S/∂q₁²`.
    pub s11: DMatrix<f64>,
    /// `‖t·s01‖₂ · max(1, ‖s01⁻¹/t‖₂)`: size of the mixed block relative to a free particle.
    pub cond: f64,
}

impl HessianBlocks {
    /// `det s01`.
    pub fn det(&self) -> f64 {
        self.s01.determinant()
    }

    /// The same block read through `∂S/∂q₁ = γ̇(t) + B(q₁)`: `−φ̇₀(t)ᵀ`.
    pub fn s01_from_terminal(frame: &JacobiFrame<'_>) -> DMatrix<f64> {
        -frame.at(frame.duration()).dphi0.transpose()
    }
}

/// Mixed and pure second derivatives of `S` at a solved path.
pub fn mixed_hessian(potential: &dyn Potential, frame: &JacobiFrame<'_>) -> Result<HessianBlocks> {
    let t = frame.duration();
    let path = frame.path();
    let start = frame.at(0.0);
    let end = frame.at(t);
    let s01 = start.dphi1.clone();
    let s01_inv = frame
        .y_end_inv
        .clone()
        .try_inverse()
        .ok_or(Error::DegenerateJacobian {
            det: 0.0,
            threshold: 0.0,
        })?;
    let s00 = -(&start.dphi0 + magnetic_gradient(potential, path.q0.as_slice()));
    let s11 = &end.dphi1 + magnetic_gradient(potential, path.q1.as_slice());
    let norm2 = |m: &DMatrix<f64>| m.clone().svd(false, false).singular_values.max();
    let cond = norm2(&(&s01 * t)) * norm2(&(&s01_inv / t)).max(1.0);
    Ok(HessianBlocks {
        s01,
        s01_inv,
        s00,
        s11,
        cond,
    })
}

/// Branch-wise first and mixed derivatives of `G`.
#[derive(Debug, Clone)]
pub struct GreenDerivatives {
    /// `∂G(ς, τ)/∂ς`.
    pub d1: DMatrix<f64>,
    /// `∂G(ς, τ)/∂τ`.
    pub d2: DMatrix<f64>,
    /// Smooth part of `∂²G/∂ς∂τ`.
    pub d11_smooth: DMatrix<f64>,
    /// Discontinuity of `∂_τ G(ς, τ)` as `τ` crosses `ς` (value above minus value below).
    pub jump: DMatrix<f64>,
}

impl GreenDerivatives {
    /// Coefficient of `δ(ς − τ)` in `∂²G/∂ς∂τ`.
    pub fn delta_coefficient(&self) -> DMatrix<f64> {
        -&self.jump
    }
}

/// The Green's function `G_γ` of a nondegenerate path.
#[derive(Debug, Clone)]
pub struct GreenKernel<'a> {
    frame: JacobiFrame<'a>,
    // Y(t) = s01⁻¹ and its transpose.
    k_lower: DMatrix<f64>,
    k_upper: DMatrix<f64>,
}

/// Which branch of a kernel to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `ς > τ`
    Above,
    /// `ς < τ`
    Below,
}

impl<'a> GreenKernel<'a> {
    pub fn new(frame: JacobiFrame<'a>) -> Self {
        let k_lower = frame.y_end_inv.clone().try_inverse().expect("frame is nondegenerate");
        let k_upper = k_lower.transpose();
        Self {
            frame,
            k_lower,
            k_upper,
        }
    }

    pub fn frame(&self) -> &JacobiFrame<'a> {
        &self.frame
    }

    pub fn duration(&self) -> f64 {
        self.frame.duration()
    }

    pub fn dim(&self) -> usize {
        self.frame.dim()
    }

    /// `G` on a given branch from precomputed frame points.
    pub fn green_branch(&self, s: &FramePoint, u: &FramePoint, branch: Branch) -> DMatrix<f64> {
        match branch {
            Branch::Above => &s.phi0 * &self.k_upper * u.phi1.transpose(),
            Branch::Below => &s.phi1 * &self.k_lower * u.phi0.transpose(),
        }
    }

    /// `∂G/∂ς` on a branch.
    pub fn d1_branch(&self, s: &FramePoint, u: &FramePoint, branch: Branch) -> DMatrix<f64> {
        match branch {
            Branch::Above => &s.dphi0 * &self.k_upper * u.phi1.transpose(),
            Branch::Below => &s.dphi1 * &self.k_lower * u.phi0.transpose(),
        }
    }

    /// `∂G/∂τ` on a branch.
    pub fn d2_branch(&self, s: &FramePoint, u: &FramePoint, branch: Branch) -> DMatrix<f64> {
        match branch {
            Branch::Above => &s.phi0 * &self.k_upper * u.dphi1.transpose(),
            Branch::Below => &s.phi1 * &self.k_lower * u.dphi0.transpose(),
        }
    }

    /// Smooth `∂²G/∂ς∂τ` on a branch.
    pub fn d11_branch(&self, s: &FramePoint, u: &FramePoint, branch: Branch) -> DMatrix<f64> {
        match branch {
            Branch::Above => &s.dphi0 * &self.k_upper * u.dphi1.transpose(),
            Branch::Below => &s.dphi1 * &self.k_lower * u.dphi0.transpose(),
        }
    }

    /// Jump of `∂_τ G` across the diagonal at a frame point.
    pub fn jump_at(&self, f: &FramePoint) -> DMatrix<f64> {
        self.d2_branch(f, f, Branch::Below) - self.d2_branch(f, f, Branch::Above)
    }

    /// `G(ς, τ)`; both branches agree on the diagonal.
    pub fn green(&self, s: f64, u: f64) -> DMatrix<f64> {
        let (fs, fu) = (self.frame.at(s), self.frame.at(u));
        if s >= u {
            self.green_branch(&fs, &fu, Branch::Above)
        } else {
            self.green_branch(&fs, &fu, Branch::Below)
        }
    }

    /// Derivative kernels at `(ς, τ)`; on the diagonal the branch average is used.
    pub fn green_derivatives(&self, s: f64, u: f64) -> GreenDerivatives {
        let (fs, fu) = (self.frame.at(s), self.frame.at(u));
        let pick = |f: &dyn Fn(Branch) -> DMatrix<f64>| {
            if s > u {
                f(Branch::Above)
            } else if s < u {
                f(Branch::Below)
            } else {
                (f(Branch::Above) + f(Branch::Below)) * 0.5
            }
        };
        let d1 = pick(&|b| self.d1_branch(&fs, &fu, b));
        let d2 = pick(&|b| self.d2_branch(&fs, &fu, b));
        let d11_smooth = pick(&|b| self.d11_branch(&fs, &fu, b));
        let jump = self.jump_at(&fu);
        GreenDerivatives {
            d1,
            d2,
            d11_smooth,
            jump,
        }
    }
}

/// Smooth based loop `ξ` used to test `G` in weak form.
pub struct TestLoop<'f> {
    eval: Box<dyn Fn(f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) + 'f>,
}

impl<'f> TestLoop<'f> {
    /// `ξ(τ), ξ̇(τ), ξ̈(τ)` from a closure.
    pub fn new(eval: impl Fn(f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) + 'f) -> Self {
        Self {
            eval: Box::new(eval),
        }
    }

    /// `ξ(τ) = sin(πτ/t)·dir`.
    pub fn sine(t: f64, dir: DVector<f64>) -> Self {
        let w = std::f64::consts::PI / t;
        Self::new(move |tau| {
            (
                &dir * (w * tau).sin(),
                &dir * (w * (w * tau).cos()),
                &dir * (-w * w * (w * tau).sin()),
            )
        })
    }

    /// `ξ(τ) = τ(t − τ)·dir`.
    pub fn parabola(t: f64, dir: DVector<f64>) -> Self {
        Self::new(move |tau| (&dir * (tau * (t - tau)), &dir * (t - 2.0 * tau), &dir * -2.0))
    }

    pub fn zero(n: usize) -> Self {
        Self::new(move |_| (DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)))
    }

    pub fn eval(&self, tau: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        (self.eval)(tau)
    }
}

/// Max over probe points `ς` of `|∫ G(ς, τ) D[ξ](τ) dτ + ξ(ς)|`.
pub fn greens_defect(potential: &dyn Potential, kernel: &GreenKernel<'_>, test: &TestLoop<'_>) -> f64 {
    let t = kernel.duration();
    let rule = GaussLegendre::new(40);
    let frame = kernel.frame();
    let d_xi = |tau: f64| -> (FramePoint, DVector<f64>) {
        let f = frame.at(tau);
        let (x, dx, ddx) = test.eval(tau);
        let c = fluctuation_coefficients(potential, f.q.as_slice(), f.v.as_slice());
        let d = ddx + &c.first * dx + &c.zeroth * x;
        (f, d)
    };
    let probes = 17;
    let mut worst = 0.0f64;
    for k in 1..probes {
        let s = t * k as f64 / probes as f64;
        let fs = frame.at(s);
        let mut acc = DVector::zeros(kernel.dim());
        for (lo, hi, branch) in [(0.0, s, Branch::Above), (s, t, Branch::Below)] {
            for (x, w) in rule.mapped(lo, hi) {
                let (fu, d) = d_xi(x);
                acc += kernel.green_branch(&fs, &fu, branch) * d * w;
            }
        }
        let (xi, _, _) = test.eval(s);
        worst = worst.max((acc + xi).amax());
    }
    worst
}

/// Conjugate points of a path and the resulting Morse index.
#[derive(Debug, Clone, PartialEq)]
pub struct MorseIndex {
    pub index: usize,
    /// `(τ, nullity)` for every conjugate point in `(0, t)`.
    pub conjugate_points: Vec<(f64, usize)>,
    /// True when some conjugate point has nullity above one.
    pub multiplicity_flagged: bool,
}

/// Grid and tolerance for [`morse_index`].
#[derive(Debug, Clone, Copy)]
pub struct MorseOptions {
    pub grid: usize,
    pub tol: f64,
}

impl Default for MorseOptions {
    fn default() -> Self {
        Self {
            grid: 512,
            tol: 1e-10,
        }
    }
}

/// Counts zeros of `det ∂γ(τ)/∂v₀` on `(0, t)` with multiplicity.
///
/// Candidates are sign changes of the determinant and local minima of the
/// relative smallest singular value; each is refined by golden-section search.
/// The nullity at a conjugate point is the number of vanishing singular values.
pub fn morse_index(path: &ClassicalPath, opts: &MorseOptions) -> Result<MorseIndex> {
    let t = path.duration;
    let n = path.dim();
    let relative = |tau: f64| -> (f64, DVector<f64>, f64) {
        let y = path.position_velocity_block(tau);
        let scale = tau.max(y.norm());
        let det = y.determinant() / scale.powi(n as i32);
        let sv = y.svd(false, false).singular_values / scale;
        (det, sv, scale)
    };
    let sigma_min = |tau: f64| relative(tau).1.min();
    let grid: Vec<f64> = (1..=opts.grid).map(|k| t * k as f64 / opts.grid as f64).collect();
    let samples: Vec<(f64, f64)> = grid
        .iter()
        .map(|&tau| {
            let (det, sv, _) = relative(tau);
            (det, sv.min())
        })
        .collect();

    let mut brackets: Vec<(f64, f64)> = Vec::new();
    for k in 1..samples.len() {
        if samples[k - 1].0.signum() != samples[k].0.signum() {
            brackets.push((grid[k - 1], grid[k]));
        }
    }
    for k in 1..samples.len() - 1 {
        let (a, b, c) = (samples[k - 1].1, samples[k].1, samples[k + 1].1);
        if b < a && b <= c && b < 0.1 {
            brackets.push((grid[k - 1], grid[k + 1]));
        }
    }

    let mut points: Vec<(f64, usize)> = Vec::new();
    for (lo, hi) in brackets {
        let tau = golden_min(&sigma_min, lo, hi, opts.tol);
        let (_, sv, _) = relative(tau);
        if sv.min() > 1e-6 {
            continue;
        }
        if points.iter().any(|(p, _)| (p - tau).abs() < 1e-6 * t.max(1.0)) {
            continue;
        }
        if t - tau < 1e-6 * t {
            return Err(Error::DegenerateEndpoint { tau, duration: t });
        }
        let nullity = sv.iter().filter(|&&s| s < 1e-5).count().max(1);
        points.push((tau, nullity));
    }
    let (end_det, _, _) = relative(t);
    if end_det.abs() < 1e-8 {
        return Err(Error::DegenerateEndpoint { tau: t, duration: t });
    }
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
    Ok(MorseIndex {
        index: points.iter().map(|p| p.1).sum(),
        multiplicity_flagged: points.iter().any(|p| p.1 > 1),
        conjugate_points: points,
    })
}

fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{shoot, SolverOptions};
    use crate::potential::{PotentialSpec, Term};
    use std::f64::consts::PI;

    fn tight() -> SolverOptions {
        SolverOptions::with_tol(1e-12)
    }

    #[test]
    fn free_particle_fields() {
        let free = PotentialSpec::free(1);
        let t = 2.0;
        let path = shoot(&free, t, &[0.0], &[1.0], None, &tight()).unwrap();
        let frame = jacobi_frame(&path, 1e-8).unwrap();
        for k in 0..=10 {
            let tau = t * k as f64 / 10.0;
            let f = frame.at(tau);
            assert!((f.phi0[(0, 0)] - (1.0 - tau / t)).abs() < 1e-12);
            assert!((f.phi1[(0, 0)] - tau / t).abs() < 1e-12);
        }
        assert!((frame.det_m() - 1.0 / t).abs() < 1e-12);
        assert!(frame.liouville_spread() < 1e-10);
    }

    #[test]
    fn harmonic_fields_and_hessian() {
        let h = PotentialSpec::harmonic(1, 1.0);
        let t = 1.0;
        let path = shoot(&h, t, &[0.0], &[1.0], None, &tight()).unwrap();
        let frame = jacobi_frame(&path, 1e-8).unwrap();
        for k in 0..=10 {
            let tau = t * k as f64 / 10.0;
            let f = frame.at(tau);
            assert!((f.phi1[(0, 0)] - tau.sin() / t.sin()).abs() < 1e-8);
        }
        let blocks = mixed_hessian(&h, &frame).unwrap();
        assert!((blocks.s01[(0, 0)] - 1.0 / t.sin()).abs() < 1e-8);
        assert!((blocks.s00[(0, 0)] - t.cos() / t.sin()).abs() < 1e-8);
        assert!((blocks.s11[(0, 0)] - t.cos() / t.sin()).abs() < 1e-8);
        let via_terminal = HessianBlocks::s01_from_terminal(&frame);
        assert!((via_terminal - &blocks.s01).amax() < 1e-9);
        assert!((&blocks.s01 * &blocks.s01_inv - DMatrix::identity(1, 1)).amax() < 1e-10);
    }

    #[test]
    fn condition_grows_towards_half_period() {
        let h = PotentialSpec::harmonic(1, 1.0);
        let mut last = 0.0;
        for t in [2.0, 2.8, 3.1, PI - 1.6e-3] {
            let path = shoot(&h, t, &[0.0], &[0.2], None, &tight()).unwrap();
            let frame = jacobi_frame(&path, 1e-8).unwrap();
            let cond = mixed_hessian(&h, &frame).unwrap().cond;
            assert!(cond > last);
            last = cond;
        }
        assert!(shoot(&h, PI, &[0.0], &[0.2], None, &tight()).is_err());
    }

    #[test]
    fn free_green_closed_form() {
        let free = PotentialSpec::free(1);
        let t = 1.7;
        let path = shoot(&free, t, &[0.3], &[-0.2], None, &tight()).unwrap();
        let kernel = GreenKernel::new(jacobi_frame(&path, 1e-8).unwrap());
        for &(s, u) in &[(0.2f64, 0.9f64), (1.1, 0.4), (0.5, 0.5), (0.0, 1.0), (1.7, 0.3)] {
            let exact = s.min(u) * (t - s.max(u)) / t;
            assert!((kernel.green(s, u)[(0, 0)] - exact).abs() < 1e-12);
        }
        let d = kernel.green_derivatives(0.3, 1.2);
        assert!((d.d11_smooth[(0, 0)] + 1.0 / t).abs() < 1e-12);
        let d = kernel.green_derivatives(1.2, 0.3);
        assert!((d.d11_smooth[(0, 0)] + 1.0 / t).abs() < 1e-12);
        assert!((d.jump[(0, 0)] + 1.0).abs() < 1e-12);
        assert!((d.delta_coefficient()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_green_closed_form() {
        let h = PotentialSpec::harmonic(1, 1.0);
        let t = 1.0;
        let path = shoot(&h, t, &[0.0], &[1.0], None, &tight()).unwrap();
        let kernel = GreenKernel::new(jacobi_frame(&path, 1e-8).unwrap());
        for &(s, u) in &[(0.2f64, 0.9f64), (0.8, 0.1), (0.5, 0.5)] {
            let exact = s.min(u).sin() * (t - s.max(u)).sin() / t.sin();
            assert!((kernel.green(s, u)[(0, 0)] - exact).abs() < 1e-8);
        }
        for u in [0.1, 0.5, 0.9] {
            assert!((kernel.green_derivatives(0.3, u).jump[(0, 0)] + 1.0).abs() < 1e-8);
        }
    }

    fn magnetic_system() -> PotentialSpec {
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
    fn magnetic_green_contract() {
        let sys = magnetic_system();
        let t = 0.9;
        let path = shoot(&sys, t, &[0.1, -0.2], &[0.6, 0.3], None, &tight()).unwrap();
        let frame = jacobi_frame(&path, 1e-8).unwrap();
        assert!(frame.jacobi_residual(&sys) < 1e-6, "{}", frame.jacobi_residual(&sys));
        assert!(frame.liouville_spread() < 1e-8);
        let blocks = mixed_hessian(&sys, &frame).unwrap();
        assert!((HessianBlocks::s01_from_terminal(&frame) - &blocks.s01).amax() < 1e-8);
        // pure second derivatives of S are symmetric
        assert!((&blocks.s00 - blocks.s00.transpose()).amax() < 1e-8);
        assert!((&blocks.s11 - blocks.s11.transpose()).amax() < 1e-8);
        let kernel = GreenKernel::new(frame);
        for &(s, u) in &[(0.2, 0.7), (0.65, 0.1), (0.45, 0.45)] {
            let a = kernel.green(s, u);
            let b = kernel.green(u, s).transpose();
            assert!((a - b).amax() < 1e-9);
            let jump = kernel.green_derivatives(s, u).jump;
            assert!((jump + DMatrix::identity(2, 2)).amax() < 1e-6);
        }
        for u in [0.0, 0.3, t] {
            assert_eq!(kernel.green(0.0, u).amax(), 0.0);
            assert!(kernel.green(t, u).amax() < 1e-14);
        }
        for test in [
            TestLoop::sine(t, DVector::from_vec(vec![1.0, -0.5])),
            TestLoop::parabola(t, DVector::from_vec(vec![0.3, 1.0])),
        ] {
            let defect = greens_defect(&sys, &kernel, &test);
            assert!(defect < 1e-6, "defect {defect}");
        }
        assert_eq!(greens_defect(&sys, &kernel, &TestLoop::zero(2)), 0.0);
    }

    #[test]
    fn mixed_hessian_matches_action_differences() {
        let sys = magnetic_system();
        let opts = tight();
        let t = 0.8;
        let (q0, q1) = ([0.1, -0.2], [0.6, 0.3]);
        let path = shoot(&sys, t, &q0, &q1, None, &opts).unwrap();
        let frame = jacobi_frame(&path, 1e-8).unwrap();
        let blocks = mixed_hessian(&sys, &frame).unwrap();
        let frozen = opts.frozen(path.grid_fractions());
        let guess: Vec<f64> = path.v0.iter().copied().collect();
        let s = |a: [f64; 2], b: [f64; 2]| shoot(&sys, t, &a, &b, Some(&guess), &frozen).unwrap().action();
        let h = 1e-3;
        for i in 0..2 {
            for j in 0..2 {
                let shift = |mut x: [f64; 2], k: usize, d: f64| {
                    x[k] += d;
                    x
                };
                let fd = (s(shift(q0, i, h), shift(q1, j, h)) - s(shift(q0, i, h), shift(q1, j, -h))
                    - s(shift(q0, i, -h), shift(q1, j, h))
                    + s(shift(q0, i, -h), shift(q1, j, -h)))
                    / (4.0 * h * h);
                assert!((-fd - blocks.s01[(i, j)]).abs() < 1e-5, "s01[{i},{j}]");
                let fd00 = (s(shift(shift(q0, i, h), j, h), q1) - s(shift(shift(q0, i, h), j, -h), q1)
                    - s(shift(shift(q0, i, -h), j, h), q1)
                    + s(shift(shift(q0, i, -h), j, -h), q1))
                    / (4.0 * h * h);
                assert!((fd00 - blocks.s00[(i, j)]).abs() < 1e-5, "s00[{i},{j}]");
            }
        }
    }

    #[test]
    fn morse_examples() {
        let free = PotentialSpec::free(1);
        let path = shoot(&free, 3.0, &[0.0], &[1.0], None, &tight()).unwrap();
        assert_eq!(morse_index(&path, &MorseOptions::default()).unwrap().index, 0);

        let h = PotentialSpec::harmonic(1, 1.0);
        for (t, expected) in [(1.5 * PI, 1), (2.5 * PI, 2)] {
            let path = shoot(&h, t, &[0.0], &[1.0], None, &tight()).unwrap();
            let m = morse_index(&path, &MorseOptions::default()).unwrap();
            assert_eq!(m.index, expected);
            assert!(!m.multiplicity_flagged);
            for (k, (tau, _)) in m.conjugate_points.iter().enumerate() {
                assert!((tau - PI * (k + 1) as f64).abs() < 1e-7);
            }
        }

        // isotropic oscillator in the plane: a double conjugate point at π
        let h2 = PotentialSpec::harmonic(2, 1.0);
        let path = shoot(&h2, 1.5 * PI, &[0.0, 0.0], &[1.0, 0.5], None, &tight()).unwrap();
        let m = morse_index(&path, &MorseOptions::default()).unwrap();
        assert_eq!(m.index, 2);
        assert!(m.multiplicity_flagged);
    }
}
