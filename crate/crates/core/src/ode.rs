//! Dormand–Prince 5(4) integration of second-order systems together with
//! their variational frame and the accumulated action.
//!
//! The state is `(q, v, S, Φ)` where `Φ = ∂(q, v)/∂(q₀, v₀)` is the `2n × 2n`
//! variational matrix. Dense output uses quintic Hermite interpolation on the
//! position-like blocks (`q` and the top half of `Φ`), whose first and second
//! derivatives are available exactly at every node.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Right-hand side of `q̈ = a(q, q̇)` plus the Lagrangian accumulated along the flow.
pub trait Dynamics: Sync {
    fn dim(&self) -> usize;

    fn accel(&self, q: &[f64], v: &[f64], out: &mut [f64]);

    /// `(∂a/∂q, ∂a/∂v)`, each `n × n` with rows indexing the component of `a`.
    fn accel_jacobian(&self, q: &[f64], v: &[f64]) -> (DMatrix<f64>, DMatrix<f64>);

    fn lagrangian(&self, q: &[f64], v: &[f64]) -> f64;
}

/// Tolerances and limits for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-10,
            max_steps: 200_000,
        }
    }
}

impl IntegratorOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }
}

/// Step placement: adaptive, or a frozen grid of fractions of the duration.
///
/// Freezing the grid makes the numerical flow a smooth function of the
/// boundary data, which finite-difference stencils rely on.
#[derive(Debug, Clone, Default)]
pub enum StepGrid {
    #[default]
    Adaptive,
    Fixed(Arc<Vec<f64>>),
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// 5th-order minus embedded 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Layout helper for the packed state vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
}

impl Layout {
    fn len(self) -> usize {
        2 * self.n + 1 + 4 * self.n * self.n
    }
    fn q(self) -> std::ops::Range<usize> {
        0..self.n
    }
    fn v(self) -> std::ops::Range<usize> {
        self.n..2 * self.n
    }
    fn s(self) -> usize {
        2 * self.n
    }
    fn phi_start(self) -> usize {
        2 * self.n + 1
    }
    // Φ stored column-major, 2n rows.
    fn phi(self, row: usize, col: usize) -> usize {
        self.phi_start() + col * 2 * self.n + row
    }
    // True for components whose derivative is another stored component
    // (positions and the position rows of Φ).
    fn position_like(self, idx: usize) -> Option<usize> {
        if idx < self.n {
            return Some(idx + self.n);
        }
        if idx >= self.phi_start() {
            let off = idx - self.phi_start();
            let (col, row) = (off / (2 * self.n), off % (2 * self.n));
            if row < self.n {
                return Some(self.phi(row + self.n, col));
            }
        }
        None
    }
}

fn rhs(dynamics: &dyn Dynamics, layout: Layout, y: &[f64], dy: &mut [f64]) {
    let n = layout.n;
    let q = &y[layout.q()];
    let v = &y[layout.v()];
    dy[layout.q()].copy_from_slice(v);
    dynamics.accel(q, v, &mut dy[layout.v()]);
    dy[layout.s()] = dynamics.lagrangian(q, v);
    let (aq, av) = dynamics.accel_jacobian(q, v);
    for col in 0..2 * n {
        for r in 0..n {
            dy[layout.phi(r, col)] = y[layout.phi(r + n, col)];
        }
        for r in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += aq[(r, k)] * y[layout.phi(k, col)] + av[(r, k)] * y[layout.phi(k + n, col)];
            }
            dy[layout.phi(r + n, col)] = acc;
        }
    }
}

/// Interpolated state at one time.
#[derive(Debug, Clone)]
pub struct TrajectoryPoint {
    pub tau: f64,
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub a: DVector<f64>,
    /// `∂(q, v)/∂(q₀, v₀)`.
    pub phi: DMatrix<f64>,
    /// Time derivative of `phi`.
    pub dphi: DMatrix<f64>,
}

/// Dense solution on `[0, duration]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    n: usize,
    duration: f64,
    taus: Vec<f64>,
    states: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Node times (the accepted step grid).
    pub fn nodes(&self) -> &[f64] {
        &self.taus
    }

    pub fn steps(&self) -> usize {
        self.taus.len() - 1
    }

    /// Node times as fractions of the duration, suitable for [`StepGrid::Fixed`].
    pub fn grid_fractions(&self) -> Arc<Vec<f64>> {
        let mut f: Vec<f64> = self.taus.iter().map(|t| t / self.duration).collect();
        *f.last_mut().expect("nonempty") = 1.0;
        Arc::new(f)
    }

    pub fn action(&self) -> f64 {
        self.states.last().expect("nonempty")[Layout { n: self.n }.s()]
    }

    pub fn final_point(&self) -> TrajectoryPoint {
        self.point_at_node(self.taus.len() - 1)
    }

    fn point_at_node(&self, k: usize) -> TrajectoryPoint {
        let layout = Layout { n: self.n };
        let n = self.n;
        let y = &self.states[k];
        let dy = &self.derivs[k];
        let phi = DMatrix::from_fn(2 * n, 2 * n, |r, c| y[layout.phi(r, c)]);
        let dphi = DMatrix::from_fn(2 * n, 2 * n, |r, c| dy[layout.phi(r, c)]);
        TrajectoryPoint {
            tau: self.taus[k],
            q: DVector::from_column_slice(&y[layout.q()]),
            v: DVector::from_column_slice(&y[layout.v()]),
            a: DVector::from_column_slice(&dy[layout.v()]),
            phi,
            dphi,
        }
    }

    fn interval(&self, tau: f64) -> usize {
        let last = self.taus.len() - 2;
        match self
            .taus
            .binary_search_by(|probe| probe.partial_cmp(&tau).expect("finite time"))
        {
            Ok(k) => k.min(last),
            Err(0) => 0,
            Err(k) => (k - 1).min(last),
        }
    }

    /// Interpolates `(value, first, second)` derivative of a position-like
    /// component `idx` whose derivative lives at `didx`.
    fn hermite(&self, k: usize, s: f64, h: f64, idx: usize, didx: usize) -> (f64, f64, f64) {
        let (y0, y1) = (self.states[k][idx], self.states[k + 1][idx]);
        let (d0, d1) = (self.derivs[k][idx], self.derivs[k + 1][idx]);
        let (dd0, dd1) = (self.derivs[k][didx], self.derivs[k + 1][didx]);
        let b = quintic_basis(s);
        let val = y0 * b[0][0] + h * d0 * b[1][0] + h * h * dd0 * b[2][0] + h * h * dd1 * b[3][0]
            + h * d1 * b[4][0]
            + y1 * b[5][0];
        let der = (y0 * b[0][1] + y1 * b[5][1]) / h
            + d0 * b[1][1]
            + d1 * b[4][1]
            + h * (dd0 * b[2][1] + dd1 * b[3][1]);
        let der2 = (y0 * b[0][2] + y1 * b[5][2]) / (h * h)
            + (d0 * b[1][2] + d1 * b[4][2]) / h
            + dd0 * b[2][2]
            + dd1 * b[3][2];
        (val, der, der2)
    }

    /// State, velocity, acceleration and variational frame at `tau ∈ [0, t]`.
    pub fn point(&self, tau: f64) -> TrajectoryPoint {
        let tau = tau.clamp(0.0, self.duration);
        let k = self.interval(tau);
        let (ta, tb) = (self.taus[k], self.taus[k + 1]);
        let h = tb - ta;
        let s = (tau - ta) / h;
        if s == 0.0 {
            return self.point_at_node(k);
        }
        let layout = Layout { n: self.n };
        let n = self.n;
        let mut q = DVector::zeros(n);
        let mut v = DVector::zeros(n);
        let mut a = DVector::zeros(n);
        for i in 0..n {
            let (x, dx, ddx) = self.hermite(k, s, h, i, i + n);
            q[i] = x;
            v[i] = dx;
            a[i] = ddx;
        }
        let mut phi = DMatrix::zeros(2 * n, 2 * n);
        let mut dphi = DMatrix::zeros(2 * n, 2 * n);
        for c in 0..2 * n {
            for r in 0..n {
                let idx = layout.phi(r, c);
                let didx = layout.position_like(idx).expect("position row");
                let (x, dx, ddx) = self.hermite(k, s, h, idx, didx);
                phi[(r, c)] = x;
                phi[(r + n, c)] = dx;
                dphi[(r, c)] = dx;
                dphi[(r + n, c)] = ddx;
            }
        }
        TrajectoryPoint {
            tau,
            q,
            v,
            a,
            phi,
            dphi,
        }
    }
}

/// Quintic Hermite basis on `[0, 1]`: rows are
/// `[H_y0, H_d0, H_dd0, H_dd1, H_d1, H_y1]`, columns `[value, d/ds, d²/ds²]`.
fn quintic_basis(s: f64) -> [[f64; 3]; 6] {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    [
        [
            1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5,
            -30.0 * s2 + 60.0 * s3 - 30.0 * s4,
            -60.0 * s + 180.0 * s2 - 120.0 * s3,
        ],
        [
            s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5,
            1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4,
            -36.0 * s + 96.0 * s2 - 60.0 * s3,
        ],
        [
            0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5,
            s - 4.5 * s2 + 6.0 * s3 - 2.5 * s4,
            1.0 - 9.0 * s + 18.0 * s2 - 10.0 * s3,
        ],
        [
            0.5 * s3 - s4 + 0.5 * s5,
            1.5 * s2 - 4.0 * s3 + 2.5 * s4,
            3.0 * s - 12.0 * s2 + 10.0 * s3,
        ],
        [
            -4.0 * s3 + 7.0 * s4 - 3.0 * s5,
            -12.0 * s2 + 28.0 * s3 - 15.0 * s4,
            -24.0 * s + 84.0 * s2 - 60.0 * s3,
        ],
        [
            10.0 * s3 - 15.0 * s4 + 6.0 * s5,
            30.0 * s2 - 60.0 * s3 + 30.0 * s4,
            60.0 * s - 180.0 * s2 + 120.0 * s3,
        ],
    ]
}

struct Stepper<'a> {
    dynamics: &'a dyn Dynamics,
    layout: Layout,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(dynamics: &'a dyn Dynamics, layout: Layout) -> Self {
        let len = layout.len();
        Self {
            dynamics,
            layout,
            k: std::array::from_fn(|_| vec![0.0; len]),
            tmp: vec![0.0; len],
        }
    }

    /// One step from `(y, k[0] = f(y))`; writes the 5th-order solution into
    /// `out` and `f(out)` into `k[6]`, returns the local error vector norm.
    fn step(&mut self, y: &[f64], h: f64, out: &mut [f64], opts: &IntegratorOptions) -> f64 {
        let len = y.len();
        let stages: [(&[f64], usize); 5] = [
            (&[A21], 1),
            (&[A31, A32], 2),
            (&[A41, A42, A43], 3),
            (&[A51, A52, A53, A54], 4),
            (&[A61, A62, A63, A64, A65], 5),
        ];
        for (coeffs, target) in stages {
            for i in 0..len {
                let mut acc = 0.0;
                for (j, c) in coeffs.iter().enumerate() {
                    acc += c * self.k[j][i];
                }
                self.tmp[i] = y[i] + h * acc;
            }
            rhs(self.dynamics, self.layout, &self.tmp, &mut self.k[target]);
        }
        for i in 0..len {
            out[i] = y[i]
                + h * (B1 * self.k[0][i]
                    + B3 * self.k[2][i]
                    + B4 * self.k[3][i]
                    + B5 * self.k[4][i]
                    + B6 * self.k[5][i]);
        }
        rhs(self.dynamics, self.layout, out, &mut self.k[6]);
        let mut sum = 0.0;
        for i in 0..len {
            let err = h
                * (E1 * self.k[0][i]
                    + E3 * self.k[2][i]
                    + E4 * self.k[3][i]
                    + E5 * self.k[4][i]
                    + E6 * self.k[5][i]
                    + E7 * self.k[6][i]);
            let scale = opts.atol + opts.rtol * y[i].abs().max(out[i].abs());
            sum += (err / scale).powi(2);
        }
        (sum / len as f64).sqrt()
    }
}

/// Integrates the system from `(q0, v0)` over `[0, duration]` with identity
/// initial variational frame and zero initial action.
pub fn integrate(
    dynamics: &dyn Dynamics,
    q0: &[f64],
    v0: &[f64],
    duration: f64,
    opts: &IntegratorOptions,
    grid: &StepGrid,
) -> Result<Trajectory> {
    let n = dynamics.dim();
    if q0.len() != n || v0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: if q0.len() != n { q0.len() } else { v0.len() },
        });
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive and finite, got {duration}"
        )));
    }
    if q0.iter().chain(v0).any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("initial state is not finite".into()));
    }
    let layout = Layout { n };
    let len = layout.len();
    let mut y = vec![0.0; len];
    y[layout.q()].copy_from_slice(q0);
    y[layout.v()].copy_from_slice(v0);
    for i in 0..2 * n {
        y[layout.phi(i, i)] = 1.0;
    }
    let mut stepper = Stepper::new(dynamics, layout);
    rhs(dynamics, layout, &y, &mut stepper.k[0]);

    let mut taus = vec![0.0];
    let mut states = vec![y.clone()];
    let mut derivs = vec![stepper.k[0].clone()];
    let mut out = vec![0.0; len];

    let blowup = |tau: f64| Error::StepUnderflow { tau, blowup: tau };

    match grid {
        StepGrid::Fixed(fractions) => {
            let mut tau = 0.0;
            for w in fractions.windows(2) {
                let next = w[1] * duration;
                let h = next - tau;
                stepper.step(&y, h, &mut out, opts);
                if out.iter().any(|x| !x.is_finite()) {
                    return Err(blowup(tau));
                }
                std::mem::swap(&mut y, &mut out);
                stepper.k.swap(0, 6);
                tau = next;
                taus.push(tau);
                states.push(y.clone());
                derivs.push(stepper.k[0].clone());
            }
        }
        StepGrid::Adaptive => {
            let mut tau = 0.0;
            let mut h = initial_step(&y, &stepper.k[0], duration, opts);
            let h_min = 1e-14 * duration.max(1.0);
            let mut steps = 0usize;
            while tau < duration {
                steps += 1;
                if steps > opts.max_steps {
                    return Err(blowup(tau));
                }
                let last = tau + h >= duration * (1.0 - 1e-14);
                let h_try = if last { duration - tau } else { h };
                let err = stepper.step(&y, h_try, &mut out, opts);
                let finite = out.iter().all(|x| x.is_finite()) && err.is_finite();
                if finite && err <= 1.0 {
                    std::mem::swap(&mut y, &mut out);
                    stepper.k.swap(0, 6);
                    tau = if last { duration } else { tau + h_try };
                    taus.push(tau);
                    states.push(y.clone());
                    derivs.push(stepper.k[0].clone());
                    let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    h = h_try * factor;
                } else {
                    let factor = if finite { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.25 };
                    h = h_try * factor;
                    if h < h_min {
                        return Err(blowup(tau));
                    }
                }
            }
        }
    }
    Ok(Trajectory {
        n,
        duration,
        taus,
        states,
        derivs,
    })
}

fn initial_step(y: &[f64], dy: &[f64], duration: f64, opts: &IntegratorOptions) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for (x, dx) in y.iter().zip(dy) {
        let scale = opts.atol + opts.rtol * x.abs();
        d0 += (x / scale).powi(2);
        d1 += (dx / scale).powi(2);
    }
    let h = if d0 < 1e-10 || d1 < 1e-10 {
        1e-6
    } else {
        0.01 * (d0 / d1).sqrt()
    };
    h.min(duration / 16.0).max(duration * 1e-8)
}
