//! Finite-difference checks of the series against the Schrödinger and
//! Hamilton–Jacobi equations, the short-time limit and the composition law.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::classical::{action_gradients_fd, shoot, stationary_source_point, ClassicalPath, SolverOptions};
use crate::error::{Error, Result};
use crate::jacobi::{jacobi_frame, mixed_hessian, morse_index, HessianBlocks, MorseOptions};
use crate::potential::Potential;
use crate::series::{compute_v, series_for_path, DiagramSet, HbarSeries, SeriesOptions};

/// Default residual budgets per order (index = order).
pub const SEV_BUDGETS: [f64; 5] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// `1e-3 · max(1, |q₁|, t)`.
pub fn default_fd_step(t: f64, q1: &[f64]) -> f64 {
    let q = q1.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    1e-3 * 1f64.max(q).max(t)
}

/// Finite-difference step, optionally Richardson-extrapolated from `h` and `h/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdStep {
    pub h: f64,
    pub richardson: bool,
}

impl FdStep {
    pub fn central(h: f64) -> Self {
        Self { h, richardson: false }
    }

    pub fn richardson(h: f64) -> Self {
        Self { h, richardson: true }
    }

    /// Applies `d` at `h` (and `h/2`), combining as `(4 D_{h/2} − D_h)/3`.
    fn apply<T>(&self, d: impl Fn(f64) -> Result<T>, combine: impl Fn(T, T) -> T) -> Result<T> {
        if self.richardson {
            let coarse = d(self.h)?;
            let fine = d(0.5 * self.h)?;
            Ok(combine(coarse, fine))
        } else {
            d(self.h)
        }
    }
}

fn extrapolate(coarse: f64, fine: f64) -> f64 {
    (4.0 * fine - coarse) / 3.0
}

/// Per-order residuals of the Schrödinger equation for `V`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub orders: Vec<f64>,
    pub budgets: Vec<f64>,
    pub fd_step: f64,
    pub quadrature_tol: f64,
    pub grid: String,
    pub series: Vec<f64>,
}

impl ResidualReport {
    pub fn passed(&self) -> bool {
        self.orders.iter().zip(&self.budgets).all(|(r, b)| r < b)
    }
}

/// Series at `(t', q₁')` on a grid frozen to the centre path.
struct Stencil<'a> {
    p: &'a dyn Potential,
    q0: Vec<f64>,
    loops: usize,
    guess: Vec<f64>,
    diagrams: &'a DiagramSet,
    opts: SeriesOptions,
}

impl Stencil<'_> {
    fn series(&self, t: f64, q1: &[f64]) -> Result<HbarSeries> {
        let path = shoot(self.p, t, &self.q0, q1, Some(&self.guess), &self.opts.solver)?;
        Ok(series_for_path(self.p, &path, self.loops, self.diagrams, &self.opts)?.0)
    }
}

struct Derivatives {
    dt: Vec<f64>,
    grad: Vec<DVector<f64>>,
    lap: Vec<f64>,
}

/// Residual of
/// `∂_t v_k = ½Σ_{a+b=k} ∇v_a·∇v_b + ½Δv_{k−1} + B·∇v_k + [k=1] ½ div B + [k=0] (½|B|² + C)`
/// at `q₁`, with derivatives by central differences in `(t, q₁)`.
#[allow(clippy::too_many_arguments)]
pub fn schrodinger_residual(
    p: &dyn Potential,
    t: f64,
    q0: &[f64],
    q1: &[f64],
    loops: usize,
    guess: Option<&[f64]>,
    diagrams: &DiagramSet,
    opts: &SeriesOptions,
    step: FdStep,
) -> Result<ResidualReport> {
    let n = p.dim();
    let centre = compute_v(p, t, q0, q1, loops, guess, diagrams, opts)?;
    let stencil = Stencil {
        p,
        q0: q0.to_vec(),
        loops,
        guess: centre.path.v0.iter().copied().collect(),
        diagrams,
        opts: SeriesOptions {
            solver: opts.solver.frozen(centre.path.grid_fractions()),
            eval: opts.eval,
        },
    };
    let derivs = |h: f64| -> Result<Derivatives> {
        // centre, t ± h, then q₁ ± h eᵢ
        let mut points: Vec<(f64, Vec<f64>)> = vec![(t, q1.to_vec()), (t + h, q1.to_vec()), (t - h, q1.to_vec())];
        for i in 0..n {
            for s in [1.0, -1.0] {
                let mut q = q1.to_vec();
                q[i] += s * h;
                points.push((t, q));
            }
        }
        let values: Vec<Result<HbarSeries>> = points.par_iter().map(|(tt, qq)| stencil.series(*tt, qq)).collect();
        let values: Vec<HbarSeries> = values.into_iter().collect::<Result<_>>()?;
        let c = &values[0];
        Ok(Derivatives {
            dt: (0..=loops).map(|k| (values[1].get(k) - values[2].get(k)) / (2.0 * h)).collect(),
            grad: (0..=loops)
                .map(|k| DVector::from_fn(n, |i, _| (values[3 + 2 * i].get(k) - values[4 + 2 * i].get(k)) / (2.0 * h)))
                .collect(),
            lap: (0..=loops)
                .map(|k| {
                    (0..n)
                        .map(|i| (values[3 + 2 * i].get(k) - 2.0 * c.get(k) + values[4 + 2 * i].get(k)) / (h * h))
                        .sum()
                })
                .collect(),
        })
    };
    let Derivatives { dt, grad, lap } = step.apply(derivs, |a, b| Derivatives {
        dt: a.dt.iter().zip(&b.dt).map(|(x, y)| extrapolate(*x, *y)).collect(),
        grad: a.grad.iter().zip(&b.grad).map(|(x, y)| (y * 4.0 - x) / 3.0).collect(),
        lap: a.lap.iter().zip(&b.lap).map(|(x, y)| extrapolate(*x, *y)).collect(),
    })?;
    let b = DVector::from_vec(p.eval_b(q1));
    let mut div_b = 0.0;
    for i in 0..n {
        let mut alpha = vec![0u32; n];
        alpha[i] = 1;
        div_b += p.partial_b(i, q1, &alpha)?;
    }
    let orders = (0..=loops)
        .map(|k| {
            let mut rhs = b.dot(&grad[k]);
            for a in 0..=k {
                rhs += 0.5 * grad[a].dot(&grad[k - a]);
            }
            if k >= 1 {
                rhs += 0.5 * lap[k - 1];
            }
            if k == 1 {
                rhs += 0.5 * div_b;
            }
            if k == 0 {
                rhs += 0.5 * b.norm_squared() + p.eval_c(q1);
            }
            (dt[k] - rhs).abs()
        })
        .collect();
    Ok(ResidualReport {
        orders,
        budgets: (0..=loops).map(|k| SEV_BUDGETS[k.min(SEV_BUDGETS.len() - 1)]).collect(),
        fd_step: step.h,
        quadrature_tol: opts.eval.tol,
        grid: format!(
            "{} differences in (t, q1), {} points, frozen step grid",
            if step.richardson { "richardson-extrapolated central" } else { "central" },
            (3 + 2 * n) * if step.richardson { 2 } else { 1 }
        ),
        series: centre.series.coeffs().to_vec(),
    })
}

/// Hamilton–Jacobi residuals at both endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HjReport {
    pub source: f64,
    pub target: f64,
    pub fd_step: f64,
}

/// `∂(−S)/∂t − ½|∇_{q₀}(−S) − B(q₀)|² − C(q₀)` and
/// `∂(−S)/∂t − ½|∇_{q₁}S − B(q₁)|² − C(q₁)`, all derivatives by central differences.
pub fn hamilton_jacobi_residual(
    p: &dyn Potential,
    path: &ClassicalPath,
    step: FdStep,
    opts: &SolverOptions,
) -> Result<HjReport> {
    let frozen = opts.frozen(path.grid_fractions());
    let guess: Vec<f64> = path.v0.iter().copied().collect();
    let (q0, q1) = (path.q0.as_slice(), path.q1.as_slice());
    let s_at = |t: f64| -> Result<f64> { Ok(shoot(p, t, q0, q1, Some(&guess), &frozen)?.action()) };
    let t = path.duration;
    let derivs = |h: f64| -> Result<(DVector<f64>, DVector<f64>, f64)> {
        let (g0, g1) = action_gradients_fd(p, path, h, opts)?;
        Ok((g0, g1, (s_at(t + h)? - s_at(t - h)?) / (2.0 * h)))
    };
    let (g0, g1, dt_s) = step.apply(derivs, |a, b| {
        ((b.0 * 4.0 - a.0) / 3.0, (b.1 * 4.0 - a.1) / 3.0, extrapolate(a.2, b.2))
    })?;
    let b0 = DVector::from_vec(p.eval_b(q0));
    let b1 = DVector::from_vec(p.eval_b(q1));
    let source = -dt_s - 0.5 * (-g0 - b0).norm_squared() - p.eval_c(q0);
    let target = -dt_s - 0.5 * (g1 - b1).norm_squared() - p.eval_c(q1);
    Ok(HjReport {
        source: source.abs(),
        target: target.abs(),
        fd_step: step.h,
    })
}

/// Short-time quantities at one duration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShortTimeRow {
    pub t: f64,
    pub q0: Vec<f64>,
    /// `‖t·∂²(−S)/∂q₀∂q₁ − I‖`.
    pub hessian_deviation: f64,
    /// `|S(t, q₀*, q₁)|`.
    pub action: f64,
    /// `‖q₁ − q₀* + t·B(q₀*)‖`.
    pub drift: f64,
    /// `|det ∂²S/∂q₀²|^{−1/2} · |det ∂²(−S)/∂q₀∂q₁|^{1/2}`.
    pub ratio: f64,
    /// `v₂(t, q₀*, q₁)` when requested.
    pub v2: Option<f64>,
}

/// Fitted `log(deviation)/log(t)` slopes of the short-time checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShortTimeReport {
    pub rows: Vec<ShortTimeRow>,
    pub slope_hessian: Option<f64>,
    pub slope_action: Option<f64>,
    pub slope_drift: Option<f64>,
    pub slope_ratio: Option<f64>,
    /// `|ratio − 1|` decreases along the (decreasing) time list.
    pub ratio_monotone: bool,
}

/// Least-squares slope of `log y` against `log x`; `None` if any `y` is negligible.
pub fn log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || y.iter().any(|&v| !(v > 1e-14)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Short-time checks along the stationary source points `q₀*(t)`.
pub fn short_time_suite(
    p: &dyn Potential,
    q1: &[f64],
    times: &[f64],
    diagrams: Option<&DiagramSet>,
    opts: &SeriesOptions,
) -> Result<ShortTimeReport> {
    let n = p.dim();
    let rows: Vec<Result<ShortTimeRow>> = times
        .par_iter()
        .map(|&t| {
            let (q0, path) = stationary_source_point(p, t, q1, &opts.solver)?;
            let frame = jacobi_frame(&path, opts.solver.singular_tol)?;
            let blocks = mixed_hessian(p, &frame)?;
            let hessian_deviation = (&blocks.s01 * t - DMatrix::identity(n, n)).amax();
            let b0 = DVector::from_vec(p.eval_b(q0.as_slice()));
            let drift = (DVector::from_column_slice(q1) - &q0 + b0 * t).norm();
            let ratio = (blocks.s01.determinant().abs() / blocks.s00.determinant().abs()).sqrt();
            let v2 = match diagrams {
                Some(d) if d.loops() >= 2 => Some(series_for_path(p, &path, 2, d, opts)?.0.get(2)),
                _ => None,
            };
            Ok(ShortTimeRow {
                t,
                q0: q0.iter().copied().collect(),
                hessian_deviation,
                action: path.action().abs(),
                drift,
                ratio,
                v2,
            })
        })
        .collect();
    let rows: Vec<ShortTimeRow> = rows.into_iter().collect::<Result<_>>()?;
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let col = |f: &dyn Fn(&ShortTimeRow) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    let dev: Vec<f64> = col(&|r| (r.ratio - 1.0).abs());
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| ts[b].partial_cmp(&ts[a]).expect("finite"));
    let ratio_monotone = order.windows(2).all(|w| dev[w[1]] < dev[w[0]]);
    Ok(ShortTimeReport {
        slope_hessian: log_slope(&ts, &col(&|r| r.hessian_deviation)),
        slope_action: log_slope(&ts, &col(&|r| r.action)),
        slope_drift: log_slope(&ts, &col(&|r| r.drift)),
        slope_ratio: log_slope(&ts, &dev),
        ratio_monotone,
        rows,
    })
}

/// Leading-order composition through the intermediate point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemigroupReport {
    pub q_star: Vec<f64>,
    /// `|q* − γ(t₀)|`.
    pub q_star_offset: f64,
    /// `|S − S₀ − S₁|`.
    pub action_defect: f64,
    /// `|√|det D| / (√|det D₀| √|det D₁| |det H|^{−1/2}) − 1|`.
    pub vanvleck_defect: f64,
    pub morse_full: usize,
    pub morse_first: usize,
    pub morse_second: usize,
    /// Negative eigenvalues of `H = ∂²(S₀ + S₁)/∂q²` at `q*`.
    pub hessian_index: usize,
    pub morse_additive: bool,
}

/// Checks `S = S₀ + S₁`, the van Vleck composition and Morse additivity.
#[allow(clippy::too_many_arguments)]
pub fn semigroup_leading_check(
    p: &dyn Potential,
    t0: f64,
    t1: f64,
    q0: &[f64],
    q1: &[f64],
    guess: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<SemigroupReport> {
    let n = p.dim();
    let full = shoot(p, t0 + t1, q0, q1, guess, opts)?;
    let mid = full.point(t0);
    let blocks = |path: &ClassicalPath| -> Result<HessianBlocks> {
        mixed_hessian(p, &jacobi_frame(path, opts.singular_tol)?)
    };
    let legs = |q: &DVector<f64>, g0: &[f64], g1: &[f64]| -> Result<(ClassicalPath, ClassicalPath)> {
        Ok((
            shoot(p, t0, q0, q.as_slice(), Some(g0), opts)?,
            shoot(p, t1, q.as_slice(), q1, Some(g1), opts)?,
        ))
    };
    // Newton on ∂(S₀ + S₁)/∂q = γ̇₀(t₀) − γ̇₁(0)
    let mut q = mid.q.clone();
    let mut g0: Vec<f64> = full.v0.iter().copied().collect();
    let mut g1: Vec<f64> = mid.v.iter().copied().collect();
    let mut found = None;
    for _ in 0..opts.max_iterations {
        let (a, b) = legs(&q, &g0, &g1)?;
        let grad = a.v1() - &b.v0;
        let hess = blocks(&a)?.s11 + blocks(&b)?.s00;
        g0 = a.v0.iter().copied().collect();
        g1 = b.v0.iter().copied().collect();
        if grad.norm() < 1e-12 * (1.0 + q.norm()) {
            found = Some((a, b, hess));
            break;
        }
        let step = hess
            .lu()
            .solve(&grad)
            .ok_or_else(|| Error::StationaryPointNotFound("singular composed Hessian".into()))?;
        q -= step;
    }
    let (a, b, hess) =
        found.ok_or_else(|| Error::StationaryPointNotFound("no stationary intermediate point".into()))?;
    let (d, d0, d1) = (blocks(&full)?, blocks(&a)?, blocks(&b)?);
    let lhs = d.det().abs().sqrt();
    let rhs = d0.det().abs().sqrt() * d1.det().abs().sqrt() / hess.determinant().abs().sqrt();
    let sym = (&hess + hess.transpose()) * 0.5;
    let hessian_index = sym.symmetric_eigenvalues().iter().filter(|&&e| e < 0.0).count();
    let morse = MorseOptions::default();
    let morse_full = morse_index(&full, &morse)?.index;
    let morse_first = morse_index(&a, &morse)?.index;
    let morse_second = morse_index(&b, &morse)?.index;
    debug_assert_eq!(q.len(), n);
    Ok(SemigroupReport {
        q_star_offset: (&q - &mid.q).norm(),
        q_star: q.iter().copied().collect(),
        action_defect: (full.action() - a.action() - b.action()).abs(),
        vanvleck_defect: (lhs / rhs - 1.0).abs(),
        morse_additive: morse_full == morse_first + morse_second + hessian_index,
        morse_full,
        morse_first,
        morse_second,
        hessian_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [0.2, 0.1, 0.05];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((log_slope(&x, &y).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(log_slope(&x, &[0.0, 0.0, 0.0]), None);
    }

    #[test]
    fn fd_step_scaling() {
        assert_eq!(default_fd_step(0.5, &[0.2]), 1e-3);
        assert_eq!(default_fd_step(2.0, &[-3.0, 1.0]), 3e-3);
    }
}
