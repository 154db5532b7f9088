//! Truncated series in `iℏ` and assembly of `V_γ`.

use std::ops::{Add, Mul, Neg};

use rayon::prelude::*;
use serde::Serialize;

use crate::classical::{shoot, ClassicalPath, SolverOptions};
use crate::diagram::{enumerate_connected, MarkedDiagram, MAX_LOOPS};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, EvalOptions};
use crate::jacobi::{jacobi_frame, mixed_hessian, GreenKernel, JacobiFrame};
use crate::potential::{required_order, Potential};

/// `Σ_{k ≤ L} c_k x^k`, truncated at order `L`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HbarSeries {
    coeffs: Vec<f64>,
}

impl HbarSeries {
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "series needs at least the constant term");
        Self { coeffs }
    }

    pub fn zero(order: usize) -> Self {
        Self::new(vec![0.0; order + 1])
    }

    pub fn one(order: usize) -> Self {
        let mut s = Self::zero(order);
        s.coeffs[0] = 1.0;
        s
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn get(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    /// Cauchy product truncated at the lower of the two orders.
    pub fn mul(&self, other: &Self) -> Self {
        let order = self.order().min(other.order());
        let coeffs = (0..=order)
            .map(|k| (0..=k).map(|j| self.coeffs[j] * other.coeffs[k - j]).sum())
            .collect();
        Self::new(coeffs)
    }

    /// `exp` via `k e_k = Σ_{j=1}^k j s_j e_{k−j}`, scaled by `e^{s₀}`.
    pub fn exp(&self) -> Self {
        let s = &self.coeffs;
        let mut e = vec![0.0; s.len()];
        e[0] = 1.0;
        for k in 1..s.len() {
            e[k] = (1..=k).map(|j| j as f64 * s[j] * e[k - j]).sum::<f64>() / k as f64;
        }
        let scale = s[0].exp();
        Self::new(e.into_iter().map(|x| x * scale).collect())
    }

    /// Drops the constant term and lowers every power by one.
    pub fn shift_down(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::zero(0);
        }
        Self::new(self.coeffs[1..].to_vec())
    }
}

impl Add for &HbarSeries {
    type Output = HbarSeries;

    fn add(self, rhs: &HbarSeries) -> HbarSeries {
        let order = self.order().min(rhs.order());
        HbarSeries::new((0..=order).map(|k| self.coeffs[k] + rhs.coeffs[k]).collect())
    }
}

impl Mul<f64> for &HbarSeries {
    type Output = HbarSeries;

    fn mul(self, rhs: f64) -> HbarSeries {
        HbarSeries::new(self.coeffs.iter().map(|c| c * rhs).collect())
    }
}

impl Neg for &HbarSeries {
    type Output = HbarSeries;

    fn neg(self) -> HbarSeries {
        self * -1.0
    }
}

/// Connected marked diagrams up to a loop order, enumerated once and reused.
#[derive(Debug, Clone)]
pub struct DiagramSet {
    loops: usize,
    diagrams: Vec<(MarkedDiagram, String, u64)>,
}

impl DiagramSet {
    pub fn new(loops: usize) -> Result<Self> {
        if loops > MAX_LOOPS {
            return Err(Error::InvalidArgument(format!(
                "loop order {loops} exceeds the supported maximum {MAX_LOOPS}"
            )));
        }
        let diagrams = enumerate_connected(loops)?
            .into_iter()
            .map(|d| {
                // enumeration already returns canonical representatives
                let key = d.to_string();
                let aut = d.automorphism_order();
                (d, key, aut)
            })
            .collect();
        Ok(Self { loops, diagrams })
    }

    pub fn loops(&self) -> usize {
        self.loops
    }

    pub fn len(&self) -> usize {
        self.diagrams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagrams.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MarkedDiagram> {
        self.diagrams.iter().map(|(d, _, _)| d)
    }
}

/// Settings for [`compute_v`].
#[derive(Debug, Clone, Default)]
pub struct SeriesOptions {
    pub solver: SolverOptions,
    pub eval: EvalOptions,
}

/// Contribution of one diagram to `v_λ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagramContribution {
    pub key: String,
    pub lambda: usize,
    pub aut: u64,
    pub value: f64,
    pub est_error: f64,
    /// `value / aut`.
    pub contribution: f64,
}

/// `V_γ` at one boundary point with its ingredients.
#[derive(Debug, Clone)]
pub struct SeriesResult {
    pub series: HbarSeries,
    pub action: f64,
    /// `½ log|det ∂²(−S)/∂q₀∂q₁|`.
    pub logdet: f64,
    pub path: ClassicalPath,
    pub diagrams: Vec<DiagramContribution>,
}

/// `½ log|det ∂²(−S)/∂q₀∂q₁| = −½ log|det ∂γ(t)/∂v₀|`.
pub fn logdet_half(frame: &JacobiFrame<'_>) -> f64 {
    let path = frame.path();
    -0.5 * path.position_velocity_block(path.duration).determinant().abs().ln()
}

/// Series coefficients from an already solved path.
pub fn series_for_path(
    p: &dyn Potential,
    path: &ClassicalPath,
    loops: usize,
    diagrams: &DiagramSet,
    opts: &SeriesOptions,
) -> Result<(HbarSeries, f64, Vec<DiagramContribution>)> {
    if loops > diagrams.loops() {
        return Err(Error::InvalidArgument(format!(
            "diagram set covers {} loops, {loops} requested",
            diagrams.loops()
        )));
    }
    let need = required_order(loops);
    if loops >= 2 && need > p.max_order() {
        return Err(Error::OrderExceeded {
            requested: need,
            max_order: p.max_order(),
        });
    }
    let frame = jacobi_frame(path, opts.solver.singular_tol)?;
    mixed_hessian(p, &frame)?;
    let logdet = logdet_half(&frame);
    let kernel = GreenKernel::new(frame);
    let chosen: Vec<&(MarkedDiagram, String, u64)> = diagrams
        .diagrams
        .iter()
        .filter(|(d, _, _)| d.loop_number() <= loops)
        .collect();
    let values: Vec<Result<DiagramContribution>> = chosen
        .par_iter()
        .map(|(d, key, aut)| {
            let v = evaluate(p, &kernel, d, &opts.eval)?;
            Ok(DiagramContribution {
                key: key.clone(),
                lambda: d.loop_number(),
                aut: *aut,
                value: v.value,
                est_error: v.est_error,
                contribution: v.value / *aut as f64,
            })
        })
        .collect();
    let mut coeffs = vec![0.0; loops + 1];
    coeffs[0] = -path.action();
    if loops >= 1 {
        coeffs[1] = logdet;
    }
    let mut contributions = Vec::with_capacity(values.len());
    for v in values {
        let v = v?;
        coeffs[v.lambda] += v.contribution;
        contributions.push(v);
    }
    Ok((HbarSeries::new(coeffs), logdet, contributions))
}

/// Shoots the path and assembles `v₀ … v_L`.
#[allow(clippy::too_many_arguments)]
pub fn compute_v(
    p: &dyn Potential,
    t: f64,
    q0: &[f64],
    q1: &[f64],
    loops: usize,
    guess: Option<&[f64]>,
    diagrams: &DiagramSet,
    opts: &SeriesOptions,
) -> Result<SeriesResult> {
    let path = shoot(p, t, q0, q1, guess, &opts.solver)?;
    let (series, logdet, diagrams) = series_for_path(p, &path, loops, diagrams, opts)?;
    Ok(SeriesResult {
        action: path.action(),
        series,
        logdet,
        path,
        diagrams,
    })
}

/// `U_γ = e^{−S/(iℏ)} · vanvleck · correction`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagatorParts {
    /// `−S`.
    pub phase: f64,
    /// `√|det ∂²(−S)/∂q₀∂q₁|`.
    pub vanvleck: f64,
    /// `exp(Σ_{λ≥2} v_λ (iℏ)^{λ−1})`.
    pub correction: HbarSeries,
}

pub fn propagator_parts(v: &HbarSeries) -> PropagatorParts {
    let mut tail = vec![0.0; v.order().max(1)];
    for (k, slot) in tail.iter_mut().enumerate().skip(1) {
        *slot = v.get(k + 1);
    }
    PropagatorParts {
        phase: v.get(0),
        vanvleck: v.get(1).exp(),
        correction: HbarSeries::new(tail).exp(),
    }
}
