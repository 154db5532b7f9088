//! Values `F_γ(Γ, M)` of closed marked diagrams.
//!
//! Each doubly-marked edge contributes `∂²G/∂ς₁∂ς₂ = smooth + c(τ)·δ(ς₁ − ς₂)`;
//! the product over such edges is expanded, and every δ term merges the two
//! vertex times. Each resulting integral over `[0, t]^m` is split into the `m!`
//! ordered simplices, on which all step functions are constant.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::diagram::MarkedDiagram;
use crate::error::{Error, Result};
use crate::jacobi::{Branch, FramePoint, GreenKernel};
use crate::potential::Potential;
use crate::quadrature::SimplexRule;

/// Quadrature settings for [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Gauss–Legendre nodes per dimension for up to three time variables.
    pub gauss_nodes: usize,
    /// Lattice points per shift for four or more time variables.
    pub qmc_points: usize,
    pub seed: u64,
    /// Allowed `|estimate − refined| / max(1, |value|)` for Gauss rules.
    pub tol: f64,
    /// Same for the lattice rule.
    pub qmc_tol: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            gauss_nodes: 24,
            qmc_points: 1 << 13,
            seed: 0,
            tol: 1e-8,
            qmc_tol: 1e-3,
        }
    }
}

/// Result of one diagram integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagramValue {
    pub value: f64,
    pub est_error: f64,
    /// Index labelings with no structurally vanishing vertex.
    pub n_labelings: usize,
    pub n_simplices: usize,
}

impl DiagramValue {
    fn zero() -> Self {
        Self {
            value: 0.0,
            est_error: 0.0,
            n_labelings: 0,
            n_simplices: 0,
        }
    }
}

/// Weight of one vertex for given half-edge axes.
///
/// Unmarked: `∂^αC − ∂^αB_k γ̇^k`. Marked at `ζ`: `−∂^{α∖ζ}B_{j(ζ)}`.
/// `axes[0]` belongs to the marked half-edge when `marked` is true.
pub fn vertex_weight(p: &dyn Potential, q: &[f64], v: &[f64], axes: &[usize], marked: bool) -> Result<f64> {
    let n = p.dim();
    let mut alpha = vec![0u32; n];
    if marked {
        for &a in &axes[1..] {
            alpha[a] += 1;
        }
        return Ok(-p.partial_b(axes[0], q, &alpha)?);
    }
    for &a in axes {
        alpha[a] += 1;
    }
    let mut w = p.partial_c(q, &alpha)?;
    for (k, vk) in v.iter().enumerate() {
        if !p.b_vanishes(k, &alpha) {
            w -= p.partial_b(k, q, &alpha)? * vk;
        }
    }
    Ok(w)
}

fn weight_vanishes(p: &dyn Potential, axes: &[usize], marked: bool) -> bool {
    let mut alpha = vec![0u32; p.dim()];
    if marked {
        for &a in &axes[1..] {
            alpha[a] += 1;
        }
        return p.b_vanishes(axes[0], &alpha);
    }
    for &a in axes {
        alpha[a] += 1;
    }
    p.c_vanishes(&alpha) && (0..p.dim()).all(|k| p.b_vanishes(k, &alpha))
}

/// Marks carried by an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeMarks {
    None,
    /// Only the end at `ς` is marked.
    First,
    /// Only the end at `τ` is marked.
    Second,
    Both,
}

/// Edge kernel matrix (rows at `ς`, columns at `τ`) and, for doubly-marked
/// edges, the coefficient of `δ(ς − τ)`.
///
/// On the diagonal the two branches are averaged.
pub fn edge_kernel(
    kernel: &GreenKernel<'_>,
    marks: EdgeMarks,
    s: &FramePoint,
    u: &FramePoint,
) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
    let branches: &[Branch] = if s.tau > u.tau {
        &[Branch::Above]
    } else if s.tau < u.tau {
        &[Branch::Below]
    } else {
        &[Branch::Above, Branch::Below]
    };
    let avg = |f: &dyn Fn(Branch) -> DMatrix<f64>| {
        let mut m = f(branches[0]);
        if branches.len() == 2 {
            m = (m + f(branches[1])) * 0.5;
        }
        m
    };
    match marks {
        EdgeMarks::None => (kernel.green_branch(s, u, branches[0]), None),
        EdgeMarks::First => (avg(&|b| kernel.d1_branch(s, u, b)), None),
        EdgeMarks::Second => (avg(&|b| kernel.d2_branch(s, u, b)), None),
        EdgeMarks::Both => (
            avg(&|b| kernel.d11_branch(s, u, b)),
            Some(delta_coefficient(kernel, u)),
        ),
    }
}

/// Coefficient of `δ(ς − τ)` in `∂²G(ς, τ)/∂ς∂τ`: the step of `∂_τG` as `ς` crosses `τ`.
pub fn delta_coefficient(kernel: &GreenKernel<'_>, at: &FramePoint) -> DMatrix<f64> {
    -kernel.jump_at(at)
}

/// One term of the δ expansion: which vertices share a time variable.
#[derive(Debug, Clone)]
struct Term {
    /// Time variable of each vertex.
    slot: Vec<usize>,
    slots: usize,
    /// Doubly-marked edges replaced by their δ part.
    delta: Vec<bool>,
}

/// The δ-expansion of a diagram.
#[derive(Debug, Clone)]
pub struct EvaluationPlan {
    terms: Vec<Term>,
}

impl EvaluationPlan {
    pub fn new(d: &MarkedDiagram) -> Self {
        let both: Vec<usize> = (0..d.edge_count())
            .filter(|&e| d.edges()[e].marked == [true, true])
            .collect();
        let mut terms = Vec::new();
        for mask in 0u32..1 << both.len() {
            let mut delta = vec![false; d.edge_count()];
            let mut group: Vec<usize> = (0..d.vertex_count()).collect();
            for (k, &e) in both.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    delta[e] = true;
                    let [a, b] = d.edges()[e].ends;
                    // marks are one per vertex, so δ edges form a matching
                    group[b] = a;
                }
            }
            let mut slot = vec![usize::MAX; d.vertex_count()];
            let mut slots = 0;
            for v in 0..d.vertex_count() {
                if group[v] == v {
                    slot[v] = slots;
                    slots += 1;
                }
            }
            for v in 0..d.vertex_count() {
                slot[v] = slot[group[v]];
            }
            terms.push(Term { slot, slots, delta });
        }
        Self { terms }
    }

    /// Surviving time dimensions of each term.
    pub fn dimensions(&self) -> Vec<usize> {
        self.terms.iter().map(|t| t.slots).collect()
    }

    pub fn simplex_count(&self) -> usize {
        self.terms.iter().map(|t| (1..=t.slots).product::<usize>()).sum()
    }
}

/// Precomputed per-vertex data for the labeled sum.
struct VertexInfo {
    /// Half-edges at the vertex, marked one first.
    half_edges: Vec<usize>,
    marked: bool,
}

struct Integrand<'a, 'k> {
    p: &'a dyn Potential,
    kernel: &'a GreenKernel<'k>,
    d: &'a MarkedDiagram,
    vertices: Vec<VertexInfo>,
    /// Index labelings (per half-edge) with every vertex weight not identically zero.
    labelings: Vec<Vec<usize>>,
}

impl<'a, 'k> Integrand<'a, 'k> {
    fn new(p: &'a dyn Potential, kernel: &'a GreenKernel<'k>, d: &'a MarkedDiagram) -> Self {
        let n = p.dim();
        let vertices: Vec<VertexInfo> = (0..d.vertex_count())
            .map(|v| {
                let mut half_edges = d.half_edges_at(v);
                let marked = match d.marked_half_edge(v) {
                    Some(m) => {
                        half_edges.retain(|&h| h != m);
                        half_edges.insert(0, m);
                        true
                    }
                    None => false,
                };
                VertexInfo { half_edges, marked }
            })
            .collect();
        let h = d.half_edge_count();
        let total = n.pow(h as u32);
        let mut labelings = Vec::new();
        let mut j = vec![0usize; h];
        for _ in 0..total {
            let alive = vertices.iter().all(|vi| {
                let axes: Vec<usize> = vi.half_edges.iter().map(|&x| j[x]).collect();
                !weight_vanishes(p, &axes, vi.marked)
            });
            if alive {
                labelings.push(j.clone());
            }
            for slot in j.iter_mut() {
                *slot += 1;
                if *slot < n {
                    break;
                }
                *slot = 0;
            }
        }
        Self {
            p,
            kernel,
            d,
            vertices,
            labelings,
        }
    }

    /// Integrand of one δ term at the given slot times.
    fn eval(&self, term: &Term, times: &[f64]) -> Result<f64> {
        let frames: Vec<FramePoint> = times.iter().map(|&x| self.kernel.frame().at(x)).collect();
        let d = self.d;
        let mut kernels = Vec::with_capacity(d.edge_count());
        for (e, edge) in d.edges().iter().enumerate() {
            let s = &frames[term.slot[edge.ends[0]]];
            let u = &frames[term.slot[edge.ends[1]]];
            let marks = match edge.marked {
                [false, false] => EdgeMarks::None,
                [true, false] => EdgeMarks::First,
                [false, true] => EdgeMarks::Second,
                [true, true] => EdgeMarks::Both,
            };
            let (smooth, delta) = edge_kernel(self.kernel, marks, s, u);
            kernels.push(if term.delta[e] {
                delta.expect("doubly-marked edge")
            } else {
                smooth
            });
        }
        let mut total = 0.0;
        let mut weights: Vec<std::collections::HashMap<Vec<usize>, f64>> =
            vec![Default::default(); self.vertices.len()];
        for j in &self.labelings {
            let mut prod = 1.0;
            for (e, k) in kernels.iter().enumerate() {
                prod *= k[(j[2 * e], j[2 * e + 1])];
                if prod == 0.0 {
                    break;
                }
            }
            if prod == 0.0 {
                continue;
            }
            for (v, vi) in self.vertices.iter().enumerate() {
                let axes: Vec<usize> = vi.half_edges.iter().map(|&x| j[x]).collect();
                let f = &frames[term.slot[v]];
                let w = match weights[v].get(&axes) {
                    Some(&w) => w,
                    None => {
                        let w = vertex_weight(self.p, f.q.as_slice(), f.v.as_slice(), &axes, vi.marked)?;
                        weights[v].insert(axes, w);
                        w
                    }
                };
                prod *= w;
                if prod == 0.0 {
                    break;
                }
            }
            total += prod;
        }
        Ok(total)
    }

    fn integrate(&self, term: &Term, rule: &SimplexRule) -> Result<f64> {
        let m = term.slots;
        let perms = permutations(m);
        let parts: Vec<Result<f64>> = perms
            .par_iter()
            .map(|perm| {
                let mut times = vec![0.0; m];
                let mut acc = 0.0;
                for k in 0..rule.len() {
                    let x = rule.point(k);
                    for g in 0..m {
                        times[g] = x[perm[g]];
                    }
                    acc += rule.weights[k] * self.eval(term, &times)?;
                }
                Ok(acc)
            })
            .collect();
        let mut sum = 0.0;
        for part in parts {
            sum += part?;
        }
        Ok(sum)
    }
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for k in 0..m {
        let mut next = Vec::new();
        for p in &out {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, k);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// `F_γ(Γ, M)` with an error estimate from a refined rule.
pub fn evaluate(
    p: &dyn Potential,
    kernel: &GreenKernel<'_>,
    d: &MarkedDiagram,
    opts: &EvalOptions,
) -> Result<DiagramValue> {
    let requested = d.valences().into_iter().max().unwrap_or(0);
    if requested > p.max_order() {
        return Err(Error::OrderExceeded {
            requested,
            max_order: p.max_order(),
        });
    }
    let integrand = Integrand::new(p, kernel, d);
    if integrand.labelings.is_empty() {
        return Ok(DiagramValue::zero());
    }
    let plan = EvaluationPlan::new(d);
    let t = kernel.duration();
    let mut value = 0.0;
    let mut err = 0.0;
    let mut tol_scale = 0.0f64;
    let mut lattice = false;
    for term in &plan.terms {
        let m = term.slots;
        let (a, b) = if m <= 3 {
            let coarse = SimplexRule::gauss(m, opts.gauss_nodes, t);
            let fine = SimplexRule::gauss(m, opts.gauss_nodes + 8, t);
            (integrand.integrate(term, &coarse)?, integrand.integrate(term, &fine)?)
        } else {
            lattice = true;
            let r1 = SimplexRule::lattice(m, opts.qmc_points, t, opts.seed);
            let r2 = SimplexRule::lattice(m, opts.qmc_points, t, opts.seed.wrapping_add(1));
            let (x, y) = (integrand.integrate(term, &r1)?, integrand.integrate(term, &r2)?);
            (0.5 * (x + y), x)
        };
        value += if m <= 3 { b } else { a };
        err += (a - b).abs();
        tol_scale = tol_scale.max(a.abs());
    }
    let tol = if lattice { opts.qmc_tol } else { opts.tol };
    if err > tol * tol_scale.max(1.0) {
        return Err(Error::QuadratureNotConverged {
            estimate: value - err,
            refined: value,
        });
    }
    Ok(DiagramValue {
        value,
        est_error: err,
        n_labelings: integrand.labelings.len(),
        n_simplices: plan.simplex_count(),
    })
}
