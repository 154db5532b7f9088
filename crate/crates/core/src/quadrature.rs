//! Quadrature rules: Gauss–Legendre on intervals, collapsed (Duffy) rules on
//! the ordered simplex `0 < x₁ < … < x_m < t`, and a seeded randomized
//! rank-1 lattice for higher dimensions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "at least one node");
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let m = (order + 1) / 2;
        let nf = order as f64;
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(order, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(order, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[order - 1 - i] = x;
            weights[i] = w;
            weights[order - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped to `[lo, hi]`.
    pub fn mapped(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (c, r) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (c + r * x, r * w))
    }

    pub fn integrate(&self, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.mapped(lo, hi).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A weighted point set on the ordered simplex `0 ≤ x₁ ≤ … ≤ x_m ≤ t`.
#[derive(Debug, Clone)]
pub struct SimplexRule {
    pub dim: usize,
    /// Flattened points, `dim` coordinates each, ascending within a point.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SimplexRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    /// Tensor Gauss–Legendre rule collapsed onto the simplex.
    ///
    /// `x_m = t·u_m`, `x_{k} = x_{k+1}·u_k`; the Jacobian is `t^m Π u_k^{k-1}`
    /// (one-based). Exact for polynomials of degree `< 2·order − m + 1` in each
    /// variable after collapsing.
    pub fn gauss(dim: usize, order: usize, t: f64) -> Self {
        let rule = GaussLegendre::new(order);
        let unit: Vec<(f64, f64)> = rule.mapped(0.0, 1.0).collect();
        let total = unit.len().pow(dim as u32);
        let mut points = Vec::with_capacity(total * dim);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        let mut x = vec![0.0; dim];
        for _ in 0..total {
            let mut w = t.powi(dim as i32);
            let mut upper = t;
            for k in (0..dim).rev() {
                let (u, wu) = unit[idx[k]];
                x[k] = upper * u;
                w *= wu * u.powi(k as i32);
                upper = x[k];
            }
            points.extend_from_slice(&x);
            weights.push(w);
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < unit.len() {
                    break;
                }
                *slot = 0;
            }
        }
        Self {
            dim,
            points,
            weights,
        }
    }

    /// Randomly shifted rank-1 lattice in the unit cube, sorted onto the simplex.
    ///
    /// Sorting a uniform point of `[0, t]^m` gives a uniform point on the ordered
    /// simplex of volume `t^m/m!`.
    pub fn lattice(dim: usize, count: usize, t: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = korobov_generator(dim, count);
        let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let volume = t.powi(dim as i32) / factorial(dim);
        let mut points = Vec::with_capacity(count * dim);
        let mut x = vec![0.0; dim];
        for k in 0..count {
            for d in 0..dim {
                let u = ((k as u64 * generator[d]) % count as u64) as f64 / count as f64 + shift[d];
                // baker's transform keeps the lattice rule second order for smooth integrands
                let u = u.fract();
                let u = 1.0 - (2.0 * u - 1.0).abs();
                x[d] = t * u;
            }
            x.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            points.extend_from_slice(&x);
        }
        Self {
            dim,
            points,
            weights: vec![volume / count as f64; count],
        }
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|k| self.weights[k] * f(self.point(k))).sum()
    }
}

fn korobov_generator(dim: usize, count: usize) -> Vec<u64> {
    // fixed Korobov parameter; adequate for the low dimensions used here
    let a = match count {
        c if c < 64 => 3,
        _ => ((count as f64).sqrt() * 0.618_033_988_7).round() as u64 | 1,
    };
    let mut g = Vec::with_capacity(dim);
    let mut cur = 1u64;
    for _ in 0..dim {
        g.push(cur % count as u64);
        cur = cur * a % count as u64;
    }
    g
}

pub fn factorial(m: usize) -> f64 {
    (1..=m).map(|k| k as f64).product()
}
