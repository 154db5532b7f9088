//! Polynomial electric and magnetic potentials with exact mixed partials.
//!
//! A system is described by a scalar electric potential `C` and a magnetic
//! potential `B = (B_1, .., B_n)` on `R^n`. Both are multivariate polynomials
//! given as term lists, so every mixed partial derivative is exact. Derivative
//! polynomials are tabulated once, up to the declared `max_order`, and the
//! table is read-only afterwards.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Highest mixed partial needed to evaluate diagrams up to `loops`.
///
/// A closed connected diagram with `λ` loops has at most `2λ - 2` vertices and
/// its largest vertex valence is `2λ` (one vertex carrying `λ` self-loops).
/// Loop order zero only needs the classical force.
pub fn required_order(loops: usize) -> usize {
    match loops {
        0 => 1,
        l => 2 * l,
    }
}

/// One monomial `c * q^e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    #[serde(rename = "c")]
    pub coeff: f64,
    #[serde(rename = "e")]
    pub exponents: Vec<u32>,
}

impl Term {
    pub fn new(coeff: f64, exponents: Vec<u32>) -> Self {
        Self { coeff, exponents }
    }
}

/// Multivariate polynomial with merged, sorted terms and no zero coefficients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<Term>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn from_terms(dim: usize, terms: Vec<Term>) -> Result<Self> {
        for (k, term) in terms.iter().enumerate() {
            if term.exponents.len() != dim {
                return Err(Error::Config {
                    path: format!("[{k}].e"),
                    message: format!(
                        "exponent array has length {}, expected {dim}",
                        term.exponents.len()
                    ),
                });
            }
            if !term.coeff.is_finite() {
                return Err(Error::Config {
                    path: format!("[{k}].c"),
                    message: "coefficient is not finite".into(),
                });
            }
        }
        Ok(Self::normalized(dim, terms))
    }

    fn normalized(dim: usize, mut terms: Vec<Term>) -> Self {
        terms.sort_by(|a, b| a.exponents.cmp(&b.exponents));
        let mut merged: Vec<Term> = Vec::with_capacity(terms.len());
        for term in terms {
            match merged.last_mut() {
                Some(last) if last.exponents == term.exponents => last.coeff += term.coeff,
                _ => merged.push(term),
            }
        }
        merged.retain(|t| t.coeff != 0.0);
        Self { dim, terms: merged }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.iter().map(|t| t.exponents.iter().sum()).max()
    }

    pub fn eval(&self, q: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.exponents
                    .iter()
                    .zip(q)
                    .fold(t.coeff, |acc, (&e, &x)| acc * x.powi(e as i32))
            })
            .sum()
    }

    /// Mixed partial `∂^alpha`, where `alpha[i]` counts derivatives in axis `i`.
    pub fn derivative(&self, alpha: &[u32]) -> Self {
        let terms = self
            .terms
            .iter()
            .filter_map(|t| {
                let mut coeff = t.coeff;
                let mut exponents = t.exponents.clone();
                for (e, &a) in exponents.iter_mut().zip(alpha) {
                    if a > *e {
                        return None;
                    }
                    for k in 0..a {
                        coeff *= f64::from(*e - k);
                    }
                    *e -= a;
                }
                Some(Term { coeff, exponents })
            })
            .collect();
        Self::normalized(self.dim, terms)
    }
}

/// Source of potentials and their mixed partials.
///
/// Everything downstream (dynamics, vertex weights) goes through this trait.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    /// Highest total derivative order that may be requested.
    fn max_order(&self) -> usize;

    fn partial_c(&self, q: &[f64], alpha: &[u32]) -> Result<f64>;

    /// Mixed partial of the `axis`-th component of `B`.
    fn partial_b(&self, axis: usize, q: &[f64], alpha: &[u32]) -> Result<f64>;

    /// True when `∂^alpha C` vanishes identically.
    fn c_vanishes(&self, _alpha: &[u32]) -> bool {
        false
    }

    fn b_vanishes(&self, _axis: usize, _alpha: &[u32]) -> bool {
        false
    }

    fn eval_c(&self, q: &[f64]) -> f64 {
        self.partial_c(q, &vec![0; self.dim()]).unwrap_or(0.0)
    }

    fn eval_b(&self, q: &[f64]) -> Vec<f64> {
        let zero = vec![0; self.dim()];
        (0..self.dim())
            .map(|i| self.partial_b(i, q, &zero).unwrap_or(0.0))
            .collect()
    }

    /// True when every component of `B` vanishes identically.
    fn magnetic_free(&self) -> bool {
        let zero = vec![0; self.dim()];
        (0..self.dim()).all(|i| self.b_vanishes(i, &zero))
    }
}

/// Polynomial system `(C, B)` on `R^n`.
#[derive(Debug, Clone)]
pub struct PotentialSpec {
    dim: usize,
    c: Polynomial,
    b: Vec<Polynomial>,
    max_order: usize,
    // (component, alpha) -> derivative polynomial; component 0 is C, 1..=n are B_i.
    table: HashMap<(usize, Vec<u32>), Polynomial>,
}

/// JSON layout of a system file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialDoc {
    pub n: usize,
    #[serde(rename = "C", default)]
    pub c: Vec<Term>,
    #[serde(rename = "B", default)]
    pub b: Vec<Vec<Term>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_order: Option<usize>,
}

/// Derivative order tabulated when a config does not declare one (enough for four loops).
pub const DEFAULT_MAX_ORDER: usize = 8;

impl PotentialSpec {
    pub fn new(dim: usize, c: Vec<Term>, b: Vec<Vec<Term>>, max_order: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config {
                path: "n".into(),
                message: "dimension must be positive".into(),
            });
        }
        let c = Polynomial::from_terms(dim, c).map_err(|e| prefix(e, "C"))?;
        let b = if b.is_empty() {
            vec![Polynomial::zero(dim); dim]
        } else {
            if b.len() != dim {
                return Err(Error::Config {
                    path: "B".into(),
                    message: format!("expected {dim} components, got {}", b.len()),
                });
            }
            b.into_iter()
                .enumerate()
                .map(|(i, terms)| {
                    Polynomial::from_terms(dim, terms).map_err(|e| prefix(e, &format!("B[{i}]")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        let mut spec = Self {
            dim,
            c,
            b,
            max_order,
            table: HashMap::new(),
        };
        spec.build_table();
        Ok(spec)
    }

    fn build_table(&mut self) {
        let mut table = HashMap::new();
        for alpha in multi_indices(self.dim, self.max_order) {
            table.insert((0, alpha.clone()), self.c.derivative(&alpha));
            for (i, bi) in self.b.iter().enumerate() {
                table.insert((i + 1, alpha.clone()), bi.derivative(&alpha));
            }
        }
        self.table = table;
    }

    /// Same system with a different derivative budget.
    pub fn with_max_order(mut self, max_order: usize) -> Self {
        if max_order != self.max_order {
            self.max_order = max_order;
            self.build_table();
        }
        self
    }

    pub fn from_doc(doc: PotentialDoc) -> Result<Self> {
        let order = doc.max_order.unwrap_or(DEFAULT_MAX_ORDER);
        Self::new(doc.n, doc.c, doc.b, order)
    }

    /// Parses the JSON system format, reporting the offending field path on error.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config {
            path: "$".into(),
            message: e.to_string(),
        })?;
        Self::from_json_value(&value)
    }

    pub fn from_json_value(value: &Value) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| Error::Config {
            path: "$".into(),
            message: "expected an object".into(),
        })?;
        let n = obj
            .get("n")
            .and_then(Value::as_u64)
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config {
                path: "n".into(),
                message: "expected a positive integer".into(),
            })? as usize;
        let c = match obj.get("C") {
            None | Some(Value::Null) => Vec::new(),
            Some(v) => parse_terms(v, n, "C")?,
        };
        let b = match obj.get("B") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(items)) => {
                if items.len() != n {
                    return Err(Error::Config {
                        path: "B".into(),
                        message: format!("expected {n} components, got {}", items.len()),
                    });
                }
                items
                    .iter()
                    .enumerate()
                    .map(|(i, v)| parse_terms(v, n, &format!("B[{i}]")))
                    .collect::<Result<Vec<_>>>()?
            }
            Some(_) => {
                return Err(Error::Config {
                    path: "B".into(),
                    message: "expected an array of term lists".into(),
                })
            }
        };
        let max_order = match obj.get("max_order") {
            None | Some(Value::Null) => DEFAULT_MAX_ORDER,
            Some(v) => v.as_u64().ok_or_else(|| Error::Config {
                path: "max_order".into(),
                message: "expected a non-negative integer".into(),
            })? as usize,
        };
        Self::new(n, c, b, max_order)
    }

    pub fn to_doc(&self) -> PotentialDoc {
        PotentialDoc {
            n: self.dim,
            c: self.c.terms().to_vec(),
            b: self.b.iter().map(|p| p.terms().to_vec()).collect(),
            max_order: Some(self.max_order),
        }
    }

    pub fn c_polynomial(&self) -> &Polynomial {
        &self.c
    }

    pub fn b_polynomial(&self, axis: usize) -> &Polynomial {
        &self.b[axis]
    }

    fn lookup(&self, component: usize, alpha: &[u32]) -> Result<&Polynomial> {
        if alpha.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: alpha.len(),
            });
        }
        let order: u32 = alpha.iter().sum();
        if order as usize > self.max_order {
            return Err(Error::OrderExceeded {
                requested: order as usize,
                max_order: self.max_order,
            });
        }
        Ok(&self.table[&(component, alpha.to_vec())])
    }

    // Built-in systems used throughout the tests and examples.

    /// `C = 0`, `B = 0`.
    pub fn free(dim: usize) -> Self {
        Self::new(dim, vec![], vec![], DEFAULT_MAX_ORDER).expect("valid system")
    }

    /// Isotropic oscillator `C = ω²|q|²/2`.
    pub fn harmonic(dim: usize, omega: f64) -> Self {
        let c = (0..dim)
            .map(|i| {
                let mut e = vec![0; dim];
                e[i] = 2;
                Term::new(0.5 * omega * omega, e)
            })
            .collect();
        Self::new(dim, c, vec![], DEFAULT_MAX_ORDER).expect("valid system")
    }

    /// One-dimensional `C = g q^4`.
    pub fn quartic(g: f64) -> Self {
        Self::new(1, vec![Term::new(g, vec![4])], vec![], DEFAULT_MAX_ORDER).expect("valid system")
    }

    /// Uniform field of strength `b` in the plane, symmetric gauge
    /// `B = (-b q²/2, b q¹/2)`.
    pub fn uniform_field(b: f64) -> Self {
        Self::new(
            2,
            vec![],
            vec![
                vec![Term::new(-0.5 * b, vec![0, 1])],
                vec![Term::new(0.5 * b, vec![1, 0])],
            ],
            DEFAULT_MAX_ORDER,
        )
        .expect("valid system")
    }
}

impl Potential for PotentialSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn max_order(&self) -> usize {
        self.max_order
    }

    fn partial_c(&self, q: &[f64], alpha: &[u32]) -> Result<f64> {
        Ok(self.lookup(0, alpha)?.eval(q))
    }

    fn partial_b(&self, axis: usize, q: &[f64], alpha: &[u32]) -> Result<f64> {
        if axis >= self.dim {
            return Err(Error::InvalidArgument(format!(
                "magnetic axis {axis} out of range for dimension {}",
                self.dim
            )));
        }
        Ok(self.lookup(axis + 1, alpha)?.eval(q))
    }

    fn c_vanishes(&self, alpha: &[u32]) -> bool {
        self.lookup(0, alpha).map(Polynomial::is_zero).unwrap_or(false)
    }

    fn b_vanishes(&self, axis: usize, alpha: &[u32]) -> bool {
        self.lookup(axis + 1, alpha).map(Polynomial::is_zero).unwrap_or(false)
    }

    fn eval_c(&self, q: &[f64]) -> f64 {
        self.c.eval(q)
    }

    fn eval_b(&self, q: &[f64]) -> Vec<f64> {
        self.b.iter().map(|p| p.eval(q)).collect()
    }

    fn magnetic_free(&self) -> bool {
        self.b.iter().all(Polynomial::is_zero)
    }
}

/// Converts a list of axes (one per derivative) to per-axis counts.
pub fn axes_to_multi_index(dim: usize, axes: &[usize]) -> Vec<u32> {
    let mut alpha = vec![0; dim];
    for &a in axes {
        alpha[a] += 1;
    }
    alpha
}

/// All multi-indices of length `dim` and total order `<= max_order`.
pub fn multi_indices(dim: usize, max_order: usize) -> Vec<Vec<u32>> {
    fn rec(dim: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == dim {
            out.push(cur.clone());
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(dim, left - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, max_order as u32, &mut Vec::with_capacity(dim), &mut out);
    out
}

fn parse_terms(value: &Value, n: usize, path: &str) -> Result<Vec<Term>> {
    let items = value.as_array().ok_or_else(|| Error::Config {
        path: path.into(),
        message: "expected an array of terms".into(),
    })?;
    items
        .iter()
        .enumerate()
        .map(|(k, item)| {
            let here = format!("{path}[{k}]");
            let obj = item.as_object().ok_or_else(|| Error::Config {
                path: here.clone(),
                message: "expected an object {\"c\": .., \"e\": [..]}".into(),
            })?;
            let coeff = obj.get("c").and_then(Value::as_f64).ok_or_else(|| Error::Config {
                path: format!("{here}.c"),
                message: "expected a number".into(),
            })?;
            let exps = obj.get("e").and_then(Value::as_array).ok_or_else(|| Error::Config {
                path: format!("{here}.e"),
                message: "expected an array of non-negative integers".into(),
            })?;
            if exps.len() != n {
                return Err(Error::Config {
                    path: format!("{here}.e"),
                    message: format!("exponent array has length {}, expected {n}", exps.len()),
                });
            }
            let exponents = exps
                .iter()
                .enumerate()
                .map(|(j, e)| {
                    e.as_u64().map(|x| x as u32).ok_or_else(|| Error::Config {
                        path: format!("{here}.e[{j}]"),
                        message: "expected a non-negative integer".into(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Term::new(coeff, exponents))
        })
        .collect()
}

fn prefix(err: Error, head: &str) -> Error {
    match err {
        Error::Config { path, message } => Error::Config {
            path: format!("{head}{path}"),
            message,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_examples() {
        let harmonic = PotentialSpec::harmonic(1, 1.0);
        assert_eq!(harmonic.eval_c(&[2.0]), 2.0);
        let free = PotentialSpec::free(3);
        assert_eq!(free.eval_c(&[1.0, -2.0, 0.3]), 0.0);
        let quartic = PotentialSpec::quartic(1.0);
        assert_eq!(quartic.eval_c(&[1.0]), 1.0);
    }

    #[test]
    fn partial_examples() {
        let quartic = PotentialSpec::quartic(1.0);
        assert_eq!(quartic.partial_c(&[0.37], &[4]).unwrap(), 24.0);
        let harmonic = PotentialSpec::harmonic(1, 1.0);
        assert_eq!(harmonic.partial_c(&[1.5], &[3]).unwrap(), 0.0);
        let bilinear =
            PotentialSpec::new(2, vec![Term::new(1.0, vec![1, 1])], vec![], 4).unwrap();
        assert_eq!(bilinear.partial_c(&[0.2, 0.9], &[1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn magnetic_partials() {
        let field = PotentialSpec::uniform_field(1.0);
        let q = [0.3, -0.7];
        let d2b1 = field.partial_b(0, &q, &[0, 1]).unwrap();
        let d1b2 = field.partial_b(1, &q, &[1, 0]).unwrap();
        assert_eq!(d2b1, -0.5);
        assert_eq!(d1b2 - d2b1, 1.0);
        let free = PotentialSpec::free(2);
        assert_eq!(free.partial_b(1, &q, &[2, 1]).unwrap(), 0.0);
        assert!(free.magnetic_free());
        assert!(!field.magnetic_free());
    }

    #[test]
    fn required_order_examples() {
        assert_eq!(required_order(2), 4);
        assert_eq!(required_order(3), 6);
        assert_eq!(required_order(0), 1);
    }

    #[test]
    fn order_exceeded_is_rejected() {
        let spec = PotentialSpec::quartic(1.0).with_max_order(3);
        assert!(matches!(
            spec.partial_c(&[0.0], &[4]),
            Err(Error::OrderExceeded { requested: 4, max_order: 3 })
        ));
    }

    #[test]
    fn above_degree_is_exactly_zero() {
        let spec = PotentialSpec::quartic(2.5);
        assert_eq!(spec.partial_c(&[1.3], &[5]).unwrap(), 0.0);
        assert!(spec.c_vanishes(&[5]));
        assert!(!spec.c_vanishes(&[4]));
    }

    #[test]
    fn json_round_trip_and_absent_b() {
        let spec = PotentialSpec::from_json_str(r#"{"n": 1, "C": [{"c": 1.0, "e": [4]}], "B": [[]]}"#)
            .unwrap();
        assert_eq!(spec.partial_c(&[0.5], &[4]).unwrap(), 24.0);
        let no_b = PotentialSpec::from_json_str(r#"{"n": 2, "C": [{"c": 0.5, "e": [2, 0]}]}"#).unwrap();
        assert!(no_b.magnetic_free());
        let doc = serde_json::to_string(&spec.to_doc()).unwrap();
        let again = PotentialSpec::from_json_str(&doc).unwrap();
        assert_eq!(again.c_polynomial(), spec.c_polynomial());
    }

    #[test]
    fn malformed_exponents_name_the_field() {
        let err = PotentialSpec::from_json_str(r#"{"n": 1, "C": [{"c": 1.0, "e": [1, 2]}]}"#)
            .unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "C[0].e"),
            other => panic!("unexpected {other:?}"),
        }
        let err = PotentialSpec::from_json_str(r#"{"n": 2, "B": [[], [{"c": 1.0, "e": [1]}]]}"#)
            .unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "B[1][0].e"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn like_terms_merge() {
        let p = Polynomial::from_terms(
            1,
            vec![Term::new(1.0, vec![2]), Term::new(-1.0, vec![2]), Term::new(3.0, vec![1])],
        )
        .unwrap();
        assert_eq!(p.terms().len(), 1);
        assert_eq!(p.degree(), Some(1));
    }
}
