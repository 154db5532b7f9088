//! Closed Feynman diagrams with markings: enumeration, canonical keys and
//! automorphism groups.
//!
//! A diagram is stored as a labeled multigraph: vertices `0..V` and an edge
//! list. Half-edge `2e + s` is end `s` of edge `e`. A marking selects at most
//! one half-edge per vertex.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest loop order supported by the enumerator.
pub const MAX_LOOPS: usize = 4;

/// One edge with its endpoint vertices and per-end marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub ends: [usize; 2],
    pub marked: [bool; 2],
}

impl Edge {
    pub fn new(u: usize, w: usize) -> Self {
        Self {
            ends: [u, w],
            marked: [false, false],
        }
    }

    pub fn is_loop(&self) -> bool {
        self.ends[0] == self.ends[1]
    }

    pub fn mark_count(&self) -> usize {
        self.marked.iter().filter(|&&m| m).count()
    }

    // orientation-free form under a vertex relabeling
    fn normalized(&self, perm: &[usize]) -> (usize, usize, bool, bool) {
        let (a, b) = (perm[self.ends[0]], perm[self.ends[1]]);
        let (ma, mb) = (self.marked[0], self.marked[1]);
        if a < b || (a == b && ma >= mb) {
            (a, b, ma, mb)
        } else {
            (b, a, mb, ma)
        }
    }
}

/// A closed marked diagram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedDiagram {
    vertices: usize,
    edges: Vec<Edge>,
}

/// Sorted edge tuples after relabeling; the canonical form is the least one.
type Form = Vec<(usize, usize, bool, bool)>;

impl MarkedDiagram {
    /// Validates valences (≥ 3) and the one-mark-per-vertex rule.
    pub fn new(vertices: usize, edges: Vec<Edge>) -> Result<Self> {
        let d = Self { vertices, edges };
        for e in &d.edges {
            if e.ends.iter().any(|&v| v >= vertices) {
                return Err(Error::InvalidArgument(format!("edge endpoint out of range in {e:?}")));
            }
        }
        for (v, &deg) in d.valences().iter().enumerate() {
            if deg < 3 {
                return Err(Error::InvalidArgument(format!("vertex {v} has valence {deg} < 3")));
            }
        }
        for (v, &m) in d.marks_per_vertex().iter().enumerate() {
            if m > 1 {
                return Err(Error::InvalidArgument(format!("vertex {v} carries {m} marks")));
            }
        }
        Ok(d)
    }

    pub fn empty() -> Self {
        Self {
            vertices: 0,
            edges: Vec::new(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn half_edge_count(&self) -> usize {
        2 * self.edges.len()
    }

    /// Vertex of half-edge `h`.
    pub fn vertex_of(&self, h: usize) -> usize {
        self.edges[h / 2].ends[h % 2]
    }

    pub fn is_marked(&self, h: usize) -> bool {
        self.edges[h / 2].marked[h % 2]
    }

    pub fn valences(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertices];
        for e in &self.edges {
            deg[e.ends[0]] += 1;
            deg[e.ends[1]] += 1;
        }
        deg
    }

    fn marks_per_vertex(&self) -> Vec<usize> {
        let mut m = vec![0; self.vertices];
        for e in &self.edges {
            for s in 0..2 {
                if e.marked[s] {
                    m[e.ends[s]] += 1;
                }
            }
        }
        m
    }

    /// Half-edges at vertex `v`, in increasing id order.
    pub fn half_edges_at(&self, v: usize) -> Vec<usize> {
        (0..self.half_edge_count()).filter(|&h| self.vertex_of(h) == v).collect()
    }

    /// The marked half-edge at `v`, if any.
    pub fn marked_half_edge(&self, v: usize) -> Option<usize> {
        (0..self.half_edge_count()).find(|&h| self.vertex_of(h) == v && self.is_marked(h))
    }

    pub fn mark_count(&self) -> usize {
        self.edges.iter().map(Edge::mark_count).sum()
    }

    /// The same diagram with all marks removed.
    pub fn unmarked(&self) -> Self {
        Self {
            vertices: self.vertices,
            edges: self.edges.iter().map(|e| Edge::new(e.ends[0], e.ends[1])).collect(),
        }
    }

    /// `χ = |V| − |E|`.
    pub fn euler_char(&self) -> i64 {
        self.vertices as i64 - self.edges.len() as i64
    }

    pub fn components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut count = self.vertices;
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.ends[0]), find(&mut parent, e.ends[1]));
            if a != b {
                parent[a] = b;
                count -= 1;
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.components() <= 1
    }

    /// `λ = |π₀| − χ`.
    pub fn loop_number(&self) -> usize {
        (self.components() as i64 - self.euler_char()) as usize
    }

    fn form(&self, perm: &[usize]) -> Form {
        let mut f: Form = self.edges.iter().map(|e| e.normalized(perm)).collect();
        f.sort_unstable();
        f
    }

    // (valence, marks, self-loops), larger first
    fn vertex_invariants(&self) -> Vec<(usize, usize, usize)> {
        let deg = self.valences();
        let marks = self.marks_per_vertex();
        let mut loops = vec![0; self.vertices];
        for e in &self.edges {
            if e.is_loop() {
                loops[e.ends[0]] += 1;
            }
        }
        (0..self.vertices).map(|v| (deg[v], marks[v], loops[v])).collect()
    }

    /// Least relabeled form and the number of vertex permutations attaining it.
    fn canonical_search(&self) -> (Form, usize) {
        let inv = self.vertex_invariants();
        let mut order: Vec<usize> = (0..self.vertices).collect();
        order.sort_by(|&a, &b| inv[b].cmp(&inv[a]));
        // slots grouped by invariant class; each class is filled by a permutation of its members
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for &v in &order {
            match classes.last_mut() {
                Some(c) if inv[c[0]] == inv[v] => c.push(v),
                _ => classes.push(vec![v]),
            }
        }
        let mut best: Option<Form> = None;
        let mut hits = 0usize;
        let mut perm = vec![0usize; self.vertices];
        let mut visit = |perm: &[usize]| {
            let f = self.form(perm);
            match &best {
                Some(b) if f > *b => {}
                Some(b) if f == *b => hits += 1,
                _ => {
                    best = Some(f);
                    hits = 1;
                }
            }
        };
        fn rec(
            classes: &[Vec<usize>],
            ci: usize,
            base: usize,
            perm: &mut Vec<usize>,
            visit: &mut dyn FnMut(&[usize]),
        ) {
            if ci == classes.len() {
                visit(perm);
                return;
            }
            let members = &classes[ci];
            let mut idx: Vec<usize> = (0..members.len()).collect();
            loop {
                for (slot, &k) in idx.iter().enumerate() {
                    perm[members[k]] = base + slot;
                }
                rec(classes, ci + 1, base + members.len(), perm, visit);
                if !next_permutation(&mut idx) {
                    break;
                }
            }
        }
        rec(&classes, 0, 0, &mut perm, &mut visit);
        (best.unwrap_or_default(), hits)
    }

    /// Vertex permutations `σ` (as `v ↦ σ[v]`) leaving the labeled form unchanged.
    fn vertex_automorphisms(&self) -> Vec<Vec<usize>> {
        let inv = self.vertex_invariants();
        let mut classes: BTreeMap<(usize, usize, usize), Vec<usize>> = BTreeMap::new();
        for v in 0..self.vertices {
            classes.entry(inv[v]).or_default().push(v);
        }
        let classes: Vec<Vec<usize>> = classes.into_values().collect();
        let id: Vec<usize> = (0..self.vertices).collect();
        let target = self.form(&id);
        let mut out = Vec::new();
        fn rec(classes: &[Vec<usize>], ci: usize, perm: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
            if ci == classes.len() {
                visit(perm);
                return;
            }
            let members = &classes[ci];
            let mut idx: Vec<usize> = (0..members.len()).collect();
            loop {
                for (k, &j) in idx.iter().enumerate() {
                    perm[members[k]] = members[j];
                }
                rec(classes, ci + 1, perm, visit);
                if !next_permutation(&mut idx) {
                    break;
                }
            }
        }
        let mut perm = id.clone();
        rec(&classes, 0, &mut perm, &mut |p| {
            if self.form(p) == target {
                out.push(p.to_vec());
            }
        });
        out
    }

    /// Representative with vertices relabeled into canonical order.
    pub fn canonical(&self) -> Self {
        let (form, _) = self.canonical_search();
        Self {
            vertices: self.vertices,
            edges: form
                .into_iter()
                .map(|(a, b, ma, mb)| Edge {
                    ends: [a, b],
                    marked: [ma, mb],
                })
                .collect(),
        }
    }

    /// Isomorphism-invariant text key, e.g. `0-1,0-1,0-1` (theta) or `0*-0,0-0`.
    pub fn canonical_key(&self) -> String {
        self.canonical().to_string()
    }

    /// `|Aut(Γ, M)|` counted on half-edges.
    ///
    /// Every half-edge automorphism induces a vertex permutation fixing the
    /// labeled form; the kernel of that map permutes parallel identical edges
    /// and flips unmarked self-loops.
    pub fn automorphism_order(&self) -> u64 {
        let (_, vertex_perms) = self.canonical_search();
        let mut classes: BTreeMap<(usize, usize, bool, bool), u64> = BTreeMap::new();
        let id: Vec<usize> = (0..self.vertices).collect();
        for e in &self.edges {
            *classes.entry(e.normalized(&id)).or_default() += 1;
        }
        let mut order = vertex_perms as u64;
        for (&(a, b, ma, mb), &m) in &classes {
            order *= (1..=m).product::<u64>();
            if a == b && !ma && !mb {
                order *= 1 << m;
            }
        }
        order
    }

    /// Summary used by reports.
    pub fn summary(&self) -> DiagramSummary {
        DiagramSummary {
            key: self.canonical_key(),
            vertices: self.vertices,
            edges: self.edges.len(),
            lambda: self.loop_number(),
            marks: self.mark_count(),
            aut: self.automorphism_order(),
        }
    }
}

impl fmt::Display for MarkedDiagram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let star = |m: bool| if m { "*" } else { "" };
        let parts: Vec<String> = self
            .edges
            .iter()
            .map(|e| format!("{}{}-{}{}", e.ends[0], star(e.marked[0]), e.ends[1], star(e.marked[1])))
            .collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for MarkedDiagram {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidArgument(format!("diagram key `{s}`: {why}"));
        if s.trim().is_empty() {
            return Ok(Self::empty());
        }
        let mut edges = Vec::new();
        for part in s.split(',') {
            let (a, b) = part.trim().split_once('-').ok_or_else(|| bad("expected `u-w` edges"))?;
            let end = |x: &str| -> Result<(usize, bool)> {
                let marked = x.ends_with('*');
                let v = x.trim_end_matches('*').parse().map_err(|_| bad("vertex is not an integer"))?;
                Ok((v, marked))
            };
            let ((u, mu), (w, mw)) = (end(a)?, end(b)?);
            edges.push(Edge {
                ends: [u, w],
                marked: [mu, mw],
            });
        }
        let vertices = edges.iter().flat_map(|e| e.ends).max().map_or(0, |m| m + 1);
        Self::new(vertices, edges)
    }
}

/// Row of a diagram table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiagramSummary {
    pub key: String,
    pub vertices: usize,
    pub edges: usize,
    pub lambda: usize,
    pub marks: usize,
    pub aut: u64,
}

fn next_permutation(a: &mut [usize]) -> bool {
    if a.len() < 2 {
        return false;
    }
    let mut i = a.len() - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = a.len() - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// Non-increasing valence sequences (all ≥ 3) with the given vertex count and sum.
fn degree_sequences(vertices: usize, total: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, total: usize, cap: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            if total == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for d in (3..=cap.min(total)).rev() {
            if total - d < 3 * (left - 1) {
                continue;
            }
            cur.push(d);
            rec(left - 1, total - d, d, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(vertices, total, total, &mut Vec::new(), &mut out);
    out
}

/// All labeled multigraphs realizing a valence sequence.
fn realizations(deg: &[usize]) -> Vec<Vec<Edge>> {
    fn rec(v: usize, rem: &mut Vec<usize>, edges: &mut Vec<Edge>, out: &mut Vec<Vec<Edge>>) {
        let n = rem.len();
        if v == n {
            out.push(edges.clone());
            return;
        }
        for loops in 0..=rem[v] / 2 {
            rem[v] -= 2 * loops;
            for _ in 0..loops {
                edges.push(Edge::new(v, v));
            }
            distribute(v, v + 1, rem, edges, out);
            edges.truncate(edges.len() - loops);
            rem[v] += 2 * loops;
        }
    }
    fn distribute(v: usize, w: usize, rem: &mut Vec<usize>, edges: &mut Vec<Edge>, out: &mut Vec<Vec<Edge>>) {
        let n = rem.len();
        if rem[v] == 0 {
            rec(v + 1, rem, edges, out);
            return;
        }
        if w == n {
            return;
        }
        for m in (0..=rem[v].min(rem[w])).rev() {
            rem[v] -= m;
            rem[w] -= m;
            for _ in 0..m {
                edges.push(Edge::new(v, w));
            }
            distribute(v, w + 1, rem, edges, out);
            edges.truncate(edges.len() - m);
            rem[v] += m;
            rem[w] += m;
        }
    }
    let mut out = Vec::new();
    rec(0, &mut deg.to_vec(), &mut Vec::new(), &mut out);
    out
}

/// Connected unmarked diagrams with `2 ≤ λ ≤ max_loops`, one per isomorphism class.
pub fn enumerate_topologies(max_loops: usize) -> Result<Vec<MarkedDiagram>> {
    if max_loops > MAX_LOOPS {
        return Err(Error::InvalidArgument(format!(
            "loop order {max_loops} exceeds the supported maximum {MAX_LOOPS}"
        )));
    }
    let mut seen = BTreeMap::new();
    for lambda in 2..=max_loops {
        for v in 1..=2 * lambda - 2 {
            let e = v + lambda - 1;
            for deg in degree_sequences(v, 2 * e) {
                for edges in realizations(&deg) {
                    let d = MarkedDiagram { vertices: v, edges };
                    if !d.is_connected() {
                        continue;
                    }
                    let c = d.canonical();
                    seen.entry((lambda, c.to_string())).or_insert(c);
                }
            }
        }
    }
    Ok(seen.into_values().collect())
}

/// All inequivalent markings of one unmarked diagram, including the empty marking.
pub fn markings(base: &MarkedDiagram) -> Vec<MarkedDiagram> {
    let base = base.unmarked();
    let auts = base.vertex_automorphisms();
    let id: Vec<usize> = (0..base.vertices).collect();
    let choices: Vec<Vec<Option<usize>>> = (0..base.vertices)
        .map(|v| std::iter::once(None).chain(base.half_edges_at(v).into_iter().map(Some)).collect())
        .collect();
    // the identity form already identifies parallel-edge swaps and loop flips;
    // the orbit minimum over vertex automorphisms then picks one marking per class
    let mut reps = BTreeMap::new();
    let mut pick = vec![0usize; base.vertices];
    loop {
        let mut d = base.clone();
        for (v, &k) in pick.iter().enumerate() {
            if let Some(h) = choices[v][k] {
                d.edges[h / 2].marked[h % 2] = true;
            }
        }
        let f = d.form(&id);
        if !reps.contains_key(&f) {
            let least = auts.iter().map(|a| d.form(a)).min().expect("identity is an automorphism");
            reps.entry(least).or_insert(d);
        }
        let mut v = 0;
        loop {
            if v == base.vertices {
                let mut seen = BTreeMap::new();
                for d in reps.into_values() {
                    let c = d.canonical();
                    seen.entry(c.to_string()).or_insert(c);
                }
                return seen.into_values().collect();
            }
            pick[v] += 1;
            if pick[v] < choices[v].len() {
                break;
            }
            pick[v] = 0;
            v += 1;
        }
    }
}

/// Connected marked diagrams with `2 ≤ λ ≤ max_loops`, ordered by `(λ, topology, key)`.
pub fn enumerate_connected(max_loops: usize) -> Result<Vec<MarkedDiagram>> {
    let mut out = Vec::new();
    for top in enumerate_topologies(max_loops)? {
        out.extend(markings(&top));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn figure_eight() -> MarkedDiagram {
        "0-0,0-0".parse().unwrap()
    }

    fn theta() -> MarkedDiagram {
        "0-1,0-1,0-1".parse().unwrap()
    }

    fn dumbbell() -> MarkedDiagram {
        "0-0,0-1,1-1".parse().unwrap()
    }

    #[test]
    fn euler_and_loops() {
        for d in [figure_eight(), theta(), dumbbell()] {
            assert_eq!(d.euler_char(), -1);
            assert_eq!(d.loop_number(), 2);
        }
        let e = MarkedDiagram::empty();
        assert_eq!((e.euler_char(), e.loop_number()), (0, 0));
    }

    #[test]
    fn automorphisms_of_two_loop_topologies() {
        assert_eq!(figure_eight().automorphism_order(), 8);
        assert_eq!(theta().automorphism_order(), 12);
        assert_eq!(dumbbell().automorphism_order(), 8);
        let marked: MarkedDiagram = "0*-0,0-0".parse().unwrap();
        assert_eq!(marked.automorphism_order(), 2);
    }

    #[test]
    fn keys_are_invariant_and_separating() {
        let relabeled: MarkedDiagram = "1-0,0-1,1-0".parse().unwrap();
        assert_eq!(relabeled.canonical_key(), theta().canonical_key());
        assert_ne!(theta().canonical_key(), dumbbell().canonical_key());
        let marked: MarkedDiagram = "0-0*,0-0".parse().unwrap();
        assert_ne!(marked.canonical_key(), figure_eight().canonical_key());
        let a: MarkedDiagram = "0*-1,0-1,0-1".parse().unwrap();
        let b: MarkedDiagram = "0-1*,1-0,0-1".parse().unwrap();
        assert_eq!(a.canonical_key(), b.canonical_key());
    }

    #[test]
    fn census() {
        assert!(enumerate_connected(1).unwrap().is_empty());
        let tops = enumerate_topologies(2).unwrap();
        assert_eq!(tops.len(), 3);
        let counts: Vec<usize> = (2..=4).map(|l| enumerate_topologies(l).unwrap().len()).collect();
        assert!(counts.windows(2).all(|w| w[0] < w[1]));
        assert!(enumerate_topologies(5).is_err());
    }

    #[test]
    fn key_round_trip() {
        for d in enumerate_connected(3).unwrap() {
            let again: MarkedDiagram = d.canonical_key().parse().unwrap();
            assert_eq!(again, d);
        }
    }

    #[test]
    fn rejects_bad_markings_and_valences() {
        assert!("0*-0*,0-0".parse::<MarkedDiagram>().is_err());
        assert!("0-1,0-1".parse::<MarkedDiagram>().is_err());
        assert!("0-x".parse::<MarkedDiagram>().is_err());
    }

    #[test]
    fn enumerated_diagrams_are_canonical() {
        for d in enumerate_connected(3).unwrap() {
            assert_eq!(d.to_string(), d.canonical_key());
        }
    }
}
