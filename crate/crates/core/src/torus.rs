//! Geometry of the discrete torus `Z_n^d`.
//!
//! Layout (frozen; the trajectory dump format relies on it):
//! * vertex `v` has coordinates `(x_0, .., x_{d-1})` with
//!   `v = Σ x_i · n^(d-1-i)`, i.e. lexicographic order with `x_0` most
//!   significant;
//! * edge `v·d + a` joins `v` to `v + e_a` (the `+1` neighbour along axis
//!   `a`), so every edge is owned by exactly one vertex and axis.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::subset::Membership;

/// Largest vertex count accepted by the exhaustive isoperimetric search.
pub const ISO_ENUMERATION_LIMIT: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TorusGraph {
    d: usize,
    n: usize,
    vertices: usize,
    /// `plus[v·d + a]` is `v + e_a`.
    plus: Vec<usize>,
    /// `minus[v·d + a]` is `v − e_a`.
    minus: Vec<usize>,
}

impl TorusGraph {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        if n < 3 {
            return Err(invalid(format!("side length must be at least 3, got {n}")));
        }
        let vertices = n.checked_pow(d as u32).filter(|&v| v <= (1 << 26)).ok_or_else(|| invalid(format!("torus {n}^{d} is too large")))?;
        let mut plus = vec![0; vertices * d];
        let mut minus = vec![0; vertices * d];
        for v in 0..vertices {
            for a in 0..d {
                let stride = n.pow((d - 1 - a) as u32);
                let coord = (v / stride) % n;
                let up = if coord + 1 == n { v + stride - n * stride } else { v + stride };
                let down = if coord == 0 { v + (n - 1) * stride } else { v - stride };
                plus[v * d + a] = up;
                minus[v * d + a] = down;
            }
        }
        Ok(Self { d, n, vertices, plus, minus })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices
    }

    pub fn num_edges(&self) -> usize {
        self.vertices * self.d
    }

    pub fn degree(&self) -> usize {
        2 * self.d
    }

    pub fn coords(&self, v: usize) -> Vec<usize> {
        (0..self.d).map(|a| (v / self.n.pow((self.d - 1 - a) as u32)) % self.n).collect()
    }

    pub fn vertex(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.d || coords.iter().any(|&c| c >= self.n) {
            return Err(invalid(format!("bad coordinates {coords:?} for {}^{}", self.n, self.d)));
        }
        Ok(coords.iter().fold(0, |acc, &c| acc * self.n + c))
    }

    pub fn edge_id(&self, v: usize, axis: usize) -> usize {
        v * self.d + axis
    }

    /// `(owner vertex, axis)` of an edge.
    pub fn edge_owner(&self, e: usize) -> (usize, usize) {
        (e / self.d, e % self.d)
    }

    pub fn endpoints(&self, e: usize) -> (usize, usize) {
        (e / self.d, self.plus[e])
    }

    #[inline]
    pub(crate) fn plus_table(&self) -> &[usize] {
        &self.plus
    }

    fn check_vertex(&self, v: usize) -> Result<()> {
        if v >= self.vertices {
            Err(invalid(format!("vertex {v} out of range (torus has {} vertices)", self.vertices)))
        } else {
            Ok(())
        }
    }

    /// The `2d` neighbours of `v` with the connecting edge ids, ordered
    /// `(+e_0, −e_0, +e_1, −e_1, ..)`.
    pub fn neighbors(&self, v: usize) -> Result<Vec<(usize, usize)>> {
        self.check_vertex(v)?;
        Ok((0..self.degree()).map(|dir| self.step(v, dir)).collect())
    }

    /// Neighbour in direction `dir ∈ [0, 2d)` and the edge crossed.
    #[inline]
    pub fn step(&self, v: usize, dir: usize) -> (usize, usize) {
        let a = dir / 2;
        if dir.is_multiple_of(2) {
            (self.plus[v * self.d + a], v * self.d + a)
        } else {
            let u = self.minus[v * self.d + a];
            (u, u * self.d + a)
        }
    }

    /// Edges with exactly one endpoint in `s`, in increasing id order.
    pub fn edge_boundary<S: Membership>(&self, s: &S) -> Vec<usize> {
        (0..self.num_edges())
            .filter(|&e| {
                let (u, v) = self.endpoints(e);
                s.contains(u) != s.contains(v)
            })
            .collect()
    }

    /// Exhaustive minimum of `|∂_E S| / |S|^((d-1)/d)` over nonempty `S`
    /// with `|S| ≤ n^d / 2`.
    pub fn iso_profile(&self) -> Result<IsoWitness> {
        let m = self.vertices;
        if m > ISO_ENUMERATION_LIMIT {
            return Err(Error::Capability { what: "exhaustive isoperimetric enumeration", needed: m, budget: ISO_ENUMERATION_LIMIT });
        }
        let edges: Vec<(u32, u32)> = (0..self.num_edges())
            .map(|e| {
                let (u, v) = self.endpoints(e);
                (u as u32, v as u32)
            })
            .collect();
        let exponent = (self.d as f64 - 1.0) / self.d as f64;
        let total: u64 = 1 << m;
        let chunk: u64 = 1 << 12;
        let better = |a: (f64, u64), b: (f64, u64)| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a };
        let (value, mask) = (0..total.div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let mut best = (f64::INFINITY, u64::MAX);
                for mask in (c * chunk).max(1)..((c + 1) * chunk).min(total) {
                    let size = mask.count_ones() as usize;
                    if 2 * size > m {
                        continue;
                    }
                    let boundary = edges.iter().filter(|&&(u, v)| ((mask >> u) ^ (mask >> v)) & 1 == 1).count();
                    let val = boundary as f64 / (size as f64).powf(exponent);
                    best = better(best, (val, mask));
                }
                best
            })
            .reduce(|| (f64::INFINITY, u64::MAX), better);
        let set = VertexSet::from_indices(m, (0..m).filter(|&i| (mask >> i) & 1 == 1));
        Ok(IsoWitness { value, set })
    }
}

/// Exact isoperimetric minimum with one minimizing set.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoWitness {
    pub value: f64,
    pub set: VertexSet,
}

/// Dense bit-indexed subset of torus vertices with cached cardinality.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct VertexSet {
    universe: usize,
    words: Vec<u64>,
    count: usize,
}

impl VertexSet {
    pub fn empty(universe: usize) -> Self {
        Self { universe, words: vec![0; universe.div_ceil(64)], count: 0 }
    }

    pub fn full(universe: usize) -> Self {
        let mut s = Self::empty(universe);
        for i in 0..universe {
            s.insert(i);
        }
        s
    }

    pub fn from_indices(universe: usize, idx: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(universe);
        for i in idx {
            s.insert(i);
        }
        s
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    /// Returns whether the element was newly inserted.
    pub fn insert(&mut self, i: usize) -> bool {
        assert!(i < self.universe, "vertex {i} outside universe {}", self.universe);
        let (w, b) = (i / 64, i % 64);
        let fresh = (self.words[w] >> b) & 1 == 0;
        if fresh {
            self.words[w] |= 1 << b;
            self.count += 1;
        }
        fresh
    }

    pub fn remove(&mut self, i: usize) -> bool {
        assert!(i < self.universe);
        let (w, b) = (i / 64, i % 64);
        let present = (self.words[w] >> b) & 1 == 1;
        if present {
            self.words[w] &= !(1 << b);
            self.count -= 1;
        }
        present
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn complement(&self) -> Self {
        Self::from_indices(self.universe, (0..self.universe).filter(|&i| !self.contains(i)))
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.universe).filter(move |&i| self.contains(i))
    }

    /// Mass under the uniform distribution.
    pub fn uniform_mass(&self) -> f64 {
        self.count as f64 / self.universe as f64
    }
}

impl Membership for VertexSet {
    #[inline]
    fn contains(&self, i: usize) -> bool {
        i < self.universe && (self.words[i / 64] >> (i % 64)) & 1 == 1
    }
}
