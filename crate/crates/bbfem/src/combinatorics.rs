//! Multi-index sets over the tetrahedron, domain points, binomial machinery,
//! and the geometry-independent Bernstein product/integral coefficients.
//!
//! A multi-index `α = (α₁,α₂,α₃,α₄)` with `|α| = n` addresses one Bernstein
//! polynomial `Bⁿ_α = C(n,α) λ^α` of degree `n`. Vertices are 0-based in code.

use crate::error::{invalid_arg, Result};
use nalgebra::Vector3;
use num::bigint::BigInt;
use num::rational::Ratio;
use num::traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational value of the Bernstein integral coefficient.
pub type MassCoefficient = Ratio<BigInt>;

/// A 4-component nonnegative multi-index. Ordering is lexicographic on the
/// entries, which for fixed degree is the graded-lex order used everywhere.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct MultiIndex(pub [u16; 4]);

impl MultiIndex {
    pub fn new(entries: [u16; 4]) -> Self {
        MultiIndex(entries)
    }

    /// The multi-index `e_ℓ` (1 in slot `ℓ`, 0 elsewhere).
    pub fn unit(slot: usize) -> Self {
        let mut e = [0u16; 4];
        e[slot] = 1;
        MultiIndex(e)
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    pub fn entry(&self, slot: usize) -> usize {
        self.0[slot] as usize
    }

    /// `α + e_slot`.
    pub fn up(&self, slot: usize) -> Self {
        let mut e = self.0;
        e[slot] += 1;
        MultiIndex(e)
    }

    /// `α − e_slot`, or `None` if the entry is already zero. A `None` index
    /// stands for a Bernstein polynomial that is identically zero.
    pub fn down(&self, slot: usize) -> Option<Self> {
        if self.0[slot] == 0 {
            return None;
        }
        let mut e = self.0;
        e[slot] -= 1;
        Some(MultiIndex(e))
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut e = self.0;
        for (a, b) in e.iter_mut().zip(other.0.iter()) {
            *a += b;
        }
        MultiIndex(e)
    }

    /// Packs the entries into a `u64` key (each entry must fit in 16 bits).
    pub fn pack(&self) -> u64 {
        self.0
            .iter()
            .fold(0u64, |acc, &a| (acc << 16) | u64::from(a))
    }

    /// `Some(v)` when `α = n e_v` with `n ≥ 1`.
    pub fn as_vertex(&self) -> Option<usize> {
        let nonzero: Vec<usize> = (0..4).filter(|&k| self.0[k] > 0).collect();
        match nonzero.len() {
            1 => Some(nonzero[0]),
            _ => None,
        }
    }

    /// Classifies the entity whose (relative) interior contains the domain
    /// point of `α`: vertex, edge, face, or the cell interior.
    pub fn support(&self) -> IndexSupport {
        let nz: Vec<usize> = (0..4).filter(|&k| self.0[k] > 0).collect();
        match nz.len() {
            1 => IndexSupport::Vertex(nz[0]),
            2 => IndexSupport::Edge(Edge::new(nz[0], nz[1]).unwrap()),
            3 => {
                let missing = (0..4).find(|k| !nz.contains(k)).unwrap();
                IndexSupport::Face(Face(missing))
            }
            _ => IndexSupport::Interior,
        }
    }
}

/// Entity classification of a multi-index by its zero pattern.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum IndexSupport {
    Vertex(usize),
    Edge(Edge),
    Face(Face),
    Interior,
}

/// An edge of the tetrahedron, stored as an ordered pair of local vertices.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Edge(usize, usize);

impl Edge {
    pub fn new(i: usize, j: usize) -> Result<Self> {
        if i >= j || j > 3 {
            return Err(invalid_arg!("edge ({i},{j}) must satisfy 0 <= i < j <= 3"));
        }
        Ok(Edge(i, j))
    }

    pub fn ends(&self) -> (usize, usize) {
        (self.0, self.1)
    }

    /// The six edges in lexicographic order: (0,1),(0,2),(0,3),(1,2),(1,3),(2,3).
    pub fn all() -> [Edge; 6] {
        [
            Edge(0, 1),
            Edge(0, 2),
            Edge(0, 3),
            Edge(1, 2),
            Edge(1, 3),
            Edge(2, 3),
        ]
    }

    /// Index of this edge within `Edge::all()`.
    pub fn index(&self) -> usize {
        Edge::all().iter().position(|e| e == self).unwrap()
    }
}

/// A face of the tetrahedron, identified by the opposite local vertex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Face(pub usize);

impl Face {
    /// The three local vertices of the face, ascending.
    pub fn vertices(&self) -> [usize; 3] {
        let mut v = [0usize; 3];
        let mut k = 0;
        for i in 0..4 {
            if i != self.0 {
                v[k] = i;
                k += 1;
            }
        }
        v
    }

    /// The cyclic triple set `Σ_ℓ = {(i,j,k),(j,k,i),(k,i,j)}` over the sorted
    /// face vertices `i<j<k`.
    pub fn sigma(&self) -> [[usize; 3]; 3] {
        let [i, j, k] = self.vertices();
        [[i, j, k], [j, k, i], [k, i, j]]
    }
}

/// The index-set families over the tetrahedron.
///
/// `Full(n)` is every `|α| = n`; `Interior(n)` requires all entries positive;
/// `EdgeBubble`/`FaceBubble` require positivity exactly on the entity;
/// `FaceLattice` allows zeros on the face but nothing off it. The primed
/// variants remove one designated member of the base set.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum IndexSetKind {
    Full(usize),
    Interior(usize),
    EdgeBubble(usize, Edge),
    FaceBubble(usize, Face),
    FaceLattice(usize, Face),
    FaceLatticePrimed(usize, Face, MultiIndex),
    FullPrimed(usize, MultiIndex),
}

fn member_of_base(kind: &IndexSetKind, a: &MultiIndex) -> bool {
    match *kind {
        IndexSetKind::Full(_) | IndexSetKind::FullPrimed(_, _) => true,
        IndexSetKind::Interior(_) => (0..4).all(|k| a.entry(k) > 0),
        IndexSetKind::EdgeBubble(_, e) => {
            let (i, j) = e.ends();
            (0..4).all(|k| if k == i || k == j { a.entry(k) > 0 } else { a.entry(k) == 0 })
        }
        IndexSetKind::FaceBubble(_, f) => {
            let verts = f.vertices();
            (0..4).all(|k| if verts.contains(&k) { a.entry(k) > 0 } else { a.entry(k) == 0 })
        }
        IndexSetKind::FaceLattice(_, f) | IndexSetKind::FaceLatticePrimed(_, f, _) => {
            a.entry(f.0) == 0
        }
    }
}

fn kind_degree(kind: &IndexSetKind) -> usize {
    match *kind {
        IndexSetKind::Full(n)
        | IndexSetKind::Interior(n)
        | IndexSetKind::EdgeBubble(n, _)
        | IndexSetKind::FaceBubble(n, _)
        | IndexSetKind::FaceLattice(n, _)
        | IndexSetKind::FaceLatticePrimed(n, _, _)
        | IndexSetKind::FullPrimed(n, _) => n,
    }
}

/// Enumerates the index set in graded-lexicographic order.
pub fn enumerate(kind: IndexSetKind) -> Result<Vec<MultiIndex>> {
    let n = kind_degree(&kind);
    let removed = match kind {
        IndexSetKind::FaceLatticePrimed(_, _, r) | IndexSetKind::FullPrimed(_, r) => Some(r),
        _ => None,
    };
    let base: Vec<MultiIndex> = full_set(n)
        .into_iter()
        .filter(|a| member_of_base(&kind, a))
        .collect();
    if let Some(r) = removed {
        if !base.contains(&r) {
            return Err(invalid_arg!(
                "removed index {:?} is not a member of the base set {:?}",
                r,
                kind
            ));
        }
        Ok(base.into_iter().filter(|a| *a != r).collect())
    } else {
        Ok(base)
    }
}

/// The lexicographically first member of the (unprimed) set; used as the
/// default removed index for the primed sets.
pub fn lex_first(kind: IndexSetKind) -> Result<MultiIndex> {
    enumerate(kind)?
        .into_iter()
        .next()
        .ok_or_else(|| invalid_arg!("index set {:?} is empty", kind))
}

fn full_set(n: usize) -> Vec<MultiIndex> {
    let mut out = Vec::with_capacity(binomial(n + 3, 3) as usize);
    for a1 in 0..=n {
        for a2 in 0..=n - a1 {
            for a3 in 0..=n - a1 - a2 {
                let a4 = n - a1 - a2 - a3;
                out.push(MultiIndex([a1 as u16, a2 as u16, a3 as u16, a4 as u16]));
            }
        }
    }
    out
}

/// Domain point `x_α = (1/n) Σ α_k x_k` of a degree-`n` multi-index.
pub fn domain_point(alpha: &MultiIndex, vertices: &[Vector3<f64>; 4]) -> Result<Vector3<f64>> {
    let n = alpha.degree();
    if n == 0 {
        return Err(invalid_arg!("domain point requires |alpha| >= 1"));
    }
    let mut x = Vector3::zeros();
    for k in 0..4 {
        x += vertices[k] * (alpha.entry(k) as f64);
    }
    Ok(x / n as f64)
}

/// Binomial coefficient in exact 128-bit arithmetic.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = acc * (n - k + i) as u128 / i as u128;
    }
    acc
}

fn binomial_big(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 1..=k {
        acc = acc * BigInt::from(n - k + i) / BigInt::from(i);
    }
    acc
}

/// Coefficient `c` in the product rule `Bⁿ_α Bᵐ_β = c · B^{n+m}_{α+β}`,
/// namely `C(α+β,α) / C(n+m,n)`, as an exact rational.
pub fn product_coeff(alpha: &MultiIndex, beta: &MultiIndex) -> MassCoefficient {
    let mut num = BigInt::one();
    for k in 0..4 {
        num *= binomial_big(alpha.entry(k) + beta.entry(k), alpha.entry(k));
    }
    let den = binomial_big(alpha.degree() + beta.degree(), alpha.degree());
    Ratio::new(num, den)
}

/// Exact rational `M_{α,β}` with `∫_T Bⁿ_α Bᵐ_β dx = M_{α,β} |T|`.
pub fn mass_coeff(alpha: &MultiIndex, beta: &MultiIndex) -> MassCoefficient {
    let d = alpha.degree() + beta.degree();
    product_coeff(alpha, beta) / Ratio::from_integer(binomial_big(d + 3, 3))
}

/// `M_{α,β}` as f64. Exact 128-bit integer arithmetic up to combined degree
/// 120, falling back to big rationals above that.
pub fn mass_coeff_f64(alpha: &MultiIndex, beta: &MultiIndex) -> f64 {
    let d = alpha.degree() + beta.degree();
    if d <= 120 {
        let mut num: u128 = 1;
        for k in 0..4 {
            num *= binomial(alpha.entry(k) + beta.entry(k), alpha.entry(k));
        }
        let den = binomial(d, alpha.degree()) * binomial(d + 3, 3);
        num as f64 / den as f64
    } else {
        let m = mass_coeff(alpha, beta);
        m.numer().to_f64().unwrap_or(f64::NAN) / m.denom().to_f64().unwrap_or(f64::NAN)
    }
}

/// Memoized `M_{α,β}` lookups keyed on packed index pairs. `None` on either
/// side stands for an out-of-range index and contributes zero.
#[derive(Default)]
pub struct MassTable {
    cache: std::collections::HashMap<(u64, u64), f64>,
}

impl MassTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, alpha: Option<MultiIndex>, beta: Option<MultiIndex>) -> f64 {
        let (a, b) = match (alpha, beta) {
            (Some(a), Some(b)) => (a, b),
            _ => return 0.0,
        };
        let key = if a.pack() <= b.pack() {
            (a.pack(), b.pack())
        } else {
            (b.pack(), a.pack())
        };
        *self
            .cache
            .entry(key)
            .or_insert_with(|| mass_coeff_f64(&a, &b))
    }
}

/// Checks that `MassCoefficient` values are positive and symmetric; used by
/// debug assertions and the verification suite.
pub fn mass_coeff_is_symmetric_positive(alpha: &MultiIndex, beta: &MultiIndex) -> bool {
    let m = mass_coeff(alpha, beta);
    m.is_positive() && m == mass_coeff(beta, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn reference_vertices() -> [Vector3<f64>; 4] {
        [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ]
    }

    #[test]
    fn full_set_cardinality_and_order() {
        let set = enumerate(IndexSetKind::Full(2)).unwrap();
        assert_eq!(set.len(), 10);
        let mut sorted = set.clone();
        sorted.sort();
        assert_eq!(set, sorted);
        assert_eq!(set[0], MultiIndex([0, 0, 0, 2]));
        assert_eq!(set[9], MultiIndex([2, 0, 0, 0]));
    }

    #[test]
    fn interior_of_degree_four_is_ones() {
        let set = enumerate(IndexSetKind::Interior(4)).unwrap();
        assert_eq!(set, vec![MultiIndex([1, 1, 1, 1])]);
    }

    #[test]
    fn face_lattice_counts() {
        // Face {1,2,3} in 1-based labels is the face opposite vertex 4.
        let set = enumerate(IndexSetKind::FaceLattice(3, Face(3))).unwrap();
        assert_eq!(set.len(), 10);
        assert!(set.iter().all(|a| a.entry(3) == 0));
    }

    #[test]
    fn cardinalities_match_closed_forms() {
        for n in 0..=8usize {
            let full = enumerate(IndexSetKind::Full(n)).unwrap().len();
            assert_eq!(full as u128, binomial(n + 3, 3));
            let interior = enumerate(IndexSetKind::Interior(n)).unwrap().len();
            assert_eq!(interior as u128, if n >= 1 { binomial(n - 1, 3) } else { 0 });
            let lattice = enumerate(IndexSetKind::FaceLattice(n, Face(0))).unwrap().len();
            assert_eq!(lattice as u128, binomial(n + 2, 2));
            if n >= 1 {
                let eb = enumerate(IndexSetKind::EdgeBubble(n, Edge::new(0, 1).unwrap()))
                    .unwrap()
                    .len();
                assert_eq!(eb, n - 1);
            }
        }
    }

    #[test]
    fn primed_sets_drop_one_member() {
        let base = IndexSetKind::FaceLattice(2, Face(3));
        let removed = lex_first(base).unwrap();
        assert_eq!(removed, MultiIndex([0, 0, 2, 0]));
        let primed = enumerate(IndexSetKind::FaceLatticePrimed(2, Face(3), removed)).unwrap();
        assert_eq!(primed.len(), 5);
        assert!(!primed.contains(&removed));
    }

    #[test]
    fn primed_set_rejects_foreign_removed_index() {
        let err = enumerate(IndexSetKind::FullPrimed(2, MultiIndex([1, 0, 0, 0])));
        assert!(err.is_err());
    }

    #[test]
    fn bubble_decomposition_of_nonvertex_indices() {
        // Full(n) minus the 4 vertex indices is the disjoint union of the
        // 6 edge-bubble, 4 face-bubble, and 1 interior sets.
        for n in 1..=8usize {
            let mut union: Vec<MultiIndex> = Vec::new();
            for e in Edge::all() {
                union.extend(enumerate(IndexSetKind::EdgeBubble(n, e)).unwrap());
            }
            for f in 0..4 {
                union.extend(enumerate(IndexSetKind::FaceBubble(n, Face(f))).unwrap());
            }
            union.extend(enumerate(IndexSetKind::Interior(n)).unwrap());
            union.sort();
            let mut dedup = union.clone();
            dedup.dedup();
            assert_eq!(union, dedup, "subsets overlap at n={n}");

            let check: Vec<MultiIndex> = enumerate(IndexSetKind::Full(n))
                .unwrap()
                .into_iter()
                .filter(|a| a.as_vertex().is_none())
                .collect();
            assert_eq!(union, check, "decomposition mismatch at n={n}");
        }
    }

    #[test]
    fn domain_point_examples() {
        let verts = reference_vertices();
        let v = domain_point(&MultiIndex([3, 0, 0, 0]), &verts).unwrap();
        assert_eq!(v, verts[0]);
        let c = domain_point(&MultiIndex([1, 1, 1, 1]), &verts).unwrap();
        assert!((c - Vector3::new(0.25, 0.25, 0.25)).norm() < 1e-15);
        let mid = domain_point(&MultiIndex([2, 2, 0, 0]), &verts).unwrap();
        assert!((mid - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        assert!(domain_point(&MultiIndex([0, 0, 0, 0]), &verts).is_err());
    }

    #[test]
    fn product_coeff_examples() {
        let zero = MultiIndex([0, 0, 0, 0]);
        assert_eq!(product_coeff(&zero, &zero), Ratio::from_integer(BigInt::from(1)));
        // lambda_1 lambda_2 = (1/2) B^2_{(1,1,0,0)}
        let c = product_coeff(&MultiIndex::unit(0), &MultiIndex::unit(1));
        assert_eq!(c, Ratio::new(BigInt::from(1), BigInt::from(2)));
        // lambda_1^2 = B^2_{(2,0,0,0)}
        let c = product_coeff(&MultiIndex::unit(0), &MultiIndex::unit(0));
        assert_eq!(c, Ratio::from_integer(BigInt::from(1)));
    }

    #[test]
    fn mass_coeff_examples() {
        let zero = MultiIndex([0, 0, 0, 0]);
        assert_eq!(mass_coeff(&zero, &zero), Ratio::from_integer(BigInt::from(1)));
        // ∫ lambda_1^2 = |T|/10, ∫ lambda_1 lambda_2 = |T|/20
        assert_eq!(
            mass_coeff(&MultiIndex::unit(0), &MultiIndex::unit(0)),
            Ratio::new(BigInt::from(1), BigInt::from(10))
        );
        assert_eq!(
            mass_coeff(&MultiIndex::unit(0), &MultiIndex::unit(1)),
            Ratio::new(BigInt::from(1), BigInt::from(20))
        );
    }

    #[test]
    fn mass_equals_product_over_simplex_binomial() {
        // M_{α,β} = product_coeff(α,β) / C(|α|+|β|+3,3) as exact rationals.
        for n in 0..=5usize {
            for m in 0..=5usize {
                for a in enumerate(IndexSetKind::Full(n)).unwrap() {
                    for b in enumerate(IndexSetKind::Full(m)).unwrap() {
                        let lhs = mass_coeff(&a, &b);
                        let rhs = product_coeff(&a, &b)
                            / Ratio::from_integer(binomial_big(n + m + 3, 3));
                        assert_eq!(lhs, rhs);
                        assert!(mass_coeff_is_symmetric_positive(&a, &b));
                    }
                }
            }
        }
    }

    #[test]
    fn f64_path_matches_exact_rationals() {
        for n in [0usize, 1, 3, 13] {
            for a in enumerate(IndexSetKind::Full(n)).unwrap() {
                let b = MultiIndex([1, 0, 2, 3]);
                let exact = mass_coeff(&a, &b);
                let approx =
                    exact.numer().to_f64().unwrap() / exact.denom().to_f64().unwrap();
                assert!((mass_coeff_f64(&a, &b) - approx).abs() <= 1e-16 * approx.abs());
            }
        }
    }

    #[test]
    fn mass_table_handles_out_of_range() {
        let mut t = MassTable::new();
        assert_eq!(t.get(None, Some(MultiIndex::unit(0))), 0.0);
        let v = t.get(Some(MultiIndex::unit(0)), Some(MultiIndex::unit(0)));
        assert!((v - 0.1).abs() < 1e-16);
    }
}
