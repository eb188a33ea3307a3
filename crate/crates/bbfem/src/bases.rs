//! The Bernstein-Bezier basis families for the full de Rham complex on one
//! tetrahedron: the H1 Bernstein basis, lowest-order edge/face elements,
//! gradient fields, H(curl) face and cell bubbles, H(div) bubbles, and the
//! curls linking the spaces. Every function and every derivative is stored
//! in pure BB-form (a coefficient per multi-index).

use crate::combinatorics::{
    binomial, enumerate, lex_first, Edge, Face, IndexSetKind, IndexSupport, MultiIndex,
};
use crate::error::{invalid_arg, Result};
use crate::geometry::Tetrahedron;
use nalgebra::Vector3;
use std::collections::BTreeMap;

/// `(-1)^k` for a 1-based exponent written as in the source formulas.
#[inline]
pub(crate) fn alt_sign_1based(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Multinomial coefficient `C(n, α) = n!/α!` of a degree-`n` index.
pub fn multinomial(alpha: &MultiIndex) -> f64 {
    let n = alpha.degree();
    let mut rest = n;
    let mut acc: u128 = 1;
    for k in 0..4 {
        acc *= binomial(rest, alpha.entry(k));
        rest -= alpha.entry(k);
    }
    acc as f64
}

/// Value of `Bⁿ_α` at barycentric coordinates `λ`.
pub fn bernstein_value(alpha: &MultiIndex, lambda: &[f64; 4]) -> f64 {
    let mut v = multinomial(alpha);
    for k in 0..4 {
        v *= lambda[k].powi(alpha.entry(k) as i32);
    }
    v
}

/// A scalar polynomial in BB-form: `Σ_α c_α Bⁿ_α`.
#[derive(Clone, Debug, Default)]
pub struct ScalarBB {
    pub degree: usize,
    pub terms: Vec<(MultiIndex, f64)>,
}

/// A vector polynomial in BB-form: `Σ_α c_α Bⁿ_α` with 3-vector coefficients.
#[derive(Clone, Debug, Default)]
pub struct VectorBB {
    pub degree: usize,
    pub terms: Vec<(MultiIndex, Vector3<f64>)>,
}

impl ScalarBB {
    pub fn constant(c: f64) -> Self {
        ScalarBB {
            degree: 0,
            terms: vec![(MultiIndex::new([0, 0, 0, 0]), c)],
        }
    }

    pub fn zero(degree: usize) -> Self {
        ScalarBB {
            degree,
            terms: Vec::new(),
        }
    }

    pub fn eval_bary(&self, lambda: &[f64; 4]) -> f64 {
        self.terms
            .iter()
            .map(|(a, c)| c * bernstein_value(a, lambda))
            .sum()
    }

    pub fn eval(&self, tet: &Tetrahedron, x: &Vector3<f64>) -> f64 {
        self.eval_bary(&tet.barycentric(x))
    }

    /// Analytic gradient via `∇Bⁿ_α = n Σ_k B^{n-1}_{α-e_k} ∇λ_k`.
    pub fn gradient(&self, tet: &Tetrahedron) -> VectorBB {
        let n = self.degree;
        let mut b = VecBuilder::new(n.saturating_sub(1));
        for (a, c) in &self.terms {
            for k in 0..4 {
                if let Some(down) = a.down(k) {
                    b.add(down, tet.grad_lambda(k) * (*c * n as f64));
                }
            }
        }
        b.build()
    }

    pub fn max_coeff(&self) -> f64 {
        self.terms.iter().map(|(_, c)| c.abs()).fold(0.0, f64::max)
    }

    /// `∫_T (this) dx` from the exact Bernstein integral.
    pub fn integral(&self, volume: f64) -> f64 {
        let scale = volume / binomial(self.degree + 3, 3) as f64;
        self.terms.iter().map(|(_, c)| c).sum::<f64>() * scale
    }
}

impl VectorBB {
    pub fn zero(degree: usize) -> Self {
        VectorBB {
            degree,
            terms: Vec::new(),
        }
    }

    pub fn eval_bary(&self, lambda: &[f64; 4]) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        for (a, c) in &self.terms {
            v += c * bernstein_value(a, lambda);
        }
        v
    }

    pub fn eval(&self, tet: &Tetrahedron, x: &Vector3<f64>) -> Vector3<f64> {
        self.eval_bary(&tet.barycentric(x))
    }

    /// Analytic divergence: `div(Bc) = ∇B · c`.
    pub fn divergence(&self, tet: &Tetrahedron) -> ScalarBB {
        let n = self.degree;
        let mut b = ScalarBuilder::new(n.saturating_sub(1));
        for (a, c) in &self.terms {
            for k in 0..4 {
                if let Some(down) = a.down(k) {
                    b.add(down, tet.grad_lambda(k).dot(c) * n as f64);
                }
            }
        }
        b.build()
    }

    /// Analytic curl: `curl(Bc) = ∇B × c`.
    pub fn curl(&self, tet: &Tetrahedron) -> VectorBB {
        let n = self.degree;
        let mut b = VecBuilder::new(n.saturating_sub(1));
        for (a, c) in &self.terms {
            for k in 0..4 {
                if let Some(down) = a.down(k) {
                    b.add(down, tet.grad_lambda(k).cross(c) * n as f64);
                }
            }
        }
        b.build()
    }

    pub fn max_coeff(&self) -> f64 {
        self.terms
            .iter()
            .map(|(_, c)| c.norm())
            .fold(0.0, f64::max)
    }
}

struct VecBuilder {
    degree: usize,
    map: BTreeMap<MultiIndex, Vector3<f64>>,
}

impl VecBuilder {
    fn new(degree: usize) -> Self {
        VecBuilder {
            degree,
            map: BTreeMap::new(),
        }
    }

    fn add(&mut self, a: MultiIndex, c: Vector3<f64>) {
        debug_assert_eq!(a.degree(), self.degree);
        *self.map.entry(a).or_insert_with(Vector3::zeros) += c;
    }

    fn build(self) -> VectorBB {
        VectorBB {
            degree: self.degree,
            terms: self
                .map
                .into_iter()
                .filter(|(_, c)| c.norm() != 0.0)
                .collect(),
        }
    }
}

struct ScalarBuilder {
    degree: usize,
    map: BTreeMap<MultiIndex, f64>,
}

impl ScalarBuilder {
    fn new(degree: usize) -> Self {
        ScalarBuilder {
            degree,
            map: BTreeMap::new(),
        }
    }

    fn add(&mut self, a: MultiIndex, c: f64) {
        debug_assert_eq!(a.degree(), self.degree);
        *self.map.entry(a).or_insert(0.0) += c;
    }

    fn build(self) -> ScalarBB {
        ScalarBB {
            degree: self.degree,
            terms: self.map.into_iter().filter(|(_, c)| *c != 0.0).collect(),
        }
    }
}

/// A scalar- or vector-valued polynomial in BB-form.
#[derive(Clone, Debug)]
pub enum BBForm {
    Scalar(ScalarBB),
    Vector(VectorBB),
}

impl BBForm {
    pub fn degree(&self) -> usize {
        match self {
            BBForm::Scalar(s) => s.degree,
            BBForm::Vector(v) => v.degree,
        }
    }

    pub fn as_vector(&self) -> &VectorBB {
        match self {
            BBForm::Vector(v) => v,
            BBForm::Scalar(_) => panic!("expected vector-valued BB-form"),
        }
    }

    pub fn as_scalar(&self) -> &ScalarBB {
        match self {
            BBForm::Scalar(s) => s,
            BBForm::Vector(_) => panic!("expected scalar-valued BB-form"),
        }
    }

    pub fn max_coeff(&self) -> f64 {
        match self {
            BBForm::Scalar(s) => s.max_coeff(),
            BBForm::Vector(v) => v.max_coeff(),
        }
    }
}

/// Lowest-order edge element `ω_ij = λᵢ∇λⱼ − λⱼ∇λᵢ` and its constant curl
/// `2 t_ij`.
pub fn whitney_edge(tet: &Tetrahedron, i: usize, j: usize) -> Result<(VectorBB, VectorBB)> {
    if i == j || i > 3 || j > 3 {
        return Err(invalid_arg!("whitney edge needs distinct vertices, got ({i},{j})"));
    }
    let mut b = VecBuilder::new(1);
    b.add(MultiIndex::unit(i), tet.grad_lambda(j));
    b.add(MultiIndex::unit(j), -tet.grad_lambda(i));
    let value = b.build();
    let mut c = VecBuilder::new(0);
    c.add(MultiIndex::new([0, 0, 0, 0]), 2.0 * tet.t(i, j));
    Ok((value, c.build()))
}

/// Gradient field `∇B^{n+1}_α` for a non-vertex index `|α| = n+1`, stored at
/// degree `n`; its curl is exactly zero.
pub fn gradient_field(tet: &Tetrahedron, alpha: &MultiIndex, n: usize) -> Result<(VectorBB, VectorBB)> {
    if alpha.degree() != n + 1 {
        return Err(invalid_arg!("gradient field expects |alpha| = n+1"));
    }
    if alpha.as_vertex().is_some() {
        return Err(invalid_arg!(
            "vertex index {alpha:?} is excluded from the gradient family"
        ));
    }
    let mut b = VecBuilder::new(n);
    for k in 0..4 {
        if let Some(down) = alpha.down(k) {
            b.add(down, tet.grad_lambda(k) * (n as f64 + 1.0));
        }
    }
    Ok((b.build(), VectorBB::zero(n)))
}

/// H(curl) face bubble `Xa^{FT,n}_α` for `α` in the lattice of face `f`,
/// returned together with its curl.
///
/// Value: `Σ_{σ∈Σ_ℓ} (α_{σ1}+1)(α_{σ3}∇λ_{σ2} − α_{σ2}∇λ_{σ3}) B^{n+1}_{α+e_{σ1}}`.
pub fn hcurl_face_bubble(
    tet: &Tetrahedron,
    face: Face,
    alpha: &MultiIndex,
    n: usize,
) -> Result<(VectorBB, VectorBB)> {
    if alpha.degree() != n {
        return Err(invalid_arg!("face bubble expects |alpha| = n"));
    }
    if alpha.entry(face.0) != 0 {
        return Err(invalid_arg!(
            "index {alpha:?} has a nonzero entry off face {face:?}"
        ));
    }
    let mut val = VecBuilder::new(n + 1);
    let mut crl = VecBuilder::new(n);
    for sigma in face.sigma() {
        let [s1, s2, s3] = sigma;
        let a1 = alpha.entry(s1) as f64;
        let a2 = alpha.entry(s2) as f64;
        let a3 = alpha.entry(s3) as f64;
        let coeff = (tet.grad_lambda(s2) * a3 - tet.grad_lambda(s3) * a2) * (a1 + 1.0);
        let up = alpha.up(s1);
        val.add(up, coeff);
        for &sk in &sigma {
            if let Some(idx) = up.down(sk) {
                let d = (tet.t(sk, s2) * a3 - tet.t(sk, s3) * a2) * ((n as f64 + 1.0) * (a1 + 1.0));
                crl.add(idx, d);
            }
        }
    }
    Ok((val.build(), crl.build()))
}

/// H(curl) cell bubble `Xb^n_{ℓ,α} = (n+1)Bⁿ_{α−e_ℓ}∇λ_ℓ − (α_ℓ/(n+1))∇B^{n+1}_α`
/// for interior `|α| = n+1`, returned with its curl.
///
/// In BB-form the value is `Σ_i (δ_{iℓ}(n+1) − α_ℓ) Bⁿ_{α−e_i} ∇λᵢ` and the
/// curl is `(n+1)n Σ_i B^{n-1}_{α−e_ℓ−e_i} t_{iℓ}`.
pub fn hcurl_cell_bubble(
    tet: &Tetrahedron,
    ell: usize,
    alpha: &MultiIndex,
    n: usize,
) -> Result<(VectorBB, VectorBB)> {
    if alpha.degree() != n + 1 || (0..4).any(|k| alpha.entry(k) == 0) {
        return Err(invalid_arg!(
            "cell bubble expects interior |alpha| = n+1, got {alpha:?}"
        ));
    }
    match ell {
        0 | 1 => {}
        2 => {
            if alpha.entry(2) != 1 {
                return Err(invalid_arg!(
                    "cell bubble with ell=2 requires alpha[2] = 1, got {alpha:?}"
                ));
            }
        }
        _ => return Err(invalid_arg!("cell bubble direction ell={ell} is never used")),
    }
    let a_ell = alpha.entry(ell) as f64;
    let np1 = n as f64 + 1.0;
    let mut val = VecBuilder::new(n);
    for i in 0..4 {
        let c = if i == ell { np1 - a_ell } else { -a_ell };
        val.add(alpha.down(i).unwrap(), tet.grad_lambda(i) * c);
    }
    let mut crl = VecBuilder::new(n.saturating_sub(1));
    if n >= 1 {
        let base = alpha.down(ell).unwrap();
        for i in 0..4 {
            if i == ell {
                continue;
            }
            if let Some(idx) = base.down(i) {
                crl.add(idx, tet.t(i, ell) * (np1 * n as f64));
            }
        }
    }
    Ok((val.build(), crl.build()))
}

/// Lowest-order face element `χ_ℓ` (face opposite vertex `ell`) and its
/// constant divergence `(−1)^{ℓ} 3 ε₁₂₃` in the paper's 1-based labeling.
pub fn hdiv_face_element(tet: &Tetrahedron, ell: usize) -> Result<(VectorBB, ScalarBB)> {
    if ell > 3 {
        return Err(invalid_arg!("face index {ell} out of range"));
    }
    let face = Face(ell);
    let mut val = VecBuilder::new(1);
    for [s1, s2, s3] in face.sigma() {
        val.add(MultiIndex::unit(s1), tet.t(s2, s3));
    }
    let div = alt_sign_1based(ell + 1) * 3.0 * tet.eps(0, 1, 2);
    Ok((val.build(), ScalarBB::constant(div)))
}

/// H(div) cell bubble `Xcⁿ_α = (n+1)Bⁿ_α Σ_ℓ (−1)^ℓ α_ℓ χ_ℓ` for `|α| = n`,
/// with its divergence `Σ_{i,j} (n+1)(αᵢ+1)(δᵢⱼn − αⱼ) ε₁₂₃ Bⁿ_{α+eᵢ−eⱼ}`.
pub fn hdiv_cell_bubble(tet: &Tetrahedron, alpha: &MultiIndex, n: usize) -> Result<(VectorBB, ScalarBB)> {
    if alpha.degree() != n {
        return Err(invalid_arg!("div bubble expects |alpha| = n"));
    }
    let mut val = VecBuilder::new(n + 1);
    for i in 0..4 {
        let mut d4 = Vector3::zeros();
        for [s1, s2, s3] in Face(i).sigma() {
            d4 += tet.t(s2, s3) * alpha.entry(s1) as f64;
        }
        d4 *= alt_sign_1based(i) * (alpha.entry(i) as f64 + 1.0);
        if d4.norm() != 0.0 {
            val.add(alpha.up(i), d4);
        }
    }
    let eps = tet.eps(0, 1, 2);
    let np1 = n as f64 + 1.0;
    let mut div = ScalarBuilder::new(n);
    for i in 0..4 {
        for j in 0..4 {
            let delta = if i == j { n as f64 } else { 0.0 };
            let c = np1 * (alpha.entry(i) as f64 + 1.0) * (delta - alpha.entry(j) as f64) * eps;
            if c == 0.0 {
                continue;
            }
            if let Some(idx) = alpha.up(i).down(j) {
                div.add(idx, c);
            }
        }
    }
    Ok((val.build(), div.build()))
}

/// The six finite element spaces with Bernstein-Bezier bases.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Space {
    H1,
    HCurl1st,
    HCurl2nd,
    HDivRT,
    HDivBDM,
    L2,
}

/// Basis family per the four-type classification of the H(curl) and H(div)
/// bases. H1 and L2 use `Type1` throughout.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Family {
    Type1,
    Type2,
    Type3,
    Type4,
}

/// The mesh entity owning a basis function on the reference element.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Entity {
    Vertex(usize),
    Edge(Edge),
    Face(usize),
    Cell,
}

/// Identifies one basis function of a given space and degree.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct BasisDescriptor {
    pub space: Space,
    pub n: usize,
    pub family: Family,
    pub entity: Entity,
    pub alpha: Option<MultiIndex>,
    /// Direction `ℓ ∈ {0,1,2}` for H(curl) Type 4 cell bubbles (and the
    /// H(div) Type 3 curls thereof).
    pub aux: Option<usize>,
}

/// A realized basis function: its value and, when the space has one, the
/// relevant derivative (gradient, curl, or divergence).
#[derive(Clone, Debug)]
pub struct BasisFunction {
    pub value: BBForm,
    pub derivative: Option<BBForm>,
}

/// Per-family function counts of `enumerate_basis`.
pub fn family_counts(space: Space, n: usize) -> Result<[usize; 4]> {
    let c = |a: usize, b: usize| binomial(a, b) as usize;
    match space {
        Space::HCurl1st => Ok([
            6,
            c(n + 4, 3) - 4,
            4 * (c(n + 2, 2) - 1),
            2 * c(n + 1, 3) + c(n, 2),
        ]),
        Space::HCurl2nd => {
            if n < 1 {
                return Err(invalid_arg!("second-kind H(curl) needs n >= 1"));
            }
            Ok([
                6,
                c(n + 4, 3) - 4,
                4 * (c(n + 1, 2) - 1),
                2 * c(n, 3) + c(n - 1, 2),
            ])
        }
        Space::HDivRT => Ok([
            4,
            4 * (c(n + 2, 2) - 1),
            2 * c(n + 1, 3) + c(n, 2),
            c(n + 3, 3) - 1,
        ]),
        Space::HDivBDM => {
            if n < 1 {
                return Err(invalid_arg!("BDM needs n >= 1"));
            }
            Ok([
                4,
                4 * (c(n + 2, 2) - 1),
                2 * c(n + 1, 3) + c(n, 2),
                c(n + 2, 3) - 1,
            ])
        }
        Space::H1 => {
            if n < 1 {
                return Err(invalid_arg!("H1 Bernstein basis needs n >= 1"));
            }
            Ok([c(n + 3, 3), 0, 0, 0])
        }
        Space::L2 => Ok([c(n + 3, 3), 0, 0, 0]),
    }
}

/// Enumerates the basis in the canonical order: Type 1 through Type 4, each
/// sorted by owning entity and then lexicographically by multi-index.
pub fn enumerate_basis(space: Space, n: usize) -> Result<Vec<BasisDescriptor>> {
    let mut out = Vec::new();
    match space {
        Space::H1 => {
            if n < 1 {
                return Err(invalid_arg!("H1 Bernstein basis needs n >= 1"));
            }
            out.extend(h1_descriptors(Space::H1, n)?);
        }
        Space::L2 => {
            for a in enumerate(IndexSetKind::Full(n))? {
                out.push(BasisDescriptor {
                    space,
                    n,
                    family: Family::Type1,
                    entity: Entity::Cell,
                    alpha: Some(a),
                    aux: None,
                });
            }
        }
        Space::HCurl1st | Space::HCurl2nd => {
            if space == Space::HCurl2nd && n < 1 {
                return Err(invalid_arg!("second-kind H(curl) needs n >= 1"));
            }
            for e in Edge::all() {
                out.push(BasisDescriptor {
                    space,
                    n,
                    family: Family::Type1,
                    entity: Entity::Edge(e),
                    alpha: None,
                    aux: None,
                });
            }
            out.extend(gradient_descriptors(space, n)?);
            let face_deg = if space == Space::HCurl1st { n } else { n - 1 };
            for f in 0..4 {
                let base = IndexSetKind::FaceLattice(face_deg, Face(f));
                let removed = lex_first(base)?;
                for a in enumerate(IndexSetKind::FaceLatticePrimed(face_deg, Face(f), removed))? {
                    out.push(BasisDescriptor {
                        space,
                        n,
                        family: Family::Type3,
                        entity: Entity::Face(f),
                        alpha: Some(a),
                        aux: None,
                    });
                }
            }
            let bubble_deg = if space == Space::HCurl1st { n + 2 } else { n + 1 };
            out.extend(cell_bubble_descriptors(space, n, bubble_deg, Family::Type4));
        }
        Space::HDivRT | Space::HDivBDM => {
            if space == Space::HDivBDM && n < 1 {
                return Err(invalid_arg!("BDM needs n >= 1"));
            }
            for f in 0..4 {
                out.push(BasisDescriptor {
                    space,
                    n,
                    family: Family::Type1,
                    entity: Entity::Face(f),
                    alpha: None,
                    aux: None,
                });
            }
            for f in 0..4 {
                let base = IndexSetKind::FaceLattice(n, Face(f));
                let removed = lex_first(base)?;
                for a in enumerate(IndexSetKind::FaceLatticePrimed(n, Face(f), removed))? {
                    out.push(BasisDescriptor {
                        space,
                        n,
                        family: Family::Type2,
                        entity: Entity::Face(f),
                        alpha: Some(a),
                        aux: None,
                    });
                }
            }
            out.extend(cell_bubble_descriptors(space, n, n + 2, Family::Type3));
            let bubble_deg = if space == Space::HDivRT { n } else { n - 1 };
            let removed = lex_first(IndexSetKind::Full(bubble_deg))?;
            for a in enumerate(IndexSetKind::FullPrimed(bubble_deg, removed))? {
                out.push(BasisDescriptor {
                    space,
                    n,
                    family: Family::Type4,
                    entity: Entity::Cell,
                    alpha: Some(a),
                    aux: None,
                });
            }
        }
    }
    let counts = family_counts(space, n)?;
    debug_assert_eq!(out.len(), counts.iter().sum::<usize>());
    Ok(out)
}

fn h1_descriptors(space: Space, n: usize) -> Result<Vec<BasisDescriptor>> {
    let mut with_entity: Vec<(Entity, MultiIndex)> = enumerate(IndexSetKind::Full(n))?
        .into_iter()
        .map(|a| {
            let entity = match a.support() {
                IndexSupport::Vertex(v) => Entity::Vertex(v),
                IndexSupport::Edge(e) => Entity::Edge(e),
                IndexSupport::Face(f) => Entity::Face(f.0),
                IndexSupport::Interior => Entity::Cell,
            };
            (entity, a)
        })
        .collect();
    with_entity.sort();
    Ok(with_entity
        .into_iter()
        .map(|(entity, a)| BasisDescriptor {
            space,
            n,
            family: Family::Type1,
            entity,
            alpha: Some(a),
            aux: None,
        })
        .collect())
}

fn gradient_descriptors(space: Space, n: usize) -> Result<Vec<BasisDescriptor>> {
    let mut with_entity: Vec<(Entity, MultiIndex)> = enumerate(IndexSetKind::Full(n + 1))?
        .into_iter()
        .filter(|a| a.as_vertex().is_none())
        .map(|a| {
            let entity = match a.support() {
                IndexSupport::Edge(e) => Entity::Edge(e),
                IndexSupport::Face(f) => Entity::Face(f.0),
                IndexSupport::Interior => Entity::Cell,
                IndexSupport::Vertex(_) => unreachable!(),
            };
            (entity, a)
        })
        .collect();
    with_entity.sort();
    Ok(with_entity
        .into_iter()
        .map(|(entity, a)| BasisDescriptor {
            space,
            n,
            family: Family::Type2,
            entity,
            alpha: Some(a),
            aux: None,
        })
        .collect())
}

fn cell_bubble_descriptors(
    space: Space,
    n: usize,
    bubble_deg: usize,
    family: Family,
) -> Vec<BasisDescriptor> {
    let mut out = Vec::new();
    for a in enumerate(IndexSetKind::Interior(bubble_deg)).unwrap() {
        for ell in 0..3usize {
            if ell == 2 && a.entry(2) != 1 {
                continue;
            }
            out.push(BasisDescriptor {
                space,
                n,
                family,
                entity: Entity::Cell,
                alpha: Some(a),
                aux: Some(ell),
            });
        }
    }
    out
}

/// Realizes a descriptor on a concrete tetrahedron. The derivative slot holds
/// the gradient for H1, the curl for H(curl), the divergence for H(div), and
/// is absent for L2.
pub fn realize(desc: &BasisDescriptor, tet: &Tetrahedron) -> Result<BasisFunction> {
    let n = desc.n;
    match (desc.space, desc.family) {
        (Space::H1, _) => {
            let alpha = required_alpha(desc)?;
            let value = ScalarBB {
                degree: n,
                terms: vec![(alpha, 1.0)],
            };
            let grad = value.gradient(tet);
            Ok(BasisFunction {
                value: BBForm::Scalar(value),
                derivative: Some(BBForm::Vector(grad)),
            })
        }
        (Space::L2, _) => {
            let alpha = required_alpha(desc)?;
            Ok(BasisFunction {
                value: BBForm::Scalar(ScalarBB {
                    degree: n,
                    terms: vec![(alpha, 1.0)],
                }),
                derivative: None,
            })
        }
        (Space::HCurl1st | Space::HCurl2nd, family) => {
            let (value, curl) = match family {
                Family::Type1 => {
                    let e = required_edge(desc)?;
                    let (i, j) = e.ends();
                    whitney_edge(tet, i, j)?
                }
                Family::Type2 => gradient_field(tet, &required_alpha(desc)?, n)?,
                Family::Type3 => {
                    let deg = if desc.space == Space::HCurl1st { n } else { n - 1 };
                    hcurl_face_bubble(tet, required_face(desc)?, &required_alpha(desc)?, deg)?
                }
                Family::Type4 => {
                    let sup = if desc.space == Space::HCurl1st { n + 1 } else { n };
                    hcurl_cell_bubble(tet, required_aux(desc)?, &required_alpha(desc)?, sup)?
                }
            };
            Ok(BasisFunction {
                value: BBForm::Vector(value),
                derivative: Some(BBForm::Vector(curl)),
            })
        }
        (Space::HDivRT | Space::HDivBDM, family) => match family {
            Family::Type1 => {
                let (value, div) = hdiv_face_element(tet, required_face_index(desc)?)?;
                Ok(BasisFunction {
                    value: BBForm::Vector(value),
                    derivative: Some(BBForm::Scalar(div)),
                })
            }
            Family::Type2 => {
                let (_, curl) =
                    hcurl_face_bubble(tet, required_face(desc)?, &required_alpha(desc)?, n)?;
                Ok(BasisFunction {
                    value: BBForm::Vector(curl),
                    derivative: Some(BBForm::Scalar(ScalarBB::zero(n.saturating_sub(1)))),
                })
            }
            Family::Type3 => {
                let (_, curl) =
                    hcurl_cell_bubble(tet, required_aux(desc)?, &required_alpha(desc)?, n + 1)?;
                Ok(BasisFunction {
                    value: BBForm::Vector(curl),
                    derivative: Some(BBForm::Scalar(ScalarBB::zero(n.saturating_sub(1)))),
                })
            }
            Family::Type4 => {
                let deg = if desc.space == Space::HDivRT { n } else { n - 1 };
                let (value, div) = hdiv_cell_bubble(tet, &required_alpha(desc)?, deg)?;
                Ok(BasisFunction {
                    value: BBForm::Vector(value),
                    derivative: Some(BBForm::Scalar(div)),
                })
            }
        },
    }
}

fn required_alpha(desc: &BasisDescriptor) -> Result<MultiIndex> {
    desc.alpha
        .ok_or_else(|| invalid_arg!("descriptor {desc:?} requires a multi-index"))
}

fn required_aux(desc: &BasisDescriptor) -> Result<usize> {
    desc.aux
        .ok_or_else(|| invalid_arg!("descriptor {desc:?} requires an aux direction"))
}

fn required_edge(desc: &BasisDescriptor) -> Result<Edge> {
    match desc.entity {
        Entity::Edge(e) => Ok(e),
        _ => Err(invalid_arg!("descriptor {desc:?} requires an edge entity")),
    }
}

fn required_face(desc: &BasisDescriptor) -> Result<Face> {
    match desc.entity {
        Entity::Face(f) => Ok(Face(f)),
        _ => Err(invalid_arg!("descriptor {desc:?} requires a face entity")),
    }
}

fn required_face_index(desc: &BasisDescriptor) -> Result<usize> {
    match desc.entity {
        Entity::Face(f) => Ok(f),
        _ => Err(invalid_arg!("descriptor {desc:?} requires a face entity")),
    }
}

pub mod face2d {
    //! The two-dimensional face basis, realized as fields on a tetrahedron
    //! face embedded in 3D. Implemented to the extent needed for trace
    //! verification and orientation matching: face Bernstein polynomials,
    //! 2D lowest-order edge elements, and the 2D H(curl) face bubbles.

    use super::*;
    use crate::geometry::TriangleFace;

    /// A face of a tetrahedron with a chosen ordering of its three vertices.
    pub struct FaceChart<'a> {
        pub tet: &'a Tetrahedron,
        pub face: TriangleFace,
        /// Local tetrahedron vertex index in chart slot 0,1,2.
        pub order: [usize; 3],
    }

    impl<'a> FaceChart<'a> {
        /// Chart in ascending local-vertex order (the paper's `i₁<i₂<i₃`).
        pub fn ascending(tet: &'a Tetrahedron, opposite: usize) -> Self {
            let face = tet.face(opposite);
            let order = face.local_vertices;
            FaceChart { tet, face, order }
        }

        pub fn with_order(tet: &'a Tetrahedron, opposite: usize, order: [usize; 3]) -> Self {
            let face = tet.face(opposite);
            FaceChart { tet, face, order }
        }

        /// Face barycentric coordinates of a point on the face.
        pub fn mu(&self, x: &Vector3<f64>) -> [f64; 3] {
            let lam = self.tet.barycentric(x);
            [lam[self.order[0]], lam[self.order[1]], lam[self.order[2]]]
        }

        /// Surface gradient of the k-th face barycentric coordinate.
        pub fn surf_grad_mu(&self, k: usize) -> Vector3<f64> {
            self.face.tangential(&self.tet.grad_lambda(self.order[k]))
        }

        pub fn bernstein(&self, beta: &[u16; 3], x: &Vector3<f64>) -> f64 {
            let m = self.mu(x);
            let n = (beta[0] + beta[1] + beta[2]) as usize;
            let mut v = (binomial(n, beta[0] as usize)
                * binomial(n - beta[0] as usize, beta[1] as usize)) as f64;
            for k in 0..3 {
                v *= m[k].powi(beta[k] as i32);
            }
            v
        }

        /// 2D Whitney form `ω_kl = μ_k ∇μ_l − μ_l ∇μ_k` (chart slots).
        pub fn whitney(&self, k: usize, l: usize, x: &Vector3<f64>) -> Vector3<f64> {
            let m = self.mu(x);
            self.surf_grad_mu(l) * m[k] - self.surf_grad_mu(k) * m[l]
        }

        /// 2D face bubble
        /// `Xa^{F,n}_β = (n+1) B^{F,n}_β (β₁ ω₂₃ − β₂ ω₁₃ + β₃ ω₁₂)`.
        pub fn xa(&self, beta: &[u16; 3], x: &Vector3<f64>) -> Vector3<f64> {
            let n = (beta[0] + beta[1] + beta[2]) as f64;
            let b = self.bernstein(beta, x);
            let combo = self.whitney(1, 2, x) * beta[0] as f64
                - self.whitney(0, 2, x) * beta[1] as f64
                + self.whitney(0, 1, x) * beta[2] as f64;
            combo * ((n + 1.0) * b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::Face;
    use crate::sampling;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn whitney_centroid_and_curl() {
        let tet = Tetrahedron::reference();
        let (w, c) = whitney_edge(&tet, 0, 1).unwrap();
        let at_centroid = w.eval(&tet, &tet.centroid());
        assert!((at_centroid - Vector3::new(2.0, 1.0, 1.0) * 0.25).norm() < 1e-14);
        let curl = c.eval(&tet, &tet.centroid());
        assert!((curl - Vector3::new(0.0, -2.0, 2.0)).norm() < 1e-14);
        assert!(whitney_edge(&tet, 1, 1).is_err());
    }

    #[test]
    fn whitney_edge_functional_is_unity() {
        // The tangential component along edge (x_i, x_j) is constant 1/|E|,
        // so the edge integral of ω·t is 1.
        let mut r = rng(42);
        let tet = sampling::random_tetrahedron(&mut r);
        for e in Edge::all() {
            let (i, j) = e.ends();
            let (w, _) = whitney_edge(&tet, i, j).unwrap();
            let a = tet.vertices()[i];
            let b = tet.vertices()[j];
            let t = (b - a) / (b - a).norm();
            // 2-point Gauss on the edge integrates the linear integrand exactly.
            let len = (b - a).norm();
            let g = 0.5 / f64::sqrt(3.0);
            let x1 = a * (0.5 + g) + b * (0.5 - g);
            let x2 = a * (0.5 - g) + b * (0.5 + g);
            let integral = 0.5 * len * (w.eval(&tet, &x1).dot(&t) + w.eval(&tet, &x2).dot(&t));
            assert_relative_eq!(integral, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn gradient_field_matches_analytic_gradient() {
        let mut r = rng(7);
        let tet = sampling::random_tetrahedron(&mut r);
        // grad B^2_(1,1,0,0) = 2(λ₂∇λ₁ + λ₁∇λ₂)
        let alpha = MultiIndex::new([1, 1, 0, 0]);
        let (g, curl) = gradient_field(&tet, &alpha, 1).unwrap();
        for _ in 0..5 {
            let lam = sampling::random_barycentric(&mut r);
            let x = tet.point(&lam);
            let expect = (tet.grad_lambda(0) * lam[1] + tet.grad_lambda(1) * lam[0]) * 2.0;
            assert!((g.eval(&tet, &x) - expect).norm() < 1e-12 * expect.norm().max(1.0));
        }
        assert_eq!(curl.terms.len(), 0, "curl of a gradient is exactly zero");
        assert!(gradient_field(&tet, &MultiIndex::new([2, 0, 0, 0]), 1).is_err());
    }

    #[test]
    fn face_bubble_value_matches_defining_formula() {
        let mut r = rng(11);
        let tet = sampling::random_tetrahedron(&mut r);
        let n = 4;
        // Face {2,3,4} in 1-based labels is opposite vertex 1, i.e. Face(0).
        let face = Face(0);
        let alpha = MultiIndex::new([0, 2, 1, 1]);
        let (xa, curl) = hcurl_face_bubble(&tet, face, &alpha, n).unwrap();
        let [i, j, k] = face.vertices();
        for _ in 0..20 {
            let lam = sampling::random_barycentric(&mut r);
            let x = tet.point(&lam);
            // Eq. form: (n+1) Bⁿ_α (α_i ω_jk + α_j ω_ki + α_k ω_ij)
            let w = |a: usize, b: usize| {
                let (wa, _) = whitney_edge(&tet, a.min(b), a.max(b)).unwrap();
                let v = wa.eval(&tet, &x);
                if a < b {
                    v
                } else {
                    -v
                }
            };
            let combo = w(j, k) * alpha.entry(i) as f64
                + w(k, i) * alpha.entry(j) as f64
                + w(i, j) * alpha.entry(k) as f64;
            let direct = combo * ((n as f64 + 1.0) * bernstein_value(&alpha, &lam));
            let got = xa.eval(&tet, &x);
            assert!(
                (got - direct).norm() <= 1e-13 * direct.norm().max(1.0),
                "face bubble BB-form deviates from defining formula"
            );
        }
        // Curl matches the analytic curl of the BB-form value.
        let analytic = xa.curl(&tet);
        for _ in 0..5 {
            let lam = sampling::random_barycentric(&mut r);
            let diff = curl.eval_bary(&lam) - analytic.eval_bary(&lam);
            assert!(diff.norm() < 1e-11 * analytic.eval_bary(&lam).norm().max(1.0));
        }
        assert!(hcurl_face_bubble(&tet, Face(1), &alpha, n).is_err());
    }

    #[test]
    fn face_bubble_trace_identity_and_vanishing() {
        let mut r = rng(13);
        let tet = sampling::random_tetrahedron(&mut r);
        let n = 3;
        let face = Face(0);
        let alpha = MultiIndex::new([0, 1, 1, 1]);
        let (xa, _) = hcurl_face_bubble(&tet, face, &alpha, n).unwrap();
        let scale = xa.max_coeff();
        // Vanishing tangential trace on the other three faces.
        for l in 1..4 {
            let chart = face2d::FaceChart::ascending(&tet, l);
            for _ in 0..20 {
                let mu = sampling::random_face_barycentric(&mut r);
                let x = chart.face.point(&tet, &mu);
                let tt = chart.face.tangential(&xa.eval(&tet, &x));
                assert!(tt.norm() < 1e-13 * scale, "trace leak on face {l}");
            }
        }
        // On its own face the trace equals the 2D bubble with restricted index.
        let chart = face2d::FaceChart::ascending(&tet, face.0);
        let beta = [
            alpha.entry(chart.order[0]) as u16,
            alpha.entry(chart.order[1]) as u16,
            alpha.entry(chart.order[2]) as u16,
        ];
        for _ in 0..20 {
            let mu = sampling::random_face_barycentric(&mut r);
            let x = chart.face.point(&tet, &mu);
            let tt = chart.face.tangential(&xa.eval(&tet, &x));
            let two_d = chart.xa(&beta, &x);
            assert!(
                (tt - two_d).norm() <= 1e-13 * scale,
                "Lemma 3.1 trace identity violated"
            );
        }
    }

    #[test]
    fn cell_bubble_membership_and_traces() {
        let mut r = rng(17);
        let tet = sampling::random_tetrahedron(&mut r);
        // n = 3 in space terms: bubbles Xb^{n+1} with interior |α| = n+2.
        let n_space = 3usize;
        let alpha = MultiIndex::new([2, 1, 1, 1]);
        let (xb, curl) = hcurl_cell_bubble(&tet, 0, &alpha, n_space + 1).unwrap();
        let scale = xb.max_coeff();

        // Defining formula: (m+1) B^m_{α-e_ℓ} ∇λ_ℓ − (α_ℓ/(m+1)) ∇B^{m+1}_α
        // with m = n_space + 1.
        let m = n_space + 1;
        let bm = ScalarBB {
            degree: m + 1,
            terms: vec![(alpha, 1.0)],
        };
        let grad_full = bm.gradient(&tet);
        for _ in 0..20 {
            let lam = sampling::random_barycentric(&mut r);
            let x = tet.point(&lam);
            let b_down = bernstein_value(&alpha.down(0).unwrap(), &lam);
            let direct = tet.grad_lambda(0) * ((m as f64 + 1.0) * b_down)
                - grad_full.eval_bary(&lam) * (alpha.entry(0) as f64 / (m as f64 + 1.0));
            assert!((xb.eval(&tet, &x) - direct).norm() < 1e-12 * scale);
        }

        // Tangential traces vanish on the whole boundary.
        for l in 0..4 {
            let f = tet.face(l);
            for _ in 0..20 {
                let mu = sampling::random_face_barycentric(&mut r);
                let x = f.point(&tet, &mu);
                assert!(f.tangential(&xb.eval(&tet, &x)).norm() < 1e-13 * scale);
            }
        }

        // Nedelec membership: x·v must be a polynomial of degree ≤ n+1,
        // equivalently (x−x_ℓ)·v = −(m+1−α_ℓ) B^m_{α−e_ℓ}.
        let x_ell = tet.vertices()[0];
        for _ in 0..20 {
            let lam = sampling::random_barycentric(&mut r);
            let x = tet.point(&lam);
            let lhs = (x - x_ell).dot(&xb.eval_bary(&lam));
            let rhs = -((m as f64 + 1.0) - alpha.entry(0) as f64)
                * bernstein_value(&alpha.down(0).unwrap(), &lam);
            assert!((lhs - rhs).abs() < 1e-12 * scale.max(1.0));
        }

        // Curl matches the analytic curl of the value.
        let analytic = xb.curl(&tet);
        for _ in 0..5 {
            let lam = sampling::random_barycentric(&mut r);
            assert!((curl.eval_bary(&lam) - analytic.eval_bary(&lam)).norm() < 1e-11 * scale);
        }

        // Constraint handling for the third direction: alpha[2] must be 1.
        let bad = MultiIndex::new([1, 1, 2, 1]);
        assert!(hcurl_cell_bubble(&tet, 2, &bad, n_space + 1).is_err());
        assert!(hcurl_cell_bubble(&tet, 2, &alpha, n_space + 1).is_ok());
        assert!(hcurl_cell_bubble(&tet, 3, &alpha, n_space + 1).is_err());
    }

    #[test]
    fn face_element_traces_and_divergence() {
        let mut r = rng(19);
        let tet = sampling::random_tetrahedron(&mut r);
        let eps123 = tet.eps(0, 1, 2);
        for l in 0..4 {
            let (chi, div) = hdiv_face_element(&tet, l).unwrap();
            let own = tet.face(l);
            // With the positive-orientation normalization, the normal trace
            // on the owning face is (−1)^ℓ/(2 area) and zero elsewhere.
            let expected_trace = alt_sign_1based(l) / (2.0 * own.area);
            for target in 0..4 {
                let f = tet.face(target);
                for _ in 0..20 {
                    let mu = sampling::random_face_barycentric(&mut r);
                    let x = f.point(&tet, &mu);
                    let tr = chi.eval(&tet, &x).dot(&f.outward_normal);
                    if target == l {
                        assert_relative_eq!(tr, expected_trace, max_relative = 1e-11);
                    } else {
                        assert!(tr.abs() < 1e-12 / (2.0 * own.area));
                    }
                }
            }
            let expect = alt_sign_1based(l + 1) * 3.0 * eps123;
            assert_relative_eq!(div.eval_bary(&[0.25; 4]), expect, max_relative = 1e-13);
            // Divergence also matches the analytic divergence of the BB-form.
            let analytic = chi.divergence(&tet);
            assert_relative_eq!(analytic.eval_bary(&[0.3, 0.3, 0.2, 0.2]), expect, max_relative = 1e-12);
        }
        // Reference tet: div χ₁ = −3ε₁₂₃ = 3.
        let tet = Tetrahedron::reference();
        let (_, div) = hdiv_face_element(&tet, 0).unwrap();
        assert_relative_eq!(div.eval_bary(&[0.25; 4]), 3.0, max_relative = 1e-14);
    }

    #[test]
    fn div_bubble_traces_divergence_and_mean() {
        let mut r = rng(23);
        let tet = sampling::random_tetrahedron(&mut r);
        let n = 4usize;
        let alpha = MultiIndex::new([0, 2, 1, 1]);
        let (xc, div) = hdiv_cell_bubble(&tet, &alpha, n).unwrap();
        let scale = xc.max_coeff();
        for l in 0..4 {
            let f = tet.face(l);
            for _ in 0..20 {
                let mu = sampling::random_face_barycentric(&mut r);
                let x = f.point(&tet, &mu);
                assert!(
                    xc.eval(&tet, &x).dot(&f.outward_normal).abs() < 1e-13 * scale,
                    "normal trace leak on face {l}"
                );
            }
        }
        // Table divergence equals the analytic divergence of the value.
        let analytic = xc.divergence(&tet);
        for _ in 0..10 {
            let lam = sampling::random_barycentric(&mut r);
            assert!((div.eval_bary(&lam) - analytic.eval_bary(&lam)).abs() < 1e-11 * scale);
        }
        // Zero mean via the exact Bernstein integral.
        assert!(div.integral(tet.volume()).abs() < 1e-12 * scale * tet.volume());
    }

    #[test]
    fn enumerate_counts_match_tables() {
        let counts = family_counts(Space::HCurl1st, 3).unwrap();
        assert_eq!(counts, [6, 31, 36, 11]);
        assert_eq!(enumerate_basis(Space::HCurl1st, 3).unwrap().len(), 84);
        let counts = family_counts(Space::HDivRT, 3).unwrap();
        assert_eq!(counts, [4, 36, 11, 19]);
        assert_eq!(enumerate_basis(Space::HDivRT, 3).unwrap().len(), 70);
        assert_eq!(enumerate_basis(Space::HDivBDM, 2).unwrap().len(), 30);
        for n in 0..=8usize {
            let total: usize = family_counts(Space::HCurl1st, n).unwrap().iter().sum();
            assert_eq!(total, (n + 1) * (n + 3) * (n + 4) / 2);
            let total: usize = family_counts(Space::HDivRT, n).unwrap().iter().sum();
            assert_eq!(total, (n + 1) * (n + 2) * (n + 4) / 2);
            if n >= 1 {
                let total: usize = family_counts(Space::HCurl2nd, n).unwrap().iter().sum();
                assert_eq!(total, (n + 1) * (n + 2) * (n + 3) / 2);
                let total: usize = family_counts(Space::HDivBDM, n).unwrap().iter().sum();
                assert_eq!(total, (n + 1) * (n + 2) * (n + 3) / 2);
            }
        }
        assert!(enumerate_basis(Space::HCurl2nd, 0).is_err());
        assert!(enumerate_basis(Space::HDivBDM, 0).is_err());
    }

    #[test]
    fn realize_exact_sequence_and_identity_cases() {
        let tet = Tetrahedron::reference();
        for desc in enumerate_basis(Space::HCurl1st, 2).unwrap() {
            if desc.family == Family::Type2 {
                let f = realize(&desc, &tet).unwrap();
                assert_eq!(f.derivative.unwrap().max_coeff(), 0.0);
            }
        }
        for desc in enumerate_basis(Space::HDivRT, 2).unwrap() {
            if matches!(desc.family, Family::Type2 | Family::Type3) {
                let f = realize(&desc, &tet).unwrap();
                assert_eq!(f.derivative.unwrap().max_coeff(), 0.0);
            }
        }
        let h1 = enumerate_basis(Space::H1, 2).unwrap();
        let f = realize(&h1[5], &tet).unwrap();
        match &f.value {
            BBForm::Scalar(s) => {
                assert_eq!(s.terms.len(), 1);
                assert_eq!(s.terms[0].1, 1.0);
            }
            _ => panic!("H1 value should be scalar"),
        }
    }

    #[test]
    fn partition_of_unity_and_edge_midpoint() {
        let mut r = rng(29);
        let tet = sampling::random_tetrahedron(&mut r);
        for _ in 0..20 {
            let lam = sampling::random_barycentric(&mut r);
            let total: f64 = enumerate(IndexSetKind::Full(3))
                .unwrap()
                .iter()
                .map(|a| bernstein_value(a, &lam))
                .sum();
            assert_relative_eq!(total, 1.0, max_relative = 1e-13);
        }
        // B²_(1,1,0,0) at the midpoint of edge (x₁,x₂) is 2·(1/2)(1/2) = 1/2.
        let v = bernstein_value(&MultiIndex::new([1, 1, 0, 0]), &[0.5, 0.5, 0.0, 0.0]);
        assert_relative_eq!(v, 0.5, max_relative = 1e-15);
        let _ = tet;
    }

    #[test]
    fn constant_form_reproduces_constants() {
        let tet = Tetrahedron::reference();
        let c = ScalarBB::constant(7.5);
        assert_eq!(c.eval(&tet, &Vector3::new(0.1, 0.2, 0.3)), 7.5);
    }
}
