//! Affine tetrahedron geometry: barycentric coordinates, their constant
//! gradients, and the geometric integral tables used by the closed-form
//! element matrices.

use crate::combinatorics::{domain_point, Edge, MultiIndex};
use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};

/// Relative tolerance below which a tetrahedron counts as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// A non-degenerate tetrahedron with positive orientation.
///
/// Construction swaps the last two vertices when the input order is
/// negatively oriented, so that `ε₂₃₄ > 0` holds for every instance and the
/// signs of the lowest-order face elements are reproducible.
#[derive(Clone, Debug)]
pub struct Tetrahedron {
    vertices: [Vector3<f64>; 4],
    grad_lambda: [Vector3<f64>; 4],
    volume: f64,
    input_swapped: bool,
}

impl Tetrahedron {
    pub fn new(vertices: [Vector3<f64>; 4]) -> Result<Self> {
        let scale = bounding_box_scale(&vertices);
        let signed = signed_volume(&vertices);
        if signed.abs() <= DEGENERACY_TOL * scale.powi(3) {
            return Err(Error::DegenerateElement(format!(
                "signed volume {signed:.3e} below tolerance for scale {scale:.3e}"
            )));
        }
        let mut v = vertices;
        let input_swapped = signed < 0.0;
        if input_swapped {
            v.swap(2, 3);
        }
        let volume = signed.abs();

        // Rows of the inverse edge matrix are the gradients of λ₂, λ₃, λ₄.
        let a = Matrix3::from_columns(&[v[1] - v[0], v[2] - v[0], v[3] - v[0]]);
        let a_inv = a.try_inverse().ok_or_else(|| {
            Error::DegenerateElement("edge matrix is numerically singular".into())
        })?;
        let g1 = Vector3::new(a_inv[(0, 0)], a_inv[(0, 1)], a_inv[(0, 2)]);
        let g2 = Vector3::new(a_inv[(1, 0)], a_inv[(1, 1)], a_inv[(1, 2)]);
        let g3 = Vector3::new(a_inv[(2, 0)], a_inv[(2, 1)], a_inv[(2, 2)]);
        let g0 = -(g1 + g2 + g3);

        Ok(Tetrahedron {
            vertices: v,
            grad_lambda: [g0, g1, g2, g3],
            volume,
            input_swapped,
        })
    }

    /// Reference tetrahedron (0,0,0),(1,0,0),(0,1,0),(0,0,1).
    pub fn reference() -> Self {
        Tetrahedron::new([
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ])
        .unwrap()
    }

    pub fn vertices(&self) -> &[Vector3<f64>; 4] {
        &self.vertices
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn grad_lambda(&self, i: usize) -> Vector3<f64> {
        self.grad_lambda[i]
    }

    /// Whether construction swapped the last two input vertices to restore
    /// positive orientation.
    pub fn input_swapped(&self) -> bool {
        self.input_swapped
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..4 {
            for j in i + 1..4 {
                d = d.max((self.vertices[i] - self.vertices[j]).norm());
            }
        }
        d
    }

    pub fn centroid(&self) -> Vector3<f64> {
        (self.vertices[0] + self.vertices[1] + self.vertices[2] + self.vertices[3]) / 4.0
    }

    /// Barycentric coordinates of `x`; affine, summing to one, and outside
    /// [0,1] for points outside the element.
    pub fn barycentric(&self, x: &Vector3<f64>) -> [f64; 4] {
        let d = x - self.vertices[0];
        let mut lambda = [0.0f64; 4];
        for k in 1..4 {
            lambda[k] = self.grad_lambda[k].dot(&d);
        }
        lambda[0] = 1.0 - lambda[1] - lambda[2] - lambda[3];
        lambda
    }

    /// Physical point with the given barycentric coordinates.
    pub fn point(&self, lambda: &[f64; 4]) -> Vector3<f64> {
        let mut x = Vector3::zeros();
        for k in 0..4 {
            x += self.vertices[k] * lambda[k];
        }
        x
    }

    /// Domain point of a multi-index on this element.
    pub fn domain_point(&self, alpha: &MultiIndex) -> Result<Vector3<f64>> {
        domain_point(alpha, &self.vertices)
    }

    /// `t_ij = ∇λᵢ × ∇λⱼ`.
    pub fn t(&self, i: usize, j: usize) -> Vector3<f64> {
        self.grad_lambda[i].cross(&self.grad_lambda[j])
    }

    /// `ε_ijk = ∇λᵢ · (∇λⱼ × ∇λₖ)`.
    pub fn eps(&self, i: usize, j: usize, k: usize) -> f64 {
        self.grad_lambda[i].dot(&self.t(j, k))
    }

    pub fn geometric_tables(&self) -> GeometricTables {
        GeometricTables::new(self)
    }

    /// Outward-facing data for the face opposite local vertex `opposite`.
    pub fn face(&self, opposite: usize) -> TriangleFace {
        TriangleFace::new(self, opposite)
    }
}

fn signed_volume(v: &[Vector3<f64>; 4]) -> f64 {
    let a = Matrix3::from_columns(&[v[1] - v[0], v[2] - v[0], v[3] - v[0]]);
    a.determinant() / 6.0
}

fn bounding_box_scale(v: &[Vector3<f64>; 4]) -> f64 {
    let mut lo = v[0];
    let mut hi = v[0];
    for p in v.iter().skip(1) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm().max(f64::MIN_POSITIVE)
}

/// Precomputed geometric quantities of one tetrahedron: the cross products
/// `t_ij`, the triple product `ε₁₂₃`, and the constant-integrand tables
/// `S⁰ = ∫∇λᵢ·∇λⱼ`, `S¹ = ∫t_ij·t_kl`, `S² = ∫ε₁₂₃²`.
#[derive(Clone, Debug)]
pub struct GeometricTables {
    pub t: [[Vector3<f64>; 4]; 4],
    pub eps123: f64,
    pub s0: [[f64; 4]; 4],
    /// S¹ over the six lexicographic edges (01,02,03,12,13,23).
    pub s1_edges: [[f64; 6]; 6],
    pub s2_123: f64,
    pub volume: f64,
    grad_lambda: [Vector3<f64>; 4],
}

impl GeometricTables {
    pub fn new(tet: &Tetrahedron) -> Self {
        let vol = tet.volume();
        let mut t = [[Vector3::zeros(); 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                t[i][j] = tet.t(i, j);
            }
        }
        let mut s0 = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                s0[i][j] = tet.grad_lambda(i).dot(&tet.grad_lambda(j)) * vol;
            }
        }
        let edges = Edge::all();
        let mut s1_edges = [[0.0; 6]; 6];
        for (p, ep) in edges.iter().enumerate() {
            for (q, eq) in edges.iter().enumerate() {
                let (i, j) = ep.ends();
                let (k, l) = eq.ends();
                s1_edges[p][q] = t[i][j].dot(&t[k][l]) * vol;
            }
        }
        let eps123 = tet.eps(0, 1, 2);
        GeometricTables {
            t,
            eps123,
            s0,
            s1_edges,
            s2_123: eps123 * eps123 * vol,
            volume: vol,
            grad_lambda: [
                tet.grad_lambda(0),
                tet.grad_lambda(1),
                tet.grad_lambda(2),
                tet.grad_lambda(3),
            ],
        }
    }

    pub fn grad_lambda(&self, i: usize) -> Vector3<f64> {
        self.grad_lambda[i]
    }

    pub fn s0(&self, i: usize, j: usize) -> f64 {
        self.s0[i][j]
    }

    /// `S¹_{ij,kl}` for arbitrary (possibly reversed or coincident) pairs.
    pub fn s1(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        if i == j || k == l {
            return 0.0;
        }
        self.t[i][j].dot(&self.t[k][l]) * self.volume
    }
}

/// One face of a tetrahedron with its outward normal and area.
#[derive(Clone, Debug)]
pub struct TriangleFace {
    /// Local vertex indices of the face, ascending.
    pub local_vertices: [usize; 3],
    /// Local vertex the face is opposite to.
    pub opposite: usize,
    pub outward_normal: Vector3<f64>,
    pub area: f64,
}

impl TriangleFace {
    pub fn new(tet: &Tetrahedron, opposite: usize) -> Self {
        let face = crate::combinatorics::Face(opposite);
        let [a, b, c] = face.vertices();
        let v = tet.vertices();
        let cross = (v[b] - v[a]).cross(&(v[c] - v[a]));
        let area = 0.5 * cross.norm();
        // ∇λ_opposite points inward through the opposite face.
        let mut n = cross / cross.norm();
        if n.dot(&tet.grad_lambda(opposite)) > 0.0 {
            n = -n;
        }
        TriangleFace {
            local_vertices: face.vertices(),
            opposite,
            outward_normal: n,
            area,
        }
    }

    /// A point on the face with face-barycentric coordinates `mu`.
    pub fn point(&self, tet: &Tetrahedron, mu: &[f64; 3]) -> Vector3<f64> {
        let v = tet.vertices();
        v[self.local_vertices[0]] * mu[0]
            + v[self.local_vertices[1]] * mu[1]
            + v[self.local_vertices[2]] * mu[2]
    }

    /// Projects a vector onto the face plane (the tangential trace).
    pub fn tangential(&self, v: &Vector3<f64>) -> Vector3<f64> {
        v - self.outward_normal * self.outward_normal.dot(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_gradients_and_volume() {
        let tet = Tetrahedron::reference();
        assert_relative_eq!(tet.volume(), 1.0 / 6.0, max_relative = 1e-15);
        assert!((tet.grad_lambda(0) - Vector3::new(-1.0, -1.0, -1.0)).norm() < 1e-14);
        assert!((tet.grad_lambda(1) - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-14);
        assert!(!tet.input_swapped());
    }

    #[test]
    fn gradient_partition_of_unity_and_delta_property() {
        let tet = random_tet(7);
        let sum = tet.grad_lambda(0) + tet.grad_lambda(1) + tet.grad_lambda(2) + tet.grad_lambda(3);
        assert!(sum.norm() < 1e-12 * tet.grad_lambda(0).norm().max(1.0));
        for i in 0..4 {
            let lam = tet.barycentric(&tet.vertices()[i]);
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((lam[j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coplanar_points_are_rejected() {
        let r = Tetrahedron::new([
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
        ]);
        assert!(matches!(r, Err(Error::DegenerateElement(_))));
    }

    #[test]
    fn negative_orientation_is_normalized() {
        let tet = Tetrahedron::new([
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, 1.0, 0.0),
        ])
        .unwrap();
        assert!(tet.input_swapped());
        assert!(tet.eps(1, 2, 3) > 0.0);
        assert!(tet.volume() > 0.0);
    }

    #[test]
    fn barycentric_examples() {
        let tet = Tetrahedron::reference();
        let lam = tet.barycentric(&Vector3::new(0.2, 0.3, 0.1));
        let expect = [0.4, 0.2, 0.3, 0.1];
        for k in 0..4 {
            assert_relative_eq!(lam[k], expect[k], max_relative = 1e-13);
        }
        let c = tet.barycentric(&tet.centroid());
        for k in 0..4 {
            assert_relative_eq!(c[k], 0.25, max_relative = 1e-13);
        }
    }

    #[test]
    fn reference_tables() {
        let tet = Tetrahedron::reference();
        let g = tet.geometric_tables();
        assert_relative_eq!(g.s0(1, 1), 1.0 / 6.0, max_relative = 1e-14);
        assert_relative_eq!(g.s0(0, 1), -1.0 / 6.0, max_relative = 1e-14);
        assert_relative_eq!(g.s0(0, 0), 0.5, max_relative = 1e-14);
        assert!((g.t[1][2] - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-14);
        assert_relative_eq!(g.s1(1, 2, 1, 2), 1.0 / 6.0, max_relative = 1e-14);
        assert_relative_eq!(g.eps123, -1.0, max_relative = 1e-14);
        assert_relative_eq!(g.s2_123, 1.0 / 6.0, max_relative = 1e-14);
    }

    #[test]
    fn eps_sign_relations() {
        let tet = random_tet(3);
        let e = |i, j, k| tet.eps(i, j, k);
        let e123 = e(0, 1, 2);
        assert_relative_eq!(e(0, 1, 3), -e123, max_relative = 1e-12);
        assert_relative_eq!(e(0, 2, 3), e123, max_relative = 1e-12);
        assert_relative_eq!(e(1, 2, 3), -e123, max_relative = 1e-12);
        // ε via t₁₂·∇λ₃ equals the triple product by definition.
        assert_relative_eq!(tet.t(0, 1).dot(&tet.grad_lambda(2)), e123, max_relative = 1e-12);
        assert!(e(1, 2, 3) > 0.0, "normalization fixes eps234 > 0");
        assert!(e123 < 0.0, "eps123 = -eps234 is negative under the convention");
    }

    #[test]
    fn s1_symmetries() {
        let g = random_tet(11).geometric_tables();
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    for l in 0..4 {
                        assert_relative_eq!(
                            g.s1(i, j, k, l),
                            g.s1(k, l, i, j),
                            max_relative = 1e-12,
                            epsilon = 1e-15
                        );
                        assert_relative_eq!(
                            g.s1(i, j, k, l),
                            -g.s1(j, i, k, l),
                            max_relative = 1e-12,
                            epsilon = 1e-15
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn tables_scale_with_uniform_refinement() {
        let base = random_tet(5);
        for h in [0.5, 2.0] {
            let scaled = Tetrahedron::new([
                base.vertices()[0] * h,
                base.vertices()[1] * h,
                base.vertices()[2] * h,
                base.vertices()[3] * h,
            ])
            .unwrap();
            let g0 = base.geometric_tables();
            let g1 = scaled.geometric_tables();
            assert_relative_eq!(g1.s0(1, 2), g0.s0(1, 2) * h, max_relative = 1e-12);
            assert_relative_eq!(g1.s1(0, 1, 2, 3), g0.s1(0, 1, 2, 3) / h, max_relative = 1e-12);
            assert_relative_eq!(g1.s2_123, g0.s2_123 / h.powi(3), max_relative = 1e-12);
        }
    }

    #[test]
    fn face_normals_point_outward() {
        let tet = random_tet(9);
        for l in 0..4 {
            let f = tet.face(l);
            let face_centroid = f.point(&tet, &[1.0 / 3.0; 3]);
            let inward = tet.centroid() - face_centroid;
            assert!(f.outward_normal.dot(&inward) < 0.0);
            assert!(f.area > 0.0);
        }
    }

    fn random_tet(seed: u64) -> Tetrahedron {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        crate::sampling::random_tetrahedron(&mut rng)
    }
}
