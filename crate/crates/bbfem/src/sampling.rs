//! Seeded random geometry used by the verification suite and tests.

use crate::geometry::Tetrahedron;
use nalgebra::Vector3;
use rand::Rng;

/// A random well-shaped tetrahedron with vertices in [-1,1]^3. Retries until
/// the volume is comfortably above the degeneracy tolerance.
pub fn random_tetrahedron<R: Rng>(rng: &mut R) -> Tetrahedron {
    loop {
        let v = [
            random_point(rng),
            random_point(rng),
            random_point(rng),
            random_point(rng),
        ];
        if let Ok(tet) = Tetrahedron::new(v) {
            if tet.volume() > 5e-3 {
                return tet;
            }
        }
    }
}

fn random_point<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
}

/// Uniformly distributed barycentric coordinates on the tetrahedron.
pub fn random_barycentric<R: Rng>(rng: &mut R) -> [f64; 4] {
    let mut g = [0.0f64; 4];
    let mut sum = 0.0;
    for gi in g.iter_mut() {
        *gi = -f64::ln(rng.random_range(1e-12..1.0));
        sum += *gi;
    }
    for gi in g.iter_mut() {
        *gi /= sum;
    }
    g
}

/// Uniform barycentric coordinates on a triangle.
pub fn random_face_barycentric<R: Rng>(rng: &mut R) -> [f64; 3] {
    let mut g = [0.0f64; 3];
    let mut sum = 0.0;
    for gi in g.iter_mut() {
        *gi = -f64::ln(rng.random_range(1e-12..1.0));
        sum += *gi;
    }
    for gi in g.iter_mut() {
        *gi /= sum;
    }
    g
}

/// Barycentric point at distance at least `margin` from every face, for
/// finite-difference stencils that must stay inside the element.
pub fn random_interior_barycentric<R: Rng>(rng: &mut R, margin: f64) -> [f64; 4] {
    loop {
        let lam = random_barycentric(rng);
        if lam.iter().all(|&l| l >= margin) {
            return lam;
        }
    }
}
