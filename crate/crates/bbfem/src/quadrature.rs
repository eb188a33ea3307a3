//! Stroud conical quadrature on the tetrahedron: a tensor product of
//! Gauss-Jacobi rules mapped through the collapsed-coordinate transformation.

use crate::error::{invalid_arg, Result};
use crate::solvers::eig::tridiag_ql;
use crate::solvers::mat::RowMat;

/// A quadrature rule in barycentric coordinates. Weights sum to one, so an
/// integral over a tetrahedron is `|T| Σ w_i f(λ_i)`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
    pub exactness_degree: usize,
}

impl QuadratureRule {
    /// Integrates a barycentric integrand over a tetrahedron of the given
    /// volume.
    pub fn integrate(&self, volume: f64, mut f: impl FnMut(&[f64; 4]) -> f64) -> f64 {
        let mut acc = 0.0;
        for (p, w) in self.points.iter().zip(&self.weights) {
            acc += w * f(p);
        }
        acc * volume
    }
}

/// Gauss-Jacobi rule with weight `(1-x)^alpha` on [0,1], normalized so the
/// weights sum to `1/(alpha+1)` (the weight-function mass).
fn gauss_jacobi_01(q: usize, alpha: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if q == 0 {
        return Err(invalid_arg!("quadrature rule needs at least one point"));
    }
    let a = alpha as f64;
    let b = 0.0f64;
    let mut d = vec![0.0f64; q];
    let mut e = vec![0.0f64; q.saturating_sub(1)];
    d[0] = (b - a) / (a + b + 2.0);
    for k in 1..q {
        let kf = k as f64;
        let denom = (2.0 * kf + a + b) * (2.0 * kf + a + b + 2.0);
        d[k] = (b * b - a * a) / denom;
        let num = 4.0 * kf * (kf + a) * (kf + b) * (kf + a + b);
        let den = (2.0 * kf + a + b).powi(2) * (2.0 * kf + a + b + 1.0) * (2.0 * kf + a + b - 1.0);
        e[k - 1] = (num / den).sqrt();
    }
    let mut z = RowMat::identity(q);
    tridiag_ql(&mut d, &mut e, Some(&mut z))?;
    let mut pairs: Vec<(f64, f64)> = (0..q).map(|j| (d[j], z.rows[0][j])).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mass = 1.0 / (a + 1.0);
    let mut nodes = Vec::with_capacity(q);
    let mut weights = Vec::with_capacity(q);
    for (x, v0) in pairs {
        nodes.push(0.5 * (x + 1.0));
        weights.push(mass * v0 * v0);
    }
    Ok((nodes, weights))
}

/// Conical product rule with `q` points per axis. Exact for polynomials of
/// total degree `2q - 1`.
pub fn stroud_rule(q: usize) -> Result<QuadratureRule> {
    let (u1, w1) = gauss_jacobi_01(q, 2)?;
    let (u2, w2) = gauss_jacobi_01(q, 1)?;
    let (u3, w3) = gauss_jacobi_01(q, 0)?;
    let mut points = Vec::with_capacity(q * q * q);
    let mut weights = Vec::with_capacity(q * q * q);
    for i in 0..q {
        for j in 0..q {
            for k in 0..q {
                let l1 = u1[i];
                let l2 = u2[j] * (1.0 - u1[i]);
                let l3 = u3[k] * (1.0 - u1[i]) * (1.0 - u2[j]);
                let l4 = 1.0 - l1 - l2 - l3;
                points.push([l1, l2, l3, l4]);
                weights.push(6.0 * w1[i] * w2[j] * w3[k]);
            }
        }
    }
    Ok(QuadratureRule {
        points,
        weights,
        exactness_degree: 2 * q - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::{enumerate, mass_coeff_f64, IndexSetKind, MultiIndex};
    use crate::bases::bernstein_value;
    use approx::assert_relative_eq;

    #[test]
    fn one_point_rule_is_exact_for_linears() {
        let rule = stroud_rule(1).unwrap();
        assert_eq!(rule.points.len(), 1);
        assert_relative_eq!(rule.weights[0], 1.0, max_relative = 1e-14);
        // A one-point rule exact through degree 2q-1 = 1 must integrate all
        // barycentric coordinates exactly, which forces the centroid.
        for k in 0..4 {
            assert_relative_eq!(rule.points[0][k], 0.25, max_relative = 1e-12);
        }
        let one = rule.integrate(1.0 / 6.0, |_| 1.0);
        assert_relative_eq!(one, 1.0 / 6.0, max_relative = 1e-14);
    }

    #[test]
    fn degree_three_bernstein_integrals_match_mass_coefficients() {
        let rule = stroud_rule(2).unwrap();
        let zero = MultiIndex::new([0, 0, 0, 0]);
        for a in enumerate(IndexSetKind::Full(3)).unwrap() {
            let exact = mass_coeff_f64(&a, &zero);
            let got = rule.integrate(1.0, |lam| bernstein_value(&a, lam));
            assert_relative_eq!(got, exact, max_relative = 1e-14, epsilon = 1e-16);
        }
    }

    #[test]
    fn high_order_monomial_is_exact() {
        // ∫_T λ₁⁴ λ₂³ λ₃² dx = |T| 3! 4!3!2! / 12! on the reference element.
        let rule = stroud_rule(5).unwrap();
        let exact = 6.0 * 24.0 * 6.0 * 2.0 / 479001600.0;
        let got = rule.integrate(1.0, |l| l[0].powi(4) * l[1].powi(3) * l[2].powi(2));
        assert_relative_eq!(got, exact, max_relative = 1e-13);
    }

    #[test]
    fn weights_are_positive_and_sum_to_one() {
        for q in 1..=8 {
            let rule = stroud_rule(q).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            let sum: f64 = rule.weights.iter().sum();
            assert_relative_eq!(sum, 1.0, max_relative = 1e-13);
            assert_eq!(rule.exactness_degree, 2 * q - 1);
        }
    }
}
