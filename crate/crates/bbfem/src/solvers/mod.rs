//! Linear algebra backends: the dense symmetric generalized eigensolver
//! pipeline, a dense symmetric-indefinite factorization, sparse CSR storage
//! with conjugate-gradient kernels, and L2 error evaluation.

pub mod eig;
pub mod ldlt;
pub mod mat;
pub mod sparse;

pub use eig::{generalized_sym_eig, EigenResult, GeneralizedEigOptions};
pub use ldlt::LdltFactor;
pub use mat::RowMat;
pub use sparse::CsrMatrix;

use crate::error::Result;
use crate::mesh::Mesh;
use crate::quadrature::stroud_rule;
use crate::system::DofMap;
use nalgebra::Vector3;
use std::collections::HashMap;

/// L2 distance between a discrete vector field and an analytic one,
/// integrated with a Stroud rule of the given points-per-axis.
pub fn l2_error_vector(
    mesh: &Mesh,
    map: &DofMap,
    coeffs: &[f64],
    exact: &dyn Fn(&Vector3<f64>) -> Vector3<f64>,
    q: usize,
) -> Result<f64> {
    let rule = stroud_rule(q)?;
    let npts = rule.points.len();
    // Basis values per Kuhn class (translates share them).
    let mut cache: HashMap<Option<u8>, Vec<f64>> = HashMap::new();
    let mut acc = 0.0f64;
    for (t, dofs) in map.element_dofs.iter().enumerate() {
        let tet = mesh.tet_geometry(t)?;
        let class = mesh.kuhn_class.as_ref().map(|c| c[t]);
        let key = class.map(Some).unwrap_or(None);
        let table = match (key, cache.get(&key)) {
            (Some(_), Some(hit)) => hit.clone(),
            _ => {
                let mut vals = vec![0.0f64; dofs.len() * npts * 3];
                for (p, d) in dofs.iter().enumerate() {
                    let f = crate::bases::realize(&d.desc, &tet)?;
                    let vb = f.value.as_vector();
                    for (k, lam) in rule.points.iter().enumerate() {
                        let v = vb.eval_bary(lam);
                        let base = (p * npts + k) * 3;
                        vals[base] = v.x;
                        vals[base + 1] = v.y;
                        vals[base + 2] = v.z;
                    }
                }
                if key.is_some() {
                    cache.insert(key, vals.clone());
                }
                vals
            }
        };
        for (k, lam) in rule.points.iter().enumerate() {
            let x = tet.point(lam);
            let mut uh = Vector3::zeros();
            for (p, d) in dofs.iter().enumerate() {
                let base = (p * npts + k) * 3;
                uh += Vector3::new(table[base], table[base + 1], table[base + 2])
                    * (d.sign * coeffs[d.global]);
            }
            let diff = uh - exact(&x);
            acc += rule.weights[k] * tet.volume() * diff.norm_squared();
        }
    }
    Ok(acc.sqrt())
}
