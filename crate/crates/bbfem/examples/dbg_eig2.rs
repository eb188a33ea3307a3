use bbfem::bases::Space;
use bbfem::mesh::Mesh;
use bbfem::system::{assemble_cavity_pencil, build_dof_map, essential_tangential_bc};
use bbfem::solvers::mat::RowMat;
use bbfem::solvers::eig::{cholesky_in_place, forward_solve, householder_tridiag};
use rayon::prelude::*;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let mesh = Mesh::cube(1, std::f64::consts::PI).unwrap();
    let map = build_dof_map(Space::HCurl1st, n, &mesh).unwrap();
    let bc = essential_tangential_bc(&map).unwrap();
    let (mut s, mut m) = assemble_cavity_pencil(&map, &mesh, &bc).unwrap();
    let nn = s.n;
    let scale: Vec<f64> = (0..nn).map(|i| 1.0 / m.rows[i][i].sqrt()).collect();
    for i in 0..nn { for j in 0..nn { let f = scale[i]*scale[j]; s.rows[i][j] *= f; m.rows[i][j] *= f; } }
    cholesky_in_place(&mut m).unwrap();
    let l = m;
    let (lmin, lmax) = (0..nn).fold((f64::MAX, 0.0f64), |(a, b), i| (a.min(l.rows[i][i]), b.max(l.rows[i][i])));
    println!("chol pivot range: {:.3e} .. {:.3e}  (kappa_M ~ {:.3e})", lmin, lmax, (lmax/lmin).powi(2));
    s.rows.par_iter_mut().for_each(|row| forward_solve(&l, row));
    s.transpose_in_place();
    s.rows.par_iter_mut().for_each(|row| forward_solve(&l, row));
    let bad = s.rows.iter().flat_map(|r| r.iter()).filter(|v| !v.is_finite()).count();
    println!("C max {:.3e}, nonfinite {}", s.max_abs(), bad);
    let (d, e) = householder_tridiag(&mut s);
    let badd = d.iter().chain(e.iter()).filter(|v| !v.is_finite()).count();
    println!("tridiag d max {:.3e} e max {:.3e} nonfinite {}", d.iter().fold(0.0f64, |a,&b| a.max(b.abs())), e.iter().fold(0.0f64, |a,&b| a.max(b.abs())), badd);
}
