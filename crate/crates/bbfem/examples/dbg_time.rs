use bbfem::bases::Space;
use bbfem::mesh::Mesh;
use bbfem::system::{assemble_cavity_pencil, build_dof_map, essential_tangential_bc};
use bbfem::solvers::eig::{generalized_sym_eig, GeneralizedEigOptions};
use std::time::Instant;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let mesh = Mesh::cube(1, std::f64::consts::PI).unwrap();
    let t0 = Instant::now();
    let map = build_dof_map(Space::HCurl1st, n, &mesh).unwrap();
    let bc = essential_tangential_bc(&map).unwrap();
    println!("dofs after bc: {}", bc.keep.len());
    let (s, m) = assemble_cavity_pencil(&map, &mesh, &bc).unwrap();
    println!("assemble: {:.1?}", t0.elapsed());
    let t1 = Instant::now();
    let opts = GeneralizedEigOptions { wanted: Some(11), zero_tol: 1e-8, want_vectors: false };
    let eig = generalized_sym_eig(s, m, &opts).unwrap();
    println!("eig: {:.1?}; first: {:?}", t1.elapsed(), &eig.eigenvalues[..3.min(eig.eigenvalues.len())]);
}
