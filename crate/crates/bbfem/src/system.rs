//! Global degrees of freedom, assembly, essential boundary conditions,
//! static condensation, and the reduced divergence-free pairing.
//!
//! Interface dofs are keyed to mesh entities with a global convention (edge
//! tangents run from lower to higher vertex id, faces are ordered by
//! ascending ids, face normals point out of the first incident element);
//! each element records the sign and index permutation that reconciles its
//! local basis with that convention.

use crate::bases::{BasisDescriptor, Entity, Family, Space};
use crate::combinatorics::{Edge, Face, MultiIndex};
use crate::error::{invalid_arg, Error, Result};
use crate::geometry::Tetrahedron;
use crate::local_assembly::{self, CurlFn, DivFn, HDivKernels, MatrixKind};
use crate::mesh::{orient, Mesh};
use crate::quadrature::{stroud_rule, QuadratureRule};
use crate::solvers::ldlt::LdltFactor;
use crate::solvers::mat::RowMat;
use crate::solvers::sparse::{minres, norm2, BandedCholesky, BlockDiagPrecond, CsrMatrix};
use nalgebra::Vector3;
use std::collections::HashMap;
use std::rc::Rc;

/// One element-local basis function wired to a global dof.
#[derive(Clone, Debug)]
pub struct LocalDof {
    pub desc: BasisDescriptor,
    pub global: usize,
    pub sign: f64,
    /// Whether static condensation may eliminate this dof (element-interior).
    pub condensable: bool,
}

/// Mesh-entity-keyed global numbering for one space.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub space: Space,
    pub n: usize,
    pub n_dofs: usize,
    pub element_dofs: Vec<Vec<LocalDof>>,
    /// Whether the owning entity lies on the boundary.
    pub dof_boundary: Vec<bool>,
    /// Contiguous global ranges per face (H(div)); preconditioner blocks.
    pub face_ranges: Vec<(usize, usize)>,
    /// Offsets used by the discrete gradient: per-edge, per-face, per-cell
    /// starts, plus per-vertex dofs for H1.
    pub edge_offset: Vec<usize>,
    pub face_offset: Vec<usize>,
    pub cell_offset: Vec<usize>,
}

/// All 3-component multi-indices of the given degree, lexicographic.
fn face_indices(deg: usize) -> Vec<[u16; 3]> {
    let mut out = Vec::new();
    for a in 0..=deg {
        for b in 0..=deg - a {
            out.push([a as u16, b as u16, (deg - a - b) as u16]);
        }
    }
    out
}

/// Interior (all-positive) 3-component indices, lexicographic.
fn face_interior_indices(deg: usize) -> Vec<[u16; 3]> {
    face_indices(deg)
        .into_iter()
        .filter(|b| b.iter().all(|&x| x > 0))
        .collect()
}

/// Lexicographically first member of `face_indices(deg)`, the globally fixed
/// removed index for primed face sets.
fn face_lattice_removed(deg: usize) -> [u16; 3] {
    [0, 0, deg as u16]
}

fn local_alpha_from_face(
    lverts: [usize; 3],
    perm: [usize; 3],
    beta: &[u16; 3],
) -> MultiIndex {
    let mut entries = [0u16; 4];
    for slot in 0..3 {
        entries[lverts[slot]] = beta[perm[slot]];
    }
    MultiIndex::new(entries)
}

pub fn build_dof_map(space: Space, n: usize, mesh: &Mesh) -> Result<DofMap> {
    match space {
        Space::H1 => build_h1_map(n, mesh),
        Space::HCurl1st => build_hcurl_map(n, mesh),
        Space::HDivRT => build_hdiv_map(n, mesh),
        _ => Err(Error::Unsupported(format!(
            "no global dof map for {space:?}"
        ))),
    }
}

fn build_h1_map(n: usize, mesh: &Mesh) -> Result<DofMap> {
    if n < 1 {
        return Err(invalid_arg!("H1 map needs degree >= 1"));
    }
    let conv = orient(mesh)?;
    let per_edge = n - 1;
    let per_face = face_interior_indices(n).len();
    let per_cell = crate::combinatorics::enumerate(crate::combinatorics::IndexSetKind::Interior(
        n,
    ))?
    .len();
    let nv = mesh.vertices.len();
    let edge_offset: Vec<usize> = (0..mesh.edges.len()).map(|e| nv + e * per_edge).collect();
    let face_base = nv + mesh.edges.len() * per_edge;
    let face_offset: Vec<usize> = (0..mesh.faces.len())
        .map(|f| face_base + f * per_face)
        .collect();
    let cell_base = face_base + mesh.faces.len() * per_face;
    let cell_offset: Vec<usize> = (0..mesh.tets.len())
        .map(|t| cell_base + t * per_cell)
        .collect();
    let n_dofs = cell_base + mesh.tets.len() * per_cell;

    let mut dof_boundary = vec![false; n_dofs];
    for v in 0..nv {
        dof_boundary[v] = mesh.boundary_vertex[v];
    }
    for (e, &b) in mesh.boundary_edge.iter().enumerate() {
        for k in 0..per_edge {
            dof_boundary[edge_offset[e] + k] = b;
        }
    }
    for (f, &b) in mesh.boundary_face.iter().enumerate() {
        for k in 0..per_face {
            dof_boundary[face_offset[f] + k] = b;
        }
    }

    let face_bubbles = face_interior_indices(n);
    let interior =
        crate::combinatorics::enumerate(crate::combinatorics::IndexSetKind::Interior(n))?;
    let mut element_dofs = Vec::with_capacity(mesh.tets.len());
    for (t, ids) in mesh.tets.iter().enumerate() {
        let mut dofs = Vec::new();
        let mk = |alpha: MultiIndex, global: usize| LocalDof {
            desc: BasisDescriptor {
                space: Space::H1,
                n,
                family: Family::Type1,
                entity: Entity::Cell,
                alpha: Some(alpha),
                aux: None,
            },
            global,
            sign: 1.0,
            condensable: false,
        };
        for v in 0..4 {
            let mut entries = [0u16; 4];
            entries[v] = n as u16;
            dofs.push(mk(MultiIndex::new(entries), ids[v]));
        }
        for (k, e) in Edge::all().iter().enumerate() {
            let (i, j) = e.ends();
            let ge = mesh.tet_edges[t][k];
            let (lo_local, hi_local) = if ids[i] < ids[j] { (i, j) } else { (j, i) };
            for a in 1..n {
                // a = exponent at the lower-id end.
                let mut entries = [0u16; 4];
                entries[lo_local] = a as u16;
                entries[hi_local] = (n - a) as u16;
                dofs.push(mk(MultiIndex::new(entries), edge_offset[ge] + a - 1));
            }
        }
        for l in 0..4 {
            let gf = mesh.tet_faces[t][l];
            let lverts = Face(l).vertices();
            let perm = conv.face_perm[t][l];
            for (idx, beta) in face_bubbles.iter().enumerate() {
                let alpha = local_alpha_from_face(lverts, perm, beta);
                dofs.push(mk(alpha, face_offset[gf] + idx));
            }
        }
        for (idx, alpha) in interior.iter().enumerate() {
            dofs.push(mk(*alpha, cell_offset[t] + idx));
        }
        element_dofs.push(dofs);
    }

    Ok(DofMap {
        space: Space::H1,
        n,
        n_dofs,
        element_dofs,
        dof_boundary,
        face_ranges: Vec::new(),
        edge_offset,
        face_offset,
        cell_offset,
    })
}

fn build_hcurl_map(n: usize, mesh: &Mesh) -> Result<DofMap> {
    let conv = orient(mesh)?;
    let per_edge = 1 + n;
    let grad_face = face_interior_indices(n + 1).len(); // C(n,2)
    let lattice: Vec<[u16; 3]> = face_indices(n)
        .into_iter()
        .filter(|b| *b != face_lattice_removed(n))
        .collect();
    let per_face = grad_face + lattice.len();
    let grad_cell =
        crate::combinatorics::enumerate(crate::combinatorics::IndexSetKind::Interior(n + 1))?;
    let bubbles = cell_bubble_list(n + 2)?;
    let per_cell = grad_cell.len() + bubbles.len();

    let edge_offset: Vec<usize> = (0..mesh.edges.len()).map(|e| e * per_edge).collect();
    let face_base = mesh.edges.len() * per_edge;
    let face_offset: Vec<usize> = (0..mesh.faces.len())
        .map(|f| face_base + f * per_face)
        .collect();
    let cell_base = face_base + mesh.faces.len() * per_face;
    let cell_offset: Vec<usize> = (0..mesh.tets.len())
        .map(|t| cell_base + t * per_cell)
        .collect();
    let n_dofs = cell_base + mesh.tets.len() * per_cell;

    let mut dof_boundary = vec![false; n_dofs];
    for (e, &b) in mesh.boundary_edge.iter().enumerate() {
        for k in 0..per_edge {
            dof_boundary[edge_offset[e] + k] = b;
        }
    }
    for (f, &b) in mesh.boundary_face.iter().enumerate() {
        for k in 0..per_face {
            dof_boundary[face_offset[f] + k] = b;
        }
    }

    let mut element_dofs = Vec::with_capacity(mesh.tets.len());
    for (t, ids) in mesh.tets.iter().enumerate() {
        let mut dofs = Vec::new();
        let mk = |family: Family,
                  entity: Entity,
                  alpha: Option<MultiIndex>,
                  aux: Option<usize>,
                  global: usize,
                  sign: f64| LocalDof {
            desc: BasisDescriptor {
                space: Space::HCurl1st,
                n,
                family,
                entity,
                alpha,
                aux,
            },
            global,
            sign,
            condensable: false,
        };
        for (k, e) in Edge::all().iter().enumerate() {
            let (i, j) = e.ends();
            let ge = mesh.tet_edges[t][k];
            dofs.push(mk(
                Family::Type1,
                Entity::Edge(*e),
                None,
                None,
                edge_offset[ge],
                conv.edge_sign[t][k],
            ));
            let (lo_local, hi_local) = if ids[i] < ids[j] { (i, j) } else { (j, i) };
            for a in 1..=n {
                let mut entries = [0u16; 4];
                entries[lo_local] = a as u16;
                entries[hi_local] = (n + 1 - a) as u16;
                dofs.push(mk(
                    Family::Type2,
                    Entity::Edge(*e),
                    Some(MultiIndex::new(entries)),
                    None,
                    edge_offset[ge] + a,
                    1.0,
                ));
            }
        }
        let grad_face_idx = face_interior_indices(n + 1);
        for l in 0..4 {
            let gf = mesh.tet_faces[t][l];
            let lverts = Face(l).vertices();
            let perm = conv.face_perm[t][l];
            for (idx, beta) in grad_face_idx.iter().enumerate() {
                let alpha = local_alpha_from_face(lverts, perm, beta);
                dofs.push(mk(
                    Family::Type2,
                    Entity::Face(l),
                    Some(alpha),
                    None,
                    face_offset[gf] + idx,
                    1.0,
                ));
            }
            for (idx, beta) in lattice.iter().enumerate() {
                let alpha = local_alpha_from_face(lverts, perm, beta);
                dofs.push(mk(
                    Family::Type3,
                    Entity::Face(l),
                    Some(alpha),
                    None,
                    face_offset[gf] + grad_face + idx,
                    conv.face_parity[t][l],
                ));
            }
        }
        for (idx, alpha) in grad_cell.iter().enumerate() {
            dofs.push(mk(
                Family::Type2,
                Entity::Cell,
                Some(*alpha),
                None,
                cell_offset[t] + idx,
                1.0,
            ));
        }
        for (idx, (ell, alpha)) in bubbles.iter().enumerate() {
            dofs.push(mk(
                Family::Type4,
                Entity::Cell,
                Some(*alpha),
                Some(*ell),
                cell_offset[t] + grad_cell.len() + idx,
                1.0,
            ));
        }
        element_dofs.push(dofs);
    }

    Ok(DofMap {
        space: Space::HCurl1st,
        n,
        n_dofs,
        element_dofs,
        dof_boundary,
        face_ranges: Vec::new(),
        edge_offset,
        face_offset,
        cell_offset,
    })
}

/// Cell bubble list in (alpha lex, direction) order for interior degree
/// `bubble_deg`.
fn cell_bubble_list(bubble_deg: usize) -> Result<Vec<(usize, MultiIndex)>> {
    let mut out = Vec::new();
    for alpha in crate::combinatorics::enumerate(crate::combinatorics::IndexSetKind::Interior(
        bubble_deg,
    ))? {
        for ell in 0..3usize {
            if ell == 2 && alpha.entry(2) != 1 {
                continue;
            }
            out.push((ell, alpha));
        }
    }
    Ok(out)
}

fn build_hdiv_map(n: usize, mesh: &Mesh) -> Result<DofMap> {
    let conv = orient(mesh)?;
    let lattice: Vec<[u16; 3]> = face_indices(n)
        .into_iter()
        .filter(|b| *b != face_lattice_removed(n))
        .collect();
    let per_face = 1 + lattice.len(); // = C(n+2, 2)
    let bubbles = cell_bubble_list(n + 2)?;
    let removed = crate::combinatorics::lex_first(crate::combinatorics::IndexSetKind::Full(n))?;
    let xc: Vec<MultiIndex> =
        crate::combinatorics::enumerate(crate::combinatorics::IndexSetKind::FullPrimed(
            n, removed,
        ))?;
    let per_cell = bubbles.len() + xc.len();

    let face_offset: Vec<usize> = (0..mesh.faces.len()).map(|f| f * per_face).collect();
    let cell_base = mesh.faces.len() * per_face;
    let cell_offset: Vec<usize> = (0..mesh.tets.len())
        .map(|t| cell_base + t * per_cell)
        .collect();
    let n_dofs = cell_base + mesh.tets.len() * per_cell;
    let face_ranges: Vec<(usize, usize)> = (0..mesh.faces.len())
        .map(|f| (face_offset[f], per_face))
        .collect();

    let mut dof_boundary = vec![false; n_dofs];
    for (f, &b) in mesh.boundary_face.iter().enumerate() {
        for k in 0..per_face {
            dof_boundary[face_offset[f] + k] = b;
        }
    }

    let mut element_dofs = Vec::with_capacity(mesh.tets.len());
    for t in 0..mesh.tets.len() {
        let tet = mesh.tet_geometry(t)?;
        let mut dofs = Vec::new();
        let mk = |family: Family,
                  entity: Entity,
                  alpha: Option<MultiIndex>,
                  aux: Option<usize>,
                  global: usize,
                  sign: f64,
                  condensable: bool| LocalDof {
            desc: BasisDescriptor {
                space: Space::HDivRT,
                n,
                family,
                entity,
                alpha,
                aux,
            },
            global,
            sign,
            condensable,
        };
        for l in 0..4 {
            let gf = mesh.tet_faces[t][l];
            let lverts = Face(l).vertices();
            let perm = conv.face_perm[t][l];
            // The lowest-order element's constant normal trace on its own
            // face fixes the sign against the global (first-incident
            // outward) normal convention.
            let (chi, _) = crate::bases::hdiv_face_element(&tet, l)?;
            let facegeo = tet.face(l);
            let centroid = facegeo.point(&tet, &[1.0 / 3.0; 3]);
            let trace = chi.eval(&tet, &centroid).dot(&facegeo.outward_normal);
            let sign_t1 = trace.signum() * conv.face_outward[t][l];
            dofs.push(mk(
                Family::Type1,
                Entity::Face(l),
                None,
                None,
                face_offset[gf],
                sign_t1,
                false,
            ));
            // The n-component of curl(Xa) is the surface curl of the
            // tangential trace w.r.t. the same fixed normal, so only the
            // vertex-permutation parity enters here.
            let sign_t2 = conv.face_parity[t][l];
            for (idx, beta) in lattice.iter().enumerate() {
                let alpha = local_alpha_from_face(lverts, perm, beta);
                dofs.push(mk(
                    Family::Type2,
                    Entity::Face(l),
                    Some(alpha),
                    None,
                    face_offset[gf] + 1 + idx,
                    sign_t2,
                    false,
                ));
            }
        }
        for (idx, (ell, alpha)) in bubbles.iter().enumerate() {
            dofs.push(mk(
                Family::Type3,
                Entity::Cell,
                Some(*alpha),
                Some(*ell),
                cell_offset[t] + idx,
                1.0,
                true,
            ));
        }
        for (idx, alpha) in xc.iter().enumerate() {
            dofs.push(mk(
                Family::Type4,
                Entity::Cell,
                Some(*alpha),
                None,
                cell_offset[t] + bubbles.len() + idx,
                1.0,
                true,
            ));
        }
        element_dofs.push(dofs);
    }

    Ok(DofMap {
        space: Space::HDivRT,
        n,
        n_dofs,
        element_dofs,
        dof_boundary,
        face_ranges,
        edge_offset: Vec::new(),
        face_offset,
        cell_offset,
    })
}

/// Drops the non-divergence-free Type 4 velocity dofs, producing the reduced
/// space paired with piecewise constants.
pub fn reduced_divfree_space(map: &DofMap) -> Result<DofMap> {
    if map.space != Space::HDivRT {
        return Err(invalid_arg!("reduced space derives from the RT map"));
    }
    // Collect kept globals in ascending order and renumber.
    let mut keep = vec![false; map.n_dofs];
    for dofs in &map.element_dofs {
        for d in dofs {
            if d.desc.family != Family::Type4 {
                keep[d.global] = true;
            }
        }
    }
    let mut new_of_old = vec![usize::MAX; map.n_dofs];
    let mut count = 0;
    for (g, &k) in keep.iter().enumerate() {
        if k {
            new_of_old[g] = count;
            count += 1;
        }
    }
    let element_dofs: Vec<Vec<LocalDof>> = map
        .element_dofs
        .iter()
        .map(|dofs| {
            dofs.iter()
                .filter(|d| d.desc.family != Family::Type4)
                .map(|d| LocalDof {
                    desc: d.desc.clone(),
                    global: new_of_old[d.global],
                    sign: d.sign,
                    condensable: d.condensable,
                })
                .collect()
        })
        .collect();
    let mut dof_boundary = vec![false; count];
    for (g, &k) in keep.iter().enumerate() {
        if k {
            dof_boundary[new_of_old[g]] = map.dof_boundary[g];
        }
    }
    let face_ranges = map
        .face_ranges
        .iter()
        .map(|&(s, len)| (new_of_old[s], len))
        .collect();
    Ok(DofMap {
        space: map.space,
        n: map.n,
        n_dofs: count,
        element_dofs,
        dof_boundary,
        face_ranges,
        edge_offset: Vec::new(),
        face_offset: map.face_offset.clone(),
        cell_offset: Vec::new(),
    })
}

/// Sparse global Gram/stiffness assembly `Σ PᵀAP` over the map's elements.
pub fn assemble_csr(map: &DofMap, mesh: &Mesh, kind: MatrixKind) -> Result<CsrMatrix> {
    let mut triplets = Vec::new();
    for (t, dofs) in map.element_dofs.iter().enumerate() {
        let tet = mesh.tet_geometry(t)?;
        let g = tet.geometric_tables();
        let local = local_matrix_for(map.space, map.n, &g, dofs, kind)?;
        for (p, dp) in dofs.iter().enumerate() {
            for (q, dq) in dofs.iter().enumerate() {
                let v = dp.sign * dq.sign * local[(p, q)];
                if v != 0.0 {
                    triplets.push((dp.global, dq.global, v));
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(map.n_dofs, map.n_dofs, triplets))
}

fn local_matrix_for(
    space: Space,
    n: usize,
    g: &crate::geometry::GeometricTables,
    dofs: &[LocalDof],
    kind: MatrixKind,
) -> Result<nalgebra::DMatrix<f64>> {
    match space {
        Space::HCurl1st => {
            let fns: Vec<CurlFn> = dofs
                .iter()
                .map(|d| CurlFn::from_descriptor(&d.desc))
                .collect::<Result<_>>()?;
            Ok(local_assembly::hcurl_matrix_for(n, g, &fns, kind))
        }
        Space::HDivRT => {
            let fns: Vec<DivFn> = dofs
                .iter()
                .map(|d| DivFn::from_descriptor(&d.desc))
                .collect::<Result<_>>()?;
            Ok(local_assembly::hdiv_matrix_for(n, g, &fns, kind))
        }
        Space::H1 => {
            let (m, s) = local_assembly::h1_matrices_for(
                n,
                g,
                &dofs
                    .iter()
                    .map(|d| d.desc.alpha.unwrap())
                    .collect::<Vec<_>>(),
            );
            Ok(match kind {
                MatrixKind::Mass => m,
                MatrixKind::Stiffness => s,
            })
        }
        _ => Err(Error::Unsupported(format!("assembly for {space:?}"))),
    }
}

/// Constrained index set after removing dofs with nonvanishing tangential
/// trace on the boundary.
#[derive(Clone, Debug)]
pub struct Constrained {
    pub keep: Vec<usize>,
    pub reduced_of_full: Vec<Option<usize>>,
}

pub fn essential_tangential_bc(map: &DofMap) -> Result<Constrained> {
    if map.space != Space::HCurl1st {
        return Err(invalid_arg!(
            "tangential boundary conditions apply to the H(curl) space"
        ));
    }
    let mut keep = Vec::new();
    let mut reduced_of_full = vec![None; map.n_dofs];
    for g in 0..map.n_dofs {
        if !map.dof_boundary[g] {
            reduced_of_full[g] = Some(keep.len());
            keep.push(g);
        }
    }
    Ok(Constrained {
        keep,
        reduced_of_full,
    })
}

/// Dense assembly of the constrained cavity pencil (stiffness, mass).
pub fn assemble_cavity_pencil(
    map: &DofMap,
    mesh: &Mesh,
    bc: &Constrained,
) -> Result<(RowMat, RowMat)> {
    let nr = bc.keep.len();
    let mut s = RowMat::zeros(nr);
    let mut m = RowMat::zeros(nr);
    for (t, dofs) in map.element_dofs.iter().enumerate() {
        let tet = mesh.tet_geometry(t)?;
        let g = tet.geometric_tables();
        let fns: Vec<CurlFn> = dofs
            .iter()
            .map(|d| CurlFn::from_descriptor(&d.desc))
            .collect::<Result<_>>()?;
        let ls = local_assembly::hcurl_matrix_for(map.n, &g, &fns, MatrixKind::Stiffness);
        let lm = local_assembly::hcurl_matrix_for(map.n, &g, &fns, MatrixKind::Mass);
        for (p, dp) in dofs.iter().enumerate() {
            let Some(rp) = bc.reduced_of_full[dp.global] else {
                continue;
            };
            for (q, dq) in dofs.iter().enumerate() {
                let Some(rq) = bc.reduced_of_full[dq.global] else {
                    continue;
                };
                let f = dp.sign * dq.sign;
                s.rows[rp][rq] += f * ls[(p, q)];
                m.rows[rp][rq] += f * lm[(p, q)];
            }
        }
    }
    Ok((s, m))
}

/// The discrete gradient matrix `G` mapping H1 coefficients of degree `n+1`
/// to H(curl) coefficients of degree `n`: gradients of the global Bernstein
/// basis expand into Whitney functions (vertex basis) plus matching Type 2
/// functions with vertex corrections.
pub fn discrete_gradient(mesh: &Mesh, h1: &DofMap, hcurl: &DofMap) -> Result<CsrMatrix> {
    if h1.n != hcurl.n + 1 {
        return Err(invalid_arg!("gradient needs H1 degree = H(curl) degree + 1"));
    }
    let np1 = (hcurl.n + 1) as f64;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for (e, edge) in mesh.edges.iter().enumerate() {
        let (lo, hi) = (edge[0], edge[1]);
        let w = hcurl.edge_offset[e];
        triplets.push((w, hi, 1.0));
        triplets.push((w, lo, -1.0));
        for a in 1..=hcurl.n {
            let row = hcurl.edge_offset[e] + a;
            triplets.push((row, h1.edge_offset[e] + a - 1, 1.0));
            triplets.push((row, lo, -(a as f64) / np1));
            triplets.push((row, hi, -(np1 - a as f64) / np1));
        }
    }
    let face_bubbles = face_interior_indices(hcurl.n + 1);
    for (f, face) in mesh.faces.iter().enumerate() {
        for (idx, beta) in face_bubbles.iter().enumerate() {
            let row = hcurl.face_offset[f] + idx;
            triplets.push((row, h1.face_offset[f] + idx, 1.0));
            for t in 0..3 {
                triplets.push((row, face[t], -(beta[t] as f64) / np1));
            }
        }
    }
    let interior =
        crate::combinatorics::enumerate(crate::combinatorics::IndexSetKind::Interior(h1.n))?;
    for (t, ids) in mesh.tets.iter().enumerate() {
        for (idx, alpha) in interior.iter().enumerate() {
            let row = hcurl.cell_offset[t] + idx;
            triplets.push((row, h1.cell_offset[t] + idx, 1.0));
            for k in 0..4 {
                triplets.push((row, ids[k], -(alpha.entry(k) as f64) / np1));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(hcurl.n_dofs, h1.n_dofs, triplets))
}

/// Elementwise pressure dof: the constant or one average-zero divergence
/// bubble.
#[derive(Clone, Debug)]
pub enum PressureKind {
    Constant,
    Bubble(MultiIndex),
}

#[derive(Clone, Debug)]
pub struct PressureDof {
    pub global: usize,
    pub kind: PressureKind,
}

/// The discontinuous pressure space: per element `{1} ∪ {div Xcⁿ_α}` (only
/// the constant when `reduced`).
#[derive(Clone, Debug)]
pub struct PressureMap {
    pub n: usize,
    pub n_dofs: usize,
    pub element_dofs: Vec<Vec<PressureDof>>,
    pub reduced: bool,
}

pub fn pressure_map(n: usize, mesh: &Mesh, reduced: bool) -> Result<PressureMap> {
    let removed = crate::combinatorics::lex_first(crate::combinatorics::IndexSetKind::Full(n))?;
    let bubbles: Vec<MultiIndex> = if reduced {
        Vec::new()
    } else {
        crate::combinatorics::enumerate(crate::combinatorics::IndexSetKind::FullPrimed(
            n, removed,
        ))?
    };
    let per_cell = 1 + bubbles.len();
    let mut element_dofs = Vec::with_capacity(mesh.tets.len());
    for t in 0..mesh.tets.len() {
        let base = t * per_cell;
        let mut dofs = vec![PressureDof {
            global: base,
            kind: PressureKind::Constant,
        }];
        for (k, alpha) in bubbles.iter().enumerate() {
            dofs.push(PressureDof {
                global: base + 1 + k,
                kind: PressureKind::Bubble(*alpha),
            });
        }
        element_dofs.push(dofs);
    }
    Ok(PressureMap {
        n,
        n_dofs: mesh.tets.len() * per_cell,
        element_dofs,
        reduced,
    })
}

/// Right-hand-side data for the mixed problems.
pub enum MixedRhs<'a> {
    /// Poisson source: rows `(f, w)` against the pressure space.
    PressureData(&'a dyn Fn(&Vector3<f64>) -> f64),
    /// Vector source: rows `(f, v)` against the velocity space.
    VelocityData(&'a dyn Fn(&Vector3<f64>) -> Vector3<f64>),
}

/// Per-element (per Kuhn class) local data of the mixed saddle system.
pub struct MixedLocal {
    /// Full local symmetric matrix [[M, −Dᵀ],[−D, 0]] in local dof order
    /// (velocity first, then pressure).
    pub a: Vec<Vec<f64>>,
    pub interior: Vec<usize>,
    pub interface: Vec<usize>,
    pub a_ii: Option<LdltFactor>,
    /// interface × interior coupling.
    pub a_gi: Vec<Vec<f64>>,
    /// Condensed interface block.
    pub s_gg: Vec<Vec<f64>>,
    /// Velocity basis values at the rhs quadrature points (nv × npts × 3).
    pub vel_vals: Vec<f64>,
    /// Pressure basis values at the rhs quadrature points (np × npts).
    pub prs_vals: Vec<f64>,
}

/// The assembled mixed system for `RT_n × P_n` (or the reduced pair).
pub struct MixedSystem {
    pub vel: DofMap,
    pub prs: PressureMap,
    pub rule: QuadratureRule,
    pub locals: Vec<Rc<MixedLocal>>,
    /// Global right-hand side, velocity dofs then pressure dofs.
    pub rhs: Vec<f64>,
    /// Element-local right-hand sides in local dof order.
    pub elem_rhs: Vec<Vec<f64>>,
}

impl MixedSystem {
    pub fn assemble(mesh: &Mesh, n: usize, reduced: bool, data: &MixedRhs) -> Result<Self> {
        let vel_full = build_dof_map(Space::HDivRT, n, mesh)?;
        let vel = if reduced {
            reduced_divfree_space(&vel_full)?
        } else {
            vel_full
        };
        let prs = pressure_map(n, mesh, reduced)?;
        let rule = stroud_rule(n + 3)?;

        let mut cache: HashMap<u8, Rc<MixedLocal>> = HashMap::new();
        let mut locals = Vec::with_capacity(mesh.tets.len());
        for t in 0..mesh.tets.len() {
            let class = mesh.kuhn_class.as_ref().map(|c| c[t]);
            if let Some(c) = class {
                if let Some(hit) = cache.get(&c) {
                    locals.push(hit.clone());
                    continue;
                }
            }
            let tet = mesh.tet_geometry(t)?;
            let built = Rc::new(build_mixed_local(
                &tet,
                n,
                &vel.element_dofs[t],
                &prs.element_dofs[t],
                &rule,
            )?);
            if let Some(c) = class {
                cache.insert(c, built.clone());
            }
            locals.push(built);
        }

        let nv = vel.n_dofs;
        let np = prs.n_dofs;
        let mut rhs = vec![0.0; nv + np];
        let mut elem_rhs = Vec::with_capacity(mesh.tets.len());
        for (t, local) in locals.iter().enumerate() {
            let tet = mesh.tet_geometry(t)?;
            let vdofs = &vel.element_dofs[t];
            let pdofs = &prs.element_dofs[t];
            let npts = rule.points.len();
            let nvl = vdofs.len();
            let npl = pdofs.len();
            let mut le = vec![0.0f64; nvl + npl];
            match data {
                MixedRhs::VelocityData(f) => {
                    for (k, lam) in rule.points.iter().enumerate() {
                        let x = tet.point(lam);
                        let fx = f(&x);
                        let w = rule.weights[k] * tet.volume();
                        for p in 0..nvl {
                            let base = (p * npts + k) * 3;
                            le[p] += w
                                * (local.vel_vals[base] * fx.x
                                    + local.vel_vals[base + 1] * fx.y
                                    + local.vel_vals[base + 2] * fx.z);
                        }
                    }
                }
                MixedRhs::PressureData(f) => {
                    // Second equation is assembled negated: −(div u, w) rows,
                    // so the data lands as −(f, w).
                    for (k, lam) in rule.points.iter().enumerate() {
                        let x = tet.point(lam);
                        let fx = f(&x);
                        let w = rule.weights[k] * tet.volume();
                        for p in 0..npl {
                            le[nvl + p] -= w * fx * local.prs_vals[p * npts + k];
                        }
                    }
                }
            }
            for (p, d) in vdofs.iter().enumerate() {
                rhs[d.global] += d.sign * le[p];
            }
            for (p, d) in pdofs.iter().enumerate() {
                rhs[nv + d.global] += le[nvl + p];
            }
            elem_rhs.push(le);
        }

        Ok(MixedSystem {
            vel,
            prs,
            rule,
            locals,
            rhs,
            elem_rhs,
        })
    }

    pub fn full_size(&self) -> usize {
        self.vel.n_dofs + self.prs.n_dofs
    }

    pub fn condensed_size(&self) -> usize {
        let vel_interface = self
            .vel
            .face_ranges
            .iter()
            .map(|&(_, len)| len)
            .sum::<usize>();
        vel_interface + self.prs.element_dofs.len()
    }

    /// Count of element-local (condensable) dofs.
    pub fn local_dof_count(&self) -> usize {
        self.full_size() - self.condensed_size()
    }

    fn full_triplets(&self) -> Vec<(usize, usize, f64)> {
        let nv = self.vel.n_dofs;
        let mut triplets = Vec::new();
        for (t, local) in self.locals.iter().enumerate() {
            let vdofs = &self.vel.element_dofs[t];
            let pdofs = &self.prs.element_dofs[t];
            let nvl = vdofs.len();
            let gidx = |p: usize| -> (usize, f64) {
                if p < nvl {
                    (vdofs[p].global, vdofs[p].sign)
                } else {
                    (nv + pdofs[p - nvl].global, 1.0)
                }
            };
            let dim = nvl + pdofs.len();
            for p in 0..dim {
                let (gp, sp) = gidx(p);
                for q in 0..dim {
                    let v = local.a[p][q];
                    if v != 0.0 {
                        let (gq, sq) = gidx(q);
                        triplets.push((gp, gq, sp * sq * v));
                    }
                }
            }
        }
        triplets
    }

    /// Direct dense solve of the full saddle system (for verification at
    /// small sizes). Returns the full coefficient vector.
    pub fn solve_full_dense(&self) -> Result<Vec<f64>> {
        let ntot = self.full_size();
        let mut a = RowMat::zeros(ntot);
        for (r, c, v) in self.full_triplets() {
            a.rows[r][c] += v;
        }
        let f = LdltFactor::new(a)?;
        Ok(f.solve(&self.rhs))
    }

    /// Schur-complement elimination of the element-interior dofs.
    pub fn condense(&self) -> Result<CondensedSystem> {
        let nv = self.vel.n_dofs;
        let ntot = self.full_size();
        // Interface = velocity face dofs plus pressure constants, in global
        // order (velocity first).
        let mut is_interface = vec![false; ntot];
        for (t, vdofs) in self.vel.element_dofs.iter().enumerate() {
            for d in vdofs {
                if !d.condensable {
                    is_interface[d.global] = true;
                }
            }
            for d in &self.prs.element_dofs[t] {
                if matches!(d.kind, PressureKind::Constant) {
                    is_interface[nv + d.global] = true;
                }
            }
        }
        let mut cond_of_full = vec![None; ntot];
        let mut full_of_cond = Vec::new();
        for g in 0..ntot {
            if is_interface[g] {
                cond_of_full[g] = Some(full_of_cond.len());
                full_of_cond.push(g);
            }
        }
        let n = full_of_cond.len();
        let vel_count = full_of_cond.iter().filter(|&&g| g < nv).count();

        let mut triplets = Vec::new();
        let mut rhs = vec![0.0; n];
        for (t, local) in self.locals.iter().enumerate() {
            let vdofs = &self.vel.element_dofs[t];
            let pdofs = &self.prs.element_dofs[t];
            let nvl = vdofs.len();
            let le = &self.elem_rhs[t];
            let gidx = |p: usize| -> (usize, f64) {
                if p < nvl {
                    (vdofs[p].global, vdofs[p].sign)
                } else {
                    (nv + pdofs[p - nvl].global, 1.0)
                }
            };
            // Condensed rhs: b_Γ − A_ΓI A_II⁻¹ b_I.
            let bi: Vec<f64> = local.interior.iter().map(|&p| le[p]).collect();
            let zi = match &local.a_ii {
                Some(f) => f.solve(&bi),
                None => Vec::new(),
            };
            for (gi, &p) in local.interface.iter().enumerate() {
                let (gp, sp) = gidx(p);
                let rp = cond_of_full[gp].unwrap();
                let mut v = le[p];
                for (k, z) in zi.iter().enumerate() {
                    v -= local.a_gi[gi][k] * z;
                }
                rhs[rp] += sp * v;
                for (gj, &q) in local.interface.iter().enumerate() {
                    let (gq, sq) = gidx(q);
                    let rq = cond_of_full[gq].unwrap();
                    let s = local.s_gg[gi][gj];
                    if s != 0.0 {
                        triplets.push((rp, rq, sp * sq * s));
                    }
                }
            }
        }
        let csr = CsrMatrix::from_triplets(n, n, triplets);
        // Velocity face blocks for the preconditioner.
        let face_blocks: Vec<(usize, usize)> = self
            .vel
            .face_ranges
            .iter()
            .map(|&(start, len)| (cond_of_full[start].unwrap(), len))
            .collect();
        Ok(CondensedSystem {
            n,
            vel_count,
            csr,
            rhs,
            cond_of_full,
            full_of_cond,
            face_blocks,
        })
    }

    /// Recovers the full coefficient vector from a condensed solution.
    pub fn recover(&self, cond: &CondensedSystem, xc: &[f64]) -> Result<Vec<f64>> {
        let nv = self.vel.n_dofs;
        let mut x = vec![0.0; self.full_size()];
        for (c, &g) in cond.full_of_cond.iter().enumerate() {
            x[g] = xc[c];
        }
        for (t, local) in self.locals.iter().enumerate() {
            if local.interior.is_empty() {
                continue;
            }
            let vdofs = &self.vel.element_dofs[t];
            let pdofs = &self.prs.element_dofs[t];
            let nvl = vdofs.len();
            let le = &self.elem_rhs[t];
            let gidx = |p: usize| -> (usize, f64) {
                if p < nvl {
                    (vdofs[p].global, vdofs[p].sign)
                } else {
                    (nv + pdofs[p - nvl].global, 1.0)
                }
            };
            // x_I = A_II⁻¹ (b_I − A_IΓ x_Γ)
            let mut bi: Vec<f64> = local.interior.iter().map(|&p| le[p]).collect();
            for (gi, &p) in local.interface.iter().enumerate() {
                let (gp, sp) = gidx(p);
                let xg = sp * x[gp];
                for (k, b) in bi.iter_mut().enumerate() {
                    *b -= local.a_gi[gi][k] * xg;
                }
            }
            let xi = local.a_ii.as_ref().unwrap().solve(&bi);
            for (k, &p) in local.interior.iter().enumerate() {
                let (gp, _) = gidx(p);
                x[gp] = xi[k];
            }
        }
        Ok(x)
    }

    /// Condense, solve (dense below the direct-solver limit, preconditioned
    /// MINRES above it), recover, and report the relative residual of the
    /// full system.
    pub fn solve(&self) -> Result<MixedSolution> {
        let cond = self.condense()?;
        let (xc, iterations) = cond.solve()?;
        let x = self.recover(&cond, &xc)?;

        // Residual check against the full assembled system.
        let full = CsrMatrix::from_triplets(self.full_size(), self.full_size(), self.full_triplets());
        let ax = full.matvec(&x);
        let res: f64 = ax
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = norm2(&self.rhs).max(1e-300);
        let relative_residual = res / scale;
        Ok(MixedSolution {
            coefficients: x,
            condensed_size: cond.n,
            iterations,
            relative_residual,
        })
    }
}

pub struct MixedSolution {
    /// Full coefficient vector: velocity dofs then pressure dofs.
    pub coefficients: Vec<f64>,
    pub condensed_size: usize,
    pub iterations: Option<usize>,
    pub relative_residual: f64,
}

/// Size threshold below which the condensed system is solved densely.
pub const DENSE_SOLVE_LIMIT: usize = 3200;

pub struct CondensedSystem {
    pub n: usize,
    pub vel_count: usize,
    pub csr: CsrMatrix,
    pub rhs: Vec<f64>,
    pub cond_of_full: Vec<Option<usize>>,
    pub full_of_cond: Vec<usize>,
    pub face_blocks: Vec<(usize, usize)>,
}

impl CondensedSystem {
    pub fn solve(&self) -> Result<(Vec<f64>, Option<usize>)> {
        if self.n <= DENSE_SOLVE_LIMIT {
            let mut a = RowMat::zeros(self.n);
            for r in 0..self.n {
                for k in self.csr.row_ptr[r]..self.csr.row_ptr[r + 1] {
                    a.rows[r][self.csr.col_idx[k]] += self.csr.vals[k];
                }
            }
            let f = LdltFactor::new(a)?;
            return Ok((f.solve(&self.rhs), None));
        }

        // Block-diagonal SPD preconditioner: exact face-block inverses for
        // the velocity part, a banded Cholesky of the approximate pressure
        // Schur complement for the rest.
        let vel_precond = BlockDiagPrecond::from_csr_blocks(&self.csr, &self.face_blocks)?;
        let schur = self.pressure_schur_estimate()?;
        let schur_chol = BandedCholesky::new(&schur)?;

        let apply_a = |x: &[f64], y: &mut [f64]| self.csr.matvec_into(x, y);
        let apply_m = |x: &[f64], y: &mut [f64]| {
            vel_precond.apply(x, y);
            let mut zp = x[self.vel_count..].to_vec();
            schur_chol.solve_in_place(&mut zp);
            y[self.vel_count..].copy_from_slice(&zp);
        };
        let mut x = vec![0.0; self.n];
        let iters = minres(&apply_a, &apply_m, &self.rhs, &mut x, 1e-13, 50_000)?;
        let r = self.csr.matvec(&x);
        let res = r
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / norm2(&self.rhs).max(1e-300);
        if res > 1e-9 {
            return Err(Error::NoConvergence(format!(
                "condensed solve residual {res:.3e} above tolerance"
            )));
        }
        Ok((x, Some(iters)))
    }

    /// `Ŝ = B Â⁻¹ Bᵀ − C` with `Â` the block-diagonal (per-face) part of the
    /// velocity block; spectrally close to the true pressure Schur
    /// complement.
    fn pressure_schur_estimate(&self) -> Result<CsrMatrix> {
        let nv = self.vel_count;
        let npr = self.n - nv;
        // Dense inverses per face block.
        let mut inv_blocks = Vec::with_capacity(self.face_blocks.len());
        for &(start, len) in &self.face_blocks {
            let mut dense = RowMat::zeros(len);
            for i in 0..len {
                let r = start + i;
                for k in self.csr.row_ptr[r]..self.csr.row_ptr[r + 1] {
                    let c = self.csr.col_idx[k];
                    if c >= start && c < start + len {
                        dense.rows[i][c - start] += self.csr.vals[k];
                    }
                }
            }
            let f = LdltFactor::new(dense)?;
            inv_blocks.push(f);
        }
        // Pressure rows restricted to each face block.
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        for p in nv..self.n {
            for k in self.csr.row_ptr[p]..self.csr.row_ptr[p + 1] {
                let c = self.csr.col_idx[k];
                if c >= nv {
                    // −C contribution (the pressure block is negative
                    // semidefinite).
                    triplets.push((p - nv, c - nv, -self.csr.vals[k]));
                }
            }
        }
        for (b, &(start, len)) in self.face_blocks.iter().enumerate() {
            // Collect pressure rows touching this block.
            let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
            for p in nv..self.n {
                let mut vec_b = vec![0.0; len];
                let mut hit = false;
                for k in self.csr.row_ptr[p]..self.csr.row_ptr[p + 1] {
                    let c = self.csr.col_idx[k];
                    if c >= start && c < start + len {
                        vec_b[c - start] = self.csr.vals[k];
                        hit = true;
                    }
                }
                if hit {
                    rows.push((p - nv, vec_b));
                }
            }
            for (pi, bi) in &rows {
                let zi = inv_blocks[b].solve(bi);
                for (pj, bj) in &rows {
                    let v: f64 = zi.iter().zip(bj).map(|(a, c)| a * c).sum();
                    if v != 0.0 {
                        triplets.push((*pi, *pj, v));
                    }
                }
            }
        }
        Ok(CsrMatrix::from_triplets(npr, npr, triplets))
    }
}

fn build_mixed_local(
    tet: &Tetrahedron,
    n: usize,
    vdofs: &[LocalDof],
    pdofs: &[PressureDof],
    rule: &QuadratureRule,
) -> Result<MixedLocal> {
    let g = tet.geometric_tables();
    let nvl = vdofs.len();
    let npl = pdofs.len();
    let dim = nvl + npl;
    let fns: Vec<DivFn> = vdofs
        .iter()
        .map(|d| DivFn::from_descriptor(&d.desc))
        .collect::<Result<_>>()?;
    let mut kernels = HDivKernels::new(n, &g);

    let mut a = vec![vec![0.0f64; dim]; dim];
    for p in 0..nvl {
        for q in p..nvl {
            let v = kernels.mass(&fns[p], &fns[q]);
            a[p][q] = v;
            a[q][p] = v;
        }
    }
    // −(div v, w) coupling rows.
    for (i, pd) in pdofs.iter().enumerate() {
        for (j, f) in fns.iter().enumerate() {
            let v = match &pd.kind {
                PressureKind::Constant => kernels.div_integral(f),
                PressureKind::Bubble(beta) => {
                    kernels.stiffness(f, &DivFn::T4 { alpha: *beta })
                }
            };
            if v != 0.0 {
                a[nvl + i][j] = -v;
                a[j][nvl + i] = -v;
            }
        }
    }

    let mut interior = Vec::new();
    let mut interface = Vec::new();
    for (p, d) in vdofs.iter().enumerate() {
        if d.condensable {
            interior.push(p);
        } else {
            interface.push(p);
        }
    }
    for (i, d) in pdofs.iter().enumerate() {
        match d.kind {
            PressureKind::Constant => interface.push(nvl + i),
            PressureKind::Bubble(_) => interior.push(nvl + i),
        }
    }

    let (a_ii, a_gi, s_gg) = if interior.is_empty() {
        let s_gg: Vec<Vec<f64>> = interface
            .iter()
            .map(|&p| interface.iter().map(|&q| a[p][q]).collect())
            .collect();
        (None, Vec::new(), s_gg)
    } else {
        let ni = interior.len();
        let mut aii = RowMat::zeros(ni);
        for (i, &p) in interior.iter().enumerate() {
            for (j, &q) in interior.iter().enumerate() {
                aii.rows[i][j] = a[p][q];
            }
        }
        let factor = LdltFactor::new(aii).map_err(|_| {
            Error::SingularSystem(
                "condensable block is singular; the interior/interface partition is wrong".into(),
            )
        })?;
        let a_gi: Vec<Vec<f64>> = interface
            .iter()
            .map(|&p| interior.iter().map(|&q| a[p][q]).collect())
            .collect();
        let mut s_gg: Vec<Vec<f64>> = interface
            .iter()
            .map(|&p| interface.iter().map(|&q| a[p][q]).collect())
            .collect();
        // S = A_ΓΓ − A_ΓI A_II⁻¹ A_IΓ
        for (j, row_j) in a_gi.iter().enumerate() {
            let z = factor.solve(row_j);
            for (i, row_i) in a_gi.iter().enumerate() {
                let dot: f64 = row_i.iter().zip(&z).map(|(x, y)| x * y).sum();
                s_gg[i][j] -= dot;
            }
        }
        (Some(factor), a_gi, s_gg)
    };

    // Basis values at quadrature points for right-hand sides and errors.
    let npts = rule.points.len();
    let mut vel_vals = vec![0.0f64; nvl * npts * 3];
    for (p, d) in vdofs.iter().enumerate() {
        let f = crate::bases::realize(&d.desc, tet)?;
        let vb = f.value.as_vector();
        for (k, lam) in rule.points.iter().enumerate() {
            let v = vb.eval_bary(lam);
            let base = (p * npts + k) * 3;
            vel_vals[base] = v.x;
            vel_vals[base + 1] = v.y;
            vel_vals[base + 2] = v.z;
        }
    }
    let mut prs_vals = vec![0.0f64; npl * npts];
    for (p, d) in pdofs.iter().enumerate() {
        match &d.kind {
            PressureKind::Constant => {
                for k in 0..npts {
                    prs_vals[p * npts + k] = 1.0;
                }
            }
            PressureKind::Bubble(alpha) => {
                let (_, div) = crate::bases::hdiv_cell_bubble(tet, alpha, n)?;
                for (k, lam) in rule.points.iter().enumerate() {
                    prs_vals[p * npts + k] = div.eval_bary(lam);
                }
            }
        }
    }

    Ok(MixedLocal {
        a,
        interior,
        interface,
        a_ii,
        a_gi,
        s_gg,
        vel_vals,
        prs_vals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_assembly::MatrixKind;
    use approx::assert_relative_eq;
    use crate::combinatorics::binomial;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_tet_mesh() -> Mesh {
        Mesh::from_cells(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn dof_counts_match_dimension_formulas() {
        let tet = single_tet_mesh();
        // H1, degree 2 on one tet: dim P2 = 10.
        let h1 = build_dof_map(Space::H1, 2, &tet).unwrap();
        assert_eq!(h1.n_dofs, 10);
        // HCurl first kind, degree 1 on one tet: 20.
        let hc = build_dof_map(Space::HCurl1st, 1, &tet).unwrap();
        assert_eq!(hc.n_dofs, 20);

        // RT0 on the six-tet cube: one dof per face.
        let cube = Mesh::cube(1, 1.0).unwrap();
        let rt0 = build_dof_map(Space::HDivRT, 0, &cube).unwrap();
        assert_eq!(rt0.n_dofs, 18);
    }

    #[test]
    fn one_element_assembly_matches_local_matrix() {
        let mesh = single_tet_mesh();
        let map = build_dof_map(Space::HCurl1st, 1, &mesh).unwrap();
        let csr = assemble_csr(&map, &mesh, MatrixKind::Mass).unwrap();
        let tet = mesh.tet_geometry(0).unwrap();
        let g = tet.geometric_tables();
        // On a single positively-oriented sorted tet all signs are +1 and the
        // element dof order is a permutation of the canonical one.
        let local = local_assembly::hcurl_mass(1, &g).unwrap();
        let sum_local: f64 = (0..local.dim())
            .flat_map(|i| (0..local.dim()).map(move |j| (i, j)))
            .map(|(i, j)| local.mat[(i, j)])
            .sum();
        let ones = vec![1.0; map.n_dofs];
        let sum_global: f64 = csr.matvec(&ones).iter().sum();
        assert_relative_eq!(sum_local, sum_global, max_relative = 1e-12);
    }

    #[test]
    fn h1_partition_of_unity_mass() {
        // Global H1 mass row sums integrate the basis; the total is |Ω|.
        let mesh = Mesh::cube(1, 1.0).unwrap();
        let map = build_dof_map(Space::H1, 2, &mesh).unwrap();
        let m = assemble_csr(&map, &mesh, MatrixKind::Mass).unwrap();
        let ones = vec![1.0; map.n_dofs];
        let total: f64 = m.matvec(&ones).iter().sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn tangential_traces_agree_across_interior_faces() {
        // The global well-definedness check: evaluate the tangential trace of
        // a random H(curl) coefficient vector from both incident elements.
        let mesh = Mesh::cube(1, 1.0).unwrap();
        let n = 2;
        let map = build_dof_map(Space::HCurl1st, n, &mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let coeffs: Vec<f64> = (0..map.n_dofs)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let eval_from = |t: usize, x: &Vector3<f64>| -> Vector3<f64> {
            let tet = mesh.tet_geometry(t).unwrap();
            let mut acc = Vector3::zeros();
            for d in &map.element_dofs[t] {
                let f = crate::bases::realize(&d.desc, &tet).unwrap();
                acc += f.value.as_vector().eval(&tet, x) * (d.sign * coeffs[d.global]);
            }
            acc
        };
        let mut checked = 0;
        for (f, &(t1, t2)) in mesh.face_tets.iter().enumerate() {
            let Some(t2) = t2 else { continue };
            let l1 = mesh.tet_faces[t1].iter().position(|&g| g == f).unwrap();
            let tet1 = mesh.tet_geometry(t1).unwrap();
            let facegeo = tet1.face(l1);
            for _ in 0..10 {
                let mu = crate::sampling::random_face_barycentric(&mut rng);
                let x = facegeo.point(&tet1, &mu);
                let a = facegeo.tangential(&eval_from(t1, &x));
                let b = facegeo.tangential(&eval_from(t2, &x));
                assert!(
                    (a - b).norm() <= 1e-11 * a.norm().max(1.0),
                    "tangential jump {:.3e} on face {f}",
                    (a - b).norm()
                );
            }
            checked += 1;
        }
        assert_eq!(checked, 6);
    }

    #[test]
    fn normal_traces_agree_across_interior_faces() {
        let mesh = Mesh::cube(1, 1.0).unwrap();
        let n = 2;
        let map = build_dof_map(Space::HDivRT, n, &mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let coeffs: Vec<f64> = (0..map.n_dofs)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let eval_from = |t: usize, x: &Vector3<f64>| -> Vector3<f64> {
            let tet = mesh.tet_geometry(t).unwrap();
            let mut acc = Vector3::zeros();
            for d in &map.element_dofs[t] {
                let f = crate::bases::realize(&d.desc, &tet).unwrap();
                acc += f.value.as_vector().eval(&tet, x) * (d.sign * coeffs[d.global]);
            }
            acc
        };
        for (f, &(t1, t2)) in mesh.face_tets.iter().enumerate() {
            let Some(t2) = t2 else { continue };
            let l1 = mesh.tet_faces[t1].iter().position(|&g| g == f).unwrap();
            let tet1 = mesh.tet_geometry(t1).unwrap();
            let facegeo = tet1.face(l1);
            for _ in 0..10 {
                let mu = crate::sampling::random_face_barycentric(&mut rng);
                let x = facegeo.point(&tet1, &mu);
                let a = eval_from(t1, &x).dot(&facegeo.outward_normal);
                let b = eval_from(t2, &x).dot(&facegeo.outward_normal);
                assert!(
                    (a - b).abs() <= 1e-11 * a.abs().max(1.0),
                    "normal jump {:.3e} on face {f}",
                    (a - b).abs()
                );
            }
        }
    }

    #[test]
    fn cavity_stiffness_annihilates_discrete_gradients() {
        let mesh = Mesh::cube(1, 1.0).unwrap();
        let n = 1;
        let hcurl = build_dof_map(Space::HCurl1st, n, &mesh).unwrap();
        let h1 = build_dof_map(Space::H1, n + 1, &mesh).unwrap();
        let grad = discrete_gradient(&mesh, &h1, &hcurl).unwrap();
        let s = assemble_csr(&hcurl, &mesh, MatrixKind::Stiffness).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let c: Vec<f64> = (0..h1.n_dofs).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gc = grad.matvec(&c);
        let sgc = s.matvec(&gc);
        let scale = s.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let worst = sgc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(
            worst <= 1e-12 * scale * norm2(&gc).max(1.0),
            "S (G c) should vanish, got {worst:.3e}"
        );
    }

    #[test]
    fn essential_bc_keeps_interior_dofs() {
        let tetmesh = single_tet_mesh();
        let n = 3;
        let map = build_dof_map(Space::HCurl1st, n, &tetmesh).unwrap();
        let bc = essential_tangential_bc(&map).unwrap();
        // All faces are boundary: remaining dofs are the cell-supported ones.
        let expect = binomial(n, 3) as usize + 2 * binomial(n + 1, 3) as usize
            + binomial(n, 2) as usize;
        assert_eq!(bc.keep.len(), expect);

        let cube = Mesh::cube(1, 1.0).unwrap();
        let map = build_dof_map(Space::HCurl1st, 0, &cube).unwrap();
        let bc = essential_tangential_bc(&map).unwrap();
        let interior_edges = cube.boundary_edge.iter().filter(|&&b| !b).count();
        assert_eq!(bc.keep.len(), interior_edges);
    }

    #[test]
    fn mixed_sizes_match_condensation_table() {
        let mesh = Mesh::cube(1, 1.0).unwrap();
        let zero = |_x: &Vector3<f64>| 0.0;
        for (n, kc, ko) in [(0usize, 24usize, 24usize), (4, 276, 840), (7, 654, 2880)] {
            let sys =
                MixedSystem::assemble(&mesh, n, false, &MixedRhs::PressureData(&zero)).unwrap();
            assert_eq!(sys.condensed_size(), kc, "condensed size at degree {n}");
            assert_eq!(sys.full_size(), ko, "original size at degree {n}");
        }
    }

    #[test]
    fn condensed_solve_equals_full_solve() {
        let mesh = Mesh::cube(1, 1.0).unwrap();
        let f = |x: &Vector3<f64>| {
            3.0 * std::f64::consts::PI.powi(2)
                * (std::f64::consts::PI * x.x).sin()
                * (std::f64::consts::PI * x.y).sin()
                * (std::f64::consts::PI * x.z).sin()
        };
        for n in [0usize, 1, 2] {
            let sys = MixedSystem::assemble(&mesh, n, false, &MixedRhs::PressureData(&f)).unwrap();
            let full = sys.solve_full_dense().unwrap();
            let sol = sys.solve().unwrap();
            assert!(sol.relative_residual < 1e-10);
            let num: f64 = full
                .iter()
                .zip(&sol.coefficients)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den = norm2(&full).max(1e-300);
            assert!(
                num / den < 1e-10,
                "condensed vs full deviation {:.3e} at degree {n}",
                num / den
            );
        }
    }

    #[test]
    fn reduced_map_drops_type4_only() {
        let mesh = Mesh::cube(2, 1.0).unwrap();
        let full = build_dof_map(Space::HDivRT, 1, &mesh).unwrap();
        let reduced = reduced_divfree_space(&full).unwrap();
        let t4: usize = 48 * (binomial(4, 3) as usize - 1);
        assert_eq!(full.n_dofs - reduced.n_dofs, t4);
        // Reduced method at degree 1 has no condensable dofs at all.
        let zero = |_x: &Vector3<f64>| Vector3::zeros();
        let sys = MixedSystem::assemble(&mesh, 1, true, &MixedRhs::VelocityData(&zero)).unwrap();
        assert_eq!(sys.local_dof_count(), 0);
        assert_eq!(sys.condensed_size(), 408);
    }

    #[test]
    fn global_matrix_export_has_header() {
        let mesh = single_tet_mesh();
        let map = build_dof_map(Space::HDivRT, 0, &mesh).unwrap();
        let csr = assemble_csr(&map, &mesh, MatrixKind::Mass).unwrap();
        let mut buf = Vec::new();
        csr.write_coordinate_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("% size 4 4\n"));
        assert!(text.lines().count() == csr.nnz() + 1);
    }
}
