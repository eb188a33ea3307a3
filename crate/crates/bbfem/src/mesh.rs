//! Tetrahedral meshes of scaled cubes: the 6-tet Kuhn split of each subcube,
//! deduplicated global entities, boundary flags, and the per-element
//! orientation data that global assembly relies on.

use crate::combinatorics::{Edge, Face};
use crate::error::{invalid_arg, Error, Result};
use crate::geometry::Tetrahedron;
use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    /// Tetrahedra as global vertex ids, ascending except for a possible swap
    /// of the last two that restores positive orientation.
    pub tets: Vec<[usize; 4]>,
    /// Deduplicated edges (ascending pairs), sorted.
    pub edges: Vec<[usize; 2]>,
    /// Deduplicated faces (ascending triples), sorted.
    pub faces: Vec<[usize; 3]>,
    /// Global edge id of each local edge (local edges in `Edge::all()` order).
    pub tet_edges: Vec<[usize; 6]>,
    /// Global face id of each local face (local face ℓ is opposite local
    /// vertex ℓ).
    pub tet_faces: Vec<[usize; 4]>,
    /// Incident tets of each face; interior faces have two.
    pub face_tets: Vec<(usize, Option<usize>)>,
    pub boundary_face: Vec<bool>,
    pub boundary_edge: Vec<bool>,
    pub boundary_vertex: Vec<bool>,
    /// Kuhn permutation class per tet for generated cube meshes; tets of one
    /// class are translates of each other, so per-class data can be reused.
    pub kuhn_class: Option<Vec<u8>>,
}

impl Mesh {
    /// Builds a conforming mesh from raw cells, normalizing vertex order per
    /// element and extracting shared entities.
    pub fn from_cells(vertices: Vec<Vector3<f64>>, cells: Vec<[usize; 4]>) -> Result<Self> {
        let mut tets = Vec::with_capacity(cells.len());
        for cell in cells {
            let mut ids = cell;
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(invalid_arg!("cell with repeated vertex ids: {ids:?}"));
            }
            let points = ids.map(|v| vertices[v]);
            let tet = Tetrahedron::new(points)?;
            if tet.input_swapped() {
                ids.swap(2, 3);
            }
            tets.push(ids);
        }

        let mut edge_map: BTreeMap<[usize; 2], usize> = BTreeMap::new();
        let mut face_map: BTreeMap<[usize; 3], usize> = BTreeMap::new();
        for ids in &tets {
            for e in Edge::all() {
                let (i, j) = e.ends();
                let mut key = [ids[i], ids[j]];
                key.sort_unstable();
                let next = edge_map.len();
                edge_map.entry(key).or_insert(next);
            }
            for l in 0..4 {
                let mut key = face_key(ids, l);
                key.sort_unstable();
                let next = face_map.len();
                face_map.entry(key).or_insert(next);
            }
        }
        // Renumber entities in sorted-key order for determinism.
        let edges: Vec<[usize; 2]> = edge_map.keys().copied().collect();
        let faces: Vec<[usize; 3]> = face_map.keys().copied().collect();
        let edge_ids: BTreeMap<[usize; 2], usize> =
            edges.iter().enumerate().map(|(k, v)| (*v, k)).collect();
        let face_ids: BTreeMap<[usize; 3], usize> =
            faces.iter().enumerate().map(|(k, v)| (*v, k)).collect();

        let mut tet_edges = Vec::with_capacity(tets.len());
        let mut tet_faces = Vec::with_capacity(tets.len());
        let mut face_tets: Vec<(usize, Option<usize>)> = vec![(usize::MAX, None); faces.len()];
        for (t, ids) in tets.iter().enumerate() {
            let mut te = [0usize; 6];
            for (k, e) in Edge::all().iter().enumerate() {
                let (i, j) = e.ends();
                let mut key = [ids[i], ids[j]];
                key.sort_unstable();
                te[k] = edge_ids[&key];
            }
            tet_edges.push(te);
            let mut tf = [0usize; 4];
            for l in 0..4 {
                let mut key = face_key(ids, l);
                key.sort_unstable();
                let f = face_ids[&key];
                tf[l] = f;
                match &mut face_tets[f] {
                    (first, _) if *first == usize::MAX => *first = t,
                    (_, second @ None) => *second = Some(t),
                    _ => {
                        return Err(Error::NonConformingMesh(format!(
                            "face {key:?} shared by more than two tets"
                        )))
                    }
                }
            }
            tet_faces.push(tf);
        }

        let boundary_face: Vec<bool> = face_tets.iter().map(|(_, s)| s.is_none()).collect();
        let mut boundary_edge = vec![false; edges.len()];
        let mut boundary_vertex = vec![false; vertices.len()];
        for (f, face) in faces.iter().enumerate() {
            if boundary_face[f] {
                for &v in face {
                    boundary_vertex[v] = true;
                }
                for pair in [[face[0], face[1]], [face[0], face[2]], [face[1], face[2]]] {
                    boundary_edge[edge_ids[&pair]] = true;
                }
            }
        }

        Ok(Mesh {
            vertices,
            tets,
            edges,
            faces,
            tet_edges,
            tet_faces,
            face_tets,
            boundary_face,
            boundary_edge,
            boundary_vertex,
            kuhn_class: None,
        })
    }

    /// `m³` congruent subcubes of a cube with the given side length, each
    /// split into the six Kuhn tetrahedra sharing the main diagonal.
    pub fn cube(m: usize, side: f64) -> Result<Self> {
        if m < 1 {
            return Err(invalid_arg!("cube mesh needs m >= 1"));
        }
        let np = m + 1;
        let h = side / m as f64;
        let vid = |x: usize, y: usize, z: usize| x + np * (y + np * z);
        let mut vertices = Vec::with_capacity(np * np * np);
        for idx in 0..np * np * np {
            let x = idx % np;
            let y = (idx / np) % np;
            let z = idx / (np * np);
            vertices.push(Vector3::new(x as f64 * h, y as f64 * h, z as f64 * h));
        }

        const PERMS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let mut cells = Vec::with_capacity(6 * m * m * m);
        let mut classes = Vec::with_capacity(6 * m * m * m);
        for cz in 0..m {
            for cy in 0..m {
                for cx in 0..m {
                    for (class, perm) in PERMS.iter().enumerate() {
                        let mut offs = [[0usize; 3]; 4];
                        offs[1][perm[0]] = 1;
                        offs[2][perm[0]] = 1;
                        offs[2][perm[1]] = 1;
                        offs[3] = [1, 1, 1];
                        let cell = offs
                            .map(|o| vid(cx + o[0], cy + o[1], cz + o[2]));
                        cells.push(cell);
                        classes.push(class as u8);
                    }
                }
            }
        }
        let mut mesh = Mesh::from_cells(vertices, cells)?;
        mesh.kuhn_class = Some(classes);
        Ok(mesh)
    }

    pub fn tet_geometry(&self, t: usize) -> Result<Tetrahedron> {
        let tet = Tetrahedron::new(self.tets[t].map(|v| self.vertices[v]))?;
        debug_assert!(!tet.input_swapped(), "stored vertex order is normalized");
        Ok(tet)
    }

    pub fn counts(&self) -> (usize, usize, usize, usize) {
        (
            self.vertices.len(),
            self.edges.len(),
            self.faces.len(),
            self.tets.len(),
        )
    }

    /// ASCII dump: `V E F T` header, vertex coordinates, then tet
    /// connectivity with 0-based ids.
    pub fn write_ascii(&self, w: &mut impl Write) -> std::io::Result<()> {
        let (v, e, f, t) = self.counts();
        writeln!(w, "{} {} {} {}", v, e, f, t)?;
        for p in &self.vertices {
            writeln!(w, "{:.17e} {:.17e} {:.17e}", p.x, p.y, p.z)?;
        }
        for tet in &self.tets {
            writeln!(w, "{} {} {} {}", tet[0], tet[1], tet[2], tet[3])?;
        }
        Ok(())
    }

    pub fn read_ascii(r: &mut impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| invalid_arg!("empty mesh file"))??;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| invalid_arg!("bad header {header:?}")))
            .collect::<Result<_>>()?;
        if head.len() != 4 {
            return Err(invalid_arg!("mesh header must be `V E F T`"));
        }
        let (nv, nt) = (head[0], head[3]);
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let line = lines
                .next()
                .ok_or_else(|| invalid_arg!("truncated vertex list"))??;
            let xyz: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| invalid_arg!("bad vertex {line:?}")))
                .collect::<Result<_>>()?;
            if xyz.len() != 3 {
                return Err(invalid_arg!("vertex line needs three coordinates"));
            }
            vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
        }
        let mut cells = Vec::with_capacity(nt);
        for _ in 0..nt {
            let line = lines
                .next()
                .ok_or_else(|| invalid_arg!("truncated cell list"))??;
            let ids: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| invalid_arg!("bad cell {line:?}")))
                .collect::<Result<_>>()?;
            if ids.len() != 4 {
                return Err(invalid_arg!("cell line needs four vertex ids"));
            }
            cells.push([ids[0], ids[1], ids[2], ids[3]]);
        }
        let mesh = Mesh::from_cells(vertices, cells)?;
        let (v, e, f, t) = mesh.counts();
        if [v, e, f, t] != [head[0], head[1], head[2], head[3]] {
            return Err(invalid_arg!(
                "entity counts {:?} disagree with header {:?}",
                [v, e, f, t],
                head
            ));
        }
        Ok(mesh)
    }
}

fn face_key(ids: &[usize; 4], opposite: usize) -> [usize; 3] {
    let verts = Face(opposite).vertices();
    [ids[verts[0]], ids[verts[1]], ids[verts[2]]]
}

/// Local-to-global orientation data for every element entity.
#[derive(Clone, Debug)]
pub struct OrientationConvention {
    /// +1 when the local edge tangent (lower to higher local index) agrees
    /// with the global convention (lower to higher vertex id).
    pub edge_sign: Vec<[f64; 6]>,
    /// Maps each local face slot (ascending local index order) to its slot in
    /// the ascending-global-id ordering of the face.
    pub face_perm: Vec<[[usize; 3]; 4]>,
    /// Parity of `face_perm` (+1 even, −1 odd).
    pub face_parity: Vec<[f64; 4]>,
    /// +1 when this element is the face's first incident element, i.e. the
    /// global face normal points out of it.
    pub face_outward: Vec<[f64; 4]>,
}

pub fn orient(mesh: &Mesh) -> Result<OrientationConvention> {
    let nt = mesh.tets.len();
    let mut edge_sign = vec![[1.0f64; 6]; nt];
    let mut face_perm = vec![[[0usize; 3]; 4]; nt];
    let mut face_parity = vec![[1.0f64; 4]; nt];
    let mut face_outward = vec![[1.0f64; 4]; nt];
    for (t, ids) in mesh.tets.iter().enumerate() {
        for (k, e) in Edge::all().iter().enumerate() {
            let (i, j) = e.ends();
            edge_sign[t][k] = if ids[i] < ids[j] { 1.0 } else { -1.0 };
        }
        for l in 0..4 {
            let gids = face_key(ids, l);
            let mut order: Vec<usize> = (0..3).collect();
            order.sort_by_key(|&s| gids[s]);
            // order[rank] = slot; invert to slot -> rank.
            let mut perm = [0usize; 3];
            for (rank, &slot) in order.iter().enumerate() {
                perm[slot] = rank;
            }
            face_perm[t][l] = perm;
            face_parity[t][l] = permutation_parity3(&perm);
            let f = mesh.tet_faces[t][l];
            face_outward[t][l] = if mesh.face_tets[f].0 == t { 1.0 } else { -1.0 };
        }
    }
    Ok(OrientationConvention {
        edge_sign,
        face_perm,
        face_parity,
        face_outward,
    })
}

fn permutation_parity3(p: &[usize; 3]) -> f64 {
    let mut inversions = 0;
    for i in 0..3 {
        for j in i + 1..3 {
            if p[i] > p[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_tet_cube_counts() {
        let mesh = Mesh::cube(1, 1.0).unwrap();
        let (v, e, f, t) = mesh.counts();
        assert_eq!((v, e, f, t), (8, 19, 18, 6));
        let boundary = mesh.boundary_face.iter().filter(|&&b| b).count();
        assert_eq!(boundary, 12);
        assert_eq!(f - boundary, 6);
        // Euler characteristic of a ball: V - E + F - T = 1.
        assert_eq!(v as isize - e as isize + f as isize - t as isize, 1);
        // The main diagonal is the single interior edge.
        let interior_edges = mesh.boundary_edge.iter().filter(|&&b| !b).count();
        assert_eq!(interior_edges, 1);
    }

    #[test]
    fn refined_cube_counts_match_experiment_meshes() {
        for (m, tets) in [(2usize, 48usize), (4, 384), (6, 1296)] {
            let mesh = Mesh::cube(m, 1.0).unwrap();
            assert_eq!(mesh.tets.len(), tets);
            let (v, e, f, t) = mesh.counts();
            assert_eq!(v as isize - e as isize + f as isize - t as isize, 1);
            assert_eq!(f, 6 * m * m * (2 * m + 1));
        }
        assert_eq!(Mesh::cube(10, 1.0).unwrap().tets.len(), 6000);
        assert!(Mesh::cube(0, 1.0).is_err());
    }

    #[test]
    fn interior_faces_have_two_incident_tets() {
        let mesh = Mesh::cube(2, 1.0).unwrap();
        for (f, &(first, second)) in mesh.face_tets.iter().enumerate() {
            assert_ne!(first, usize::MAX);
            assert_eq!(second.is_none(), mesh.boundary_face[f]);
        }
    }

    #[test]
    fn volumes_fill_the_cube() {
        let mesh = Mesh::cube(3, 2.5).unwrap();
        let total: f64 = (0..mesh.tets.len())
            .map(|t| mesh.tet_geometry(t).unwrap().volume())
            .sum();
        assert!((total - 2.5f64.powi(3)).abs() < 1e-12 * total);
    }

    #[test]
    fn kuhn_classes_are_translates() {
        let mesh = Mesh::cube(2, 1.0).unwrap();
        let classes = mesh.kuhn_class.as_ref().unwrap();
        // Same class => same edge-vector geometry (translation invariant).
        for class in 0..6u8 {
            let members: Vec<usize> = (0..mesh.tets.len())
                .filter(|&t| classes[t] == class)
                .collect();
            let reference = mesh.tet_geometry(members[0]).unwrap();
            for &t in &members[1..] {
                let tet = mesh.tet_geometry(t).unwrap();
                for k in 0..4 {
                    let dv = (tet.vertices()[k] - tet.vertices()[0])
                        - (reference.vertices()[k] - reference.vertices()[0]);
                    assert!(dv.norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn single_tet_orientation_is_identity() {
        let mesh = Mesh::from_cells(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2, 3]],
        )
        .unwrap();
        let orient = orient(&mesh).unwrap();
        assert!(orient.edge_sign[0].iter().all(|&s| s == 1.0));
        assert!(orient.face_parity[0].iter().all(|&s| s == 1.0));
        assert!(orient.face_outward[0].iter().all(|&s| s == 1.0));
    }

    #[test]
    fn shared_face_outward_signs_are_opposite() {
        let mesh = Mesh::cube(1, 1.0).unwrap();
        let orient = orient(&mesh).unwrap();
        for (f, &(first, second)) in mesh.face_tets.iter().enumerate() {
            if let Some(second) = second {
                let l1 = mesh.tet_faces[first].iter().position(|&g| g == f).unwrap();
                let l2 = mesh.tet_faces[second].iter().position(|&g| g == f).unwrap();
                assert_eq!(
                    orient.face_outward[first][l1] * orient.face_outward[second][l2],
                    -1.0
                );
            }
        }
    }

    #[test]
    fn ascii_roundtrip() {
        let mesh = Mesh::cube(2, 1.0).unwrap();
        let mut buf = Vec::new();
        mesh.write_ascii(&mut buf).unwrap();
        let reloaded = Mesh::read_ascii(&mut std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(mesh.counts(), reloaded.counts());
        assert_eq!(mesh.tets, reloaded.tets);
        for (a, b) in mesh.vertices.iter().zip(&reloaded.vertices) {
            assert!((a - b).norm() == 0.0);
        }
    }

    #[test]
    fn degenerate_cells_are_rejected() {
        let r = Mesh::from_cells(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2, 3]],
        );
        assert!(r.is_err());
    }
}
