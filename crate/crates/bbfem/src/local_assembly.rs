//! Quadrature-free element mass and stiffness matrices for the H(curl) and
//! H(div) bases, assembled block by block from the closed-form entry
//! formulas, plus the H1 and L2 matrices from the Bernstein integral
//! identities. Every entry is a short sum of geometric table values times
//! exact Bernstein coefficients.

use crate::bases::{alt_sign_1based, enumerate_basis, BasisDescriptor, Family, Space};
use crate::combinatorics::{Face, MassTable, MultiIndex};
use crate::error::{invalid_arg, Result};
use crate::geometry::GeometricTables;
use nalgebra::DMatrix;
use std::io::Write;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MatrixKind {
    Mass,
    Stiffness,
}

/// A dense symmetric element matrix in the canonical basis ordering.
#[derive(Clone, Debug)]
pub struct LocalMatrix {
    pub space: Space,
    pub kind: MatrixKind,
    pub n: usize,
    pub mat: DMatrix<f64>,
}

impl LocalMatrix {
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// Whitespace-separated dense dump with a `space kind n dim` header.
    pub fn write_text(&self, w: &mut impl Write) -> std::io::Result<()> {
        let kind = match self.kind {
            MatrixKind::Mass => "mass",
            MatrixKind::Stiffness => "stiffness",
        };
        writeln!(w, "{:?} {} {} {}", self.space, kind, self.n, self.dim())?;
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| format!("{:.17e}", self.mat[(i, j)]))
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Dispatch data for one H(curl) basis function of the first-kind space of
/// degree `n`.
#[derive(Clone, Debug)]
pub enum CurlFn {
    /// Whitney edge element on edge (i, j).
    T1 { i: usize, j: usize },
    /// Gradient field, `|alpha| = n+1`.
    T2 { alpha: MultiIndex },
    /// Face bubble on `face`, `|alpha| = n`.
    T3 { face: Face, alpha: MultiIndex },
    /// Cell bubble direction `ell`, interior `|alpha| = n+2`.
    T4 { ell: usize, alpha: MultiIndex },
}

/// Dispatch data for one H(div) basis function of the Raviart-Thomas space
/// of degree `n`.
#[derive(Clone, Debug)]
pub enum DivFn {
    /// Lowest-order face element for the face opposite vertex `ell`.
    T1 { ell: usize },
    /// Curl of the H(curl) face bubble, `|alpha| = n`.
    T2 { face: Face, alpha: MultiIndex },
    /// Curl of the H(curl) cell bubble, interior `|alpha| = n+2`.
    T3 { ell: usize, alpha: MultiIndex },
    /// Non-curl cell bubble, `|alpha| = n`.
    T4 { alpha: MultiIndex },
}

impl CurlFn {
    pub fn from_descriptor(d: &BasisDescriptor) -> Result<Self> {
        if d.space != Space::HCurl1st {
            return Err(invalid_arg!("entry kernels cover the first-kind space"));
        }
        Ok(match d.family {
            Family::Type1 => match d.entity {
                crate::bases::Entity::Edge(e) => {
                    let (i, j) = e.ends();
                    CurlFn::T1 { i, j }
                }
                _ => return Err(invalid_arg!("Type 1 needs an edge entity")),
            },
            Family::Type2 => CurlFn::T2 {
                alpha: d.alpha.unwrap(),
            },
            Family::Type3 => match d.entity {
                crate::bases::Entity::Face(f) => CurlFn::T3 {
                    face: Face(f),
                    alpha: d.alpha.unwrap(),
                },
                _ => return Err(invalid_arg!("Type 3 needs a face entity")),
            },
            Family::Type4 => CurlFn::T4 {
                ell: d.aux.unwrap(),
                alpha: d.alpha.unwrap(),
            },
        })
    }

    fn type_id(&self) -> u8 {
        match self {
            CurlFn::T1 { .. } => 1,
            CurlFn::T2 { .. } => 2,
            CurlFn::T3 { .. } => 3,
            CurlFn::T4 { .. } => 4,
        }
    }
}

impl DivFn {
    pub fn from_descriptor(d: &BasisDescriptor) -> Result<Self> {
        if d.space != Space::HDivRT {
            return Err(invalid_arg!("entry kernels cover the Raviart-Thomas space"));
        }
        Ok(match d.family {
            Family::Type1 => match d.entity {
                crate::bases::Entity::Face(f) => DivFn::T1 { ell: f },
                _ => return Err(invalid_arg!("Type 1 needs a face entity")),
            },
            Family::Type2 => match d.entity {
                crate::bases::Entity::Face(f) => DivFn::T2 {
                    face: Face(f),
                    alpha: d.alpha.unwrap(),
                },
                _ => return Err(invalid_arg!("Type 2 needs a face entity")),
            },
            Family::Type3 => DivFn::T3 {
                ell: d.aux.unwrap(),
                alpha: d.alpha.unwrap(),
            },
            Family::Type4 => DivFn::T4 {
                alpha: d.alpha.unwrap(),
            },
        })
    }

    fn type_id(&self) -> u8 {
        match self {
            DivFn::T1 { .. } => 1,
            DivFn::T2 { .. } => 2,
            DivFn::T3 { .. } => 3,
            DivFn::T4 { .. } => 4,
        }
    }
}

/// Entry kernels for the H(curl) first-kind space of degree `n` on one
/// element, with memoized Bernstein coefficients.
pub struct HCurlKernels<'a> {
    pub n: usize,
    g: &'a GeometricTables,
    mt: MassTable,
}

/// Entry kernels for the Raviart-Thomas space of degree `n` on one element.
pub struct HDivKernels<'a> {
    pub n: usize,
    g: &'a GeometricTables,
    mt: MassTable,
}

fn e(i: usize) -> MultiIndex {
    MultiIndex::unit(i)
}

impl<'a> HCurlKernels<'a> {
    pub fn new(n: usize, g: &'a GeometricTables) -> Self {
        HCurlKernels { n, g, mt: MassTable::new() }
    }

    pub fn mass(&mut self, p: &CurlFn, q: &CurlFn) -> f64 {
        curl_mass_entry(self.n, self.g, &mut self.mt, p, q)
    }

    pub fn stiffness(&mut self, p: &CurlFn, q: &CurlFn) -> f64 {
        curl_stiffness_entry(self.n, self.g, &mut self.mt, p, q)
    }
}

impl<'a> HDivKernels<'a> {
    pub fn new(n: usize, g: &'a GeometricTables) -> Self {
        HDivKernels { n, g, mt: MassTable::new() }
    }

    pub fn mass(&mut self, p: &DivFn, q: &DivFn) -> f64 {
        div_mass_entry(self.n, self.g, &mut self.mt, p, q)
    }

    pub fn stiffness(&mut self, p: &DivFn, q: &DivFn) -> f64 {
        div_stiffness_entry(self.n, self.g, &mut self.mt, p, q)
    }

    /// `∫_T div ψ dx`, used for the coupling against constant pressures.
    pub fn div_integral(&self, p: &DivFn) -> f64 {
        match p {
            DivFn::T1 { ell } => alt_sign_1based(*ell + 1) * 3.0 * self.g.eps123 * self.g.volume,
            _ => 0.0,
        }
    }
}

fn curl_mass_entry(n: usize, g: &GeometricTables, mt: &mut MassTable, p: &CurlFn, q: &CurlFn) -> f64 {
    if p.type_id() > q.type_id() {
        return curl_mass_entry(n, g, mt, q, p);
    }
    let nf = n as f64;
    match (p, q) {
        (CurlFn::T1 { i: ip, j: jp }, CurlFn::T1 { i: iq, j: jq }) => {
            mt.get(Some(e(*ip)), Some(e(*iq))) * g.s0(*jp, *jq)
                - mt.get(Some(e(*ip)), Some(e(*jq))) * g.s0(*jp, *iq)
                - mt.get(Some(e(*jp)), Some(e(*iq))) * g.s0(*ip, *jq)
                + mt.get(Some(e(*jp)), Some(e(*jq))) * g.s0(*ip, *iq)
        }
        (CurlFn::T1 { i, j }, CurlFn::T2 { alpha }) => {
            let mut acc = 0.0;
            for s in 0..4 {
                acc += mt.get(Some(e(*i)), alpha.down(s)) * g.s0(*j, s)
                    - mt.get(Some(e(*j)), alpha.down(s)) * g.s0(*i, s);
            }
            (nf + 1.0) * acc
        }
        (CurlFn::T1 { i, j }, CurlFn::T3 { face, alpha }) => {
            let mut acc = 0.0;
            for [s1, s2, s3] in face.sigma() {
                let (a1, a2, a3) = sigma_entries(alpha, s1, s2, s3);
                acc += (a1 + 1.0)
                    * (mt.get(Some(e(*i)), Some(alpha.up(s1)))
                        * (a3 * g.s0(*j, s2) - a2 * g.s0(*j, s3))
                        - mt.get(Some(e(*j)), Some(alpha.up(s1)))
                            * (a3 * g.s0(*i, s2) - a2 * g.s0(*i, s3)));
            }
            acc
        }
        (CurlFn::T1 { i, j }, CurlFn::T4 { ell, alpha }) => {
            let mut acc = 0.0;
            for s in 0..4 {
                let c4 = cell_coeff(n, *ell, alpha, s);
                acc += c4
                    * (mt.get(Some(e(*i)), alpha.down(s)) * g.s0(*j, s)
                        - mt.get(Some(e(*j)), alpha.down(s)) * g.s0(*i, s));
            }
            acc
        }
        (CurlFn::T2 { alpha }, CurlFn::T2 { alpha: beta }) => {
            let mut acc = 0.0;
            for t in 0..4 {
                for s in 0..4 {
                    acc += mt.get(alpha.down(t), beta.down(s)) * g.s0(t, s);
                }
            }
            (nf + 1.0) * (nf + 1.0) * acc
        }
        (CurlFn::T2 { alpha }, CurlFn::T3 { face, alpha: beta }) => {
            let mut acc = 0.0;
            for t in 0..4 {
                for [s1, s2, s3] in face.sigma() {
                    let (b1, b2, b3) = sigma_entries(beta, s1, s2, s3);
                    acc += (b1 + 1.0)
                        * mt.get(alpha.down(t), Some(beta.up(s1)))
                        * (b3 * g.s0(t, s2) - b2 * g.s0(t, s3));
                }
            }
            (nf + 1.0) * acc
        }
        (CurlFn::T2 { alpha }, CurlFn::T4 { ell, alpha: beta }) => {
            let mut acc = 0.0;
            for t in 0..4 {
                for s in 0..4 {
                    let c4 = cell_coeff(n, *ell, beta, s);
                    acc += c4 * mt.get(alpha.down(t), beta.down(s)) * g.s0(t, s);
                }
            }
            (nf + 1.0) * acc
        }
        (CurlFn::T3 { face: fp, alpha }, CurlFn::T3 { face: fq, alpha: beta }) => {
            let mut acc = 0.0;
            for [t1, t2, t3] in fp.sigma() {
                let (a1, a2, a3) = sigma_entries(alpha, t1, t2, t3);
                for [s1, s2, s3] in fq.sigma() {
                    let (b1, b2, b3) = sigma_entries(beta, s1, s2, s3);
                    acc += mt.get(Some(alpha.up(t1)), Some(beta.up(s1)))
                        * (a1 + 1.0)
                        * (b1 + 1.0)
                        * (a3 * b3 * g.s0(t2, s2) - a3 * b2 * g.s0(t2, s3)
                            - a2 * b3 * g.s0(t3, s2)
                            + a2 * b2 * g.s0(t3, s3));
                }
            }
            acc
        }
        (CurlFn::T3 { face, alpha }, CurlFn::T4 { ell, alpha: beta }) => {
            let mut acc = 0.0;
            for [t1, t2, t3] in face.sigma() {
                let (a1, a2, a3) = sigma_entries(alpha, t1, t2, t3);
                for s in 0..4 {
                    let c4 = cell_coeff(n, *ell, beta, s);
                    acc += mt.get(Some(alpha.up(t1)), beta.down(s))
                        * c4
                        * (a1 + 1.0)
                        * (a3 * g.s0(t2, s) - a2 * g.s0(t3, s));
                }
            }
            acc
        }
        (CurlFn::T4 { ell: lp, alpha }, CurlFn::T4 { ell: lq, alpha: beta }) => {
            let mut acc = 0.0;
            for t in 0..4 {
                let cp = cell_coeff(n, *lp, alpha, t);
                for s in 0..4 {
                    let cq = cell_coeff(n, *lq, beta, s);
                    acc += mt.get(alpha.down(t), beta.down(s)) * cp * cq * g.s0(t, s);
                }
            }
            acc
        }
        _ => unreachable!("ordered by type id"),
    }
}

fn curl_stiffness_entry(
    n: usize,
    g: &GeometricTables,
    mt: &mut MassTable,
    p: &CurlFn,
    q: &CurlFn,
) -> f64 {
    if p.type_id() > q.type_id() {
        return curl_stiffness_entry(n, g, mt, q, p);
    }
    let nf = n as f64;
    match (p, q) {
        (CurlFn::T1 { i: ip, j: jp }, CurlFn::T1 { i: iq, j: jq }) => {
            4.0 * g.s1(*ip, *jp, *iq, *jq)
        }
        (CurlFn::T1 { i, j }, CurlFn::T3 { face, alpha }) => {
            let mut acc = 0.0;
            for [s1, s2, s3] in face.sigma() {
                let (a1, a2, a3) = sigma_entries(alpha, s1, s2, s3);
                acc += (a1 + 1.0)
                    * (a3 * (g.s1(*i, *j, s1, s2) + g.s1(*i, *j, s3, s2))
                        - a2 * (g.s1(*i, *j, s1, s3) + g.s1(*i, *j, s2, s3)));
            }
            12.0 / ((nf + 2.0) * (nf + 3.0)) * acc
        }
        (CurlFn::T3 { face: fp, alpha }, CurlFn::T3 { face: fq, alpha: beta }) => {
            let mut acc = 0.0;
            for tau in fp.sigma() {
                let [t1, t2, t3] = tau;
                let (a1, a2, a3) = sigma_entries(alpha, t1, t2, t3);
                let upa = alpha.up(t1);
                for &tl in &tau {
                    let pa = upa.down(tl);
                    if pa.is_none() {
                        continue;
                    }
                    for sigma in fq.sigma() {
                        let [s1, s2, s3] = sigma;
                        let (b1, b2, b3) = sigma_entries(beta, s1, s2, s3);
                        let upb = beta.up(s1);
                        for &sk in &sigma {
                            let m = mt.get(pa, upb.down(sk));
                            if m == 0.0 {
                                continue;
                            }
                            acc += m
                                * (a1 + 1.0)
                                * (b1 + 1.0)
                                * (a3 * b3 * g.s1(tl, t2, sk, s2)
                                    - a3 * b2 * g.s1(tl, t2, sk, s3)
                                    - a2 * b3 * g.s1(tl, t3, sk, s2)
                                    + a2 * b2 * g.s1(tl, t3, sk, s3));
                        }
                    }
                }
            }
            (nf + 1.0) * (nf + 1.0) * acc
        }
        (CurlFn::T3 { face, alpha }, CurlFn::T4 { ell: lq, alpha: beta }) => {
            let mut acc = 0.0;
            let qbase = beta.down(*lq);
            for tau in face.sigma() {
                let [t1, t2, t3] = tau;
                let (a1, a2, a3) = sigma_entries(alpha, t1, t2, t3);
                let upa = alpha.up(t1);
                for &tl in &tau {
                    let pa = upa.down(tl);
                    if pa.is_none() {
                        continue;
                    }
                    for i in 0..4 {
                        let m = mt.get(pa, qbase.and_then(|x| x.down(i)));
                        if m == 0.0 {
                            continue;
                        }
                        acc += m
                            * (a1 + 1.0)
                            * (a3 * g.s1(tl, t2, i, *lq) - a2 * g.s1(tl, t3, i, *lq));
                    }
                }
            }
            (nf + 2.0) * (nf + 1.0) * (nf + 1.0) * acc
        }
        (CurlFn::T4 { ell: lp, alpha }, CurlFn::T4 { ell: lq, alpha: beta }) => {
            let mut acc = 0.0;
            let pbase = alpha.down(*lp);
            let qbase = beta.down(*lq);
            for j in 0..4 {
                let pa = pbase.and_then(|x| x.down(j));
                if pa.is_none() {
                    continue;
                }
                for i in 0..4 {
                    acc += mt.get(pa, qbase.and_then(|x| x.down(i))) * g.s1(j, *lp, i, *lq);
                }
            }
            let f = (nf + 2.0) * (nf + 1.0);
            f * f * acc
        }
        // Every block touching a gradient is exactly zero, as is the
        // Type 1 / Type 4 block.
        (CurlFn::T1 { .. }, CurlFn::T2 { .. })
        | (CurlFn::T1 { .. }, CurlFn::T4 { .. })
        | (CurlFn::T2 { .. }, _) => 0.0,
        _ => unreachable!("ordered by type id"),
    }
}

fn div_mass_entry(n: usize, g: &GeometricTables, mt: &mut MassTable, p: &DivFn, q: &DivFn) -> f64 {
    if p.type_id() > q.type_id() {
        return div_mass_entry(n, g, mt, q, p);
    }
    let nf = n as f64;
    match (p, q) {
        (DivFn::T1 { ell: lp }, DivFn::T1 { ell: lq }) => {
            let mut acc = 0.0;
            for [t1, t2, t3] in Face(*lp).sigma() {
                for [s1, s2, s3] in Face(*lq).sigma() {
                    acc += mt.get(Some(e(t1)), Some(e(s1))) * g.s1(t2, t3, s2, s3);
                }
            }
            acc
        }
        (DivFn::T1 { ell: lp }, DivFn::T2 { face, alpha: beta }) => {
            let mut acc = 0.0;
            for [t1, t2, t3] in Face(*lp).sigma() {
                for sigma in face.sigma() {
                    let [s1, s2, s3] = sigma;
                    let (b1, b2, b3) = sigma_entries(beta, s1, s2, s3);
                    let upb = beta.up(s1);
                    for &sk in &sigma {
                        let m = mt.get(Some(e(t1)), upb.down(sk));
                        if m == 0.0 {
                            continue;
                        }
                        acc += m
                            * (b1 + 1.0)
                            * (b3 * g.s1(t2, t3, sk, s2) - b2 * g.s1(t2, t3, sk, s3));
                    }
                }
            }
            (nf + 1.0) * acc
        }
        (DivFn::T1 { ell: lp }, DivFn::T3 { ell: lq, alpha: beta }) => {
            let mut acc = 0.0;
            let qbase = beta.down(*lq);
            for [t1, t2, t3] in Face(*lp).sigma() {
                for i in 0..4 {
                    acc += mt.get(Some(e(t1)), qbase.and_then(|x| x.down(i)))
                        * g.s1(t2, t3, i, *lq);
                }
            }
            (nf + 2.0) * (nf + 1.0) * acc
        }
        (DivFn::T1 { ell: lp }, DivFn::T4 { alpha: beta }) => {
            let mut acc = 0.0;
            for [t1, t2, t3] in Face(*lp).sigma() {
                for i in 0..4 {
                    let si = alt_sign_1based(i);
                    let bi = beta.entry(i) as f64;
                    let m = mt.get(Some(e(t1)), Some(beta.up(i)));
                    for [s1, s2, s3] in Face(i).sigma() {
                        let b_s1 = beta.entry(s1) as f64;
                        if b_s1 == 0.0 {
                            continue;
                        }
                        acc += si * (bi + 1.0) * b_s1 * m * g.s1(t2, t3, s2, s3);
                    }
                }
            }
            acc
        }
        (DivFn::T2 { face: fp, alpha }, DivFn::T2 { face: fq, alpha: beta }) => {
            curl_stiffness_entry(
                n,
                g,
                mt,
                &CurlFn::T3 { face: *fp, alpha: *alpha },
                &CurlFn::T3 { face: *fq, alpha: *beta },
            )
        }
        (DivFn::T2 { face, alpha }, DivFn::T3 { ell, alpha: beta }) => {
            curl_stiffness_entry(
                n,
                g,
                mt,
                &CurlFn::T3 { face: *face, alpha: *alpha },
                &CurlFn::T4 { ell: *ell, alpha: *beta },
            )
        }
        (DivFn::T2 { face, alpha }, DivFn::T4 { alpha: beta }) => {
            let mut acc = 0.0;
            for tau in face.sigma() {
                let [t1, t2, t3] = tau;
                let (a1, a2, a3) = sigma_entries(alpha, t1, t2, t3);
                let upa = alpha.up(t1);
                for &tl in &tau {
                    let pa = upa.down(tl);
                    if pa.is_none() {
                        continue;
                    }
                    for i in 0..4 {
                        let si = alt_sign_1based(i);
                        let bi = beta.entry(i) as f64;
                        let m = mt.get(pa, Some(beta.up(i)));
                        if m == 0.0 {
                            continue;
                        }
                        for [s1, s2, s3] in Face(i).sigma() {
                            let b_s1 = beta.entry(s1) as f64;
                            if b_s1 == 0.0 {
                                continue;
                            }
                            acc += si
                                * m
                                * (a1 + 1.0)
                                * (bi + 1.0)
                                * b_s1
                                * (a3 * g.s1(tl, t2, s2, s3) - a2 * g.s1(tl, t3, s2, s3));
                        }
                    }
                }
            }
            (nf + 1.0) * acc
        }
        (DivFn::T3 { ell: lp, alpha }, DivFn::T3 { ell: lq, alpha: beta }) => {
            curl_stiffness_entry(
                n,
                g,
                mt,
                &CurlFn::T4 { ell: *lp, alpha: *alpha },
                &CurlFn::T4 { ell: *lq, alpha: *beta },
            )
        }
        (DivFn::T3 { ell: lp, alpha }, DivFn::T4 { alpha: beta }) => {
            let mut acc = 0.0;
            let pbase = alpha.down(*lp);
            for j in 0..4 {
                let pa = pbase.and_then(|x| x.down(j));
                if pa.is_none() {
                    continue;
                }
                for i in 0..4 {
                    let si = alt_sign_1based(i);
                    let bi = beta.entry(i) as f64;
                    let m = mt.get(pa, Some(beta.up(i)));
                    if m == 0.0 {
                        continue;
                    }
                    for [s1, s2, s3] in Face(i).sigma() {
                        let b_s1 = beta.entry(s1) as f64;
                        if b_s1 == 0.0 {
                            continue;
                        }
                        acc += si * m * (bi + 1.0) * b_s1 * g.s1(j, *lp, s2, s3);
                    }
                }
            }
            (nf + 2.0) * (nf + 1.0) * acc
        }
        (DivFn::T4 { alpha }, DivFn::T4 { alpha: beta }) => {
            let mut acc = 0.0;
            for j in 0..4 {
                let sj = alt_sign_1based(j);
                let aj = alpha.entry(j) as f64;
                for [t1, t2, t3] in Face(j).sigma() {
                    let a_t1 = alpha.entry(t1) as f64;
                    if a_t1 == 0.0 {
                        continue;
                    }
                    for i in 0..4 {
                        let si = alt_sign_1based(i);
                        let bi = beta.entry(i) as f64;
                        let m = mt.get(Some(alpha.up(j)), Some(beta.up(i)));
                        if m == 0.0 {
                            continue;
                        }
                        for [s1, s2, s3] in Face(i).sigma() {
                            let b_s1 = beta.entry(s1) as f64;
                            if b_s1 == 0.0 {
                                continue;
                            }
                            acc += sj
                                * si
                                * m
                                * (aj + 1.0)
                                * a_t1
                                * (bi + 1.0)
                                * b_s1
                                * g.s1(t2, t3, s2, s3);
                        }
                    }
                }
            }
            acc
        }
        _ => unreachable!("ordered by type id"),
    }
}

fn div_stiffness_entry(
    n: usize,
    g: &GeometricTables,
    mt: &mut MassTable,
    p: &DivFn,
    q: &DivFn,
) -> f64 {
    if p.type_id() > q.type_id() {
        return div_stiffness_entry(n, g, mt, q, p);
    }
    let nf = n as f64;
    match (p, q) {
        (DivFn::T1 { ell: lp }, DivFn::T1 { ell: lq }) => {
            alt_sign_1based(lp + 1) * alt_sign_1based(lq + 1) * 9.0 * g.s2_123
        }
        (DivFn::T4 { alpha }, DivFn::T4 { alpha: beta }) => {
            // The divergence coefficients carry no alternating signs; the
            // entry is a plain double sum over the g-coefficients.
            let mut acc = 0.0;
            for j in 0..4 {
                let aj = alpha.entry(j) as f64;
                for l in 0..4 {
                    let dj = if j == l { nf } else { 0.0 };
                    let cj = (aj + 1.0) * (dj - alpha.entry(l) as f64);
                    if cj == 0.0 {
                        continue;
                    }
                    let pa = alpha.up(j).down(l);
                    for i in 0..4 {
                        let bi = beta.entry(i) as f64;
                        for k in 0..4 {
                            let di = if i == k { nf } else { 0.0 };
                            let ci = (bi + 1.0) * (di - beta.entry(k) as f64);
                            if ci == 0.0 {
                                continue;
                            }
                            acc += cj * ci * mt.get(pa, beta.up(i).down(k));
                        }
                    }
                }
            }
            (nf + 1.0) * (nf + 1.0) * g.s2_123 * acc
        }
        // Divergence-free types and the Type1/Type4 cross block vanish.
        _ => 0.0,
    }
}

#[inline]
fn sigma_entries(alpha: &MultiIndex, s1: usize, s2: usize, s3: usize) -> (f64, f64, f64) {
    (
        alpha.entry(s1) as f64,
        alpha.entry(s2) as f64,
        alpha.entry(s3) as f64,
    )
}

/// Coefficient scalar of the cell-bubble BB-form at slot `s`:
/// `δ_{sℓ}(n+2) − α_ℓ` for the `Xb^{n+1}` bubbles of the degree-`n` space.
#[inline]
fn cell_coeff(n: usize, ell: usize, alpha: &MultiIndex, s: usize) -> f64 {
    let delta = if s == ell { n as f64 + 2.0 } else { 0.0 };
    delta - alpha.entry(ell) as f64
}

fn build_symmetric(
    dims: usize,
    mut entry: impl FnMut(usize, usize) -> f64,
) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dims, dims);
    for i in 0..dims {
        for j in i..dims {
            let v = entry(i, j);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Row-parallel symmetric assembly; each worker carries its own coefficient
/// cache, and entries are schedule-independent.
fn build_symmetric_par<F: Sync>(
    dims: usize,
    fns: &[F],
    entry: impl Fn(&mut MassTable, &F, &F) -> f64 + Sync,
) -> DMatrix<f64> {
    use rayon::prelude::*;
    let rows: Vec<Vec<f64>> = (0..dims)
        .into_par_iter()
        .map_init(MassTable::new, |mt, i| {
            (i..dims).map(|j| entry(mt, &fns[i], &fns[j])).collect()
        })
        .collect();
    let mut m = DMatrix::zeros(dims, dims);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

pub fn hcurl_mass(n: usize, g: &GeometricTables) -> Result<LocalMatrix> {
    let fns = curl_fns(n)?;
    let mat = build_symmetric_par(fns.len(), &fns, |mt, p, q| curl_mass_entry(n, g, mt, p, q));
    Ok(LocalMatrix {
        space: Space::HCurl1st,
        kind: MatrixKind::Mass,
        n,
        mat,
    })
}

pub fn hcurl_stiffness(n: usize, g: &GeometricTables) -> Result<LocalMatrix> {
    let fns = curl_fns(n)?;
    let mat = build_symmetric_par(fns.len(), &fns, |mt, p, q| {
        curl_stiffness_entry(n, g, mt, p, q)
    });
    Ok(LocalMatrix {
        space: Space::HCurl1st,
        kind: MatrixKind::Stiffness,
        n,
        mat,
    })
}

pub fn hdiv_mass(n: usize, g: &GeometricTables) -> Result<LocalMatrix> {
    let fns = div_fns(n)?;
    let mat = build_symmetric_par(fns.len(), &fns, |mt, p, q| div_mass_entry(n, g, mt, p, q));
    Ok(LocalMatrix {
        space: Space::HDivRT,
        kind: MatrixKind::Mass,
        n,
        mat,
    })
}

pub fn hdiv_stiffness(n: usize, g: &GeometricTables) -> Result<LocalMatrix> {
    let fns = div_fns(n)?;
    let mat = build_symmetric_par(fns.len(), &fns, |mt, p, q| {
        div_stiffness_entry(n, g, mt, p, q)
    });
    Ok(LocalMatrix {
        space: Space::HDivRT,
        kind: MatrixKind::Stiffness,
        n,
        mat,
    })
}

/// H1 Bernstein mass and stiffness matrices of degree `n ≥ 1`.
pub fn h1_matrices(n: usize, g: &GeometricTables) -> Result<(LocalMatrix, LocalMatrix)> {
    if n < 1 {
        return Err(invalid_arg!("H1 matrices need n >= 1"));
    }
    let descs = enumerate_basis(Space::H1, n)?;
    let idx: Vec<MultiIndex> = descs.iter().map(|d| d.alpha.unwrap()).collect();
    let mut mt = MassTable::new();
    let vol = g.volume;
    let mass = build_symmetric(idx.len(), |i, j| mt.get(Some(idx[i]), Some(idx[j])) * vol);
    let nf = n as f64;
    let stiff = build_symmetric(idx.len(), |i, j| {
        let mut acc = 0.0;
        for t in 0..4 {
            for s in 0..4 {
                acc += mt.get(idx[i].down(t), idx[j].down(s)) * g.s0(t, s);
            }
        }
        nf * nf * acc
    });
    Ok((
        LocalMatrix {
            space: Space::H1,
            kind: MatrixKind::Mass,
            n,
            mat: mass,
        },
        LocalMatrix {
            space: Space::H1,
            kind: MatrixKind::Stiffness,
            n,
            mat: stiff,
        },
    ))
}

/// L2 Bernstein mass matrix of degree `n`.
pub fn l2_mass(n: usize, g: &GeometricTables) -> Result<LocalMatrix> {
    let descs = enumerate_basis(Space::L2, n)?;
    let idx: Vec<MultiIndex> = descs.iter().map(|d| d.alpha.unwrap()).collect();
    let mut mt = MassTable::new();
    let vol = g.volume;
    let mat = build_symmetric(idx.len(), |i, j| mt.get(Some(idx[i]), Some(idx[j])) * vol);
    Ok(LocalMatrix {
        space: Space::L2,
        kind: MatrixKind::Mass,
        n,
        mat,
    })
}

/// Element matrix over an arbitrary H(curl) dispatch list (used by global
/// assembly, where interface dofs reorder and reindex the canonical basis).
pub fn hcurl_matrix_for(
    n: usize,
    g: &GeometricTables,
    fns: &[CurlFn],
    kind: MatrixKind,
) -> DMatrix<f64> {
    match kind {
        MatrixKind::Mass => {
            build_symmetric_par(fns.len(), fns, |mt, p, q| curl_mass_entry(n, g, mt, p, q))
        }
        MatrixKind::Stiffness => build_symmetric_par(fns.len(), fns, |mt, p, q| {
            curl_stiffness_entry(n, g, mt, p, q)
        }),
    }
}

/// Element matrix over an arbitrary H(div) dispatch list.
pub fn hdiv_matrix_for(
    n: usize,
    g: &GeometricTables,
    fns: &[DivFn],
    kind: MatrixKind,
) -> DMatrix<f64> {
    match kind {
        MatrixKind::Mass => {
            build_symmetric_par(fns.len(), fns, |mt, p, q| div_mass_entry(n, g, mt, p, q))
        }
        MatrixKind::Stiffness => build_symmetric_par(fns.len(), fns, |mt, p, q| {
            div_stiffness_entry(n, g, mt, p, q)
        }),
    }
}

/// H1 mass and stiffness over an arbitrary index list of degree `n`.
pub fn h1_matrices_for(
    n: usize,
    g: &GeometricTables,
    idx: &[MultiIndex],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut mt = MassTable::new();
    let vol = g.volume;
    let mass = build_symmetric(idx.len(), |i, j| mt.get(Some(idx[i]), Some(idx[j])) * vol);
    let nf = n as f64;
    let stiff = build_symmetric(idx.len(), |i, j| {
        let mut acc = 0.0;
        for t in 0..4 {
            for s in 0..4 {
                acc += mt.get(idx[i].down(t), idx[j].down(s)) * g.s0(t, s);
            }
        }
        nf * nf * acc
    });
    (mass, stiff)
}

/// Canonical H(curl) dispatch list in `enumerate_basis` order.
pub fn curl_fns(n: usize) -> Result<Vec<CurlFn>> {
    enumerate_basis(Space::HCurl1st, n)?
        .iter()
        .map(CurlFn::from_descriptor)
        .collect()
}

/// Canonical H(div) dispatch list in `enumerate_basis` order.
pub fn div_fns(n: usize) -> Result<Vec<DivFn>> {
    enumerate_basis(Space::HDivRT, n)?
        .iter()
        .map(DivFn::from_descriptor)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Tetrahedron;
    use approx::assert_relative_eq;

    #[test]
    fn reference_whitney_entries() {
        let tet = Tetrahedron::reference();
        let g = tet.geometric_tables();
        let mass = hcurl_mass(0, &g).unwrap();
        assert_eq!(mass.dim(), 6);
        // (ω₀₁, ω₀₁): ∫|λ₀∇λ₁ − λ₁∇λ₀|² = 1/12 on the reference element.
        assert_relative_eq!(mass.mat[(0, 0)], 1.0 / 12.0, max_relative = 1e-13);
        let stiff = hcurl_stiffness(0, &g).unwrap();
        assert_relative_eq!(stiff.mat[(0, 0)], 4.0 / 3.0, max_relative = 1e-13);
        assert_relative_eq!(stiff.mat[(0, 0)], 4.0 * g.s1(0, 1, 0, 1), max_relative = 1e-14);
    }

    #[test]
    fn gradient_blocks_are_exactly_zero() {
        let tet = Tetrahedron::reference();
        let g = tet.geometric_tables();
        let n = 2;
        let stiff = hcurl_stiffness(n, &g).unwrap();
        let descs = enumerate_basis(Space::HCurl1st, n).unwrap();
        for (i, d) in descs.iter().enumerate() {
            if d.family == Family::Type2 {
                for j in 0..stiff.dim() {
                    assert_eq!(stiff.mat[(i, j)], 0.0);
                    assert_eq!(stiff.mat[(j, i)], 0.0);
                }
            }
        }
        let dstiff = hdiv_stiffness(n, &g).unwrap();
        let ddescs = enumerate_basis(Space::HDivRT, n).unwrap();
        for (i, d) in ddescs.iter().enumerate() {
            if matches!(d.family, Family::Type2 | Family::Type3) {
                for j in 0..dstiff.dim() {
                    assert_eq!(dstiff.mat[(i, j)], 0.0);
                }
            }
            // The Type1-Type4 cross block vanishes as well.
            if d.family == Family::Type1 {
                for (j, dq) in ddescs.iter().enumerate() {
                    if dq.family == Family::Type4 {
                        assert_eq!(dstiff.mat[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn hdiv_stiffness_face_block() {
        let tet = Tetrahedron::reference();
        let g = tet.geometric_tables();
        let stiff = hdiv_stiffness(0, &g).unwrap();
        for lp in 0..4usize {
            for lq in 0..4usize {
                let expect = alt_sign_1based(lp + 1) * alt_sign_1based(lq + 1) * 9.0 * g.s2_123;
                assert_relative_eq!(stiff.mat[(lp, lq)], expect, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn h1_low_degree_values() {
        let tet = Tetrahedron::reference();
        let g = tet.geometric_tables();
        let (mass, stiff) = h1_matrices(1, &g).unwrap();
        let vol = tet.volume();
        for i in 0..4 {
            assert_relative_eq!(mass.mat[(i, i)], vol / 10.0, max_relative = 1e-14);
            for j in 0..4 {
                if i != j {
                    assert_relative_eq!(mass.mat[(i, j)], vol / 20.0, max_relative = 1e-14);
                }
                // Row sums of the stiffness vanish (gradients of a partition
                // of unity).
            }
            let row_sum: f64 = (0..4).map(|j| stiff.mat[(i, j)]).sum();
            assert!(row_sum.abs() < 1e-14);
        }
        assert!(h1_matrices(0, &g).is_err());
    }

    #[test]
    fn l2_low_degree_values() {
        let tet = Tetrahedron::reference();
        let g = tet.geometric_tables();
        let m0 = l2_mass(0, &g).unwrap();
        assert_eq!(m0.dim(), 1);
        assert_relative_eq!(m0.mat[(0, 0)], tet.volume(), max_relative = 1e-14);
        // n = 1 agrees with the H1 mass up to the basis ordering (both are
        // the four hat functions, so all entries coincide by symmetry).
        let m1 = l2_mass(1, &g).unwrap();
        let (h1m, _) = h1_matrices(1, &g).unwrap();
        assert_relative_eq!(m1.mat[(0, 0)], h1m.mat[(0, 0)], max_relative = 1e-14);
        assert_relative_eq!(m1.mat[(0, 1)], h1m.mat[(0, 1)], max_relative = 1e-14);
    }

    #[test]
    fn matrices_are_symmetric_and_scale_correctly() {
        let tet = Tetrahedron::reference();
        let g = tet.geometric_tables();
        let m1 = hcurl_mass(2, &g).unwrap();
        let defect = (&m1.mat - m1.mat.transpose()).abs().max();
        assert!(defect == 0.0);

        // Uniform scaling by h multiplies the H(curl) mass by h.
        let scaled = Tetrahedron::new([
            tet.vertices()[0] * 2.0,
            tet.vertices()[1] * 2.0,
            tet.vertices()[2] * 2.0,
            tet.vertices()[3] * 2.0,
        ])
        .unwrap();
        let g2 = scaled.geometric_tables();
        let m2 = hcurl_mass(2, &g2).unwrap();
        for i in 0..m1.dim() {
            for j in 0..m1.dim() {
                if m1.mat[(i, j)].abs() > 1e-14 {
                    assert_relative_eq!(
                        m2.mat[(i, j)],
                        2.0 * m1.mat[(i, j)],
                        max_relative = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn matrix_dump_has_header() {
        let tet = Tetrahedron::reference();
        let g = tet.geometric_tables();
        let m = l2_mass(0, &g).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("L2 mass 0 1\n"));
    }
}
