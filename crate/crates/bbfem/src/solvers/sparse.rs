//! Sparse matrix storage and Krylov kernels for the large condensed systems:
//! CSR built from coordinate triplets with deterministic summation, plus
//! conjugate gradients and preconditioned MINRES.

use crate::error::{Error, Result};
use rayon::prelude::*;
use std::io::Write;

/// Compressed-rows sparse matrix.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from coordinate triplets; duplicates are summed in sorted
    /// (row, col) order so the result is reproducible.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut counts = vec![0usize; n_rows];
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < n_rows && c < n_cols);
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                vals.push(v);
                counts[r] += 1;
                last = Some((r, c));
            }
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for r in 0..n_rows {
            row_ptr[r + 1] = row_ptr[r] + counts[r];
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(r, yr)| {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.col_idx[k]];
            }
            *yr = s;
        });
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                triplets.push((self.col_idx[k], r, self.vals[k]));
            }
        }
        CsrMatrix::from_triplets(self.n_cols, self.n_rows, triplets)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_rows.min(self.n_cols)];
        for r in 0..d.len() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] == r {
                    d[r] += self.vals[k];
                }
            }
        }
        d
    }

    /// Writes `% size N M` followed by `row col value` lines.
    pub fn write_coordinate_text(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "% size {} {}", self.n_rows, self.n_cols)?;
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                writeln!(w, "{} {} {:.17e}", r, self.col_idx[k], self.vals[k])?;
            }
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Block-diagonal SPD preconditioner stored as dense inverted blocks.
pub struct BlockDiagPrecond {
    /// (start offset, row-major inverted block, block size).
    blocks: Vec<(usize, Vec<f64>, usize)>,
    n: usize,
}

impl BlockDiagPrecond {
    /// Inverts the given diagonal blocks of `a` (offsets must tile 0..n).
    pub fn from_csr_blocks(a: &CsrMatrix, block_ranges: &[(usize, usize)]) -> Result<Self> {
        let mut blocks = Vec::with_capacity(block_ranges.len());
        for &(start, size) in block_ranges {
            let mut dense = crate::solvers::mat::RowMat::zeros(size);
            for i in 0..size {
                let r = start + i;
                for k in a.row_ptr[r]..a.row_ptr[r + 1] {
                    let c = a.col_idx[k];
                    if c >= start && c < start + size {
                        dense.rows[i][c - start] += a.vals[k];
                    }
                }
            }
            let factor = crate::solvers::ldlt::LdltFactor::new(dense)?;
            let mut inv = vec![0.0; size * size];
            for j in 0..size {
                let mut e = vec![0.0; size];
                e[j] = 1.0;
                factor.solve_in_place(&mut e);
                for i in 0..size {
                    inv[i * size + j] = e[i];
                }
            }
            blocks.push((start, inv, size));
        }
        let n = a.n_rows;
        Ok(BlockDiagPrecond { blocks, n })
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (start, inv, size) in &self.blocks {
            for i in 0..*size {
                let mut s = 0.0;
                for j in 0..*size {
                    s += inv[i * size + j] * x[start + j];
                }
                y[start + i] = s;
            }
        }
    }
}

/// Banded SPD Cholesky (lower band storage) for preconditioner solves.
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    /// band[i][j] = L[i][i-bw+j] for j in 0..=bw (so band[i][bw] is the diagonal).
    band: Vec<Vec<f64>>,
}

impl BandedCholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.n_rows;
        let mut bw = 0usize;
        for r in 0..n {
            for k in a.row_ptr[r]..a.row_ptr[r + 1] {
                let c = a.col_idx[k];
                if c <= r {
                    bw = bw.max(r - c);
                }
            }
        }
        let mut band = vec![vec![0.0f64; bw + 1]; n];
        for r in 0..n {
            for k in a.row_ptr[r]..a.row_ptr[r + 1] {
                let c = a.col_idx[k];
                if c <= r {
                    band[r][bw - (r - c)] += a.vals[k];
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = band[i][bw - (i - j)];
                let kl = lo.max(j.saturating_sub(bw));
                for k in kl..j {
                    s -= band[i][bw - (i - k)] * band[j][bw - (j - k)];
                }
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: s });
                    }
                    band[i][bw] = s.sqrt();
                } else {
                    band[i][bw - (i - j)] = s / band[j][bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, band })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = b[i];
            for k in lo..i {
                s -= self.band[i][bw - (i - k)] * b[k];
            }
            b[i] = s / self.band[i][bw];
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = b[i];
            for k in i + 1..=hi {
                s -= self.band[k][bw - (k - i)] * b[k];
            }
            b[i] = s / self.band[i][bw];
        }
    }
}

/// Conjugate gradients for SPD operators with an SPD preconditioner.
/// Returns the iteration count.
pub fn pcg(
    apply_a: &dyn Fn(&[f64], &mut [f64]),
    apply_m_inv: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = b.len();
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut r = vec![0.0; n];
    apply_a(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = vec![0.0; n];
    apply_m_inv(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        if norm2(&r) <= rel_tol * b_norm {
            return Ok(it);
        }
        apply_a(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::NoConvergence(format!(
                "CG detected a non-SPD operator (pAp = {pap:.3e}) at iteration {it}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        apply_m_inv(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if norm2(&r) <= rel_tol * b_norm {
        Ok(max_iter)
    } else {
        Err(Error::NoConvergence(format!(
            "CG stalled at relative residual {:.3e} after {max_iter} iterations",
            norm2(&r) / b_norm
        )))
    }
}

/// Preconditioned MINRES for symmetric (possibly indefinite) operators with
/// an SPD preconditioner. Returns the iteration count.
pub fn minres(
    apply_a: &dyn Fn(&[f64], &mut [f64]),
    apply_m_inv: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = b.len();
    if norm2(b) == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut r1 = vec![0.0; n];
    apply_a(x, &mut r1);
    for i in 0..n {
        r1[i] = b[i] - r1[i];
    }
    let mut y = vec![0.0; n];
    apply_m_inv(&r1, &mut y);
    let beta1_sq = dot(&r1, &y);
    if beta1_sq < 0.0 {
        return Err(Error::NoConvergence(
            "MINRES preconditioner is not positive definite".into(),
        ));
    }
    if beta1_sq == 0.0 {
        return Ok(0);
    }
    let beta1 = beta1_sq.sqrt();

    let mut r2 = r1.clone();
    let mut oldb = 0.0f64;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0f64;
    let mut sn = 0.0f64;
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut av = vec![0.0; n];

    for it in 1..=max_iter {
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        apply_a(&v, &mut av);
        if it >= 2 {
            let f = beta / oldb;
            for i in 0..n {
                av[i] -= f * r1[i];
            }
        }
        let alfa = dot(&v, &av);
        let f = alfa / beta;
        for i in 0..n {
            av[i] -= f * r2[i];
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&av);
        apply_m_inv(&r2, &mut y);
        oldb = beta;
        let beta_sq = dot(&r2, &y);
        if beta_sq < 0.0 {
            return Err(Error::NoConvergence(
                "MINRES preconditioner lost positive definiteness".into(),
            ));
        }
        beta = beta_sq.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::MIN_POSITIVE);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        for i in 0..n {
            let w1i = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - oldeps * w1i - delta * w2[i]) / gamma;
            x[i] += phi * w[i];
        }

        if phibar <= rel_tol * beta1 {
            return Ok(it);
        }
    }
    Err(Error::NoConvergence(format!(
        "MINRES stalled at preconditioned residual ratio {:.3e} after {max_iter} iterations",
        phibar / beta1
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn csr_from_triplets_sums_duplicates_deterministically() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            vec![(2, 1, 1.0), (0, 0, 2.0), (2, 1, 0.5), (1, 2, -1.0)],
        );
        assert_eq!(a.nnz(), 3);
        let y = a.matvec(&[1.0, 1.0, 1.0]);
        assert_eq!(y, vec![2.0, -1.0, 1.5]);
        let at = a.transpose();
        let yt = at.matvec(&[1.0, 1.0, 1.0]);
        assert_eq!(yt, vec![2.0, 1.5, -1.0]);
    }

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn cg_solves_laplacian() {
        let n = 100;
        let a = laplacian_1d(n);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xt: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = a.matvec(&xt);
        let mut x = vec![0.0; n];
        let apply = |p: &[f64], y: &mut [f64]| a.matvec_into(p, y);
        let ident = |p: &[f64], y: &mut [f64]| y.copy_from_slice(p);
        pcg(&apply, &ident, &b, &mut x, 1e-13, 10 * n).unwrap();
        let worst = x
            .iter()
            .zip(&xt)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-9);
    }

    #[test]
    fn minres_solves_indefinite_saddle() {
        // [[L, I],[I, 0]]-like symmetric indefinite block system.
        let nv = 40;
        let np = 10;
        let n = nv + np;
        let l = laplacian_1d(nv);
        let mut t = Vec::new();
        for r in 0..nv {
            for k in l.row_ptr[r]..l.row_ptr[r + 1] {
                t.push((r, l.col_idx[k], l.vals[k] + if r == l.col_idx[k] { 1.0 } else { 0.0 }));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in 0..np {
            for v in 0..nv {
                if rng.random_range(0.0..1.0) < 0.2 {
                    let val = rng.random_range(-1.0..1.0f64);
                    t.push((nv + p, v, val));
                    t.push((v, nv + p, val));
                }
            }
        }
        let a = CsrMatrix::from_triplets(n, n, t);
        let xt: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = a.matvec(&xt);
        let mut x = vec![0.0; n];
        let apply = |p: &[f64], y: &mut [f64]| a.matvec_into(p, y);
        let ident = |p: &[f64], y: &mut [f64]| y.copy_from_slice(p);
        minres(&apply, &ident, &b, &mut x, 1e-13, 40 * n).unwrap();
        let r = a.matvec(&x);
        let res = r
            .iter()
            .zip(&b)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt();
        assert!(res <= 1e-9 * norm2(&b), "residual ratio {:.3e}", res / norm2(&b));
    }

    #[test]
    fn banded_cholesky_solves_spd_band() {
        let n = 50;
        let a = laplacian_1d(n);
        let chol = BandedCholesky::new(&a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xt: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut b = a.matvec(&xt);
        chol.solve_in_place(&mut b);
        for i in 0..n {
            assert!((b[i] - xt[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn block_precond_inverts_block_diagonal_exactly() {
        let mut t = Vec::new();
        // two 2x2 SPD blocks
        t.extend([(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]);
        t.extend([(2, 2, 3.0), (2, 3, -1.0), (3, 2, -1.0), (3, 3, 3.0)]);
        let a = CsrMatrix::from_triplets(4, 4, t);
        let p = BlockDiagPrecond::from_csr_blocks(&a, &[(0, 2), (2, 2)]).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0];
        let b = a.matvec(&x);
        let mut y = vec![0.0; 4];
        p.apply(&b, &mut y);
        for i in 0..4 {
            assert!((y[i] - x[i]).abs() < 1e-13);
        }
    }
}
