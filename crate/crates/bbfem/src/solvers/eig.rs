//! Dense symmetric eigensolver pipeline: Householder tridiagonalization,
//! implicit-shift QL on the tridiagonal form, Cholesky factorization, and the
//! shift-free reduction of the generalized symmetric pencil `S x = λ M x` to
//! a standard problem.

use super::mat::RowMat;
use crate::error::{Error, Result};
use rayon::prelude::*;

/// Reduces the symmetric matrix in `a` (full storage) to tridiagonal form.
/// Returns the diagonal `d` and subdiagonal `e` (`e[i]` couples `i` and
/// `i+1`). The Householder reflectors remain in the strict lower triangle of
/// `a`, scaled so `apply_q_to` can rebuild the orthogonal transform.
pub fn householder_tridiag(a: &mut RowMat) -> (Vec<f64>, Vec<f64>) {
    let n = a.n;
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n.saturating_sub(1)];
    if n == 0 {
        return (d, e);
    }
    let mut p = vec![0.0f64; n];

    for i in (1..n).rev() {
        let l = i; // active leading block is 0..l
        let scale: f64 = a.rows[i][..l].iter().map(|v| v.abs()).sum();
        if scale == 0.0 || l == 1 {
            // Identity reflector: stash h = 0, leave the diagonal in place
            // for the swap loop below.
            e[i - 1] = a.rows[i][l - 1];
            d[i] = 0.0;
            continue;
        }
        let mut h = 0.0;
        for k in 0..l {
            a.rows[i][k] /= scale;
            h += a.rows[i][k] * a.rows[i][k];
        }
        let f = a.rows[i][l - 1];
        let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
        e[i - 1] = scale * g;
        h -= f * g;
        a.rows[i][l - 1] = f - g;

        // p = A v / h on the leading block, exploiting symmetry. The strict
        // lower part is read row-wise in both passes for cache friendliness.
        {
            let (head, tail) = a.rows.split_at(l);
            let v = &tail[i - l][..l];
            p[..l]
                .par_iter_mut()
                .enumerate()
                .for_each(|(j, pj)| {
                    let row = &head[j];
                    let mut s = 0.0;
                    for k in 0..=j {
                        s += row[k] * v[k];
                    }
                    *pj = s;
                });
            // Contribution of the strict upper triangle (A[k][j] for k > j).
            let nthreads = rayon::current_num_threads().max(1);
            let chunk = l.div_ceil(nthreads);
            p[..l]
                .par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(ci, pc)| {
                    let j0 = ci * chunk;
                    for k in j0 + 1..l {
                        let row = &head[k];
                        let vk = v[k];
                        let hi = k.min(j0 + pc.len());
                        for (off, pj) in pc[..hi - j0].iter_mut().enumerate() {
                            let j = j0 + off;
                            if j < k {
                                *pj += row[j] * vk;
                            }
                        }
                    }
                });
            for pj in p[..l].iter_mut() {
                *pj /= h;
            }
        }

        let kk: f64 = {
            let v = &a.rows[i][..l];
            p[..l].iter().zip(v).map(|(pj, vj)| pj * vj).sum::<f64>() / (2.0 * h)
        };
        // q = p − K v stored back into p.
        for j in 0..l {
            p[j] -= kk * a.rows[i][j];
        }

        // Rank-2 update A ← A − v qᵀ − q vᵀ on the leading block.
        {
            let (head, tail) = a.rows.split_at_mut(l);
            let v = &tail[i - l][..l];
            let q = &p[..l];
            head.par_iter_mut().enumerate().for_each(|(j, row)| {
                let vj = v[j];
                let qj = q[j];
                for k in 0..=j {
                    row[k] -= vj * q[k] + qj * v[k];
                }
            });
        }

        d[i] = h; // stash h for the back-transform
    }
    d[0] = a.rows[0][0];
    for i in 1..n {
        let h = d[i];
        d[i] = a.rows[i][i];
        a.rows[i][i] = h;
    }
    (d, e)
}

/// Applies the accumulated Householder transform `Q` (reflectors stored by
/// `householder_tridiag`) to `z`, i.e. computes `Q z` in place. With
/// `z = I` on input this materializes `Q`, whose columns carry the
/// tridiagonalizing similarity `A = Q T Qᵀ`.
pub fn apply_q_to(a: &RowMat, z: &mut RowMat) {
    let n = a.n;
    // Reflectors are applied in ascending step order.
    for i in 1..n {
        let l = i;
        let h = a.rows[i][i];
        if h == 0.0 {
            continue;
        }
        let v = &a.rows[i][..l];
        for col in 0..z.n {
            let mut g = 0.0;
            for k in 0..l {
                g += v[k] * z.rows[k][col];
            }
            g /= h;
            for k in 0..l {
                z.rows[k][col] -= g * v[k];
            }
        }
    }
}

/// Implicit-shift QL iteration on a symmetric tridiagonal matrix. Eigenvalues
/// land in `d` (unsorted); when `z` is given its columns are rotated so that
/// column `j` is the eigenvector for `d[j]`.
pub fn tridiag_ql(d: &mut [f64], e: &mut [f64], mut z: Option<&mut RowMat>) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    let mut work = vec![0.0f64; n];
    work[..n - 1].copy_from_slice(&e[..n - 1]);

    // Cumulative scale for the deflation test; a purely local test stalls on
    // clusters of numerically zero eigenvalues.
    let mut tst1 = 0.0f64;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + work[l].abs());
        let mut iter = 0;
        loop {
            // Find a negligible subdiagonal element.
            let mut m = l;
            while m + 1 < n {
                let dd = (d[m].abs() + d[m + 1].abs()).max(tst1);
                if work[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::NoConvergence(format!(
                    "QL iteration exceeded 50 sweeps at eigenvalue {l}"
                )));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * work[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + work[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut pp = 0.0;
            let mut underflowed = false;
            for i in (l..m).rev() {
                let mut f = s * work[i];
                let b = c * work[i];
                r = f.hypot(g);
                work[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= pp;
                    work[m] = 0.0;
                    underflowed = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - pp;
                r = (d[i] - g) * s + 2.0 * c * b;
                pp = s * r;
                d[i + 1] = g + pp;
                g = c * r - b;
                if let Some(zm) = z.as_deref_mut() {
                    for k in 0..zm.n {
                        f = zm.rows[k][i + 1];
                        zm.rows[k][i + 1] = s * zm.rows[k][i] + c * f;
                        zm.rows[k][i] = c * zm.rows[k][i] - s * f;
                    }
                }
            }
            if underflowed {
                continue;
            }
            d[l] -= pp;
            work[l] = g;
            work[m] = 0.0;
        }
    }
    Ok(())
}

/// In-place Cholesky factorization `A = L Lᵀ` (lower triangle of `a`).
pub fn cholesky_in_place(a: &mut RowMat) -> Result<()> {
    let n = a.n;
    for k in 0..n {
        let mut diag = a.rows[k][k];
        for p in 0..k {
            diag -= a.rows[k][p] * a.rows[k][p];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { row: k, pivot: diag });
        }
        let lkk = diag.sqrt();
        a.rows[k][k] = lkk;
        let (head, tail) = a.rows.split_at_mut(k + 1);
        let lk = &head[k][..k];
        tail.par_iter_mut().for_each(|row| {
            let mut s = row[k];
            for p in 0..k {
                s -= row[p] * lk[p];
            }
            row[k] = s / lkk;
        });
    }
    // Zero the strict upper triangle so later passes can rely on it.
    for i in 0..n {
        for j in i + 1..n {
            a.rows[i][j] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L x = b` in place for lower-triangular `L`.
pub fn forward_solve(l: &RowMat, b: &mut [f64]) {
    let n = l.n;
    for i in 0..n {
        let mut s = b[i];
        let row = &l.rows[i];
        for (k, bk) in b[..i].iter().enumerate() {
            s -= row[k] * bk;
        }
        b[i] = s / row[i];
    }
}

/// Solves `Lᵀ x = b` in place for lower-triangular `L`.
pub fn backward_solve_transposed(l: &RowMat, b: &mut [f64]) {
    let n = l.n;
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l.rows[k][i] * b[k];
        }
        b[i] = s / l.rows[i][i];
    }
}

/// Result of a generalized symmetric eigensolve.
#[derive(Clone, Debug)]
pub struct EigenResult {
    /// Retained eigenvalues, ascending, all above the zero threshold.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors matching `eigenvalues`, when requested.
    pub eigenvectors: Option<Vec<Vec<f64>>>,
    /// Number of eigenvalues discarded as numerically zero.
    pub discarded_near_zero: usize,
    /// The threshold that separated zero modes from retained ones.
    pub zero_threshold: f64,
}

pub struct GeneralizedEigOptions {
    /// Number of retained eigenvalues wanted (all if `None`).
    pub wanted: Option<usize>,
    /// Relative zero threshold against the largest eigenvalue magnitude.
    pub zero_tol: f64,
    pub want_vectors: bool,
}

impl Default for GeneralizedEigOptions {
    fn default() -> Self {
        GeneralizedEigOptions {
            wanted: None,
            zero_tol: 1e-8,
            want_vectors: false,
        }
    }
}

/// Solves `S x = λ M x` for symmetric `S` (positive semidefinite spectrum
/// expected) and positive definite `M`, via diagonal equilibration, Cholesky
/// reduction to a standard problem, tridiagonalization, and QL iteration.
pub fn generalized_sym_eig(
    mut s: RowMat,
    mut m: RowMat,
    opts: &GeneralizedEigOptions,
) -> Result<EigenResult> {
    let n = s.n;
    if m.n != n {
        return Err(Error::InvalidArgument(format!(
            "pencil dimension mismatch: {} vs {}",
            n, m.n
        )));
    }
    // Symmetric diagonal equilibration keeps the Cholesky reduction
    // well-scaled for high-degree Bernstein mass matrices.
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = m.rows[i][i];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            let f = scale[i] * scale[j];
            s.rows[i][j] *= f;
            m.rows[i][j] *= f;
        }
    }

    cholesky_in_place(&mut m)?;
    let l = m;

    // C = L⁻¹ Ŝ L⁻ᵀ, built with two row-parallel forward-solve sweeps.
    s.rows.par_iter_mut().for_each(|row| forward_solve(&l, row));
    s.transpose_in_place();
    s.rows.par_iter_mut().for_each(|row| forward_solve(&l, row));

    let (mut d, mut e) = householder_tridiag(&mut s);
    let mut z = if opts.want_vectors {
        Some(RowMat::identity(n))
    } else {
        None
    };
    tridiag_ql(&mut d, &mut e, z.as_mut())?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let lambda_max = d.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let threshold = opts.zero_tol * lambda_max;
    let discarded = order.iter().take_while(|&&j| d[j] <= threshold).count();
    let take = opts
        .wanted
        .unwrap_or(n - discarded)
        .min(n - discarded);

    let kept: Vec<usize> = order[discarded..discarded + take].to_vec();
    let eigenvalues: Vec<f64> = kept.iter().map(|&j| d[j]).collect();

    let eigenvectors = if let Some(zm) = z.as_mut() {
        apply_q_to(&s, zm);
        let mut vecs = Vec::with_capacity(kept.len());
        for &j in &kept {
            let mut w: Vec<f64> = (0..n).map(|k| zm.rows[k][j]).collect();
            backward_solve_transposed(&l, &mut w);
            for (k, wk) in w.iter_mut().enumerate() {
                *wk *= scale[k];
            }
            vecs.push(w);
        }
        Some(vecs)
    } else {
        None
    };

    Ok(EigenResult {
        eigenvalues,
        eigenvectors,
        discarded_near_zero: discarded,
        zero_threshold: threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ql_reproduces_toeplitz_spectrum() {
        let n = 40;
        let mut d = vec![2.0; n];
        let mut e = vec![-1.0; n - 1];
        tridiag_ql(&mut d, &mut e, None).unwrap();
        d.sort_by(f64::total_cmp);
        for (k, &lam) in d.iter().enumerate() {
            let exact = 2.0 - 2.0 * (std::f64::consts::PI * (k + 1) as f64 / (n as f64 + 1.0)).cos();
            assert_relative_eq!(lam, exact, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    fn random_sym(n: usize, seed: u64) -> RowMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = RowMat::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.random_range(-1.0..1.0);
                a.rows[i][j] = v;
                a.rows[j][i] = v;
            }
        }
        a
    }

    #[test]
    fn tridiagonalization_preserves_spectrum_and_q() {
        let n = 25;
        let a = random_sym(n, 3);
        let mut work = a.clone();
        let (mut d, mut e) = householder_tridiag(&mut work);
        let mut z = RowMat::identity(n);
        tridiag_ql(&mut d, &mut e, Some(&mut z)).unwrap();
        apply_q_to(&work, &mut z);
        // A z_j = d_j z_j for every eigenpair.
        for j in 0..n {
            let col: Vec<f64> = (0..n).map(|k| z.rows[k][j]).collect();
            let az = a.matvec(&col);
            for k in 0..n {
                assert!(
                    (az[k] - d[j] * col[k]).abs() < 1e-9,
                    "residual too large for eigenpair {j}"
                );
            }
        }
    }

    #[test]
    fn cholesky_and_triangular_solves_roundtrip() {
        let n = 30;
        let b = random_sym(n, 5);
        // A = B Bᵀ + n I is SPD.
        let mut a = RowMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += b.rows[i][k] * b.rows[j][k];
                }
                a.rows[i][j] = s + if i == j { n as f64 } else { 0.0 };
            }
        }
        let orig = a.clone();
        cholesky_in_place(&mut a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut y = orig.matvec(&x);
        forward_solve(&a, &mut y);
        backward_solve_transposed(&a, &mut y);
        for k in 0..n {
            assert_relative_eq!(y[k], x[k], max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = RowMat::from_fn(2, |i, j| if i == j { -1.0 } else { 0.0 });
        assert!(matches!(
            cholesky_in_place(&mut a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn identity_pencil_has_unit_eigenvalues() {
        let n = 12;
        let s = RowMat::identity(n);
        let m = RowMat::identity(n);
        let r = generalized_sym_eig(s, m, &GeneralizedEigOptions::default()).unwrap();
        assert_eq!(r.discarded_near_zero, 0);
        for lam in r.eigenvalues {
            assert_relative_eq!(lam, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn generalized_pencil_residuals_are_small() {
        let n = 20;
        let s_base = random_sym(n, 11);
        // S = s_base² is PSD; M = random SPD.
        let mut s = RowMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += s_base.rows[i][k] * s_base.rows[j][k];
                }
                s.rows[i][j] = acc;
            }
        }
        let b = random_sym(n, 13);
        let mut m = RowMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += b.rows[i][k] * b.rows[j][k];
                }
                m.rows[i][j] = acc + if i == j { n as f64 } else { 0.0 };
            }
        }
        let opts = GeneralizedEigOptions {
            wanted: None,
            zero_tol: 1e-12,
            want_vectors: true,
        };
        let r = generalized_sym_eig(s.clone(), m.clone(), &opts).unwrap();
        let s_norm = s.max_abs();
        let vecs = r.eigenvectors.as_ref().unwrap();
        for (lam, x) in r.eigenvalues.iter().zip(vecs) {
            let sx = s.matvec(x);
            let mx = m.matvec(x);
            let worst = sx
                .iter()
                .zip(&mx)
                .map(|(a, b)| (a - lam * b).abs())
                .fold(0.0f64, f64::max);
            let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(
                worst <= 1e-8 * s_norm * xn.max(1.0),
                "residual {worst:.3e} too large for lambda = {lam:.3e}"
            );
        }
    }
}
