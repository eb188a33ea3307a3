//! Dense symmetric-indefinite factorization (Bunch-Kaufman pivoting with
//! 1x1 and 2x2 diagonal blocks) on full symmetric storage.

use super::mat::RowMat;
use crate::error::{Error, Result};
use rayon::prelude::*;

const ALPHA: f64 = 0.6403882032022076; // (1 + sqrt(17)) / 8

#[derive(Clone, Copy, Debug)]
enum Pivot {
    /// 1x1 block at column k.
    Single,
    /// 2x2 block at columns (k, k+1).
    Double,
}

/// `P A Pᵀ = L D Lᵀ` with unit lower-triangular `L` and block-diagonal `D`.
pub struct LdltFactor {
    a: RowMat,
    pivots: Vec<Option<Pivot>>,
    /// Row/column interchanges in application order: (step k, swapped row).
    swaps: Vec<(usize, usize)>,
}

impl LdltFactor {
    /// Factorizes a symmetric matrix (full storage; the strict upper triangle
    /// is trusted to mirror the lower one).
    pub fn new(mut a: RowMat) -> Result<Self> {
        let n = a.n;
        let mut pivots: Vec<Option<Pivot>> = vec![None; n];
        let mut swaps = Vec::new();
        let mut k = 0usize;
        while k < n {
            let absakk = a.rows[k][k].abs();
            let (imax, colmax) = {
                let mut im = k;
                let mut cm = 0.0f64;
                for i in k + 1..n {
                    let v = a.rows[i][k].abs();
                    if v > cm {
                        cm = v;
                        im = i;
                    }
                }
                (im, cm)
            };
            if absakk.max(colmax) == 0.0 {
                return Err(Error::SingularSystem(format!(
                    "zero pivot column at step {k}"
                )));
            }

            let (kstep, kp) = if absakk >= ALPHA * colmax {
                (Pivot::Single, k)
            } else {
                let mut rowmax = 0.0f64;
                for j in k..n {
                    if j != imax {
                        rowmax = rowmax.max(a.rows[imax][j].abs());
                    }
                }
                if absakk * rowmax >= ALPHA * colmax * colmax {
                    (Pivot::Single, k)
                } else if a.rows[imax][imax].abs() >= ALPHA * rowmax {
                    (Pivot::Single, imax)
                } else {
                    (Pivot::Double, imax)
                }
            };

            let kk = match kstep {
                Pivot::Single => k,
                Pivot::Double => k + 1,
            };
            if kp != kk {
                swap_sym(&mut a, kk, kp);
                swaps.push((kk, kp));
            }

            match kstep {
                Pivot::Single => {
                    let d = a.rows[k][k];
                    if d == 0.0 {
                        return Err(Error::SingularSystem(format!("zero 1x1 pivot at {k}")));
                    }
                    let w: Vec<f64> = (k + 1..n).map(|i| a.rows[i][k]).collect();
                    let (_, tail) = a.rows.split_at_mut(k + 1);
                    tail.par_iter_mut().enumerate().for_each(|(off, row)| {
                        let li = w[off] / d;
                        for (j, wj) in w.iter().enumerate() {
                            row[k + 1 + j] -= li * wj;
                        }
                        row[k] = li;
                    });
                    for i in k + 1..n {
                        a.rows[k][i] = a.rows[i][k];
                    }
                    pivots[k] = Some(Pivot::Single);
                    k += 1;
                }
                Pivot::Double => {
                    let d11 = a.rows[k][k];
                    let d21 = a.rows[k + 1][k];
                    let d22 = a.rows[k + 1][k + 1];
                    let det = d11 * d22 - d21 * d21;
                    if det == 0.0 {
                        return Err(Error::SingularSystem(format!("zero 2x2 pivot at {k}")));
                    }
                    let w1: Vec<f64> = (k + 2..n).map(|i| a.rows[i][k]).collect();
                    let w2: Vec<f64> = (k + 2..n).map(|i| a.rows[i][k + 1]).collect();
                    let (_, tail) = a.rows.split_at_mut(k + 2);
                    tail.par_iter_mut().enumerate().for_each(|(off, row)| {
                        let l1 = (d22 * w1[off] - d21 * w2[off]) / det;
                        let l2 = (d11 * w2[off] - d21 * w1[off]) / det;
                        for j in 0..w1.len() {
                            row[k + 2 + j] -= l1 * w1[j] + l2 * w2[j];
                        }
                        row[k] = l1;
                        row[k + 1] = l2;
                    });
                    for i in k + 2..n {
                        a.rows[k][i] = a.rows[i][k];
                        a.rows[k + 1][i] = a.rows[i][k + 1];
                    }
                    pivots[k] = Some(Pivot::Double);
                    k += 2;
                }
            }
        }
        Ok(LdltFactor { a, pivots, swaps })
    }

    pub fn n(&self) -> usize {
        self.a.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.a.n;
        for &(i, j) in &self.swaps {
            b.swap(i, j);
        }
        // Forward substitution with unit-lower L.
        let mut k = 0;
        while k < n {
            match self.pivots[k].unwrap() {
                Pivot::Single => {
                    let bk = b[k];
                    for i in k + 1..n {
                        b[i] -= self.a.rows[i][k] * bk;
                    }
                    k += 1;
                }
                Pivot::Double => {
                    let bk = b[k];
                    let bk1 = b[k + 1];
                    for i in k + 2..n {
                        b[i] -= self.a.rows[i][k] * bk + self.a.rows[i][k + 1] * bk1;
                    }
                    k += 2;
                }
            }
        }
        // Block-diagonal solve.
        let mut k = 0;
        while k < n {
            match self.pivots[k].unwrap() {
                Pivot::Single => {
                    b[k] /= self.a.rows[k][k];
                    k += 1;
                }
                Pivot::Double => {
                    let d11 = self.a.rows[k][k];
                    let d21 = self.a.rows[k + 1][k];
                    let d22 = self.a.rows[k + 1][k + 1];
                    let det = d11 * d22 - d21 * d21;
                    let (b1, b2) = (b[k], b[k + 1]);
                    b[k] = (d22 * b1 - d21 * b2) / det;
                    b[k + 1] = (d11 * b2 - d21 * b1) / det;
                    k += 2;
                }
            }
        }
        // Back substitution with Lᵀ, walking blocks in descending order.
        // `pivots` is `Some` at block starts and `None` at the trailing
        // column of a 2x2 block.
        let mut k = n;
        while k > 0 {
            k -= 1;
            match self.pivots[k] {
                Some(Pivot::Single) => {
                    let mut s = b[k];
                    for i in k + 1..n {
                        s -= self.a.rows[i][k] * b[i];
                    }
                    b[k] = s;
                }
                None => {
                    // Second column of the 2x2 block starting at k-1.
                    let kb = k - 1;
                    let mut s0 = b[kb];
                    let mut s1 = b[k];
                    for i in k + 1..n {
                        s0 -= self.a.rows[i][kb] * b[i];
                        s1 -= self.a.rows[i][k] * b[i];
                    }
                    b[kb] = s0;
                    b[k] = s1;
                    k -= 1;
                }
                Some(Pivot::Double) => unreachable!("double block visited from its tail"),
            }
        }
        for &(i, j) in self.swaps.iter().rev() {
            b.swap(i, j);
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

fn swap_sym(a: &mut RowMat, p: usize, q: usize) {
    if p == q {
        return;
    }
    a.rows.swap(p, q);
    let n = a.n;
    for i in 0..n {
        let row = &mut a.rows[i];
        row.swap(p, q);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solve_residual(a: &RowMat, f: &LdltFactor, seed: u64) -> f64 {
        let n = a.n;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x_true: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = a.matvec(&x_true);
        let x = f.solve(&b);
        let r = a.matvec(&x);
        let num = r
            .iter()
            .zip(&b)
            .map(|(ri, bi)| (ri - bi) * (ri - bi))
            .sum::<f64>()
            .sqrt();
        let den = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        num / den
    }

    #[test]
    fn solves_random_indefinite_systems() {
        for n in [1usize, 2, 3, 17, 60] {
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let mut a = RowMat::zeros(n);
            for i in 0..n {
                for j in 0..=i {
                    let v = rng.random_range(-1.0..1.0);
                    a.rows[i][j] = v;
                    a.rows[j][i] = v;
                }
            }
            let f = LdltFactor::new(a.clone()).unwrap();
            assert!(solve_residual(&a, &f, 99) < 1e-11, "n = {n}");
        }
    }

    #[test]
    fn solves_saddle_point_structure() {
        // [[I, Bᵀ],[B, 0]] with zero trailing diagonal forces 2x2 pivots.
        let nv = 8;
        let np = 4;
        let n = nv + np;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = RowMat::zeros(n);
        for i in 0..nv {
            a.rows[i][i] = 1.0;
        }
        for p in 0..np {
            for v in 0..nv {
                let val = rng.random_range(-1.0..1.0);
                a.rows[nv + p][v] = val;
                a.rows[v][nv + p] = val;
            }
        }
        let f = LdltFactor::new(a.clone()).unwrap();
        assert!(solve_residual(&a, &f, 7) < 1e-11);
    }

    #[test]
    fn reports_singularity() {
        let a = RowMat::zeros(3);
        assert!(LdltFactor::new(a).is_err());
    }
}
