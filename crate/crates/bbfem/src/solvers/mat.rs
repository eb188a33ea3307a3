//! Row-major dense square matrix used by the direct solvers. Rows are
//! separate allocations so the hot kernels can hand disjoint rows to rayon.

#[derive(Clone, Debug)]
pub struct RowMat {
    pub n: usize,
    pub rows: Vec<Vec<f64>>,
}

impl RowMat {
    pub fn zeros(n: usize) -> Self {
        RowMat {
            n,
            rows: vec![vec![0.0; n]; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = RowMat::zeros(n);
        for i in 0..n {
            m.rows[i][i] = 1.0;
        }
        m
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        RowMat {
            n,
            rows: (0..n).map(|i| (0..n).map(|j| f(i, j)).collect()).collect(),
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.rows[i][j] = v;
    }

    pub fn transpose_in_place(&mut self) {
        for i in 0..self.n {
            for j in 0..i {
                let a = self.rows[i][j];
                let b = self.rows[j][i];
                self.rows[i][j] = b;
                self.rows[j][i] = a;
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Largest relative symmetry defect.
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self.max_abs().max(1e-300);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self.rows[i][j] - self.rows[j][i]).abs());
            }
        }
        worst / scale
    }
}
