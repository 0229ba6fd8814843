//! Dense symmetric solves for the IRLS normal equations.

/// Lower-triangular Cholesky factor of a symmetric positive semi-definite
/// matrix, with columns that are numerically dependent on earlier ones
/// marked as aliased and excluded from the factor.
pub(crate) struct Cholesky {
    n: usize,
    l: Vec<f64>,
    pub aliased: Vec<bool>,
}

impl Cholesky {
    /// `a` is row-major `n x n`; only the lower triangle is read. `reference`
    /// holds the per-column scale the pivot is compared against, and `fixed`
    /// marks columns to exclude up front.
    pub fn factor(a: &[f64], n: usize, reference: &[f64], tol: f64, fixed: &[bool]) -> Self {
        let mut l = vec![0.0; n * n];
        let mut aliased = fixed.to_vec();
        for j in 0..n {
            if aliased[j] {
                continue;
            }
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > tol * reference[j]) || !d.is_finite() {
                aliased[j] = true;
                continue;
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                if aliased[i] {
                    continue;
                }
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Cholesky { n, l, aliased }
    }

    /// Solves `A x = b` on the non-aliased block; aliased entries of `x` are 0.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            if self.aliased[i] {
                continue;
            }
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            if self.aliased[i] {
                continue;
            }
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * x[k];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }

    /// Diagonal of the inverse restricted to the non-aliased block.
    pub fn inverse_diagonal(&self) -> Vec<Option<f64>> {
        let n = self.n;
        let mut out = vec![None; n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            if self.aliased[j] {
                continue;
            }
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            out[j] = Some(self.solve(&e)[j]);
        }
        out
    }
}
