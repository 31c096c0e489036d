//! Banded Cholesky, tridiagonal solves and the `D₂` comparison engine.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix not positive definite at pivot {0}")]
    NotPositiveDefinite(usize),
    #[error("zero pivot at row {0}")]
    ZeroPivot(usize),
    #[error("dimension mismatch")]
    Dimension,
}

/// Symmetric matrix stored by its lower band: `band[i][k] = A[i][i−k]`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    width: usize,
    band: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, width: usize) -> Self {
        Self { n, width, band: vec![0.0; n * (width + 1)] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    fn at(&self, i: usize, k: usize) -> usize {
        i * (self.width + 1) + k
    }

    /// Adds `v` to `A[i][j]` (and, implicitly, `A[j][i]`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        assert!(k <= self.width, "entry ({i},{j}) outside band {}", self.width);
        let idx = self.at(hi, k);
        self.band[idx] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        if k > self.width {
            0.0
        } else {
            self.band[self.at(hi, k)]
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            y[i] += self.band[self.at(i, 0)] * x[i];
            for k in 1..=self.width.min(i) {
                let a = self.band[self.at(i, k)];
                y[i] += a * x[i - k];
                y[i - k] += a * x[i];
            }
        }
        y
    }

    /// In-place Cholesky `A = L Lᵀ`, keeping `L` in the band.
    pub fn cholesky(mut self) -> Result<BandCholesky, LinalgError> {
        let w = self.width;
        let stride = w + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(w);
            for j in j0..=i {
                // L[i][j] = (A[i][j] − Σ_{k<j} L[i][k] L[j][k]) / L[j][j]
                let kmin = j0.max(j.saturating_sub(w));
                let mut sum = self.band[i * stride + (i - j)];
                let ri = i * stride;
                let rj = j * stride;
                for k in kmin..j {
                    sum -= self.band[ri + (i - k)] * self.band[rj + (j - k)];
                }
                if j == i {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite(i));
                    }
                    self.band[ri] = sum.sqrt();
                } else {
                    self.band[ri + (i - j)] = sum / self.band[rj];
                }
            }
        }
        Ok(BandCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    l: BandMatrix,
}

impl BandCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.l;
        let (n, w) = (l.n, l.width);
        let stride = w + 1;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 1..=w.min(i) {
                s -= l.band[i * stride + k] * y[i - k];
            }
            y[i] = s / l.band[i * stride];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in 1..=w.min(n - 1 - i) {
                s -= l.band[(i + k) * stride + k] * y[i + k];
            }
            y[i] = s / l.band[i * stride];
        }
        y
    }
}

/// Thomas algorithm for `sub[i] x[i−1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]`
/// (`sub[0]` and `sup[n−1]` ignored).
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = diag.len();
    if sub.len() != n || sup.len() != n || rhs.len() != n {
        return Err(LinalgError::Dimension);
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let prev_c = if i == 0 { 0.0 } else { c[i - 1] };
        let prev_d = if i == 0 { 0.0 } else { d[i - 1] };
        let a = if i == 0 { 0.0 } else { sub[i] };
        let m = diag[i] - a * prev_c;
        if m == 0.0 || !m.is_finite() {
            return Err(LinalgError::ZeroPivot(i));
        }
        c[i] = sup[i] / m;
        d[i] = (rhs[i] - a * prev_d) / m;
    }
    let mut x = d;
    for i in (0..n.saturating_sub(1)).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// The `N × N` matrix with 2 on the diagonal and −1 beside it.
pub fn d2_matrix(n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = 2.0;
        if i + 1 < n {
            m[i][i + 1] = -1.0;
            m[i + 1][i] = -1.0;
        }
    }
    m
}

/// `(N+1) × N` forward-difference matrix: `(Cx)_k = x_{k+1} − x_k` with
/// `x_0 = x_{N+1} = 0`, so that `CᵗC = D₂`.
pub fn difference_matrix(n: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; n]; n + 1];
    for k in 0..=n {
        if k < n {
            c[k][k] = 1.0;
        }
        if k >= 1 {
            c[k][k - 1] = -1.0;
        }
    }
    c
}

/// `CᵗC` of a dense row-major matrix.
pub fn gram(c: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = c.first().map_or(0, |r| r.len());
    let mut g = vec![vec![0.0; cols]; cols];
    for row in c {
        for (i, &a) in row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in row.iter().enumerate() {
                g[i][j] += a * b;
            }
        }
    }
    g
}

pub fn d2_apply(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = if i == 0 { 0.0 } else { x[i - 1] };
            let hi = if i + 1 == n { 0.0 } else { x[i + 1] };
            2.0 * x[i] - lo - hi
        })
        .collect()
}

/// `‖Cx‖² = Σ_{k=0}^{N} (x_{k+1} − x_k)²`, which equals `xᵗ D₂ x`.
pub fn difference_energy(x: &[f64]) -> f64 {
    let n = x.len();
    (0..=n)
        .map(|k| {
            let a = if k == 0 { 0.0 } else { x[k - 1] };
            let b = if k == n { 0.0 } else { x[k] };
            (b - a) * (b - a)
        })
        .sum()
}

/// Numerical Cholesky factor of a symmetric tridiagonal matrix: the lower
/// bidiagonal `L` as (diagonal, subdiagonal).
pub fn tridiagonal_cholesky(diag: &[f64], off: &[f64]) -> Result<(Vec<f64>, Vec<f64>), LinalgError> {
    let n = diag.len();
    if off.len() + 1 != n.max(1) {
        return Err(LinalgError::Dimension);
    }
    let mut l = vec![0.0; n];
    let mut sub = vec![0.0; off.len()];
    for i in 0..n {
        let mut d = diag[i];
        if i > 0 {
            sub[i - 1] = off[i - 1] / l[i - 1];
            d -= sub[i - 1] * sub[i - 1];
        }
        if !(d > 0.0) {
            return Err(LinalgError::NotPositiveDefinite(i));
        }
        l[i] = d.sqrt();
    }
    Ok((l, sub))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComparisonOutcome {
    /// `x ≥ 0` and `D₂x ≤ 0` do not both hold.
    HypothesisFails,
    /// Both hold and `x = 0`.
    Zero,
    /// Both hold but `x ≠ 0`; impossible for exact arithmetic.
    Violation,
}

/// Checks the implication `x ≥ 0, D₂x ≤ 0 ⇒ x = 0`.
pub fn comparison_closes(x: &[f64]) -> ComparisonOutcome {
    let nonneg = x.iter().all(|v| *v >= 0.0);
    let d2x = d2_apply(x);
    if !nonneg || d2x.iter().any(|v| *v > 0.0) {
        return ComparisonOutcome::HypothesisFails;
    }
    if x.iter().all(|v| *v == 0.0) {
        ComparisonOutcome::Zero
    } else {
        ComparisonOutcome::Violation
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_cholesky_solves_laplacian() {
        let n = 50;
        let mut a = BandMatrix::zeros(n, 2);
        for i in 0..n {
            a.add(i, i, 4.0);
            if i + 1 < n {
                a.add(i, i + 1, -1.0);
            }
            if i + 2 < n {
                a.add(i + 2, i, -0.5);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = a.mul_vec(&x);
        let sol = a.clone().cholesky().unwrap().solve(&b);
        for (u, v) in sol.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
        assert_eq!(a.get(0, 2), -0.5);
        assert_eq!(a.get(0, 3), 0.0);
    }

    #[test]
    fn band_cholesky_rejects_indefinite() {
        let mut a = BandMatrix::zeros(3, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, -1.0);
        a.add(2, 2, 1.0);
        assert_eq!(a.cholesky().unwrap_err(), LinalgError::NotPositiveDefinite(1));
    }

    #[test]
    fn thomas_matches_dense() {
        let sub = [0.0, -1.0, -1.0, -1.0];
        let diag = [2.0, 2.0, 2.0, 2.0];
        let sup = [-1.0, -1.0, -1.0, 0.0];
        let x = solve_tridiagonal(&sub, &diag, &sup, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn d2_factorization_small() {
        let c = difference_matrix(3);
        assert_eq!(gram(&c), d2_matrix(3));
        let (l, sub) = tridiagonal_cholesky(&[2.0; 3], &[-1.0; 2]).unwrap();
        assert!((l[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((sub[0] + 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((l[2] * l[2] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn comparison_outcomes() {
        assert_eq!(comparison_closes(&[0.0; 4]), ComparisonOutcome::Zero);
        assert_eq!(comparison_closes(&[1.0, 2.0, 1.0]), ComparisonOutcome::HypothesisFails);
        assert_eq!(comparison_closes(&[-1.0, 0.0]), ComparisonOutcome::HypothesisFails);
        assert_eq!(difference_energy(&[1.0, 2.0, 1.0]), 1.0 + 1.0 + 1.0 + 1.0);
    }
}
