//! Dense symmetric linear algebra.
//!
//! [`SymMatrix`] stores the full `n × n` array row-major and keeps it exactly
//! symmetric: every mutating entry point writes both triangles. Eigenvalue work
//! is delegated to `nalgebra`'s symmetric QR solver; factorizations and the
//! rank-one inverse update are implemented here because they sit on the hot
//! path of the separation solver and the barrier master solver.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

/// Errors raised by the linear algebra routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Cholesky broke down: the matrix is not (numerically) positive definite.
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    /// `1 + delta * V[i][i] <= 0` in a rank-one inverse update.
    #[error("rank-one update violates the step bound: 1 + delta*V_ii = {denom:e}")]
    StepBound { denom: f64 },
    #[error("symmetric eigen-solve did not converge")]
    EigenFailure,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Dense symmetric real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1, "SymMatrix dimension must be positive");
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on the upper triangle (`i <= j`).
    pub fn from_upper_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m.data[i * n + j] = v;
                m.data[j * n + i] = v;
            }
        }
        m
    }

    /// Builds a matrix from full rows.
    ///
    /// Entries must be finite. Small asymmetries (relative `1e-9`) are averaged
    /// away; anything larger is rejected.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(LinalgError::InvalidInput("empty matrix".into()));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(LinalgError::InvalidInput(format!(
                "row {bad} has length {}, expected {n}",
                rows[bad].len()
            )));
        }
        let mut scale = 0.0f64;
        for r in rows {
            for &v in r {
                if !v.is_finite() {
                    return Err(LinalgError::InvalidInput("non-finite entry".into()));
                }
                scale = scale.max(v.abs());
            }
        }
        let tol = 1e-9 * (1.0 + scale);
        for i in 0..n {
            for j in (i + 1)..n {
                if (rows[i][j] - rows[j][i]).abs() > tol {
                    return Err(LinalgError::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j}): {} vs {}",
                        rows[i][j], rows[j][i]
                    )));
                }
            }
        }
        Ok(Self::from_upper_fn(n, |i, j| 0.5 * (rows[i][j] + rows[j][i])))
    }

    /// Row-major full storage, `n * n` entries. Must be symmetric.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(LinalgError::InvalidInput(format!(
                "expected {} entries for n = {n}, got {}",
                n * n,
                data.len()
            )));
        }
        let rows: Vec<Vec<f64>> = data.chunks(n).map(|c| c.to_vec()).collect();
        Self::from_rows(&rows)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sets entries `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Full row-major storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(|c| c.to_vec()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `A + diag(d)`.
    pub fn add_diag(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.n);
        let mut m = self.clone();
        for (i, &di) in d.iter().enumerate() {
            m.data[i * self.n + i] += di;
        }
        m
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scaled(-1.0))
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        self.data
            .chunks(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Plain (non-symmetric) product, used for residual checks.
    pub fn matmul(&self, other: &Self) -> Vec<f64> {
        let n = self.n;
        assert_eq!(n, other.n);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let a_row = self.row(i);
            let out_row = &mut out[i * n..(i + 1) * n];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// `vectors[k]` is the unit eigenvector for `values[k]`.
    pub vectors: Vec<Vec<f64>>,
}

pub fn sym_eigen(a: &SymMatrix) -> Result<SymEigen> {
    if !a.is_finite() {
        return Err(LinalgError::InvalidInput("non-finite entry".into()));
    }
    let eig = SymmetricEigen::try_new(a.to_nalgebra(), f64::EPSILON, 0)
        .ok_or(LinalgError::EigenFailure)?;
    let mut order: Vec<usize> = (0..a.n()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = order
        .iter()
        .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
        .collect();
    Ok(SymEigen { values, vectors })
}

fn eigenvalues(a: &SymMatrix) -> Result<Vec<f64>> {
    if !a.is_finite() {
        return Err(LinalgError::InvalidInput("non-finite entry".into()));
    }
    Ok(a.to_nalgebra().symmetric_eigenvalues().iter().copied().collect())
}

pub fn min_eigenvalue(a: &SymMatrix) -> Result<f64> {
    Ok(eigenvalues(a)?.into_iter().fold(f64::INFINITY, f64::min))
}

pub fn max_eigenvalue(a: &SymMatrix) -> Result<f64> {
    Ok(eigenvalues(a)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Matrix 2-norm, `max |λ|`.
pub fn spectral_norm(a: &SymMatrix) -> Result<f64> {
    Ok(eigenvalues(a)?.into_iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// Splits `A = A⁺ + A⁻` into its positive and negative semidefinite parts.
pub fn psd_split(a: &SymMatrix) -> Result<(SymMatrix, SymMatrix)> {
    let n = a.n();
    let eig = sym_eigen(a)?;
    let mut plus = SymMatrix::zeros(n);
    let mut minus = SymMatrix::zeros(n);
    for (lam, v) in eig.values.iter().zip(&eig.vectors) {
        let target = if *lam > 0.0 { &mut plus } else { &mut minus };
        for i in 0..n {
            let li = lam * v[i];
            for j in i..n {
                let val = target.get(i, j) + li * v[j];
                target.set(i, j, val);
            }
        }
    }
    Ok((plus, minus))
}

/// Lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    /// Row-major lower triangle; the strict upper part is zero.
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors a row-major `n × n` symmetric array; only the lower triangle is read.
    pub fn factor_slice(n: usize, a: &[f64]) -> Result<Self> {
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut diag = a[j * n + j];
            let lj = &l[j * n..j * n + j];
            diag -= lj.iter().map(|v| v * v).sum::<f64>();
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(LinalgError::NotPositiveDefinite {
                    pivot: j,
                    value: diag,
                });
            }
            let djj = diag.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let (head, tail) = l.split_at_mut(i * n);
                let lj = &head[j * n..j * n + j];
                let li = &tail[..j];
                let dot: f64 = li.iter().zip(lj).map(|(x, y)| x * y).sum();
                tail[j] = (a[i * n + j] - dot) / djj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn factor(a: &SymMatrix) -> Result<Self> {
        Self::factor_slice(a.n(), a.as_slice())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
            b[i] = (b[i] - s) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.n;
        // L⁻¹ by forward substitution, then A⁻¹ = L⁻ᵀ L⁻¹.
        let mut linv = vec![0.0; n * n];
        for j in 0..n {
            linv[j * n + j] = 1.0 / self.l[j * n + j];
            for i in (j + 1)..n {
                let mut s = 0.0;
                for k in j..i {
                    s += self.l[i * n + k] * linv[k * n + j];
                }
                linv[i * n + j] = -s / self.l[i * n + i];
            }
        }
        SymMatrix::from_upper_fn(n, |i, j| {
            // (L⁻ᵀ L⁻¹)_ij = Σ_{k ≥ max(i,j)} linv[k][i] linv[k][j]
            (j..n).map(|k| linv[k * n + i] * linv[k * n + j]).sum()
        })
    }
}

/// Inverse of a positive definite matrix; `NotPositiveDefinite` otherwise.
pub fn invert_pd(a: &SymMatrix) -> Result<SymMatrix> {
    if !a.is_finite() {
        return Err(LinalgError::InvalidInput("non-finite entry".into()));
    }
    Ok(Cholesky::factor(a)?.inverse())
}

pub fn is_positive_definite(a: &SymMatrix) -> bool {
    Cholesky::factor(a).is_ok()
}

/// Given `V = A⁻¹`, returns `(A + delta·E_ii)⁻¹` by Sherman–Morrison.
pub fn rank1_update_inverse(v: &SymMatrix, i: usize, delta: f64) -> Result<SymMatrix> {
    let mut out = v.clone();
    rank1_update_inverse_in_place(&mut out, i, delta)?;
    Ok(out)
}

/// In-place form of [`rank1_update_inverse`]. Writes the upper triangle and
/// mirrors it, so the result is exactly symmetric.
pub fn rank1_update_inverse_in_place(v: &mut SymMatrix, i: usize, delta: f64) -> Result<()> {
    let n = v.n;
    assert!(i < n, "index {i} out of range for n = {n}");
    if delta == 0.0 {
        return Ok(());
    }
    let vii = v.data[i * n + i];
    let denom = 1.0 + delta * vii;
    if !(denom > 0.0) {
        return Err(LinalgError::StepBound { denom });
    }
    let coef = delta / denom;
    let col: Vec<f64> = v.row(i).to_vec();
    for r in 0..n {
        let cr = coef * col[r];
        if cr == 0.0 {
            continue;
        }
        let row = &mut v.data[r * n..(r + 1) * n];
        for (x, &c) in row[r..].iter_mut().zip(&col[r..]) {
            *x -= cr * c;
        }
    }
    for r in 0..n {
        for c in (r + 1)..n {
            v.data[c * n + r] = v.data[r * n + c];
        }
    }
    Ok(())
}

/// `‖A B − I‖_∞` (max absolute row sum).
pub fn inverse_residual(a: &SymMatrix, b: &SymMatrix) -> f64 {
    let n = a.n();
    let prod = a.matmul(b);
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let e = if i == j { 1.0 } else { 0.0 };
                    (prod[i * n + j] - e).abs()
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}
