//! Deterministic dense linear algebra: SVD, truncation, principal angles and
//! orthonormality utilities.
//!
//! Everything here is pure `f64` with fixed loop orders, so identical inputs
//! produce identical output bytes across runs and platforms.

use crate::error::{Error, Result};

/// Row-major dense matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Build from row-major data, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Parameter(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Validation(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite entry at flat index {idx}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Square diagonal matrix from the given entries.
    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in entries.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// Entrywise (Frobenius) inner product.
    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// First `k` columns as a new matrix.
    pub fn leading_columns(&self, k: usize) -> Self {
        assert!(k <= self.cols);
        Self::from_fn(self.rows, k, |i, j| self.get(i, j))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Full SVD `M = U diag(sigma) V^T` with `r = min(m, n)` columns.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

impl SvdResult {
    pub fn rank_dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let us = DenseMatrix::from_fn(self.u.rows(), self.sigma.len(), |i, j| {
            self.u.get(i, j) * self.sigma[j]
        });
        us.matmul(&self.v.transpose())
    }
}

/// Basis matrix with orthonormal columns, validated at construction.
#[derive(Debug, Clone)]
pub struct OrthonormalBasis {
    columns: DenseMatrix,
    tol: f64,
}

impl OrthonormalBasis {
    pub const DEFAULT_TOL: f64 = 1e-10;

    pub fn new(columns: DenseMatrix, tol: f64) -> Result<Self> {
        let gram = columns.transpose().matmul(&columns);
        let dev = gram.sub(&DenseMatrix::identity(columns.cols())).max_abs();
        if dev >= tol {
            return Err(Error::Validation(format!(
                "columns are not orthonormal: max |B^T B - I| = {dev:.3e} >= {tol:.3e}"
            )));
        }
        Ok(Self { columns, tol })
    }

    pub fn columns(&self) -> &DenseMatrix {
        &self.columns
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn dim(&self) -> usize {
        self.columns.rows()
    }

    pub fn rank(&self) -> usize {
        self.columns.cols()
    }

    /// First `k` columns as a new validated basis.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.rank() {
            return Err(Error::Parameter(format!(
                "truncation rank {k} out of range 1..={}",
                self.rank()
            )));
        }
        Self::new(self.columns.leading_columns(k), self.tol)
    }
}

const MAX_SWEEPS: usize = 60;

/// Full SVD by one-sided Jacobi rotations on the smaller-dimension side.
///
/// Sweeps until the off-diagonal Frobenius mass of the column Gram matrix
/// drops below `1e-14 * ||M||_F^2`; exceeding 60 sweeps is an error, never a
/// silent partial result. Sign convention: the largest-magnitude entry of each
/// left singular vector (first index wins ties) is made non-negative.
pub fn svd_full(m: &DenseMatrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::Validation("svd input has non-finite entries".into()));
    }
    if m.rows() >= m.cols() {
        svd_tall(m)
    } else {
        let t = svd_tall(&m.transpose())?;
        Ok(SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        })
    }
}

/// One-sided Jacobi for m >= n: orthogonalize the columns of a working copy A,
/// accumulating the right rotations into V. On exit sigma_j = ||a_j|| and
/// u_j = a_j / sigma_j; zero columns are completed by Gram-Schmidt.
fn svd_tall(m: &DenseMatrix) -> Result<SvdResult> {
    let (rows, n) = (m.rows(), m.cols());
    let mut a = m.clone();
    let mut v = DenseMatrix::identity(n);
    let fro_sq = m.frobenius_norm_sq();
    let threshold = 1e-14 * fro_sq;

    if fro_sq == 0.0 {
        // Zero matrix: sigma = 0, bases from Gram-Schmidt fill below.
        return assemble(&a, &v, rows, n);
    }

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut off_sq = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..rows {
                    let x = a.get(i, p);
                    let y = a.get(i, q);
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                off_sq += 2.0 * apq * apq;
                if apq == 0.0 || app == 0.0 || aqq == 0.0 {
                    continue;
                }
                // Jacobi rotation zeroing the (p,q) Gram entry.
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let x = a.get(i, p);
                    let y = a.get(i, q);
                    a.set(i, p, c * x - s * y);
                    a.set(i, q, s * x + c * y);
                }
                for i in 0..n {
                    let x = v.get(i, p);
                    let y = v.get(i, q);
                    v.set(i, p, c * x - s * y);
                    v.set(i, q, s * x + c * y);
                }
            }
        }
        if off_sq.sqrt() < threshold {
            converged = true;
            break;
        }
    }
    if !converged {
        // Re-measure once after the last sweep; the loop checks pre-sweep mass.
        let mut off_sq = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut apq = 0.0;
                for i in 0..rows {
                    apq += a.get(i, p) * a.get(i, q);
                }
                off_sq += 2.0 * apq * apq;
            }
        }
        if off_sq.sqrt() >= threshold {
            return Err(Error::Numerical(format!(
                "jacobi svd failed to converge within {MAX_SWEEPS} sweeps for {rows}x{n} matrix"
            )));
        }
    }
    assemble(&a, &v, rows, n)
}

fn assemble(a: &DenseMatrix, v: &DenseMatrix, rows: usize, n: usize) -> Result<SvdResult> {
    // Column norms are the singular values; sort descending with a stable
    // order so equal values keep the Jacobi ordering.
    let mut norms: Vec<f64> = (0..n)
        .map(|j| (0..rows).map(|i| a.get(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| norms[q].partial_cmp(&norms[p]).unwrap().then(p.cmp(&q)));
    norms.sort_by(|x, y| y.partial_cmp(x).unwrap());

    let sigma_max = norms.first().copied().unwrap_or(0.0);
    let zero_tol = sigma_max * f64::EPSILON * (rows.max(n) as f64);

    let mut u = DenseMatrix::zeros(rows, n);
    let mut v_sorted = DenseMatrix::zeros(n, n);
    let mut sigma = vec![0.0; n];
    let mut filled = 0usize;
    for (dst, &src) in order.iter().enumerate() {
        let norm = norms[dst];
        sigma[dst] = if norm > zero_tol { norm } else { 0.0 };
        if sigma[dst] > 0.0 {
            for i in 0..rows {
                u.set(i, dst, a.get(i, src) / norm);
            }
            filled = dst + 1;
        }
        for i in 0..n {
            v_sorted.set(i, dst, v.get(i, src));
        }
    }
    // Numerically rank-deficient input: complete U with an orthonormal basis
    // of the residual space so the orthonormality invariant holds.
    if filled < n {
        gram_schmidt_fill(&mut u, filled)?;
        for j in filled..n {
            sigma[j] = 0.0;
        }
    }
    apply_sign_convention(&mut u, &mut v_sorted);
    Ok(SvdResult {
        u,
        sigma,
        v: v_sorted,
    })
}

/// Fill columns `start..` of `u` with unit vectors orthogonal to the existing
/// columns, built deterministically from the canonical basis.
fn gram_schmidt_fill(u: &mut DenseMatrix, start: usize) -> Result<()> {
    let rows = u.rows();
    let cols = u.cols();
    let mut next = start;
    for cand in 0..rows {
        if next == cols {
            break;
        }
        let mut vec: Vec<f64> = vec![0.0; rows];
        vec[cand] = 1.0;
        // Two re-orthogonalization passes.
        for _ in 0..2 {
            for j in 0..next {
                let proj: f64 = (0..rows).map(|i| vec[i] * u.get(i, j)).sum();
                for i in 0..rows {
                    vec[i] -= proj * u.get(i, j);
                }
            }
        }
        let norm: f64 = vec.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.5 {
            for i in 0..rows {
                u.set(i, next, vec[i] / norm);
            }
            next += 1;
        }
    }
    if next < cols {
        return Err(Error::Numerical(
            "failed to complete orthonormal basis for rank-deficient svd".into(),
        ));
    }
    Ok(())
}

fn apply_sign_convention(u: &mut DenseMatrix, v: &mut DenseMatrix) {
    let rows = u.rows();
    for j in 0..u.cols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..rows {
            let a = u.get(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if u.get(best, j) < 0.0 {
            for i in 0..rows {
                u.set(i, j, -u.get(i, j));
            }
            for i in 0..v.rows() {
                v.set(i, j, -v.get(i, j));
            }
        }
    }
}

/// First `k` columns of U and V plus the first `k` singular values.
pub fn truncate(svd: &SvdResult, k: usize) -> Result<(OrthonormalBasis, OrthonormalBasis, Vec<f64>)> {
    let r = svd.sigma.len();
    if k == 0 || k > r {
        return Err(Error::Parameter(format!(
            "truncation rank {k} out of range 1..={r}"
        )));
    }
    let u_k = OrthonormalBasis::new(svd.u.leading_columns(k), OrthonormalBasis::DEFAULT_TOL)?;
    let v_k = OrthonormalBasis::new(svd.v.leading_columns(k), OrthonormalBasis::DEFAULT_TOL)?;
    Ok((u_k, v_k, svd.sigma[..k].to_vec()))
}

/// Principal angles in degrees between equal-rank subspaces, sorted ascending.
///
/// `angles_i = (180/pi) * arccos(sigma_i(B1^T B2))` with the arccos argument
/// clamped to [0, 1]; values above `1 + 1e-12` are a numerical error.
pub fn principal_angles(b1: &OrthonormalBasis, b2: &OrthonormalBasis) -> Result<Vec<f64>> {
    if b1.dim() != b2.dim() || b1.rank() != b2.rank() {
        return Err(Error::Parameter(format!(
            "basis shape mismatch: {}x{} vs {}x{}",
            b1.dim(),
            b1.rank(),
            b2.dim(),
            b2.rank()
        )));
    }
    let cross = b1.columns().transpose().matmul(b2.columns());
    let svd = svd_full(&cross)?;
    let mut angles = Vec::with_capacity(svd.sigma.len());
    for &s in &svd.sigma {
        if s > 1.0 + 1e-12 {
            return Err(Error::Numerical(format!(
                "cross-basis singular value {s} exceeds 1 beyond tolerance"
            )));
        }
        let c = s.clamp(0.0, 1.0);
        angles.push(c.acos().to_degrees().clamp(0.0, 90.0));
    }
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(angles)
}
