//! Small dense linear algebra.
//!
//! Everything here works on row-major `f64` matrices of at most a few hundred
//! rows. Two independent Jacobi routines do the heavy lifting:
//!
//! * [`sym_eigen`]: cyclic two-sided Jacobi for symmetric matrices.
//! * [`svd`]: one-sided (Hestenes) Jacobi applied to the matrix itself, which
//!   keeps small singular values accurate relative to `σ_1` instead of losing
//!   half the digits through a Gram matrix.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Singular values below `ZERO_CLAMP * σ_1` are treated as exact zeros when a
/// quasi-norm with `q < 1` is evaluated.
pub const ZERO_CLAMP: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 80;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting shape mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::input(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        let m = Self { rows, cols, data };
        m.check_finite()?;
        Ok(m)
    }

    /// Panics on ragged input; meant for literals and tests.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
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

    /// Outer product `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    /// Standard normal entries drawn in row-major order.
    pub fn gaussian(rows: usize, cols: usize, rng: &mut SeededRng) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.normal())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::input("matrix has non-finite entries"))
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::input(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::input(format!(
                "vector of length {} does not match {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::input(format!(
                "vector of length {} does not match {} rows",
                x.len(),
                self.rows
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += xi * m;
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::input("shape mismatch in subtraction"));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// `D_s · self`: scales row `i` by `s[i]`.
    pub fn scale_rows(&self, s: &[f64]) -> Matrix {
        assert_eq!(s.len(), self.rows);
        let mut out = self.clone();
        for (i, &si) in s.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|x| *x *= si);
        }
        out
    }

    /// `self · D_s`: scales column `j` by `s[j]`.
    pub fn scale_cols(&self, s: &[f64]) -> Matrix {
        assert_eq!(s.len(), self.cols);
        Matrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)] * s[j])
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows).map(|i| norm2(self.row(i))).collect()
    }

    /// `self selfᵀ` computed directly (symmetric by construction).
    pub fn gram_rows(&self) -> Matrix {
        let mut g = Matrix::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in 0..=i {
                let v = dot(self.row(i), self.row(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// Keeps the first `k` columns.
    pub fn leading_cols(&self, k: usize) -> Matrix {
        Matrix::from_fn(self.rows, k, |i, j| self[(i, j)])
    }

    /// Largest deviation of `selfᵀself` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.transpose().gram_rows();
        let mut worst: f64 = 0.0;
        for i in 0..g.rows {
            for j in 0..g.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Descending, non-negative singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum(Vec<f64>);

impl Spectrum {
    /// Sorts descending; rejects negative or non-finite values.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::input("spectrum values must be finite and non-negative"));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn largest(&self) -> f64 {
        self.0.first().copied().unwrap_or(0.0)
    }

    /// Number of values strictly above `rel_tol * σ_1`; zero for a zero spectrum.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let s1 = self.largest();
        if s1 == 0.0 {
            return 0;
        }
        self.0.iter().filter(|&&s| s > rel_tol * s1).count()
    }

    /// Values with everything below `ZERO_CLAMP * σ_1` set to zero.
    pub fn clamped(&self) -> Vec<f64> {
        let cut = ZERO_CLAMP * self.largest();
        self.0.iter().map(|&s| if s < cut { 0.0 } else { s }).collect()
    }

    /// `Σ σ_k^q`, with near-zero values clamped when `q < 1`.
    pub fn power_sum(&self, q: f64) -> f64 {
        let vals = if q < 1.0 { self.clamped() } else { self.0.clone() };
        vals.iter().filter(|&&s| s > 0.0).map(|s| s.powf(q)).sum()
    }

    /// `(Σ σ_k^q)^{1/q}`, evaluated relative to `σ_1` to avoid overflow for
    /// small `q`.
    pub fn quasi_norm(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::param(format!("Schatten exponent must be positive, got {q}")));
        }
        let s1 = self.largest();
        if s1 == 0.0 {
            return Ok(0.0);
        }
        let vals = if q < 1.0 { self.clamped() } else { self.0.clone() };
        let rel: f64 = vals.iter().filter(|&&s| s > 0.0).map(|s| (s / s1).powf(q)).sum();
        Ok(s1 * rel.powf(1.0 / q))
    }
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues sorted descending.
    pub values: Vec<f64>,
    /// Matching unit eigenvectors stored as columns.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigensolver. Only the symmetric part of `a` is used.
pub fn sym_eigen(a: &Matrix) -> Result<SymEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::input("eigendecomposition needs a square matrix"));
    }
    a.check_finite()?;
    let mut m = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Matrix::identity(n);
    let scale = m.frobenius();
    if scale > 0.0 {
        for _ in 0..JACOBI_MAX_SWEEPS {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)] * m[(i, j)])
                .sum();
            if off.sqrt() <= 1e-15 * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m[(p, q)];
                    if apq.abs() <= f64::MIN_POSITIVE {
                        continue;
                    }
                    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok(SymEigen { values, vectors })
}

/// Thin singular value decomposition `M = U diag(s) Vᵀ`.
///
/// `u` is `rows × k` and `v` is `cols × k` with `k = min(rows, cols)`.
/// Columns paired with an exactly zero singular value are left as zeros.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

/// One-sided Jacobi SVD.
pub fn svd(m: &Matrix) -> Result<Svd> {
    m.check_finite()?;
    if m.rows() < m.cols() {
        let t = svd_tall(&m.transpose());
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    Ok(svd_tall(m))
}

/// Hestenes iteration on the columns of a matrix with `rows >= cols`.
fn svd_tall(m: &Matrix) -> Svd {
    let (rows, n) = m.shape();
    // Column-major working copy so column pairs are contiguous.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| m.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let eps = 1e-15;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                rotate(&mut left[p], &mut right[0], c, s);
                let (left, right) = v.split_at_mut(q);
                rotate(&mut left[p], &mut right[0], c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = cols.iter().map(|c| norm2(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let u = Matrix::from_fn(rows, n, |i, k| {
        let j = order[k];
        if norms[j] > 0.0 {
            cols[j][i] / norms[j]
        } else {
            0.0
        }
    });
    let vm = Matrix::from_fn(n, n, |i, k| v[order[k]][i]);
    Svd { u, s, v: vm }
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xa, yb) = (*x, *y);
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

/// Descending singular values, `min(rows, cols)` of them.
pub fn svd_values(m: &Matrix) -> Result<Spectrum> {
    Spectrum::new(svd(m)?.s)
}

/// Schatten-`q` (quasi-)norm `(Σ σ_k^q)^{1/q}`.
pub fn schatten_qnorm(m: &Matrix, q: f64) -> Result<f64> {
    if q.is_nan() || q <= 0.0 {
        return Err(Error::param(format!("Schatten exponent must be positive, got {q}")));
    }
    svd_values(m)?.quasi_norm(q)
}

/// `‖M‖_{2,1}`: the sum of Euclidean row norms.
pub fn norm_2_1(m: &Matrix) -> f64 {
    m.row_norms().iter().sum()
}

/// Numerical rank relative to `σ_1`.
pub fn rank(m: &Matrix, rel_tol: f64) -> Result<usize> {
    Ok(svd_values(m)?.rank(rel_tol))
}

const ORTHONORMAL_TOL: f64 = 1e-8;

/// `‖V1 V1ᵀ − V2 V2ᵀ‖_op`, the sine of the largest principal angle between
/// the column spans.
pub fn subspace_distance(v1: &Matrix, v2: &Matrix) -> Result<f64> {
    if v1.shape() != v2.shape() {
        return Err(Error::input(format!(
            "subspace bases have shapes {:?} and {:?}",
            v1.shape(),
            v2.shape()
        )));
    }
    for (name, v) in [("first", v1), ("second", v2)] {
        v.check_finite()?;
        let err = v.orthonormality_error();
        if err > ORTHONORMAL_TOL {
            return Err(Error::input(format!(
                "{name} basis is not orthonormal (Gram deviation {err:.3e})"
            )));
        }
    }
    let p1 = v1.gram_rows();
    let p2 = v2.gram_rows();
    let diff = p1.sub(&p2)?;
    let eig = sym_eigen(&diff)?;
    let op = eig.values.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    Ok(op.min(1.0))
}

/// First `r` columns of a random orthogonal `d × d` matrix.
///
/// A `d × r` standard Gaussian matrix (entries drawn row-major) is
/// orthonormalised by modified Gram-Schmidt with one reorthogonalisation
/// pass, which is the thin QR factor with a positive diagonal in `R`.
pub fn random_orthogonal_cols(d: usize, r: usize, rng: &mut SeededRng) -> Result<Matrix> {
    if r > d {
        return Err(Error::param(format!("cannot draw {r} orthonormal columns in dimension {d}")));
    }
    let g = Matrix::gaussian(d, r, rng);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(r);
    for j in 0..r {
        let mut col = g.col(j);
        for _ in 0..2 {
            for prev in &q {
                let proj = dot(prev, &col);
                col.iter_mut().zip(prev).for_each(|(c, p)| *c -= proj * p);
            }
        }
        let nrm = norm2(&col);
        if nrm < 1e-12 {
            return Err(Error::input("degenerate Gaussian draw during orthonormalisation"));
        }
        col.iter_mut().for_each(|c| *c /= nrm);
        q.push(col);
    }
    Ok(Matrix::from_fn(d, r, |i, j| q[j][i]))
}
