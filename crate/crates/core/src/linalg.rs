//! Small dense symmetric linear algebra.
//!
//! Everything here operates on matrices of at most a few dozen rows: edge
//! weight blocks of size `D = d + d'` and block Laplacians of size `n * D`.
//! The eigensolver is a cyclic Jacobi sweep, which is accurate for symmetric
//! input and fully deterministic.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{EdgeMap, Topology};

/// Default numerical-zero threshold, relative to the largest |eigenvalue|.
pub const DEFAULT_TOL: f64 = 1e-9;

const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense row-major real matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
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

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.concat(),
        })
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(ambient: usize, columns: &[Vec<f64>]) -> Self {
        let mut m = Self::zeros(ambient, columns.len());
        for (j, col) in columns.iter().enumerate() {
            for (i, &x) in col.iter().enumerate() {
                m[(i, j)] = x;
            }
        }
        m
    }

    /// `u v^T`
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut m = Self::zeros(u.len(), v.len());
        for (i, &a) in u.iter().enumerate() {
            for (j, &b) in v.iter().enumerate() {
                m[(i, j)] = a * b;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest entrywise |a_ij - a_ji|.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Symmetric within `tol` relative to the largest entry.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square() && self.asymmetry() <= tol * self.max_abs().max(1.0)
    }

    /// Copies `block` into position `(r0, c0)`, adding to what is there.
    pub fn add_block(&mut self, r0: usize, c0: usize, block: &Matrix, sign: f64) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] += sign * block[(i, j)];
            }
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add<&Matrix> for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub<&Matrix> for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl AddAssign<&Matrix> for Matrix {
    fn add_assign(&mut self, rhs: &Matrix) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl Mul<&Matrix> for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for x in self.row(i) {
                write!(f, "{x:>12.6} ")?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// Orthogonal projector `v v^T / (v^T v)` onto the line through `v`.
pub fn projector(v: &[f64]) -> Result<Matrix> {
    let vv = dot(v, v);
    if vv == 0.0 || !vv.is_finite() {
        return Err(Error::DegenerateInput(
            "projector requires a nonzero finite vector".into(),
        ));
    }
    Ok(Matrix::outer(v, v).scale(1.0 / vv))
}

/// Eigenvalues in ascending order with matching orthonormal eigenvectors
/// stored as the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEigen {
    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.column(i)
    }

    pub fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Absolute cut-off below which an eigenvalue counts as zero.
    pub fn zero_threshold(&self, tol: f64) -> f64 {
        tol * self.max_abs_value()
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eigen(m: &Matrix) -> Result<SymEigen> {
    if !m.is_square() {
        return Err(Error::InvalidInput(format!(
            "eigendecomposition of a non-square {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    if !m.is_symmetric(DEFAULT_TOL) {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (asymmetry {:e})",
            m.asymmetry()
        )));
    }
    let n = m.rows();
    let mut a = m.clone();
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = s;
            a[(j, i)] = s;
        }
    }
    let mut v = Matrix::identity(n);
    let fro = a.frobenius();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= f64::EPSILON * fro * 1e-2 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymEigen { values, vectors })
}

/// Orthonormal basis of a linear subspace, together with the tolerance used
/// to build it.
#[derive(Debug, Clone)]
pub struct Subspace {
    basis: Vec<Vec<f64>>,
    ambient_dim: usize,
    tol: f64,
}

impl Subspace {
    /// Wraps vectors that are already orthonormal.
    pub fn from_orthonormal(ambient_dim: usize, basis: Vec<Vec<f64>>, tol: f64) -> Self {
        debug_assert!(basis.iter().all(|b| b.len() == ambient_dim));
        Self {
            basis,
            ambient_dim,
            tol,
        }
    }

    /// Orthonormalizes `vectors` (modified Gram-Schmidt, twice), dropping
    /// those that are numerically dependent on the earlier ones.
    pub fn span(ambient_dim: usize, vectors: &[Vec<f64>], tol: f64) -> Self {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for v in vectors {
            let scale = norm(v);
            if scale == 0.0 {
                continue;
            }
            let mut w = v.clone();
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&w, b);
                    axpy(-c, b, &mut w);
                }
            }
            let r = norm(&w);
            if r > tol.max(1e-12) * scale {
                basis.push(scaled(&w, 1.0 / r));
            }
        }
        Self {
            basis,
            ambient_dim,
            tol,
        }
    }

    pub fn zero(ambient_dim: usize, tol: f64) -> Self {
        Self {
            basis: Vec::new(),
            ambient_dim,
            tol,
        }
    }

    pub fn full(ambient_dim: usize, tol: f64) -> Self {
        let basis = (0..ambient_dim)
            .map(|i| {
                let mut e = vec![0.0; ambient_dim];
                e[i] = 1.0;
                e
            })
            .collect();
        Self {
            basis,
            ambient_dim,
            tol,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ambient_dim];
        for b in &self.basis {
            axpy(dot(v, b), b, &mut out);
        }
        out
    }

    /// `‖v − P v‖`, the distance from `v` to the subspace.
    pub fn residual(&self, v: &[f64]) -> f64 {
        norm(&sub(v, &self.project(v)))
    }

    pub fn projector(&self) -> Matrix {
        let mut p = Matrix::zeros(self.ambient_dim, self.ambient_dim);
        for b in &self.basis {
            p += &Matrix::outer(b, b);
        }
        p
    }

    /// Largest residual of one subspace's basis projected onto the other, in
    /// both directions. Infinite when the dimensions differ.
    pub fn distance(&self, other: &Subspace) -> f64 {
        if self.ambient_dim != other.ambient_dim || self.dim() != other.dim() {
            return f64::INFINITY;
        }
        let a = self
            .basis
            .iter()
            .map(|b| other.residual(b))
            .fold(0.0_f64, f64::max);
        let b = other
            .basis
            .iter()
            .map(|b| self.residual(b))
            .fold(0.0_f64, f64::max);
        a.max(b)
    }

    pub fn equals(&self, other: &Subspace, tol: f64) -> bool {
        self.distance(other) <= tol
    }

    /// Whether every basis vector of `self` lies in `other`.
    pub fn is_contained_in(&self, other: &Subspace, tol: f64) -> bool {
        self.basis.iter().all(|b| other.residual(b) <= tol)
    }

    /// Orthonormal basis of the orthogonal complement.
    pub fn complement(&self) -> Subspace {
        let p = self.projector();
        let q = &Matrix::identity(self.ambient_dim) - &p;
        let cols: Vec<Vec<f64>> = (0..self.ambient_dim).map(|j| q.column(j)).collect();
        let mut c = Subspace::span(self.ambient_dim, &cols, 1e-8);
        c.tol = self.tol;
        c
    }
}

/// Null space of a symmetric PSD matrix: eigenvectors whose eigenvalue is at
/// most `tol` times the largest |eigenvalue|.
pub fn null_space(m: &Matrix, tol: f64) -> Result<Subspace> {
    let eig = sym_eigen(m)?;
    let cut = eig.zero_threshold(tol);
    let basis = eig
        .values
        .iter()
        .enumerate()
        .filter(|(_, &l)| l.abs() <= cut)
        .map(|(i, _)| eig.vector(i))
        .collect();
    Ok(Subspace::from_orthonormal(m.rows(), basis, tol))
}

/// Number of eigenvalues with |λ| above `tol` times the largest |eigenvalue|.
pub fn rank_of(m: &Matrix, tol: f64) -> Result<usize> {
    let eig = sym_eigen(m)?;
    let cut = eig.zero_threshold(tol);
    Ok(eig.values.iter().filter(|l| l.abs() > cut).count())
}

pub fn is_psd(m: &Matrix, tol: f64) -> Result<bool> {
    let eig = sym_eigen(m)?;
    let min = eig.values.first().copied().unwrap_or(0.0);
    Ok(min >= -eig.zero_threshold(tol))
}

/// The consensus space `range(1_n ⊗ I_dim)` with an orthonormal basis.
pub fn consensus_space(n: usize, dim: usize, tol: f64) -> Subspace {
    let s = 1.0 / (n as f64).sqrt();
    let basis = (0..dim)
        .map(|c| {
            let mut v = vec![0.0; n * dim];
            for i in 0..n {
                v[i * dim + c] = s;
            }
            v
        })
        .collect();
    Subspace::from_orthonormal(n * dim, basis, tol)
}

/// Matrix-valued Laplacian `L = D − A` with one `dim × dim` block per agent.
///
/// Every edge of `topology` must carry a symmetric weight; edges without an
/// entry in `weights` are treated as zero-weighted.
pub fn assemble_laplacian(topology: &Topology, weights: &EdgeMap) -> Result<Matrix> {
    let dim = match weights.values().next() {
        Some(w) => w.rows(),
        None => {
            return Err(Error::Dimension(
                "cannot infer block size from an empty weight map".into(),
            ))
        }
    };
    assemble_laplacian_with_dim(topology, weights, dim)
}

pub fn assemble_laplacian_with_dim(
    topology: &Topology,
    weights: &EdgeMap,
    dim: usize,
) -> Result<Matrix> {
    let n = topology.n();
    let mut l = Matrix::zeros(n * dim, n * dim);
    for (&edge, w) in weights {
        let (i, j) = edge.endpoints();
        if !topology.has_edge(i, j) {
            return Err(Error::InvalidWeight {
                i,
                j,
                reason: "weight given for an edge that is not in the topology".into(),
            });
        }
        if w.rows() != dim || w.cols() != dim {
            return Err(Error::Dimension(format!(
                "edge ({i}, {j}) weight is {}x{}, expected {dim}x{dim}",
                w.rows(),
                w.cols()
            )));
        }
        if !w.is_symmetric(DEFAULT_TOL) {
            return Err(Error::InvalidWeight {
                i,
                j,
                reason: format!("asymmetry {:e}", w.asymmetry()),
            });
        }
        l.add_block(i * dim, i * dim, w, 1.0);
        l.add_block(j * dim, j * dim, w, 1.0);
        l.add_block(i * dim, j * dim, w, -1.0);
        l.add_block(j * dim, i * dim, w, -1.0);
    }
    Ok(l)
}

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` when `a` is numerically singular.
pub fn solve(a: &Matrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    assert!(a.is_square() && b.len() == n);
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))?;
        if m[(piv, col)].abs() <= 1e-14 * scale {
            return None;
        }
        if piv != col {
            for k in 0..n {
                let t = m[(col, k)];
                m[(col, k)] = m[(piv, k)];
                m[(piv, k)] = t;
            }
            x.swap(col, piv);
        }
        for r in col + 1..n {
            let f = m[(r, col)] / m[(col, col)];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[(r, k)] -= f * m[(col, k)];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in col + 1..n {
            s -= m[(col, k)] * x[k];
        }
        x[col] = s / m[(col, col)];
    }
    Some(x)
}

/// Inverse of a small square matrix, `None` when singular.
pub fn inverse(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let cols: Option<Vec<Vec<f64>>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            solve(a, &e)
        })
        .collect();
    Some(Matrix::from_columns(n, &cols?))
}
