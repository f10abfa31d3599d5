//! Dense and matrix-free linear algebra: a conjugate-gradient solver that
//! records its search directions, conjugacy checking, quadratic forms, and a
//! Jacobi symmetric eigendecomposition used at oracle scale.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flat coordinate vector. All parameter-space quantities live here.
pub type Vector<T> = Vec<T>;

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for i in 0..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// y += alpha * x
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for i in 0..x.len() {
        y[i] += alpha * x[i];
    }
}

pub fn scaled<T: Scalar>(alpha: T, x: &[T]) -> Vector<T> {
    x.iter().map(|&v| alpha * v).collect()
}

pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vector<T> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn all_finite<T: Scalar>(a: &[T]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Matrix-free symmetric linear operator `v -> A v`.
pub trait LinOp<T: Scalar> {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[T]) -> Vector<T>;
}

/// Dense row-major symmetric/general matrix, used for oracles and the
/// small LQR solves.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self { n_rows, n_cols, data: vec![T::zero(); n_rows * n_cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows[0].len();
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            assert_eq!(r.len(), n_cols);
            data.extend_from_slice(r);
        }
        Self { n_rows, n_cols, data }
    }

    pub fn diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn matvec(&self, v: &[T]) -> Vector<T> {
        assert_eq!(v.len(), self.n_cols);
        let mut out = vec![T::zero(); self.n_rows];
        for i in 0..self.n_rows {
            let row = &self.data[i * self.n_cols..(i + 1) * self.n_cols];
            out[i] = dot(row, v);
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n_cols, self.n_rows);
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n_cols, other.n_rows);
        let mut out = Self::zeros(self.n_rows, other.n_cols);
        for i in 0..self.n_rows {
            for k in 0..self.n_cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.n_cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n_rows, other.n_rows);
        assert_eq!(self.n_cols, other.n_cols);
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Self { n_rows: self.n_rows, n_cols: self.n_cols, data }
    }

    pub fn scale(&self, alpha: T) -> Self {
        Self {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            data: self.data.iter().map(|&v| alpha * v).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        let scale = self.max_abs().max(T::one());
        for i in 0..self.n_rows {
            for j in (i + 1)..self.n_cols {
                if (self[(i, j)] - self[(j, i)]).abs() > tol * scale {
                    return false;
                }
            }
        }
        true
    }

    /// Solve `A x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[T]) -> Result<Vector<T>> {
        assert_eq!(self.n_rows, self.n_cols);
        if b.len() != self.n_rows {
            return Err(Error::DimensionMismatch { expected: self.n_rows, got: b.len() });
        }
        let n = self.n_rows;
        let mut a = self.data.clone();
        let mut x: Vector<T> = b.to_vec();
        for col in 0..n {
            let mut piv = col;
            for r in (col + 1)..n {
                if a[r * n + col].abs() > a[piv * n + col].abs() {
                    piv = r;
                }
            }
            if a[piv * n + col].abs() < T::lit(1e-300) {
                return Err(Error::NearNullDirection(0.0));
            }
            if piv != col {
                for c in 0..n {
                    a.swap(col * n + c, piv * n + c);
                }
                x.swap(col, piv);
            }
            let d = a[col * n + col];
            for r in (col + 1)..n {
                let f = a[r * n + col] / d;
                if f == T::zero() {
                    continue;
                }
                for c in col..n {
                    let v = a[col * n + c];
                    a[r * n + c] = a[r * n + c] - f * v;
                }
                let xc = x[col];
                x[r] = x[r] - f * xc;
            }
        }
        for row in (0..n).rev() {
            let mut acc = x[row];
            for c in (row + 1)..n {
                acc = acc - a[row * n + c] * x[c];
            }
            x[row] = acc / a[row * n + row];
        }
        Ok(x)
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n_cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n_cols + j]
    }
}

impl<T: Scalar> LinOp<T> for DenseMatrix<T> {
    fn dim(&self) -> usize {
        self.n_rows
    }
    fn apply(&self, v: &[T]) -> Vector<T> {
        self.matvec(v)
    }
}

/// Outcome of a conjugate-gradient solve, with the raw search directions
/// captured in generation order.
#[derive(Debug, Clone)]
pub struct CgResult<T> {
    pub solution: Vector<T>,
    pub directions: Vec<Vector<T>>,
    pub residual_norm: T,
    pub iterations: usize,
}

/// Conjugate-gradient solve for SPD systems. Each new search direction is
/// A-orthogonalized against all captured predecessors (mathematically
/// identical to textbook CG, but the recorded directions stay conjugate to
/// machine precision instead of drifting as the residual shrinks). Search
/// directions p_1..p_m are stored un-normalized; downstream perturbation
/// code rescales them.
pub fn cg_solve<T: Scalar, A: LinOp<T>>(
    apply_a: &A,
    b: &[T],
    max_iters: usize,
    tol: T,
) -> Result<CgResult<T>> {
    let n = apply_a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let b_norm = norm2(b);
    if b_norm == T::zero() {
        return Err(Error::ZeroVector("cg_solve rhs"));
    }
    let mut x = vec![T::zero(); n];
    let mut r = b.to_vec();
    let mut directions: Vec<Vector<T>> = Vec::new();
    let mut applied: Vec<Vector<T>> = Vec::new();
    let mut curvatures: Vec<T> = Vec::new();
    let mut res_norm = b_norm;
    let mut iterations = 0;

    for _ in 0..max_iters {
        if res_norm <= tol * b_norm {
            break;
        }
        let mut p = r.clone();
        for i in 0..directions.len() {
            let beta = dot(&r, &applied[i]) / curvatures[i];
            axpy(-beta, &directions[i], &mut p);
        }
        let ap = apply_a.apply(&p);
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::NonFinite("cg_solve curvature p^T A p"));
        }
        if pap <= T::zero() {
            // direction numerically degenerate; stop with what we have
            break;
        }
        let alpha = dot(&r, &p) / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        res_norm = norm2(&r);
        if !res_norm.is_finite() {
            return Err(Error::NonFinite("cg_solve residual"));
        }
        directions.push(p);
        applied.push(ap);
        curvatures.push(pap);
        iterations += 1;
    }
    if !all_finite(&x) {
        return Err(Error::NonFinite("cg_solve solution"));
    }
    Ok(CgResult { solution: x, directions, residual_norm: res_norm, iterations })
}

/// Worst normalized conjugacy violation over all direction pairs:
/// max_{i != j} |u_i^T A u_j| / sqrt(|u_i^T A u_i| |u_j^T A u_j|).
pub fn conjugacy_check<T: Scalar, A: LinOp<T>>(directions: &[Vector<T>], apply_a: &A) -> Result<T> {
    if directions.len() < 2 {
        return Err(Error::EmptyInput("conjugacy_check needs >= 2 directions"));
    }
    for d in directions {
        if norm2(d) == T::zero() {
            return Err(Error::ZeroVector("conjugacy_check direction"));
        }
    }
    let applied: Vec<Vector<T>> = directions.iter().map(|d| apply_a.apply(d)).collect();
    let self_norms: Vec<T> = directions.iter().zip(&applied).map(|(d, ad)| dot(d, ad)).collect();
    let mut worst = T::zero();
    for i in 0..directions.len() {
        for j in (i + 1)..directions.len() {
            let cross = dot(&directions[i], &applied[j]).abs();
            let denom = (self_norms[i].abs() * self_norms[j].abs()).sqrt();
            if denom > T::zero() {
                worst = worst.max(cross / denom);
            }
        }
    }
    Ok(worst)
}

/// x^T (A x).
pub fn quad_form<T: Scalar, A: LinOp<T>>(apply_a: &A, x: &[T]) -> Result<T> {
    if x.len() != apply_a.dim() {
        return Err(Error::DimensionMismatch { expected: apply_a.dim(), got: x.len() });
    }
    Ok(dot(x, &apply_a.apply(x)))
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations; eigenvalues
/// descending, eigenvectors as orthonormal matrix columns. Oracle scale only.
pub fn sym_eig<T: Scalar>(a: &DenseMatrix<T>) -> Result<(Vector<T>, DenseMatrix<T>)> {
    if !a.is_symmetric(T::lit(1e-9)) {
        return Err(Error::NotSymmetric);
    }
    let n = a.n_rows;
    let mut m = a.clone();
    let mut u = DenseMatrix::identity(n);
    let eps = T::lit(1e-14) * m.max_abs().max(T::one());
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(m[(i, j)].abs());
            }
        }
        if off <= eps {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= eps {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = {
                    let s = if theta >= T::zero() { T::one() } else { -T::one() };
                    s / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
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
                    let ukp = u[(k, p)];
                    let ukq = u[(k, q)];
                    u[(k, p)] = c * ukp - s * ukq;
                    u[(k, q)] = s * ukp + c * ukq;
                }
            }
        }
    }
    let mut pairs: Vec<(T, usize)> = (0..n).map(|i| (m[(i, i)], i)).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let eigenvalues: Vector<T> = pairs.iter().map(|&(v, _)| v).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (new_col, &(_, old_col)) in pairs.iter().enumerate() {
        for r in 0..n {
            vectors[(r, new_col)] = u[(r, old_col)];
        }
    }
    Ok((eigenvalues, vectors))
}
