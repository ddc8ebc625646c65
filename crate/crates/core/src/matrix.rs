//! Small dense symmetric matrices and the handful of factorizations the
//! solvers need (Jacobi eigendecomposition, PSD square roots, NNLS).
//!
//! Dimensions here are tiny (d <= 4 in practice), so everything is written
//! for robustness and determinism rather than BLAS-style throughput.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance below which eigenvalues may dip under zero and still
/// count as positive semidefinite; such eigenvalues are clamped to zero.
pub const TOL_PSD: f64 = 1e-10;

/// A real symmetric d x d matrix. Storage is the full row-major square, and
/// symmetry is enforced by every constructor and mutator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymMatrixRepr", into = "SymMatrixRepr")]
pub struct SymMatrix {
    d: usize,
    a: Vec<f64>,
}

/// Row-major serialization form; symmetry is re-checked on deserialization.
#[derive(Serialize, Deserialize)]
struct SymMatrixRepr {
    rows: Vec<Vec<f64>>,
}

impl From<SymMatrix> for SymMatrixRepr {
    fn from(m: SymMatrix) -> Self {
        let rows = (0..m.d)
            .map(|i| m.a[i * m.d..(i + 1) * m.d].to_vec())
            .collect();
        SymMatrixRepr { rows }
    }
}

impl TryFrom<SymMatrixRepr> for SymMatrix {
    type Error = String;

    fn try_from(r: SymMatrixRepr) -> std::result::Result<Self, String> {
        let d = r.rows.len();
        let mut m = SymMatrix::zeros(d);
        for (i, row) in r.rows.iter().enumerate() {
            if row.len() != d {
                return Err(format!("row {i} has length {}, expected {d}", row.len()));
            }
            for (j, &x) in row.iter().enumerate() {
                m.a[i * d + j] = x;
            }
        }
        for i in 0..d {
            for j in 0..i {
                if m.a[i * d + j] != m.a[j * d + i] {
                    return Err(format!("entries ({i},{j}) and ({j},{i}) differ"));
                }
            }
        }
        Ok(m)
    }
}

impl SymMatrix {
    pub fn zeros(d: usize) -> Self {
        SymMatrix { d, a: vec![0.0; d * d] }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.a[i * d + i] = 1.0;
        }
        m
    }

    /// s * I.
    pub fn scalar(d: usize, s: f64) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.a[i * d + i] = s;
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Self {
        let d = entries.len();
        let mut m = Self::zeros(d);
        for (i, &x) in entries.iter().enumerate() {
            m.a[i * d + i] = x;
        }
        m
    }

    /// Builds from full rows, rejecting non-symmetric input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let repr = SymMatrixRepr { rows: rows.to_vec() };
        SymMatrix::try_from(repr).map_err(Error::InvalidArgument)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.d + j]
    }

    /// Sets both (i, j) and (j, i).
    pub fn set(&mut self, i: usize, j: usize, x: f64) {
        self.a[i * self.d + j] = x;
        self.a[j * self.d + i] = x;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.d).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self.get(i, i)).sum()
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.d, other.d);
        let a = self.a.iter().zip(&other.a).map(|(x, y)| x + y).collect();
        SymMatrix { d: self.d, a }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.d, other.d);
        let a = self.a.iter().zip(&other.a).map(|(x, y)| x - y).collect();
        SymMatrix { d: self.d, a }
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix { d: self.d, a: self.a.iter().map(|x| x * s).collect() }
    }

    /// A * A; symmetric whenever A is.
    pub fn square(&self) -> SymMatrix {
        let d = self.d;
        let mut out = SymMatrix::zeros(d);
        for i in 0..d {
            for j in i..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += self.get(i, k) * self.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.d);
        (0..self.d)
            .map(|i| (0..self.d).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// Operator norm induced by the sup norm on R^d: max absolute row sum.
    pub fn operator_norm(&self) -> f64 {
        (0..self.d)
            .map(|i| (0..self.d).map(|j| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.a.iter().fold(0.0, |m, x| f64::max(m, x.abs()))
    }

    /// Eigenvalues and an orthogonal matrix of column eigenvectors, by the
    /// cyclic Jacobi method. Eigenvalues are returned in ascending order.
    pub fn eigen(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.d;
        let mut a = self.a.clone();
        // v starts as identity; columns accumulate the rotations.
        let mut v = vec![0.0; d * d];
        for i in 0..d {
            v[i * d + i] = 1.0;
        }
        let idx = |i: usize, j: usize| i * d + j;
        for _sweep in 0..64 {
            let mut off = 0.0;
            for i in 0..d {
                for j in (i + 1)..d {
                    off += a[idx(i, j)] * a[idx(i, j)];
                }
            }
            let scale = (0..d).map(|i| a[idx(i, i)].abs()).fold(1e-300, f64::max);
            if off.sqrt() <= 1e-15 * scale * d as f64 {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    let apq = a[idx(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[idx(p, p)];
                    let aqq = a[idx(q, q)];
                    let tau = (aqq - app) / (2.0 * apq);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let akp = a[idx(k, p)];
                        let akq = a[idx(k, q)];
                        a[idx(k, p)] = c * akp - s * akq;
                        a[idx(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let apk = a[idx(p, k)];
                        let aqk = a[idx(q, k)];
                        a[idx(p, k)] = c * apk - s * aqk;
                        a[idx(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..d {
                        let vkp = v[idx(k, p)];
                        let vkq = v[idx(k, q)];
                        v[idx(k, p)] = c * vkp - s * vkq;
                        v[idx(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
            .map(|j| (a[idx(j, j)], (0..d).map(|i| v[idx(i, j)]).collect()))
            .collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let vals = pairs.iter().map(|p| p.0).collect();
        let vecs = pairs.into_iter().map(|p| p.1).collect();
        (vals, vecs)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().0[0]
    }

    /// True when all eigenvalues are at least -TOL_PSD relative to the norm.
    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue() >= -self.psd_tol()
    }

    fn psd_tol(&self) -> f64 {
        TOL_PSD * self.operator_norm().max(1.0)
    }

    /// The unique PSD square root, via eigendecomposition. Eigenvalues in
    /// [-tol, 0) are clamped to zero; anything lower is an error.
    pub fn sqrt_psd(&self) -> Result<SymMatrix> {
        let tol = self.psd_tol();
        let (vals, vecs) = self.eigen();
        if vals[0] < -tol {
            return Err(Error::NotPsd { eigenvalue: vals[0], tol });
        }
        let d = self.d;
        let roots: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
        let mut out = SymMatrix::zeros(d);
        for i in 0..d {
            for j in i..d {
                let mut s = 0.0;
                for (k, r) in roots.iter().enumerate() {
                    s += vecs[k][i] * r * vecs[k][j];
                }
                out.set(i, j, s);
            }
        }
        Ok(out)
    }

    pub fn approx_eq(&self, other: &SymMatrix, tol: f64) -> bool {
        self.d == other.d && self.sub(other).max_abs_entry() <= tol
    }
}

/// Solves A x = b by Gaussian elimination with partial pivoting.
/// A is row-major n x n. Returns None when the system is singular.
pub fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))?;
        if m[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            rhs.swap(col, piv);
        }
        for row in (col + 1)..n {
            let f = m[row * n + col] / m[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = rhs[row];
        for k in (row + 1)..n {
            s -= m[row * n + k] * x[k];
        }
        x[row] = s / m[row * n + row];
    }
    Some(x)
}

/// Nonnegative least squares by the Lawson-Hanson active-set method:
/// minimizes ||A x - b||_2 subject to x >= 0. `a` is row-major with
/// `rows` rows and `cols` columns. Returns the solution vector.
pub fn nnls(a: &[f64], b: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut x = vec![0.0f64; cols];
    let mut passive = vec![false; cols];
    let residual = |x: &[f64]| -> Vec<f64> {
        (0..rows)
            .map(|i| b[i] - (0..cols).map(|j| a[i * cols + j] * x[j]).sum::<f64>())
            .collect()
    };
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let tol = 1e-12 * bnorm;

    for _outer in 0..(8 * cols.max(4)) {
        let r = residual(&x);
        // Gradient of the objective restricted to the active (zero) set.
        let mut best = None;
        for j in 0..cols {
            if passive[j] {
                continue;
            }
            let w: f64 = (0..rows).map(|i| a[i * cols + j] * r[i]).sum();
            if w > tol && best.is_none_or(|(_, bw)| w > bw) {
                best = Some((j, w));
            }
        }
        let Some((enter, _)) = best else { break };
        passive[enter] = true;

        loop {
            // Least squares on the passive set via normal equations.
            let p: Vec<usize> = (0..cols).filter(|&j| passive[j]).collect();
            let np = p.len();
            let mut ata = vec![0.0; np * np];
            let mut atb = vec![0.0; np];
            for (pi, &i_col) in p.iter().enumerate() {
                for (pj, &j_col) in p.iter().enumerate() {
                    ata[pi * np + pj] =
                        (0..rows).map(|r| a[r * cols + i_col] * a[r * cols + j_col]).sum();
                }
                atb[pi] = (0..rows).map(|r| a[r * cols + i_col] * b[r]).sum();
            }
            let z = match solve_dense(&ata, &atb, np) {
                Some(z) => z,
                None => {
                    // Degenerate subproblem: drop the variable we just added.
                    passive[enter] = false;
                    break;
                }
            };
            if z.iter().all(|&v| v > 0.0) {
                for (pi, &j) in p.iter().enumerate() {
                    x[j] = z[pi];
                }
                break;
            }
            // Step toward z until the first passive variable hits zero.
            let mut alpha = 1.0f64;
            for (pi, &j) in p.iter().enumerate() {
                if z[pi] <= 0.0 {
                    let denom = x[j] - z[pi];
                    if denom > 0.0 {
                        alpha = alpha.min(x[j] / denom);
                    }
                }
            }
            for (pi, &j) in p.iter().enumerate() {
                x[j] += alpha * (z[pi] - x[j]);
                if x[j] <= tol.max(1e-15) {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    x
}
