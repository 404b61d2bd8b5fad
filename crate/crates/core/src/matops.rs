//! Small dense linear algebra.
//!
//! Everything here is sized for the models this crate simulates: the drift
//! matrices are a few rows on a side, so the implementations favour
//! simplicity over asymptotics. Matrix exponentials use scaling-and-squaring
//! on a truncated series, numerical rank goes through a Jacobi eigensolve of
//! the (tiny) Gram matrix, and the weighted controllability Gramian is
//! integrated by composite Simpson quadrature.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::new",
                expected: format!("{} entries", rows * cols),
                got: format!("{}", data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("DenseMatrix entries"));
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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::from_rows",
                expected: format!("rows of length {c}"),
                got: "ragged rows".to_string(),
            });
        }
        Self::new(r, c, rows.concat())
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "DenseMatrix::add")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "DenseMatrix::sub")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::matmul",
                expected: format!("{} inner rows", self.cols),
                got: format!("{}", other.rows),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.data[k * other.cols + c];
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product into a fresh vector.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::matvec",
                expected: format!("{}", self.cols),
                got: format!("{}", v.len()),
            });
        }
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += self.data[r * self.cols + c] * v[c];
            }
            out[r] = acc;
        }
        Ok(out)
    }

    /// Max absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|r| {
                self.data[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Spectral norm (largest singular value), via the Gram matrix.
    pub fn spectral_norm(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        let gram = if self.rows <= self.cols {
            self.matmul(&self.transpose()).expect("shape checked")
        } else {
            self.transpose().matmul(self).expect("shape checked")
        };
        let eigs = symmetric_eigenvalues(&gram).expect("gram matrix is square");
        eigs.iter().fold(0.0_f64, |m, &e| m.max(e.max(0.0))).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Inverse by Gauss-Jordan with partial pivoting. Only used for the
    /// (tiny) noise matrix at model construction; Gramians go through
    /// Cholesky instead.
    pub fn inverse(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::NonSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let n = self.rows;
        let mut a = self.data.clone();
        let mut inv = Self::identity(n).data;
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&i, &j| {
                    a[i * n + col]
                        .abs()
                        .partial_cmp(&a[j * n + col].abs())
                        .unwrap()
                })
                .unwrap();
            let pivot = a[pivot_row * n + col];
            if pivot.abs() < 1e-14 * self.inf_norm().max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "matrix is singular to working precision (pivot {pivot:.3e})"
                )));
            }
            if pivot_row != col {
                for k in 0..n {
                    a.swap(pivot_row * n + k, col * n + k);
                    inv.swap(pivot_row * n + k, col * n + k);
                }
            }
            let inv_pivot = 1.0 / a[col * n + col];
            for k in 0..n {
                a[col * n + k] *= inv_pivot;
                inv[col * n + k] *= inv_pivot;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[r * n + col];
                if factor == 0.0 {
                    continue;
                }
                for k in 0..n {
                    a[r * n + k] -= factor * a[col * n + k];
                    inv[r * n + k] -= factor * inv[col * n + k];
                }
            }
        }
        Self::new(n, n, inv)
    }

    fn check_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context,
                expected: format!("{}x{}", self.rows, self.cols),
                got: format!("{}x{}", other.rows, other.cols),
            });
        }
        Ok(())
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns the eigenvalues in descending order. Sized for n <= ~8.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::NonSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut m = a.data.clone();
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(eigs)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    l: Vec<f64>,
}

impl CholeskyFactor {
    /// Factors `a = L L^T`. Fails with [`Error::NotPositiveDefinite`] when a
    /// pivot drops below `1e-14` times the largest diagonal entry.
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::NonSquare {
                rows: a.rows,
                cols: a.cols,
            });
        }
        let n = a.rows;
        let max_diag = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
        let floor = 1e-14 * max_diag.max(f64::MIN_POSITIVE);
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d <= floor || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { index: j, pivot: d });
            }
            let ljj = d.sqrt();
            l[j * n + j] = ljj;
            for i in (j + 1)..n {
                let mut v = a.get(i, j);
                for k in 0..j {
                    v -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = v / ljj;
            }
        }
        Ok(Self { n, l })
    }

    /// Solves `L L^T x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "CholeskyFactor::solve",
                expected: format!("{}", self.n),
                got: format!("{}", b.len()),
            });
        }
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= self.l[k * n + i] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        Ok(y)
    }

    /// Inverse of the factored matrix, symmetrized.
    pub fn inverse(&self) -> DenseMatrix {
        let n = self.n;
        let mut inv = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e[c] = 1.0;
            let col = self.solve(&e).expect("length matches");
            e[c] = 0.0;
            for r in 0..n {
                inv.set(r, c, col[r]);
            }
        }
        // enforce exact symmetry of the result
        for r in 0..n {
            for c in (r + 1)..n {
                let v = 0.5 * (inv.get(r, c) + inv.get(c, r));
                inv.set(r, c, v);
                inv.set(c, r, v);
            }
        }
        inv
    }
}

/// Matrix exponential `exp(t * a)` by scaling-and-squaring on the truncated
/// power series. Relative accuracy is ~1e-12 for `||t*a|| <= 50`, which
/// covers every horizon the integrator produces.
pub fn mat_exp(a: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    if !a.is_square() {
        return Err(Error::NonSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("mat_exp: t"));
    }
    let n = a.rows;
    if n == 0 {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    let b = a.scale(t);
    let norm = b.inf_norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let c = b.scale(0.5_f64.powi(squarings as i32));

    let mut sum = DenseMatrix::identity(n);
    let mut term = DenseMatrix::identity(n);
    for k in 1..=40u32 {
        term = term.matmul(&c)?.scale(1.0 / k as f64);
        sum = sum.add(&term)?;
        if term.inf_norm() <= 1e-17 * sum.inf_norm() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum)?;
    }
    Ok(sum)
}

/// Outcome of the Kalman rank test on the pair `(A, M)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KalmanRank {
    /// Numerical rank of the full stacked block matrix `[M, AM, ..., A^{m-1}M]`.
    pub rank: usize,
    /// Smallest `k` for which `[M, AM, ..., A^k M]` already has rank `m`.
    pub k_star: Option<usize>,
    /// Whether the stacked matrix reaches full rank `m`.
    pub satisfied: bool,
}

/// Kalman rank test: does `[M, AM, ..., A^{m-1}M]` span R^m?
///
/// Singular values below `tol` times the largest one are treated as zero.
/// `m = 0` is vacuously satisfied.
pub fn kalman_rank(a: &DenseMatrix, mm: &DenseMatrix, tol: f64) -> Result<KalmanRank> {
    if !a.is_square() {
        return Err(Error::NonSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let m = a.rows();
    if mm.rows() != m {
        return Err(Error::DimensionMismatch {
            context: "kalman_rank",
            expected: format!("M with {m} rows"),
            got: format!("{}", mm.rows()),
        });
    }
    if m == 0 {
        return Ok(KalmanRank {
            rank: 0,
            k_star: Some(0),
            satisfied: true,
        });
    }
    let d = mm.cols();
    // blocks[k] = A^k M
    let mut blocks = Vec::with_capacity(m);
    let mut current = mm.clone();
    for _ in 0..m {
        blocks.push(current.clone());
        current = a.matmul(&current)?;
    }

    let rank_of_prefix = |count: usize| -> usize {
        // Gram matrix of the stacked m x (count*d) block matrix.
        let mut gram = DenseMatrix::zeros(m, m);
        for block in blocks.iter().take(count) {
            for r in 0..m {
                for c in 0..m {
                    let mut acc = gram.get(r, c);
                    for j in 0..d {
                        acc += block.get(r, j) * block.get(c, j);
                    }
                    gram.set(r, c, acc);
                }
            }
        }
        let eigs = symmetric_eigenvalues(&gram).expect("gram is square");
        let sigma: Vec<f64> = eigs.iter().map(|&e| e.max(0.0).sqrt()).collect();
        let largest = sigma.first().copied().unwrap_or(0.0);
        if largest == 0.0 {
            return 0;
        }
        sigma.iter().filter(|&&s| s > tol * largest).count()
    };

    let rank = rank_of_prefix(m);
    let k_star = (0..m).find(|&k| rank_of_prefix(k + 1) == m);
    Ok(KalmanRank {
        rank,
        k_star,
        satisfied: rank == m,
    })
}

/// Weighted controllability Gramian and its Cholesky inverse.
#[derive(Debug, Clone, Serialize)]
pub struct GramianResult {
    pub q: DenseMatrix,
    pub inverse: DenseMatrix,
    /// Spectral norm of the inverse (1 / smallest eigenvalue of `q`); the
    /// quantity the horizon-blowup diagnostic compares against.
    #[serde(serialize_with = "crate::stats::finite_or_null")]
    pub condition_estimate: f64,
    /// `condition_estimate / (t_horizon min 1)^(-2(k+1))`. Diagnostic only:
    /// the constant multiplying that reference shape is existential, so this
    /// ratio is reported and never asserted.
    #[serde(serialize_with = "crate::stats::finite_or_null")]
    pub bound_ratio: f64,
}

/// Computes
///
/// ```text
/// Q = integral over [0, min(t_horizon, tau)] of
///         g(s) * exp(-sA) M M^T exp(-sA^T) ds,    g(s) = s (tau - s)+ / tau^2
/// ```
///
/// by composite Simpson quadrature with step `quad_step`, and inverts it by
/// Cholesky. Failure to factor signals that the rank condition does not hold
/// at this horizon.
pub fn gramian(
    a: &DenseMatrix,
    mm: &DenseMatrix,
    t_horizon: f64,
    tau: f64,
    quad_step: f64,
) -> Result<GramianResult> {
    if !a.is_square() {
        return Err(Error::NonSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let m = a.rows();
    if mm.rows() != m {
        return Err(Error::DimensionMismatch {
            context: "gramian",
            expected: format!("M with {m} rows"),
            got: format!("{}", mm.rows()),
        });
    }
    if !(tau > 0.0) || !(quad_step > 0.0) {
        return Err(Error::InvalidArgument(
            "gramian: tau and quad_step must be positive".into(),
        ));
    }
    let upper = t_horizon.min(tau);
    let n_intervals = (upper / quad_step).round() as usize;
    if n_intervals < 2 || ((upper / quad_step) - n_intervals as f64).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "gramian: quad_step {quad_step} must divide the integration range {upper} \
             into at least 2 intervals"
        )));
    }

    let weight = |s: f64| s * (tau - s).max(0.0) / (tau * tau);
    let node = |j: usize| -> Result<Vec<f64>> {
        let s = j as f64 * quad_step;
        let e = mat_exp(a, -s)?.matmul(mm)?; // exp(-sA) M, m x d
        Ok(e.matmul(&e.transpose())?.scale(weight(s)).data.clone())
    };
    let mut nodes = Vec::with_capacity((n_intervals + 1) * m * m);
    for j in 0..=n_intervals {
        nodes.extend_from_slice(&node(j)?);
    }
    let cumulative = cumulative_simpson(&nodes, m * m, quad_step);
    let q = DenseMatrix::new(
        m,
        m,
        cumulative[n_intervals * m * m..(n_intervals + 1) * m * m].to_vec(),
    )?;

    let chol = CholeskyFactor::factor(&q).map_err(|e| match e {
        Error::NotPositiveDefinite { index, pivot } => Error::RankCondition(format!(
            "Gramian not positive definite at this horizon (pivot {pivot:.3e} at index {index})"
        )),
        other => other,
    })?;
    let inverse = chol.inverse();
    let eigs = symmetric_eigenvalues(&q)?;
    let lambda_min = eigs.last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let condition_estimate = 1.0 / lambda_min;

    let k = kalman_rank(a, mm, 1e-10)?
        .k_star
        .unwrap_or(m.saturating_sub(1));
    let reference = t_horizon.min(1.0).powi(-2 * (k as i32 + 1));
    let bound_ratio = condition_estimate / reference;

    Ok(GramianResult {
        q,
        inverse,
        condition_estimate,
        bound_ratio,
    })
}

/// Cumulative integral of a uniformly sampled function with `dim` components
/// per node.
///
/// `values` holds `n+1` nodes of `dim` entries each; the result has the same
/// layout, entry `j` being the integral from node 0 to node `j`. Even nodes
/// carry exact composite-Simpson pair sums; odd nodes add a third-order
/// parabola correction over the trailing interval, so the rule is fourth
/// order accurate at every node.
pub fn cumulative_simpson(values: &[f64], dim: usize, h: f64) -> Vec<f64> {
    assert!(dim > 0 && values.len() % dim == 0 && !values.is_empty());
    let n = values.len() / dim - 1;
    let mut out = vec![0.0; values.len()];
    let v = |j: usize, k: usize| values[j * dim + k];
    if n == 1 {
        // a single interval only supports the trapezoid rule
        for k in 0..dim {
            out[dim + k] = 0.5 * h * (v(0, k) + v(1, k));
        }
        return out;
    }
    for j in 1..=n {
        if j % 2 == 0 {
            for k in 0..dim {
                out[j * dim + k] = out[(j - 2) * dim + k]
                    + h / 3.0 * (v(j - 2, k) + 4.0 * v(j - 1, k) + v(j, k));
            }
        } else if j < n {
            // parabola through nodes (j-1, j, j+1), integrated over [j-1, j]
            for k in 0..dim {
                out[j * dim + k] = out[(j - 1) * dim + k]
                    + h / 12.0 * (5.0 * v(j - 1, k) + 8.0 * v(j, k) - v(j + 1, k));
            }
        } else {
            // final odd node: parabola through (j-2, j-1, j) over [j-1, j]
            for k in 0..dim {
                out[j * dim + k] = out[(j - 1) * dim + k]
                    + h / 12.0 * (-v(j - 2, k) + 8.0 * v(j - 1, k) + 5.0 * v(j, k));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn mat_exp_at_zero_is_identity() {
        let a = mat(&[&[0.3, -1.2, 0.7], &[2.0, 0.1, -0.4], &[0.0, 1.1, -0.9]]);
        let e = mat_exp(&a, 0.0).unwrap();
        assert_eq!(e, DenseMatrix::identity(3));
    }

    #[test]
    fn mat_exp_diagonal() {
        let a = mat(&[&[-1.0]]);
        let e = mat_exp(&a, 2.0).unwrap();
        assert!((e.get(0, 0) - (-2.0_f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn mat_exp_nilpotent_series_terminates() {
        let a = mat(&[&[0.0, 1.0], &[0.0, 0.0]]);
        for &t in &[0.5, 1.0, 3.75, -2.0] {
            let e = mat_exp(&a, t).unwrap();
            assert_eq!(e.get(0, 0), 1.0);
            assert_eq!(e.get(1, 1), 1.0);
            assert_eq!(e.get(1, 0), 0.0);
            assert!((e.get(0, 1) - t).abs() <= 1e-15 * t.abs().max(1.0));
        }
    }

    #[test]
    fn mat_exp_rejects_non_square() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(mat_exp(&a, 1.0), Err(Error::NonSquare { .. })));
    }

    #[test]
    fn mat_exp_empty_matrix() {
        let a = DenseMatrix::zeros(0, 0);
        let e = mat_exp(&a, 1.0).unwrap();
        assert_eq!(e.rows(), 0);
    }

    proptest! {
        // exp(sA) exp(tA) = exp((s+t)A) for random small matrices
        #[test]
        fn mat_exp_semigroup(
            entries in proptest::collection::vec(-2.0f64..2.0, 9),
            s in -1.5f64..1.5,
            t in -1.5f64..1.5,
        ) {
            let a = DenseMatrix::new(3, 3, entries).unwrap();
            let lhs = mat_exp(&a, s).unwrap().matmul(&mat_exp(&a, t).unwrap()).unwrap();
            let rhs = mat_exp(&a, s + t).unwrap();
            let scale = rhs.inf_norm().max(1.0);
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10 * scale);
        }

        // whenever the rank test passes, the Gramian is symmetric and SPD
        #[test]
        fn gramian_spd_on_controllable_pairs(
            m in 1usize..=4,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let d = rng.random_range(1..=2);
            let a = DenseMatrix::new(m, m, (0..m*m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let mm = DenseMatrix::new(m, d, (0..m*d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let rank = kalman_rank(&a, &mm, 1e-10).unwrap();
            prop_assume!(rank.satisfied);
            let g = gramian(&a, &mm, 1.0, 1.0, 0.01).unwrap();
            let sym_err = g.q.max_abs_diff(&g.q.transpose());
            prop_assert!(sym_err <= 1e-12 * g.q.inf_norm().max(1.0));
            let product = g.q.matmul(&g.inverse).unwrap();
            let id_err = product.max_abs_diff(&DenseMatrix::identity(m));
            prop_assert!(id_err <= 1e-9 * g.q.inf_norm().max(1.0) * g.condition_estimate.max(1.0));
        }
    }

    #[test]
    fn kalman_rank_scalar_invertible() {
        // A = -1, M = -1: the d x d block alone spans R^1
        let r = kalman_rank(&mat(&[&[-1.0]]), &mat(&[&[-1.0]]), 1e-10).unwrap();
        assert_eq!(r.rank, 1);
        assert_eq!(r.k_star, Some(0));
        assert!(r.satisfied);
    }

    #[test]
    fn kalman_rank_canonical_controllable_pair() {
        let a = mat(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let mm = mat(&[&[0.0], &[1.0]]);
        let r = kalman_rank(&a, &mm, 1e-10).unwrap();
        assert_eq!(r.rank, 2);
        assert_eq!(r.k_star, Some(1));
        assert!(r.satisfied);
    }

    #[test]
    fn kalman_rank_zero_input_matrix() {
        let r = kalman_rank(&mat(&[&[1.0]]), &mat(&[&[0.0]]), 1e-10).unwrap();
        assert_eq!(r.rank, 0);
        assert_eq!(r.k_star, None);
        assert!(!r.satisfied);
    }

    #[test]
    fn kalman_rank_degenerate_m_zero() {
        let r = kalman_rank(&DenseMatrix::zeros(0, 0), &DenseMatrix::zeros(0, 1), 1e-10).unwrap();
        assert!(r.satisfied);
        assert_eq!(r.k_star, Some(0));
    }

    // Independent quadrature oracle for the scalar Gramian with A = 0, M = 1:
    // very fine trapezoid sum of s (tau - s) / tau^2.
    fn scalar_gramian_oracle(tau: f64) -> f64 {
        let n = 2_000_000usize;
        let h = tau / n as f64;
        let f = |s: f64| s * (tau - s) / (tau * tau);
        let mut acc = 0.5 * (f(0.0) + f(tau));
        for j in 1..n {
            acc += f(j as f64 * h);
        }
        acc * h
    }

    #[test]
    fn gramian_closed_form_scalar() {
        // closed form: integral of s(tau-s)/tau^2 over [0,tau] = tau/6
        for &(tau, expected) in &[(1.0, 1.0 / 6.0), (0.5, 1.0 / 12.0)] {
            assert!((scalar_gramian_oracle(tau) - expected).abs() < 1e-9);
            let g = gramian(&mat(&[&[0.0]]), &mat(&[&[1.0]]), tau, tau, tau / 100.0).unwrap();
            assert!(
                (g.q.get(0, 0) - expected).abs() < 1e-10,
                "tau={tau}: got {}",
                g.q.get(0, 0)
            );
            assert!((g.inverse.get(0, 0) - 1.0 / expected).abs() < 1e-7);
        }
    }

    #[test]
    fn gramian_partial_horizon_closed_form() {
        // A = 0, M = 1, tau = 1, horizon 0.5:
        // integral of s(1-s) over [0, 0.5] = 1/8 - 1/24 = 1/12
        let g = gramian(&mat(&[&[0.0]]), &mat(&[&[1.0]]), 0.5, 1.0, 0.005).unwrap();
        assert!((g.q.get(0, 0) - 1.0 / 12.0).abs() < 1e-10);
    }

    #[test]
    fn gramian_zero_input_fails_positive_definiteness() {
        let err = gramian(&mat(&[&[0.0]]), &mat(&[&[0.0]]), 1.0, 1.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::RankCondition(_)));
    }

    #[test]
    fn gramian_simpson_order_four() {
        // non-polynomial integrand so the Simpson error is visible: A rotates
        let a = mat(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let mm = mat(&[&[1.0], &[0.5]]);
        let q = |step: f64| gramian(&a, &mm, 1.0, 1.0, step).unwrap().q;
        let reference = q(1.0 / 1024.0);
        let err_h = q(0.05).max_abs_diff(&reference);
        let err_h2 = q(0.025).max_abs_diff(&reference);
        assert!(
            err_h / err_h2 > 10.0,
            "expected ~16x error drop, got {err_h:.3e} -> {err_h2:.3e}"
        );
    }

    #[test]
    fn cumulative_simpson_exact_on_quadratics() {
        // f(s) = 3s^2 - 2s + 1, integral = s^3 - s^2 + s
        let h = 0.1;
        let values: Vec<f64> = (0..=10)
            .map(|j| {
                let s = j as f64 * h;
                3.0 * s * s - 2.0 * s + 1.0
            })
            .collect();
        let out = cumulative_simpson(&values, 1, h);
        for j in 0..=10 {
            let s = j as f64 * h;
            let exact = s * s * s - s * s + s;
            assert!((out[j] - exact).abs() < 1e-14, "node {j}");
        }
    }

    #[test]
    fn cholesky_inverse_roundtrip() {
        let a = mat(&[&[4.0, 1.0, 0.2], &[1.0, 3.0, -0.5], &[0.2, -0.5, 2.0]]);
        let chol = CholeskyFactor::factor(&a).unwrap();
        let inv = chol.inverse();
        let id = a.matmul(&inv).unwrap();
        assert!(id.max_abs_diff(&DenseMatrix::identity(3)) < 1e-12);
    }

    #[test]
    fn spectral_norm_matches_known_value() {
        // diag(3, -7): spectral norm 7
        let a = mat(&[&[3.0, 0.0], &[0.0, -7.0]]);
        assert!((a.spectral_norm() - 7.0).abs() < 1e-12);
    }
}
