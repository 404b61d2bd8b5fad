//! Model declarations: segments, coefficient oracles, Lyapunov data, and the
//! built-in example models.

mod examples;
mod file;

pub use examples::{
    make_example_4_1, make_example_4_2, ou_model, DelayWeight, Example41Coeffs, LinearCoeffs,
};
pub use file::{
    build_builtin, parse_model_json, BuiltinModel, ExplicitModel, SegmentSpec, WeightSpec,
};

use crate::error::{Error, Result};
use crate::matops::{kalman_rank, DenseMatrix};
use std::collections::BTreeMap;
use std::sync::Arc;

/// A function on `[-r0, 0]` with values in `R^dim`, stored on a uniform grid
/// and evaluated by linear interpolation. Houses initial data and shift
/// directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    r0: f64,
    dim: usize,
    n_hist: usize,
    /// `(n_hist + 1) * dim` entries, node-major; node `j` sits at
    /// `theta_j = -r0 + j * (r0 / n_hist)`.
    values: Vec<f64>,
}

impl Segment {
    pub fn new(r0: f64, dim: usize, n_hist: usize, values: Vec<f64>) -> Result<Self> {
        if !(r0 > 0.0) {
            return Err(Error::InvalidSegment(format!("r0 must be positive, got {r0}")));
        }
        if n_hist == 0 {
            return Err(Error::InvalidSegment("n_hist must be >= 1".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidSegment("dim must be >= 1".into()));
        }
        if values.len() != (n_hist + 1) * dim {
            return Err(Error::InvalidSegment(format!(
                "expected {} values, got {}",
                (n_hist + 1) * dim,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Segment values"));
        }
        Ok(Self {
            r0,
            dim,
            n_hist,
            values,
        })
    }

    /// Segment identically equal to `value`.
    pub fn constant(r0: f64, n_hist: usize, value: &[f64]) -> Result<Self> {
        let dim = value.len();
        let mut values = Vec::with_capacity((n_hist + 1) * dim);
        for _ in 0..=n_hist {
            values.extend_from_slice(value);
        }
        Self::new(r0, dim, n_hist, values)
    }

    /// Zero segment of the given shape.
    pub fn zero(r0: f64, dim: usize, n_hist: usize) -> Result<Self> {
        Self::new(r0, dim, n_hist, vec![0.0; (n_hist + 1) * dim])
    }

    pub fn as_view(&self) -> SegmentView<'_> {
        SegmentView {
            r0: self.r0,
            dim: self.dim,
            n_hist: self.n_hist,
            values: &self.values,
        }
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_hist(&self) -> usize {
        self.n_hist
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn eval(&self, theta: f64) -> Result<Vec<f64>> {
        self.as_view().eval(theta)
    }

    /// `self + scale * other`, nodewise.
    pub fn affine_add(&self, scale: f64, other: &Segment) -> Result<Segment> {
        if self.dim != other.dim || self.n_hist != other.n_hist || self.r0 != other.r0 {
            return Err(Error::InvalidSegment(
                "affine_add: segments have different shapes".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + scale * b)
            .collect();
        Segment::new(self.r0, self.dim, self.n_hist, values)
    }

    pub fn scale(&self, s: f64) -> Segment {
        Segment {
            r0: self.r0,
            dim: self.dim,
            n_hist: self.n_hist,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// `sup_theta |xi(theta)|` (Euclidean norm pointwise). Linear
    /// interpolation cannot exceed the node values in norm, so the maximum
    /// over nodes is exact.
    pub fn sup_norm(&self) -> f64 {
        self.as_view().sup_norm()
    }

    /// Value at `theta = 0`.
    pub fn at_zero(&self) -> &[f64] {
        self.node(self.n_hist)
    }
}

/// Borrowed view of a segment; the integrator hands these out over its
/// rolling history window without copying.
#[derive(Debug, Clone, Copy)]
pub struct SegmentView<'a> {
    pub r0: f64,
    pub dim: usize,
    pub n_hist: usize,
    pub values: &'a [f64],
}

impl<'a> SegmentView<'a> {
    pub fn node(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn at_zero(&self) -> &[f64] {
        self.node(self.n_hist)
    }

    /// Linear interpolation; exact at grid nodes, error outside `[-r0, 0]`
    /// (beyond a small rounding allowance).
    pub fn eval(&self, theta: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(theta, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, theta: f64, out: &mut [f64]) -> Result<()> {
        let slack = 1e-12 * self.r0;
        if theta < -self.r0 - slack || theta > slack {
            return Err(Error::SegmentOutOfRange {
                theta,
                r0: self.r0,
            });
        }
        let h = self.r0 / self.n_hist as f64;
        let pos = ((theta + self.r0) / h).clamp(0.0, self.n_hist as f64);
        let j = (pos.floor() as usize).min(self.n_hist - 1);
        let frac = pos - j as f64;
        let lo = self.node(j);
        let hi = self.node(j + 1);
        for k in 0..self.dim {
            out[k] = lo[k] + frac * (hi[k] - lo[k]);
        }
        Ok(())
    }

    pub fn sup_norm(&self) -> f64 {
        (0..=self.n_hist)
            .map(|j| self.node(j).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn to_owned(&self) -> Segment {
        Segment {
            r0: self.r0,
            dim: self.dim,
            n_hist: self.n_hist,
            values: self.values.to_vec(),
        }
    }
}

/// Drift coefficients of one model, with directional derivatives.
///
/// Implementations must be pure: no hidden mutable state, so the maps can be
/// shared across path workers. `u` directions live in `R^{m+d}`; segment
/// directions share the segment's grid.
pub trait Coefficients: Send + Sync {
    /// State-dependent drift `Z(x, y)` into `out` (length `d`).
    fn z(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    /// Directional derivative of `Z` at `(x, y)` along `u` in `R^{m+d}`.
    fn z_dir(&self, x: &[f64], y: &[f64], u: &[f64], out: &mut [f64]);

    /// History-dependent drift `b(segment)` into `out` (length `d`).
    fn b(&self, seg: SegmentView<'_>, out: &mut [f64]);

    /// Directional derivative of `b` at `seg` along the direction segment.
    fn b_dir(&self, seg: SegmentView<'_>, dir: SegmentView<'_>, out: &mut [f64]);
}

/// Central difference `(f(p + step u) - f(p - step u)) / (2 step)`.
///
/// Exact on affine maps; the default derivative when a model author supplies
/// only values.
pub fn fd_directional<F>(f: F, point: &[f64], direction: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "fd_directional: step must be positive, got {step}"
        )));
    }
    let plus: Vec<f64> = point
        .iter()
        .zip(direction)
        .map(|(p, u)| p + step * u)
        .collect();
    let minus: Vec<f64> = point
        .iter()
        .zip(direction)
        .map(|(p, u)| p - step * u)
        .collect();
    let fp = f(&plus);
    let fm = f(&minus);
    let out: Vec<f64> = fp
        .iter()
        .zip(&fm)
        .map(|(a, b)| (a - b) / (2.0 * step))
        .collect();
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("fd_directional evaluation"));
    }
    Ok(out)
}

/// Default finite-difference step at a point of norm `norm`:
/// `sqrt(machine epsilon) * (1 + norm)`.
pub fn fd_default_step(norm: f64) -> f64 {
    f64::EPSILON.sqrt() * (1.0 + norm)
}

/// Adapter deriving directional derivatives by central differences from
/// value-only coefficient closures.
pub struct FiniteDiffCoefficients<ZF, BF> {
    pub z_value: ZF,
    pub b_value: BF,
    pub d: usize,
}

impl<ZF, BF> Coefficients for FiniteDiffCoefficients<ZF, BF>
where
    ZF: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
    BF: Fn(SegmentView<'_>, &mut [f64]) + Send + Sync,
{
    fn z(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.z_value)(x, y, out)
    }

    fn z_dir(&self, x: &[f64], y: &[f64], u: &[f64], out: &mut [f64]) {
        let m = x.len();
        let point_norm = x
            .iter()
            .chain(y.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let step = fd_default_step(point_norm);
        let mut plus = vec![0.0; self.d];
        let mut minus = vec![0.0; self.d];
        let xp: Vec<f64> = x.iter().zip(&u[..m]).map(|(v, du)| v + step * du).collect();
        let yp: Vec<f64> = y.iter().zip(&u[m..]).map(|(v, du)| v + step * du).collect();
        let xm: Vec<f64> = x.iter().zip(&u[..m]).map(|(v, du)| v - step * du).collect();
        let ym: Vec<f64> = y.iter().zip(&u[m..]).map(|(v, du)| v - step * du).collect();
        (self.z_value)(&xp, &yp, &mut plus);
        (self.z_value)(&xm, &ym, &mut minus);
        for k in 0..self.d {
            out[k] = (plus[k] - minus[k]) / (2.0 * step);
        }
    }

    fn b(&self, seg: SegmentView<'_>, out: &mut [f64]) {
        (self.b_value)(seg, out)
    }

    fn b_dir(&self, seg: SegmentView<'_>, dir: SegmentView<'_>, out: &mut [f64]) {
        let step = fd_default_step(seg.sup_norm());
        let plus = seg.to_owned().affine_add(step, &dir.to_owned()).unwrap();
        let minus = seg.to_owned().affine_add(-step, &dir.to_owned()).unwrap();
        let mut fp = vec![0.0; self.d];
        let mut fm = vec![0.0; self.d];
        (self.b_value)(plus.as_view(), &mut fp);
        (self.b_value)(minus.as_view(), &mut fm);
        for k in 0..self.d {
            out[k] = (fp[k] - fm[k]) / (2.0 * step);
        }
    }
}

/// Pointwise drift used in place of the segment functional when the delay is
/// a single lookup at `-r0`; needed by the two-point drift-condition checks.
pub type PointDrift = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Complete description of one functional SDE instance.
///
/// Immutable after construction and shareable across threads; the
/// coefficient maps must be pure.
pub struct ModelSpec {
    m: usize,
    d: usize,
    r0: f64,
    a: DenseMatrix,
    mm: DenseMatrix,
    sigma: DenseMatrix,
    sigma_inv: DenseMatrix,
    coeffs: Arc<dyn Coefficients>,
    k_star: usize,
    /// For discrete-delay models, the pointwise drift with
    /// `b(xi) = b_tilde(xi(-r0))`.
    b_tilde: Option<PointDrift>,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("m", &self.m)
            .field("d", &self.d)
            .field("r0", &self.r0)
            .field("k_star", &self.k_star)
            .field("discrete_delay", &self.b_tilde.is_some())
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    /// Validates and assembles a model. The noise matrix is inverted eagerly
    /// (it must be invertible) and the rank test must pass unless `m = 0`.
    pub fn new(
        m: usize,
        d: usize,
        r0: f64,
        a: DenseMatrix,
        mm: DenseMatrix,
        sigma: DenseMatrix,
        coeffs: Arc<dyn Coefficients>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidModel("d must be >= 1".into()));
        }
        if !(r0 > 0.0) {
            return Err(Error::InvalidModel(format!("r0 must be positive, got {r0}")));
        }
        if a.rows() != m || a.cols() != m {
            return Err(Error::InvalidModel(format!(
                "A must be {m}x{m}, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if mm.rows() != m || (m > 0 && mm.cols() != d) {
            return Err(Error::InvalidModel(format!(
                "M must be {m}x{d}, got {}x{}",
                mm.rows(),
                mm.cols()
            )));
        }
        if sigma.rows() != d || sigma.cols() != d {
            return Err(Error::InvalidModel(format!(
                "sigma must be {d}x{d}, got {}x{}",
                sigma.rows(),
                sigma.cols()
            )));
        }
        let sigma_inv = sigma
            .inverse()
            .map_err(|e| Error::InvalidModel(format!("sigma is not invertible: {e}")))?;
        let product = sigma.matmul(&sigma_inv)?;
        if product.max_abs_diff(&DenseMatrix::identity(d)) > 1e-10 * sigma.inf_norm().max(1.0) {
            return Err(Error::InvalidModel(
                "sigma * sigma^-1 deviates from identity beyond 1e-10".into(),
            ));
        }
        let rank = kalman_rank(&a, &mm, 1e-10)?;
        if !rank.satisfied {
            return Err(Error::RankCondition(format!(
                "[M, AM, ...] has rank {} < m = {m}",
                rank.rank
            )));
        }
        Ok(Self {
            m,
            d,
            r0,
            a,
            mm,
            sigma,
            sigma_inv,
            coeffs,
            k_star: rank.k_star.unwrap_or(0),
            b_tilde: None,
        })
    }

    /// Registers the pointwise form of a discrete-delay drift.
    pub fn with_b_tilde(mut self, b_tilde: PointDrift) -> Self {
        self.b_tilde = Some(b_tilde);
        self
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// State dimension `m + d`.
    pub fn dim(&self) -> usize {
        self.m + self.d
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn mm(&self) -> &DenseMatrix {
        &self.mm
    }

    pub fn sigma(&self) -> &DenseMatrix {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DenseMatrix {
        &self.sigma_inv
    }

    pub fn coeffs(&self) -> &dyn Coefficients {
        self.coeffs.as_ref()
    }

    pub fn k_star(&self) -> usize {
        self.k_star
    }

    pub fn b_tilde(&self) -> Option<&PointDrift> {
        self.b_tilde.as_ref()
    }

    /// Spectral norm of the coupling matrix `M` (0 when `m = 0`).
    pub fn m_norm(&self) -> f64 {
        if self.m == 0 {
            0.0
        } else {
            self.mm.spectral_norm()
        }
    }

    /// Splits a state vector into its `(x, y)` parts.
    pub fn split<'a>(&self, state: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        state.split_at(self.m)
    }
}

pub type PointMap = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type PointVecMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type TwoPointMap = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Lyapunov data used by the assumption checkers and inequality harnesses.
///
/// Constants are keyed per check (`lambda_a1`, `lambda_a2`, ..., `nu`,
/// `alpha`, `beta`, `gamma`, `lambda1`..`lambda4`, `k_const`, `l`) so each
/// grid check can be pinned independently; a missing key fails the check
/// that needs it rather than defaulting silently.
#[derive(Clone)]
pub struct LyapunovSuite {
    /// `W >= 1`, compact level sets.
    pub w: PointMap,
    /// Gradient of `W` in the `y`-variables (length `d`).
    pub w_grad2: PointVecMap,
    /// Generator applied to `W` (state-dependent part only; the history
    /// drift enters through the two-point maps below).
    pub l_w: PointMap,
    /// Two-point drift condition function `U` (also serves as the tilde
    /// variant where the two coincide).
    pub u: Option<PointMap>,
    /// Increasing modulus on `[0, inf)` for the strengthened Lipschitz
    /// conditions.
    pub u_increasing: Option<ScalarMap>,
    /// `log` of the exponential Lyapunov function.
    pub w_tilde_log: Option<PointMap>,
    /// Ratio map `(z, z') -> (generator applied to W_tilde) / W_tilde`.
    pub l_w_tilde_ratio: Option<TwoPointMap>,
    /// Two-point drift expression for `W` used by the domination checks.
    pub l_script_w: Option<TwoPointMap>,
    /// Model-specific right-hand side dominating `l_script_w`.
    pub drift_bound_rhs: Option<TwoPointMap>,
    pub constants: BTreeMap<String, f64>,
}

impl std::fmt::Debug for LyapunovSuite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LyapunovSuite")
            .field("constants", &self.constants)
            .field("has_u", &self.u.is_some())
            .field("has_w_tilde", &self.w_tilde_log.is_some())
            .finish_non_exhaustive()
    }
}

impl LyapunovSuite {
    pub fn constant(&self, key: &str) -> Result<f64> {
        self.constants
            .get(key)
            .copied()
            .ok_or(Error::InvalidArgument(format!(
                "LyapunovSuite is missing constant '{key}'"
            )))
    }

    /// `sup_theta W(xi(theta))`, exact for convex `W` on piecewise-linear
    /// segments (the maximum sits at a node).
    pub fn w_sup(&self, xi: &Segment) -> f64 {
        (0..=xi.n_hist())
            .map(|j| (self.w)(xi.node(j)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sup_theta U(xi(theta))` over segment nodes; 0 when `U` is absent.
    pub fn u_sup(&self, xi: &Segment) -> f64 {
        match &self.u {
            Some(u) => (0..=xi.n_hist())
                .map(|j| u(xi.node(j)))
                .fold(f64::NEG_INFINITY, f64::max),
            None => 0.0,
        }
    }
}
