//! Monte Carlo estimators.
//!
//! Three estimators share one path engine: plain semigroup functionals
//! `E f(terminal segment)`, the stochastic-integral gradient weight (the
//! derivative of the semigroup along a segment direction equals
//! `E[f * weight]`), and a central-difference oracle with common random
//! numbers that the gradient estimator is validated against.
//!
//! Per-path work is embarrassingly parallel; every reduction goes through
//! the fixed-shape pairwise tree in [`crate::stats`], so estimates are
//! bit-identical across thread counts.

use crate::coupling::{build_plan, girsanov_weight, CouplingPlan};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Segment};
use crate::simulate::{generate_increments, simulate_path, PathBundle, SimGrid};
use crate::stats::Estimate;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Cylindrical functional of the terminal segment.
///
/// Restricting to finitely many segment reads keeps the test-function class
/// representable; it covers every check this crate runs.
#[derive(Clone)]
pub struct TerminalFunctional {
    pub name: String,
    pub positive: bool,
    eval: Arc<dyn Fn(&Segment) -> f64 + Send + Sync>,
}

impl TerminalFunctional {
    pub fn new(
        name: impl Into<String>,
        positive: bool,
        eval: impl Fn(&Segment) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            positive,
            eval: Arc::new(eval),
        }
    }

    pub fn eval(&self, seg: &Segment) -> f64 {
        (self.eval)(seg)
    }

    /// Functional registry used by config files. `m` locates the first `y`
    /// component inside the state vector.
    pub fn by_name(name: &str, m: usize) -> Result<Self> {
        let f = match name {
            "one" => Self::new("one", true, |_| 1.0),
            "y_terminal" => Self::new("y_terminal", false, move |seg: &Segment| {
                seg.at_zero()[m]
            }),
            "y_terminal_sq" => Self::new("y_terminal_sq", false, move |seg: &Segment| {
                let y = seg.at_zero()[m];
                y * y
            }),
            "tanh_y" => Self::new("tanh_y", false, move |seg: &Segment| {
                seg.at_zero()[m].tanh()
            }),
            "one_plus_tanh_sq" => Self::new("one_plus_tanh_sq", true, move |seg: &Segment| {
                let t = seg.at_zero()[m].tanh();
                1.0 + t * t
            }),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown functional '{other}' (expected one, y_terminal, y_terminal_sq, \
                     tanh_y, one_plus_tanh_sq)"
                )))
            }
        };
        Ok(f)
    }

    /// `log f`, for the log-Harnack harness. Requires positivity.
    pub fn log(&self) -> Result<Self> {
        if !self.positive {
            return Err(Error::InvalidArgument(format!(
                "functional '{}' is not declared positive; cannot take log",
                self.name
            )));
        }
        let inner = self.eval.clone();
        Ok(Self {
            name: format!("log({})", self.name),
            positive: false,
            eval: Arc::new(move |seg| inner(seg).ln()),
        })
    }

    /// `f^p`, for the power-Harnack harness.
    pub fn pow(&self, p: f64) -> Self {
        let inner = self.eval.clone();
        Self {
            name: format!("{}^{p}", self.name),
            positive: self.positive,
            eval: Arc::new(move |seg| inner(seg).powf(p)),
        }
    }
}

fn run_paths<T, F>(n_paths: usize, per_path: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Send + Sync,
{
    if n_paths < 2 {
        return Err(Error::InvalidArgument(format!(
            "need n_paths >= 2, got {n_paths}"
        )));
    }
    (0..n_paths as u64).into_par_iter().map(per_path).collect()
}

// Blow-ups become NaN (counted as rejections); anything else aborts the run.
fn blow_up_to_nan(res: Result<f64>) -> Result<f64> {
    match res {
        Ok(v) => Ok(v),
        Err(Error::BlowUp { .. }) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

/// Sample mean of `f` over terminal segments of independent paths.
pub fn estimate_functional(
    model: &ModelSpec,
    xi: &Segment,
    f: &TerminalFunctional,
    n_paths: usize,
    seed: u64,
    grid: &SimGrid,
) -> Result<Estimate> {
    let values = run_paths(n_paths, |p| {
        blow_up_to_nan((|| {
            let noise = generate_increments(seed, p, grid.n_steps(), model.d(), grid.dt());
            let path = simulate_path(model, xi, grid, noise)?;
            Ok(f.eval(&path.terminal_segment()))
        })())
    })?;
    Estimate::from_values(&values)
}

/// The stochastic-integral weight of one path:
///
/// ```text
/// sum_n < (sigma^T)^-1 N(t_n), dB_n >,
/// N(s) = (grad_{Theta(s)} Z)(X, Y) + (grad_{Theta_s} b)(X_s, Y_s)
///        - v'(s) h2(0) - alpha'(s)
/// ```
///
/// evaluated at left endpoints, matching the integrator's increments.
pub fn bismut_weight_path(
    model: &ModelSpec,
    plan: &CouplingPlan,
    path: &PathBundle,
) -> Result<f64> {
    if &path.grid != plan.grid() {
        return Err(Error::InvalidGrid(
            "bismut_weight_path: plan and path grids differ".into(),
        ));
    }
    let grid = &path.grid;
    let (m, d) = (model.m(), model.d());
    let sigma_inv_t = model.sigma_inv().transpose();
    let h2_zero = &plan.h().at_zero()[m..];

    let mut z_dir = vec![0.0; d];
    let mut b_dir = vec![0.0; d];
    let mut n_vec = vec![0.0; d];
    let mut weight = 0.0;
    for n in 0..grid.n_steps() {
        let state = path.state_at(n);
        let (x, y) = state.split_at(m);
        model.coeffs().z_dir(x, y, plan.theta_at(n), &mut z_dir);
        model
            .coeffs()
            .b_dir(path.segment_at(n), plan.theta_window(n), &mut b_dir);
        let v_prime = plan.v_prime_at(n);
        let alpha_prime = plan.alpha_prime_at(n);
        for k in 0..d {
            n_vec[k] = z_dir[k] + b_dir[k] - v_prime * h2_zero[k] - alpha_prime[k];
        }
        let db = path.increments.step(n);
        for k in 0..d {
            let mut acc = 0.0;
            for c in 0..d {
                acc += sigma_inv_t.get(k, c) * n_vec[c];
            }
            weight += acc * db[k];
        }
    }
    if !weight.is_finite() {
        return Err(Error::NonFinite("bismut weight"));
    }
    Ok(weight)
}

/// Gradient estimate plus the raw-weight variance diagnostic.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BismutRun {
    pub estimate: Estimate,
    pub weight_variance: f64,
}

/// Monte Carlo gradient via the derivative formula: mean of
/// `f(terminal) * weight`. With `control_variate` on (the default), the
/// mean-zero product `P_T f * weight` is subtracted, which cuts variance
/// without moving the mean.
#[allow(clippy::too_many_arguments)]
pub fn bismut_gradient_run(
    model: &ModelSpec,
    xi: &Segment,
    h: &Segment,
    f: &TerminalFunctional,
    n_paths: usize,
    seed: u64,
    grid: &SimGrid,
    control_variate: bool,
) -> Result<BismutRun> {
    let plan = build_plan(model, h, grid)?;
    let pairs: Vec<(f64, f64)> = run_paths(n_paths, |p| {
        let inner = || -> Result<(f64, f64)> {
            let noise = generate_increments(seed, p, grid.n_steps(), model.d(), grid.dt());
            let path = simulate_path(model, xi, grid, noise)?;
            let weight = bismut_weight_path(model, &plan, &path)?;
            Ok((f.eval(&path.terminal_segment()), weight))
        };
        match inner() {
            Ok(pair) => Ok(pair),
            Err(Error::BlowUp { .. }) => Ok((f64::NAN, f64::NAN)),
            Err(e) => Err(e),
        }
    })?;

    let weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let weight_est = Estimate::from_values(&weights)?;
    let weight_variance = weight_est.std_err * weight_est.std_err * weight_est.n as f64;

    let values: Vec<f64> = if control_variate {
        let f_values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let f_mean = Estimate::from_values(&f_values)?.mean;
        pairs.iter().map(|(fv, w)| (fv - f_mean) * w).collect()
    } else {
        pairs.iter().map(|(fv, w)| fv * w).collect()
    };
    Ok(BismutRun {
        estimate: Estimate::from_values(&values)?,
        weight_variance,
    })
}

/// See [`bismut_gradient_run`]; this is the plain-estimate entry point.
#[allow(clippy::too_many_arguments)]
pub fn estimate_gradient_bismut(
    model: &ModelSpec,
    xi: &Segment,
    h: &Segment,
    f: &TerminalFunctional,
    n_paths: usize,
    seed: u64,
    grid: &SimGrid,
) -> Result<Estimate> {
    bismut_gradient_run(model, xi, h, f, n_paths, seed, grid, true).map(|r| r.estimate)
}

/// Default central-difference shift:
/// `0.05 * (1 + sup|xi|) / (1 + sup|h|)`.
pub fn default_eps_fd(xi: &Segment, h: &Segment) -> f64 {
    0.05 * (1.0 + xi.sup_norm()) / (1.0 + h.sup_norm())
}

/// Central-difference gradient oracle with common random numbers: each path
/// reuses identical increments for the `xi + eps h` and `xi - eps h` runs.
#[allow(clippy::too_many_arguments)]
pub fn estimate_gradient_fd(
    model: &ModelSpec,
    xi: &Segment,
    h: &Segment,
    f: &TerminalFunctional,
    n_paths: usize,
    seed: u64,
    grid: &SimGrid,
    eps_fd: f64,
) -> Result<Estimate> {
    if !(eps_fd > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps_fd must be positive, got {eps_fd}"
        )));
    }
    let xi_plus = xi.affine_add(eps_fd, h)?;
    let xi_minus = xi.affine_add(-eps_fd, h)?;
    let values = run_paths(n_paths, |p| {
        blow_up_to_nan((|| {
            let noise = generate_increments(seed, p, grid.n_steps(), model.d(), grid.dt());
            let plus = simulate_path(model, &xi_plus, grid, noise.clone())?;
            let minus = simulate_path(model, &xi_minus, grid, noise)?;
            Ok(
                (f.eval(&plus.terminal_segment()) - f.eval(&minus.terminal_segment()))
                    / (2.0 * eps_fd),
            )
        })())
    })?;
    Estimate::from_values(&values)
}

/// Side-by-side gradient report: the weight estimator against the
/// common-random-number oracle.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradientReport {
    pub bismut: Estimate,
    pub fd: Estimate,
    #[serde(serialize_with = "crate::stats::finite_or_null")]
    pub z_score: f64,
    #[serde(serialize_with = "crate::stats::finite_or_null")]
    pub weight_variance: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn gradient_report(
    model: &ModelSpec,
    xi: &Segment,
    h: &Segment,
    f: &TerminalFunctional,
    n_paths: usize,
    seed: u64,
    grid: &SimGrid,
    eps_fd: Option<f64>,
    control_variate: bool,
) -> Result<GradientReport> {
    let run = bismut_gradient_run(model, xi, h, f, n_paths, seed, grid, control_variate)?;
    let eps = eps_fd.unwrap_or_else(|| default_eps_fd(xi, h));
    let fd = estimate_gradient_fd(model, xi, h, f, n_paths, seed, grid, eps)?;
    Ok(GradientReport {
        bismut: run.estimate,
        fd,
        z_score: run.estimate.z_score_vs(&fd),
        weight_variance: run.weight_variance,
    })
}

/// Two-sided check of the change-of-measure identity: reweighted base paths
/// against paths started at the shifted initial segment.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GirsanovCheck {
    /// `E[R f(terminal)]` on base paths.
    pub lhs: Estimate,
    /// Direct estimate started at `xi + eps h` (same increments per path).
    pub rhs: Estimate,
    /// `E[R]`; should sit at 1.
    pub mean_r: Estimate,
    #[serde(serialize_with = "crate::stats::finite_or_null")]
    pub z_score: f64,
    pub nonfinite_fraction: f64,
    /// False when more than 1% of weights were non-finite.
    pub valid: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn girsanov_identity_check(
    model: &ModelSpec,
    xi: &Segment,
    h: &Segment,
    f: &TerminalFunctional,
    eps: f64,
    n_paths: usize,
    seed: u64,
    grid: &SimGrid,
) -> Result<GirsanovCheck> {
    let plan = build_plan(model, h, grid)?;
    let xi_shifted = xi.affine_add(eps, h)?;
    let rows: Vec<(f64, f64, f64)> = run_paths(n_paths, |p| {
        let inner = || -> Result<(f64, f64, f64)> {
            let noise = generate_increments(seed, p, grid.n_steps(), model.d(), grid.dt());
            let base = simulate_path(model, xi, grid, noise.clone())?;
            let record = girsanov_weight(model, &plan, &base, eps)?;
            let f_base = f.eval(&base.terminal_segment());
            let shifted = simulate_path(model, &xi_shifted, grid, noise)?;
            let f_shifted = f.eval(&shifted.terminal_segment());
            let r = if record.finite { record.r } else { f64::NAN };
            Ok((r * f_base, f_shifted, r))
        };
        match inner() {
            Ok(row) => Ok(row),
            Err(Error::BlowUp { .. }) => Ok((f64::NAN, f64::NAN, f64::NAN)),
            Err(e) => Err(e),
        }
    })?;
    let lhs = Estimate::from_values(&rows.iter().map(|r| r.0).collect::<Vec<_>>())?;
    let rhs = Estimate::from_values(&rows.iter().map(|r| r.1).collect::<Vec<_>>())?;
    let mean_r = Estimate::from_values(&rows.iter().map(|r| r.2).collect::<Vec<_>>())?;
    let nonfinite_fraction = mean_r.n_rejected as f64 / n_paths as f64;
    Ok(GirsanovCheck {
        lhs,
        rhs,
        mean_r,
        z_score: lhs.z_score_vs(&rhs),
        nonfinite_fraction,
        valid: nonfinite_fraction <= 0.01,
    })
}
