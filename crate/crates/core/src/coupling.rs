//! Coupling plan construction and Girsanov path densities.
//!
//! The plan consists of deterministic functions on the time grid: a ramp
//! `v` with `v(0) = 1` vanishing at `tau = T - r0`, a correction `alpha`
//! built from the weighted controllability Gramian, the steering profile
//! `phi = v h2(0) + alpha`, and the resulting state offset `Theta` which
//! starts at `h` and vanishes on `[tau, T]`. A shifted copy of the solution
//! driven by `phi` therefore re-merges with the original over the last delay
//! window, which is what turns the shift into a stochastic-integral weight.
//!
//! All plan integrals (the Gramian, the steering constraint, and `Theta`)
//! run through one shared fourth-order cumulative quadrature, so the
//! constraint residual collapses to linear-solve rounding by construction.

use crate::error::{Error, Result};
use crate::matops::{cumulative_simpson, mat_exp, CholeskyFactor, DenseMatrix};
use crate::model::{ModelSpec, Segment, SegmentView};
use crate::simulate::{generate_increments, simulate_path, simulate_shifted, PathBundle, SimGrid};
use serde::Serialize;

/// Deterministic steering data for one `(T, h)` pair, sampled on the grid.
#[derive(Debug, Clone)]
pub struct CouplingPlan {
    grid: SimGrid,
    dim: usize,
    d: usize,
    h: Segment,
    /// `v`, `v'` at times `j dt`, `j = 0..=n_steps`.
    v: Vec<f64>,
    v_prime: Vec<f64>,
    /// `alpha`, `alpha'`, `phi` in `R^d`, node-major on the same times.
    alpha: Vec<f64>,
    alpha_prime: Vec<f64>,
    phi: Vec<f64>,
    /// `Theta` in `R^{m+d}`, node-major over the full window `[-r0, T]`.
    theta: Vec<f64>,
    /// Gramian solve output (empty when `m = 0`).
    q_inv_vec: Vec<f64>,
    /// Euclidean norm of the steering-constraint residual.
    ll_residual: f64,
}

impl CouplingPlan {
    pub fn grid(&self) -> &SimGrid {
        &self.grid
    }

    pub fn h(&self) -> &Segment {
        &self.h
    }

    pub fn tau(&self) -> f64 {
        self.grid.tau()
    }

    pub fn ll_residual(&self) -> f64 {
        self.ll_residual
    }

    pub fn q_inv_vec(&self) -> &[f64] {
        &self.q_inv_vec
    }

    pub fn v_at(&self, n: usize) -> f64 {
        self.v[n]
    }

    pub fn v_prime_at(&self, n: usize) -> f64 {
        self.v_prime[n]
    }

    pub fn alpha_at(&self, n: usize) -> &[f64] {
        &self.alpha[n * self.d..(n + 1) * self.d]
    }

    pub fn alpha_prime_at(&self, n: usize) -> &[f64] {
        &self.alpha_prime[n * self.d..(n + 1) * self.d]
    }

    pub fn phi_at(&self, n: usize) -> &[f64] {
        &self.phi[n * self.d..(n + 1) * self.d]
    }

    /// `Theta` at state row `i` (row 0 sits at `-r0`).
    pub fn theta_row(&self, i: usize) -> &[f64] {
        &self.theta[i * self.dim..(i + 1) * self.dim]
    }

    /// `Theta` at time index `n >= 0`.
    pub fn theta_at(&self, n: usize) -> &[f64] {
        self.theta_row(self.grid.n_hist() + n)
    }

    /// Borrowed window of `Theta` ending at time index `n` (the direction
    /// segment fed to the history-drift derivative).
    pub fn theta_window(&self, n: usize) -> SegmentView<'_> {
        SegmentView {
            r0: self.grid.r0(),
            dim: self.dim,
            n_hist: self.grid.n_hist(),
            values: &self.theta[n * self.dim..(n + self.grid.n_hist() + 1) * self.dim],
        }
    }

    /// Serializable snapshot of the sampled plan.
    pub fn export(&self) -> PlanExport {
        let n_steps = self.grid.n_steps();
        PlanExport {
            tau: self.tau(),
            ll_residual: self.ll_residual,
            q_inv_vec: self.q_inv_vec.clone(),
            times: (0..=n_steps).map(|j| j as f64 * self.grid.dt()).collect(),
            v: self.v.clone(),
            v_prime: self.v_prime.clone(),
            alpha: (0..=n_steps).map(|j| self.alpha_at(j).to_vec()).collect(),
            phi: (0..=n_steps).map(|j| self.phi_at(j).to_vec()).collect(),
            theta_times: (0..self.grid.n_rows())
                .map(|i| self.grid.row_time(i))
                .collect(),
            theta: (0..self.grid.n_rows())
                .map(|i| self.theta_row(i).to_vec())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanExport {
    pub tau: f64,
    pub ll_residual: f64,
    pub q_inv_vec: Vec<f64>,
    pub times: Vec<f64>,
    pub v: Vec<f64>,
    pub v_prime: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub theta_times: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
}

/// Builds the coupling plan for direction `h` on the given grid.
///
/// `v(s) = (tau - s)+ / tau`; `alpha` is the Gramian-weighted correction
/// with weight `g(s) = s (tau - s)+ / tau^2`; both derivatives take their
/// left-continuous value at `s = tau`. The steering constraint (the offset
/// `Theta` must vanish from `tau` onwards) is verified to
/// `1e-8 * (1 + |h(0)|)` and its residual stored.
pub fn build_plan(model: &ModelSpec, h: &Segment, grid: &SimGrid) -> Result<CouplingPlan> {
    let dim = model.dim();
    let (m, d) = (model.m(), model.d());
    if h.dim() != dim {
        return Err(Error::DimensionMismatch {
            context: "build_plan: h dimension",
            expected: format!("{dim}"),
            got: format!("{}", h.dim()),
        });
    }
    if h.n_hist() != grid.n_hist() || (h.r0() - grid.r0()).abs() > 1e-9 * grid.r0() {
        return Err(Error::InvalidGrid(
            "build_plan: h grid incompatible with simulation grid".into(),
        ));
    }
    let dt = grid.dt();
    let n_steps = grid.n_steps();
    let tau_idx = grid.tau_steps();
    let tau = grid.tau();
    let h_zero = h.at_zero();
    let (h1_zero, h2_zero) = h_zero.split_at(m);

    let mut v = vec![0.0; n_steps + 1];
    let mut v_prime = vec![0.0; n_steps + 1];
    for j in 0..=n_steps {
        let s = j as f64 * dt;
        v[j] = (tau - s).max(0.0) / tau;
        v_prime[j] = if j <= tau_idx { -1.0 / tau } else { 0.0 };
    }

    let mut alpha = vec![0.0; (n_steps + 1) * d];
    let mut alpha_prime = vec![0.0; (n_steps + 1) * d];
    let mut q_inv_vec = Vec::new();
    // exp(-sA) M at the quadrature nodes, kept for the Theta integral
    let mut e_nodes: Vec<DenseMatrix> = Vec::new();

    if m > 0 {
        let am = model.a().matmul(model.mm())?;
        for j in 0..=tau_idx {
            let s = j as f64 * dt;
            e_nodes.push(mat_exp(model.a(), -s)?.matmul(model.mm())?);
        }
        let g = |j: usize| {
            let s = j as f64 * dt;
            s * (tau - s).max(0.0) / (tau * tau)
        };
        let g_prime = |j: usize| {
            let s = j as f64 * dt;
            if j <= tau_idx {
                (tau - 2.0 * s) / (tau * tau)
            } else {
                0.0
            }
        };

        // Gramian and forcing integrals share one quadrature rule over
        // exactly [0, tau]; every integrand vanishes beyond tau, so the
        // cumulative values are simply held constant there. Using one rule
        // for Q, the forcing, and the Theta integral makes the steering
        // residual collapse to linear-solve rounding.
        let mut q_nodes = Vec::with_capacity((tau_idx + 1) * m * m);
        let mut c_nodes = Vec::with_capacity((tau_idx + 1) * m);
        for (j, e) in e_nodes.iter().enumerate() {
            let gram = e.matmul(&e.transpose())?.scale(g(j));
            q_nodes.extend_from_slice(gram.data());
            let forced = e.matvec(h2_zero)?;
            c_nodes.extend(forced.iter().map(|x| x * v[j]));
        }
        let q_cum = cumulative_simpson(&q_nodes, m * m, dt);
        let c_cum = cumulative_simpson(&c_nodes, m, dt);
        let q = DenseMatrix::new(m, m, q_cum[tau_idx * m * m..(tau_idx + 1) * m * m].to_vec())?;
        let rhs: Vec<f64> = h1_zero
            .iter()
            .zip(&c_cum[tau_idx * m..(tau_idx + 1) * m])
            .map(|(a, b)| a + b)
            .collect();
        let chol = CholeskyFactor::factor(&q).map_err(|e| match e {
            Error::NotPositiveDefinite { index, pivot } => Error::RankCondition(format!(
                "Gramian not invertible at tau = {tau} (pivot {pivot:.3e} at index {index})"
            )),
            other => other,
        })?;
        q_inv_vec = chol.solve(&rhs)?;

        for j in 0..=tau_idx {
            let et_q = e_nodes[j].transpose().matvec(&q_inv_vec)?;
            let f = mat_exp(model.a(), -(j as f64 * dt))?.matmul(&am)?;
            let ft_q = f.transpose().matvec(&q_inv_vec)?;
            for k in 0..d {
                alpha[j * d + k] = -g(j) * et_q[k];
                alpha_prime[j * d + k] = -(g_prime(j) * et_q[k] - g(j) * ft_q[k]);
            }
        }
    }

    let mut phi = vec![0.0; (n_steps + 1) * d];
    for j in 0..=n_steps {
        for k in 0..d {
            phi[j * d + k] = v[j] * h2_zero[k] + alpha[j * d + k];
        }
    }

    // Theta: h on [-r0, 0]; afterwards (exp(sA)(h1(0) + I(s)), phi(s)) with
    // I(s) the cumulative integral of exp(-rA) M phi(r)
    let n_rows = grid.n_rows();
    let n_hist = grid.n_hist();
    let mut theta = vec![0.0; n_rows * dim];
    theta[..(n_hist + 1) * dim].copy_from_slice(h.values());
    let mut ll_residual = 0.0;
    if m > 0 {
        let mut integrand = vec![0.0; (tau_idx + 1) * m];
        for (j, e) in e_nodes.iter().enumerate() {
            let val = e.matvec(phi[j * d..(j + 1) * d].as_ref())?;
            integrand[j * m..(j + 1) * m].copy_from_slice(&val);
        }
        let i_cum = cumulative_simpson(&integrand, m, dt);
        for j in 0..=n_steps {
            // the integrand vanishes past tau, so the integral freezes there
            let read = j.min(tau_idx);
            let mut inner: Vec<f64> = h1_zero.to_vec();
            for (k, item) in inner.iter_mut().enumerate() {
                *item += i_cum[read * m + k];
            }
            let theta1 = mat_exp(model.a(), j as f64 * dt)?.matvec(&inner)?;
            let row = &mut theta[(n_hist + j) * dim..(n_hist + j + 1) * dim];
            row[..m].copy_from_slice(&theta1);
            row[m..].copy_from_slice(&phi[j * d..(j + 1) * d]);
        }
        let residual: f64 = h1_zero
            .iter()
            .zip(&i_cum[tau_idx * m..(tau_idx + 1) * m])
            .map(|(a, b)| (a + b) * (a + b))
            .sum::<f64>()
            .sqrt();
        ll_residual = residual;
    } else {
        for j in 0..=n_steps {
            let row = &mut theta[(n_hist + j) * dim..(n_hist + j + 1) * dim];
            row.copy_from_slice(&phi[j * d..(j + 1) * d]);
        }
    }

    let h_zero_norm = h_zero.iter().map(|x| x * x).sum::<f64>().sqrt();
    if ll_residual > 1e-8 * (1.0 + h_zero_norm) {
        return Err(Error::PlanConstraint(format!(
            "steering-constraint residual {ll_residual:.3e} exceeds 1e-8 * (1 + |h(0)|)"
        )));
    }

    Ok(CouplingPlan {
        grid: *grid,
        dim,
        d,
        h: h.clone(),
        v,
        v_prime,
        alpha,
        alpha_prime,
        phi,
        theta,
        q_inv_vec,
        ll_residual,
    })
}

/// The window `theta -> Theta(s + theta)`, `theta in [-r0, 0]`, as an owned
/// segment. `s` must lie on the grid.
pub fn theta_segment(plan: &CouplingPlan, s: f64) -> Result<Segment> {
    let grid = plan.grid();
    let dt = grid.dt();
    let j = (s / dt).round();
    if j < 0.0
        || j > grid.n_steps() as f64
        || (s - j * dt).abs() > 1e-9 * dt.max(s.abs())
    {
        return Err(Error::InvalidArgument(format!(
            "theta_segment: s = {s} is not a grid time in [0, {}]",
            grid.t_final()
        )));
    }
    let j = j as usize;
    let dim = plan.dim;
    Segment::new(
        grid.r0(),
        dim,
        grid.n_hist(),
        plan.theta[j * dim..(j + grid.n_hist() + 1) * dim].to_vec(),
    )
}

/// Largest deviation over the whole window `[-r0, T]` between the shifted
/// path and `base + eps Theta`.
pub fn check_coupling_identity(
    base: &PathBundle,
    shifted: &PathBundle,
    plan: &CouplingPlan,
    eps: f64,
) -> Result<f64> {
    if base.grid != shifted.grid || &base.grid != plan.grid() {
        return Err(Error::InvalidGrid(
            "check_coupling_identity: mismatched grids".into(),
        ));
    }
    let dim = base.dim();
    let mut sup = 0.0_f64;
    for i in 0..base.grid.n_rows() {
        let theta = plan.theta_row(i);
        let mut norm_sq = 0.0;
        for k in 0..dim {
            let diff = shifted.row(i)[k] - base.row(i)[k] - eps * theta[k];
            norm_sq += diff * diff;
        }
        sup = sup.max(norm_sq.sqrt());
    }
    Ok(sup)
}

/// Discretization-order study of the pathwise coupling identity.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingIdentityStudy {
    /// Worst deviation over paths at the base step.
    pub max_sup_error: f64,
    pub mean_sup_error: f64,
    /// Same quantities with the step halved (same Brownian motion).
    pub max_sup_error_refined: f64,
    pub mean_sup_error_refined: f64,
    /// `log2(mean / mean_refined)`; first-order schemes sit near 1.
    #[serde(serialize_with = "crate::stats::finite_or_null")]
    pub order_estimate: f64,
}

/// Runs base and shifted paths at `dt` and `dt/2` with a shared Brownian
/// motion and reports how the identity deviation scales.
#[allow(clippy::too_many_arguments)]
pub fn coupling_identity_study(
    model: &ModelSpec,
    xi: &Segment,
    h: &Segment,
    grid: &SimGrid,
    eps: f64,
    seed: u64,
    n_paths: usize,
) -> Result<CouplingIdentityStudy> {
    use rayon::prelude::*;

    let fine_grid = grid.refined();
    let plan = build_plan(model, h, grid)?;
    let xi_fine = refine_segment(xi);
    let h_fine = refine_segment(h);
    let plan_fine = build_plan(model, &h_fine, &fine_grid)?;

    let errors: Vec<(f64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| -> Result<(f64, f64)> {
            let noise_fine =
                generate_increments(seed, p, fine_grid.n_steps(), model.d(), fine_grid.dt());
            let noise = noise_fine.coarsen()?;

            let base = simulate_path(model, xi, grid, noise)?;
            let shifted = simulate_shifted(model, &plan, &base, eps)?;
            let err = check_coupling_identity(&base, &shifted, &plan, eps)?;

            let base_f = simulate_path(model, &xi_fine, &fine_grid, noise_fine)?;
            let shifted_f = simulate_shifted(model, &plan_fine, &base_f, eps)?;
            let err_f = check_coupling_identity(&base_f, &shifted_f, &plan_fine, eps)?;
            Ok((err, err_f))
        })
        .collect::<Result<Vec<_>>>()?;

    let max = errors.iter().map(|e| e.0).fold(0.0, f64::max);
    let max_f = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let mean = errors.iter().map(|e| e.0).sum::<f64>() / n_paths as f64;
    let mean_f = errors.iter().map(|e| e.1).sum::<f64>() / n_paths as f64;
    Ok(CouplingIdentityStudy {
        max_sup_error: max,
        mean_sup_error: mean,
        max_sup_error_refined: max_f,
        mean_sup_error_refined: mean_f,
        order_estimate: (mean / mean_f).log2(),
    })
}

/// Halves the segment grid step by inserting interpolated midpoints (exact
/// for the piecewise-linear segments this crate works with).
pub fn refine_segment(seg: &Segment) -> Segment {
    let dim = seg.dim();
    let n = seg.n_hist();
    let mut values = Vec::with_capacity((2 * n + 1) * dim);
    for j in 0..n {
        values.extend_from_slice(seg.node(j));
        let lo = seg.node(j);
        let hi = seg.node(j + 1);
        for k in 0..dim {
            values.push(0.5 * (lo[k] + hi[k]));
        }
    }
    values.extend_from_slice(seg.node(n));
    Segment::new(seg.r0(), dim, 2 * n, values).expect("refinement preserves validity")
}

/// Girsanov density record for one path.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GirsanovRecord {
    /// `log R = -ito_term - quad_term / 2`.
    pub log_r: f64,
    pub r: f64,
    pub ito_term: f64,
    pub quad_term: f64,
    pub finite: bool,
}

/// Density of the measure under which the shifted path solves the original
/// equation:
///
/// ```text
/// R = exp( -sum <sigma^-1 Phi(t_n), dB_n> - (1/2) sum |sigma^-1 Phi(t_n)|^2 dt )
/// ```
///
/// with `Phi` the drift mismatch between base and shifted coefficients plus
/// the steering term. Shifted states are reconstructed from the coupling
/// identity (`base + eps Theta`), which is exact in continuous time and
/// avoids compounding a second discretization inside `Phi`.
pub fn girsanov_weight(
    model: &ModelSpec,
    plan: &CouplingPlan,
    base: &PathBundle,
    eps: f64,
) -> Result<GirsanovRecord> {
    if &base.grid != plan.grid() {
        return Err(Error::InvalidGrid(
            "girsanov_weight: plan and path grids differ".into(),
        ));
    }
    let grid = &base.grid;
    let dim = model.dim();
    let (m, d) = (model.m(), model.d());
    let dt = grid.dt();
    let n_hist = grid.n_hist();
    let h2_zero = &plan.h().at_zero()[m..];

    let mut z_base = vec![0.0; d];
    let mut z_shift = vec![0.0; d];
    let mut b_base = vec![0.0; d];
    let mut b_shift = vec![0.0; d];
    let mut phi = vec![0.0; d];
    let mut sig_phi = vec![0.0; d];
    let mut shifted_state = vec![0.0; dim];
    let mut shifted_window = vec![0.0; (n_hist + 1) * dim];

    let mut ito = 0.0;
    let mut quad = 0.0;
    for n in 0..grid.n_steps() {
        let state = base.state_at(n);
        let theta = plan.theta_at(n);
        for k in 0..dim {
            shifted_state[k] = state[k] + eps * theta[k];
        }
        let (bx, by) = state.split_at(m);
        let (sx, sy) = shifted_state.split_at(m);
        model.coeffs().z(bx, by, &mut z_base);
        model.coeffs().z(sx, sy, &mut z_shift);

        let window = base.segment_at(n);
        for row in 0..=n_hist {
            let theta_row = plan.theta_row(n + row);
            let src = window.node(row);
            for k in 0..dim {
                shifted_window[row * dim + k] = src[k] + eps * theta_row[k];
            }
        }
        let shifted_seg = SegmentView {
            r0: grid.r0(),
            dim,
            n_hist,
            values: &shifted_window,
        };
        model.coeffs().b(window, &mut b_base);
        model.coeffs().b(shifted_seg, &mut b_shift);

        let v_prime = plan.v_prime_at(n);
        let alpha_prime = plan.alpha_prime_at(n);
        for k in 0..d {
            phi[k] = z_base[k] - z_shift[k] + b_base[k] - b_shift[k]
                + eps * (v_prime * h2_zero[k] + alpha_prime[k]);
        }
        for k in 0..d {
            let mut acc = 0.0;
            for c in 0..d {
                acc += model.sigma_inv().get(k, c) * phi[c];
            }
            sig_phi[k] = acc;
        }
        let db = base.increments.step(n);
        for k in 0..d {
            ito += sig_phi[k] * db[k];
            quad += sig_phi[k] * sig_phi[k] * dt;
        }
    }

    let log_r = -ito - 0.5 * quad;
    let r = log_r.exp();
    Ok(GirsanovRecord {
        log_r,
        r,
        ito_term: ito,
        quad_term: quad,
        finite: log_r.is_finite() && r.is_finite(),
    })
}
