//! One runner per subcommand. Each returns whether its hard assertions
//! passed; statistical diagnostics are reported, not asserted.

use crate::config::{ConfigError, ExperimentConfig};
use crate::output::ReportWriter;
use anyhow::Result;
use sdde_lab::coupling::build_plan;
use sdde_lab::estimate::{girsanov_identity_check, gradient_report, TerminalFunctional};
use sdde_lab::matops::{gramian, kalman_rank};
use sdde_lab::model::{LyapunovSuite, Segment};
use sdde_lab::simulate::{generate_increments, simulate_path};
use sdde_lab::stats::Estimate;
use sdde_lab::verify::{
    check_assumption_grid, check_e28_grid, check_log_harnack, check_moment_bound,
    check_power_harnack, default_r_sweep, entropy_gradient_report, gradient_bound_sweep,
    Assumption, AssumptionReport,
};
use serde::Serialize;

fn suite_required(
    suite: &Option<LyapunovSuite>,
) -> std::result::Result<&LyapunovSuite, ConfigError> {
    suite.as_ref().ok_or_else(|| {
        ConfigError(
            "model: this command needs Lyapunov data; use a built-in model \
             (explicit registry models carry none)"
                .into(),
        )
    })
}

pub fn run_gramian(cfg: &ExperimentConfig, writer: &ReportWriter) -> Result<bool> {
    let (model, _) = cfg.build_model()?;
    if model.m() == 0 {
        return Err(ConfigError("gramian needs a model with m >= 1".into()).into());
    }
    let tau = match cfg.tau {
        Some(t) => t,
        None => cfg.require("t_final (or tau)", cfg.t_final)? - model.r0(),
    };
    let quad_step = match cfg.quad_step {
        Some(q) => q,
        None => cfg.require("dt (or quad_step)", cfg.dt)?,
    };
    let t_horizon = cfg.t_horizon.unwrap_or(tau);
    let result = gramian(model.a(), model.mm(), t_horizon, tau, quad_step)?;
    let rank = kalman_rank(model.a(), model.mm(), 1e-10)?;

    #[derive(Serialize)]
    struct GramianReport {
        m: usize,
        d: usize,
        tau: f64,
        t_horizon: f64,
        quad_step: f64,
        kalman: sdde_lab::matops::KalmanRank,
        gramian: sdde_lab::matops::GramianResult,
    }
    writer.write_json(
        "gramian",
        &GramianReport {
            m: model.m(),
            d: model.d(),
            tau,
            t_horizon,
            quad_step,
            kalman: rank,
            gramian: result,
        },
    )?;
    Ok(true)
}

pub fn run_plan(cfg: &ExperimentConfig, writer: &ReportWriter) -> Result<bool> {
    let (model, _) = cfg.build_model()?;
    let grid = cfg.sim_grid(&model)?;
    let h = cfg.segment("h", &cfg.h, &model, &grid)?;
    let plan = build_plan(&model, &h, &grid)?;
    let export = plan.export();

    let d = model.d();
    let mut rows = Vec::with_capacity(export.times.len());
    for (j, &t) in export.times.iter().enumerate() {
        let mut row = vec![t, export.v[j], export.v_prime[j]];
        row.extend(&export.alpha[j]);
        row.extend(&export.phi[j]);
        rows.push(row);
    }
    let mut header = String::from("t,v,v_prime");
    for k in 0..d {
        header.push_str(&format!(",alpha_{k}"));
    }
    for k in 0..d {
        header.push_str(&format!(",phi_{k}"));
    }
    writer.write_csv("plan", &header, &rows)?;

    let mut theta_rows = Vec::with_capacity(export.theta_times.len());
    for (i, &t) in export.theta_times.iter().enumerate() {
        let mut row = vec![t];
        row.extend(&export.theta[i]);
        theta_rows.push(row);
    }
    let mut theta_header = String::from("t");
    for k in 0..model.dim() {
        theta_header.push_str(&format!(",theta_{k}"));
    }
    writer.write_csv("plan_theta", &theta_header, &theta_rows)?;
    writer.write_json("plan", &export)?;
    Ok(true)
}

pub fn run_simulate(cfg: &ExperimentConfig, writer: &ReportWriter) -> Result<bool> {
    let (model, _) = cfg.build_model()?;
    let grid = cfg.sim_grid(&model)?;
    let xi = cfg.segment("xi", &cfg.xi, &model, &grid)?;
    let n_paths = cfg.n_paths_checked()?;
    let seed = cfg.seed_checked()?;
    let f = match &cfg.f {
        Some(fc) => Some(
            TerminalFunctional::by_name(&fc.name, model.m())
                .map_err(|e| ConfigError(format!("f: {e}")))?,
        ),
        None => None,
    };

    use rayon::prelude::*;
    let dim = model.dim();
    let results: Vec<(Vec<f64>, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let noise = generate_increments(seed, p, grid.n_steps(), model.d(), grid.dt());
            match simulate_path(&model, &xi, &grid, noise) {
                Ok(path) => {
                    let terminal = path.state_at(grid.n_steps()).to_vec();
                    let fv = f
                        .as_ref()
                        .map(|f| f.eval(&path.terminal_segment()))
                        .unwrap_or(f64::NAN);
                    (terminal, fv)
                }
                Err(_) => (vec![f64::NAN; dim], f64::NAN),
            }
        })
        .collect();

    let mut component_estimates = Vec::with_capacity(dim);
    for k in 0..dim {
        let values: Vec<f64> = results.iter().map(|(t, _)| t[k]).collect();
        component_estimates.push(Estimate::from_values(&values)?);
    }
    let f_estimate = match &f {
        Some(_) => Some(Estimate::from_values(
            &results.iter().map(|(_, fv)| *fv).collect::<Vec<_>>(),
        )?),
        None => None,
    };

    #[derive(Serialize)]
    struct SimulateReport {
        n_paths: usize,
        t_final: f64,
        dt: f64,
        terminal_component_estimates: Vec<Estimate>,
        functional: Option<String>,
        functional_estimate: Option<Estimate>,
    }
    writer.write_json(
        "simulate",
        &SimulateReport {
            n_paths,
            t_final: grid.t_final(),
            dt: grid.dt(),
            terminal_component_estimates: component_estimates.clone(),
            functional: f.as_ref().map(|f| f.name.clone()),
            functional_estimate: f_estimate,
        },
    )?;

    let rows: Vec<Vec<f64>> = component_estimates
        .iter()
        .enumerate()
        .map(|(k, e)| {
            vec![
                k as f64,
                e.mean,
                e.std_err,
                e.n as f64,
                e.n_rejected as f64,
            ]
        })
        .collect();
    writer.write_csv("simulate", "component,mean,std_err,n,n_rejected", &rows)?;

    // full trajectories are only practical for a handful of paths
    if n_paths <= 10 {
        let mut rows = Vec::new();
        for p in 0..n_paths as u64 {
            let noise = generate_increments(seed, p, grid.n_steps(), model.d(), grid.dt());
            if let Ok(path) = simulate_path(&model, &xi, &grid, noise) {
                for i in 0..grid.n_rows() {
                    let mut row = vec![p as f64, grid.row_time(i)];
                    row.extend(path.row(i));
                    rows.push(row);
                }
            }
        }
        let mut header = String::from("path_id,t");
        for k in 0..dim {
            header.push_str(&format!(",state_{k}"));
        }
        writer.write_csv("simulate_paths", &header, &rows)?;
    }
    Ok(true)
}

pub fn run_gradient(cfg: &ExperimentConfig, writer: &ReportWriter) -> Result<bool> {
    let (model, _) = cfg.build_model()?;
    let grid = cfg.sim_grid(&model)?;
    let xi = cfg.segment("xi", &cfg.xi, &model, &grid)?;
    let h = cfg.segment("h", &cfg.h, &model, &grid)?;
    let f = cfg.functional(&model)?;
    let report = gradient_report(
        &model,
        &xi,
        &h,
        &f,
        cfg.n_paths_checked()?,
        cfg.seed_checked()?,
        &grid,
        cfg.eps_fd,
        cfg.control_variate.unwrap_or(true),
    )?;
    writer.write_json("gradient", &report)?;
    writer.write_csv(
        "gradient",
        "bismut_mean,bismut_std_err,fd_mean,fd_std_err,z_score,weight_variance",
        &[vec![
            report.bismut.mean,
            report.bismut.std_err,
            report.fd.mean,
            report.fd.std_err,
            report.z_score,
            report.weight_variance,
        ]],
    )?;
    Ok(true)
}

pub fn run_girsanov_check(cfg: &ExperimentConfig, writer: &ReportWriter) -> Result<bool> {
    let (model, _) = cfg.build_model()?;
    let grid = cfg.sim_grid(&model)?;
    let xi = cfg.segment("xi", &cfg.xi, &model, &grid)?;
    let h = cfg.segment("h", &cfg.h, &model, &grid)?;
    let f = cfg.functional(&model)?;
    let eps = cfg.require("eps", cfg.eps)?;
    let check = girsanov_identity_check(
        &model,
        &xi,
        &h,
        &f,
        eps,
        cfg.n_paths_checked()?,
        cfg.seed_checked()?,
        &grid,
    )?;
    writer.write_json("girsanov-check", &check)?;
    writer.write_csv(
        "girsanov-check",
        "lhs_mean,lhs_std_err,rhs_mean,rhs_std_err,mean_r,mean_r_std_err,z_score,nonfinite_fraction,valid",
        &[vec![
            check.lhs.mean,
            check.lhs.std_err,
            check.rhs.mean,
            check.rhs.std_err,
            check.mean_r.mean,
            check.mean_r.std_err,
            check.z_score,
            check.nonfinite_fraction,
            f64::from(u8::from(check.valid)),
        ]],
    )?;
    Ok(check.valid)
}

pub fn run_verify_assumptions(cfg: &ExperimentConfig, writer: &ReportWriter) -> Result<bool> {
    let (model, suite) = cfg.build_model()?;
    let grid = cfg.grid_spec()?;
    let seed = cfg.seed.unwrap_or(0);
    let names = cfg.require_ref("assumptions", &cfg.assumptions)?;
    let mut reports: Vec<AssumptionReport> = Vec::new();
    for name in names {
        let report = if name == "E28-display" {
            let eps_param = cfg.require("eps_param", cfg.eps_param)?;
            let mut r = check_e28_grid(grid, eps_param)?;
            r.assumption = "E28-display".into();
            r
        } else {
            let which: Assumption = name
                .parse()
                .map_err(|e| ConfigError(format!("assumptions: {e}")))?;
            check_assumption_grid(&model, suite_required(&suite)?, which, grid, seed)?
        };
        reports.push(report);
    }
    let passed = reports.iter().all(|r| r.passed);
    writer.write_json("verify-assumptions", &reports)?;
    let rows: Vec<Vec<f64>> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                i as f64,
                r.n_points as f64,
                r.n_violations as f64,
                r.worst_margin,
                f64::from(u8::from(r.passed)),
            ]
        })
        .collect();
    writer.write_csv(
        "verify-assumptions",
        "index,n_points,n_violations,worst_margin,passed",
        &rows,
    )?;
    Ok(passed)
}

pub fn run_moment_bound(cfg: &ExperimentConfig, writer: &ReportWriter) -> Result<bool> {
    let (model, suite) = cfg.build_model()?;
    let suite = suite_required(&suite)?;
    let t_list = cfg.require_ref("t_list", &cfg.t_list)?;
    let dt = cfg.check_grid_times(&model, t_list)?;
    let n_hist = (model.r0() / dt).round() as usize;
    let xi = cfg
        .require_ref("xi", &cfg.xi)?
        .build(model.r0(), model.dim(), n_hist.max(1))
        .map_err(|e| ConfigError(format!("xi: {e}")))?;
    let report = check_moment_bound(
        &model,
        suite,
        &xi,
        t_list,
        cfg.n_paths_checked()?,
        cfg.seed_checked()?,
        dt,
    )?;
    writer.write_json("moment-bound", &report)?;
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.t,
                r.empirical.mean,
                r.empirical.std_err,
                r.bound,
                f64::from(u8::from(r.passed)),
            ]
        })
        .collect();
    writer.write_csv("moment-bound", "t,empirical_mean,std_err,bound,passed", &rows)?;
    Ok(report.passed)
}

fn inequality_csv(writer: &ReportWriter, name: &str, reports: &[sdde_lab::verify::InequalityReport]) -> Result<()> {
    let rows: Vec<Vec<f64>> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                i as f64,
                r.lhs.mean,
                r.lhs.std_err,
                r.rhs_shape_value,
                r.fitted_c,
                f64::from(u8::from(r.passed_structural)),
            ]
        })
        .collect();
    writer.write_csv(
        name,
        "index,lhs_mean,lhs_std_err,rhs_shape,fitted_c,passed_structural",
        &rows,
    )?;
    Ok(())
}

pub fn run_log_harnack(cfg: &ExperimentConfig, writer: &ReportWriter) -> Result<bool> {
    let (model, suite) = cfg.build_model()?;
    let suite = suite_required(&suite)?;
    let grid = cfg.sim_grid(&model)?;
    let xi = cfg.segment("xi", &cfg.xi, &model, &grid)?;
    let h = cfg.segment("h", &cfg.h, &model, &grid)?;
    let f = cfg.functional(&model)?;
    let report = check_log_harnack(
        &model,
        suite,
        &xi,
        &h,
        &f,
        cfg.n_paths_checked()?,
        cfg.seed_checked()?,
        &grid,
    )?;
    writer.write_json("log-harnack", &report)?;
    inequality_csv(writer, "log-harnack", std::slice::from_ref(&report))?;
    Ok(report.passed_structural)
}

pub fn run_harnack(cfg: &ExperimentConfig, writer: &ReportWriter) -> Result<bool> {
    let (model, suite) = cfg.build_model()?;
    let suite = suite_required(&suite)?;
    let grid = cfg.sim_grid(&model)?;
    let xi = cfg.segment("xi", &cfg.xi, &model, &grid)?;
    let h = cfg.segment("h", &cfg.h, &model, &grid)?;
    let f = cfg.functional(&model)?;
    let p_list = match &cfg.sweep_p {
        Some(list) => list.clone(),
        None => vec![cfg.require("p (or sweep_p)", cfg.p)?],
    };
    let reports = p_list
        .iter()
        .map(|&p| {
            check_power_harnack(
                &model,
                suite,
                &xi,
                &h,
                &f,
                p,
                cfg.n_paths_checked()?,
                cfg.seed_checked()?,
                &grid,
            )
            .map_err(anyhow::Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    writer.write_json("harnack", &reports)?;
    inequality_csv(writer, "harnack", &reports)?;
    Ok(reports.iter().all(|r| r.passed_structural))
}

pub fn run_gradient_bound_sweep(cfg: &ExperimentConfig, writer: &ReportWriter) -> Result<bool> {
    let (model, suite) = cfg.build_model()?;
    let suite = suite_required(&suite)?;
    let t_list = cfg.require_ref("sweep_t", &cfg.sweep_t)?;
    let dt = cfg.check_grid_times(&model, t_list)?;
    let n_hist = (model.r0() / dt).round() as usize;
    let build_seg = |field: &str, spec: &Option<sdde_lab::model::SegmentSpec>| {
        cfg.require_ref(field, spec)?
            .build(model.r0(), model.dim(), n_hist.max(1))
            .map_err(|e| ConfigError(format!("{field}: {e}")))
    };
    let xi: Segment = build_seg("xi", &cfg.xi)?;
    let h: Segment = build_seg("h", &cfg.h)?;
    let f = cfg.functional(&model)?;
    let reports = gradient_bound_sweep(
        &model,
        suite,
        &xi,
        &h,
        &f,
        t_list,
        cfg.n_paths_checked()?,
        cfg.seed_checked()?,
        dt,
    )?;
    writer.write_json("gradient-bound-sweep", &reports)?;
    inequality_csv(writer, "gradient-bound-sweep", &reports)?;
    Ok(reports.iter().all(|r| r.passed_structural))
}

pub fn run_entropy_gradient(cfg: &ExperimentConfig, writer: &ReportWriter) -> Result<bool> {
    let (model, suite) = cfg.build_model()?;
    let suite = suite_required(&suite)?;
    let grid = cfg.sim_grid(&model)?;
    let xi = cfg.segment("xi", &cfg.xi, &model, &grid)?;
    let h = cfg.segment("h", &cfg.h, &model, &grid)?;
    let f = cfg.functional(&model)?;
    let r_list = match &cfg.sweep_r {
        Some(list) => list.clone(),
        None => default_r_sweep(&grid, model.k_star()),
    };
    let reports = entropy_gradient_report(
        &model,
        suite,
        &xi,
        &h,
        &f,
        &r_list,
        cfg.n_paths_checked()?,
        cfg.seed_checked()?,
        &grid,
    )?;
    writer.write_json("entropy-gradient", &reports)?;
    inequality_csv(writer, "entropy-gradient", &reports)?;
    Ok(reports.iter().all(|r| r.passed_structural))
}
