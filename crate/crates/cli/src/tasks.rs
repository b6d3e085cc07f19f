//! Subcommand implementations mapping library outcomes to result records
//! and exit statuses.

use std::path::Path;

use nalgebra::DVector;

use impstab::battery::{run_battery as battery_run, BatteryConfig};
use impstab::heat::{
    hautus_verdict, kalman_decomposition, kalman_rank, max_krylov_rank,
    oscillation_half_period, schedule_in_class, verdict_cross_check, HautusVerdict, LAMBDA_1,
};
use impstab::linalg::{op_norm, spectral_radius};
use impstab::model::{
    decay_rate_fit, monodromy, simulate_closed_loop, ImpulseSystem,
};
use impstab::observability::{
    build_observability_pair, steering_control, weak_obs_minimal_c, ObsMode, ObsRange,
};
use impstab::riccati::{periodic_riccati_solve, synthesize_feedback, RiccatiOutcome};

use crate::config::{ProblemKind, RunConfig};
use crate::record::{write_trajectory_csv, ResultRecord};

/// Exit status of a run: success, a negative verdict, or an internal
/// assertion failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Positive,
    VerdictNegative,
    AssertionFailure,
}

pub struct TaskContext<'a> {
    pub cfg: &'a RunConfig,
    pub digest: String,
    pub out: Option<&'a Path>,
    pub csv: Option<&'a Path>,
    pub mode: Option<&'a str>,
}

fn generic_initial(sys: &ImpulseSystem) -> DVector<f64> {
    DVector::from_element(sys.state_dim(), 1.0) / (sys.state_dim() as f64).sqrt()
}

fn finish(
    mut record: ResultRecord,
    started: std::time::Instant,
    ctx: &TaskContext,
    status: RunStatus,
) -> Result<RunStatus, String> {
    record.timing_ms = started.elapsed().as_secs_f64() * 1e3;
    record.emit(ctx.out).map_err(|e| e.to_string())?;
    Ok(status)
}

pub fn run_synthesize(ctx: &TaskContext) -> Result<RunStatus, String> {
    let started = std::time::Instant::now();
    let cfg = ctx.cfg;
    let sys = cfg.build_system()?;
    let w = cfg.build_weights(&sys)?;
    let mut record = ResultRecord::new("synthesize", ctx.digest.clone(), cfg.solver.seed);
    let outcome = periodic_riccati_solve(&sys, &w, cfg.solver.tol, cfg.solver.max_periods)
        .map_err(|e| e.to_string())?;
    match outcome {
        RiccatiOutcome::Solved(sol) => {
            let feedback = synthesize_feedback(&sys, &w, &sol).map_err(|e| e.to_string())?;
            let phi = monodromy(&sys, &feedback).map_err(|e| e.to_string())?;
            let rho = spectral_radius(&phi).map_err(|e| e.to_string())?;
            let x0 = generic_initial(&sys);
            let traj = simulate_closed_loop(&sys, &feedback, &x0, 30).map_err(|e| e.to_string())?;
            let fit = decay_rate_fit(&traj);
            record
                .verdict("stabilizable", true)
                .scalar("p0_norm", op_norm(sol.p(0)))
                .scalar("p0_trace", sol.p(0).trace())
                .scalar("residual", sol.residual())
                .scalar("iterations", sol.iterations() as f64)
                .scalar("monodromy_radius", rho)
                .scalar("decay_rate", fit.rate)
                .scalar("decay_amplitude", fit.amplitude);
            if let Some(csv) = ctx.csv {
                write_trajectory_csv(csv, &traj).map_err(|e| e.to_string())?;
            }
            finish(record, started, ctx, RunStatus::Positive)
        }
        RiccatiOutcome::NotStabilizable(rep) => {
            record
                .verdict("stabilizable", false)
                .scalar("divergence_norm", rep.norm)
                .scalar("divergence_periods", rep.periods as f64)
                .scalar("growth_rate", rep.growth_rate);
            finish(record, started, ctx, RunStatus::VerdictNegative)
        }
    }
}

pub fn run_simulate(ctx: &TaskContext) -> Result<RunStatus, String> {
    let started = std::time::Instant::now();
    let cfg = ctx.cfg;
    let sys = cfg.build_system()?;
    let mut record = ResultRecord::new("simulate", ctx.digest.clone(), cfg.solver.seed);
    let feedback = match cfg.build_feedback(&sys)? {
        Some(f) => f,
        None => {
            let w = cfg.build_weights(&sys)?;
            match periodic_riccati_solve(&sys, &w, cfg.solver.tol, cfg.solver.max_periods)
                .map_err(|e| e.to_string())?
            {
                RiccatiOutcome::Solved(sol) => {
                    synthesize_feedback(&sys, &w, &sol).map_err(|e| e.to_string())?
                }
                RiccatiOutcome::NotStabilizable(_) => {
                    record.verdict("stabilizable", false);
                    return finish(record, started, ctx, RunStatus::VerdictNegative);
                }
            }
        }
    };
    let periods = cfg.task.periods.unwrap_or(30);
    let x0 = generic_initial(&sys);
    let traj = simulate_closed_loop(&sys, &feedback, &x0, periods).map_err(|e| e.to_string())?;
    let fit = decay_rate_fit(&traj);
    let phi = monodromy(&sys, &feedback).map_err(|e| e.to_string())?;
    record
        .verdict("decaying", fit.rate > 0.0)
        .scalar("decay_rate", fit.rate)
        .scalar("decay_amplitude", fit.amplitude)
        .scalar("monodromy_radius", spectral_radius(&phi).map_err(|e| e.to_string())?)
        .scalar("final_norm_post", traj.norm_post(traj.len()));
    if let Some(csv) = ctx.csv {
        write_trajectory_csv(csv, &traj).map_err(|e| e.to_string())?;
    }
    finish(record, started, ctx, RunStatus::Positive)
}

pub fn run_check_obs(ctx: &TaskContext) -> Result<RunStatus, String> {
    let started = std::time::Instant::now();
    let cfg = ctx.cfg;
    let sys = cfg.build_system()?;
    let sigma = cfg.task.sigma.ok_or("check-obs needs task.sigma")?;
    let horizon = cfg.task.horizon_slots.ok_or("check-obs needs task.horizon_slots")?;
    let range = match cfg.task.range.as_deref() {
        None | Some("include-final") => ObsRange::IncludeFinal,
        Some("exclude-final") => ObsRange::ExcludeFinal,
        Some(other) => return Err(format!("unknown range '{other}'")),
    };
    let pair = build_observability_pair(&sys, horizon, range).map_err(|e| e.to_string())?;
    let mut record = ResultRecord::new("check-obs", ctx.digest.clone(), cfg.solver.seed);
    record.scalar("sigma", sigma).scalar("horizon_slots", horizon as f64);

    let requested_mode = ctx.mode.or(cfg.task.mode.as_deref());
    let run_search = requested_mode != Some("sufficient");
    let run_sufficient = requested_mode != Some("search");
    let mut feasible = true;
    if run_search {
        let rep = weak_obs_minimal_c(&pair, sigma, ObsMode::Search).map_err(|e| e.to_string())?;
        match rep.c {
            Some(c) => {
                record.scalar("c_search", c);
            }
            None => feasible = false,
        }
    }
    if run_sufficient {
        let rep =
            weak_obs_minimal_c(&pair, sigma, ObsMode::Sufficient).map_err(|e| e.to_string())?;
        match rep.c {
            Some(c) => {
                record.scalar("c_sufficient", c);
            }
            None => feasible = false,
        }
    }
    record.verdict("feasible", feasible);
    if !feasible {
        return finish(record, started, ctx, RunStatus::VerdictNegative);
    }

    if cfg.task.steer {
        let periods = cfg
            .task
            .steer_periods
            .ok_or("steering requested: set task.steer_periods")?;
        let eps = cfg.task.eps.unwrap_or(1e-6);
        let x0 = generic_initial(&sys);
        // The budget constant must certify the steering horizon itself.
        let steer_pair =
            build_observability_pair(&sys, periods * sys.slots(), ObsRange::ExcludeFinal)
                .map_err(|e| e.to_string())?;
        let budget = weak_obs_minimal_c(&steer_pair, sigma, ObsMode::Sufficient)
            .map_err(|e| e.to_string())?
            .c;
        let res = steering_control(&sys, &x0, periods, sigma, eps, budget)
            .map_err(|e| e.to_string())?;
        record
            .scalar("steer_achieved_norm", res.achieved_norm)
            .scalar("steer_control_norm", res.control_norm)
            .scalar("steer_target", sigma * x0.norm() + eps);
        if let Some(c) = budget {
            record.scalar("steer_budget", 2.0 * c * x0.norm());
        }
    }
    finish(record, started, ctx, RunStatus::Positive)
}

pub fn run_heat_analyze(ctx: &TaskContext) -> Result<RunStatus, String> {
    let started = std::time::Instant::now();
    let cfg = ctx.cfg;
    if !matches!(cfg.problem, ProblemKind::Heat) {
        return Err("heat-analyze needs a heat problem".into());
    }
    let (heat_cfg, sched) = cfg.build_heat()?;
    let rank_tol = cfg.solver.rank_threshold;
    let dcat = heat_cfg.input_concat();
    let mut record = ResultRecord::new("heat-analyze", ctx.digest.clone(), cfg.solver.seed);
    if !heat_cfg.windows_intersect() {
        record.verdict("windows_intersect", false);
    }
    let rank = kalman_rank(&heat_cfg.coupling, &dcat, rank_tol);
    let verdict = hautus_verdict(&heat_cfg.coupling, &dcat, LAMBDA_1, rank_tol);
    let dec = kalman_decomposition(&heat_cfg.coupling, &dcat, rank_tol)
        .map_err(|e| e.to_string())?;
    let class = schedule_in_class(&sched, &heat_cfg.coupling, &dcat, sched.slots(), rank_tol);
    record
        .scalar("kalman_rank", rank as f64)
        .scalar("controllable_dim", dec.controllable_dim as f64)
        .scalar("half_period", oscillation_half_period(&heat_cfg.coupling))
        .scalar(
            "krylov_rank",
            max_krylov_rank(&heat_cfg.coupling, &dcat, rank_tol) as f64,
        )
        .scalar("class_required", class.required as f64)
        .verdict("schedule_admissible", class.admissible)
        .verdict("fully_controllable", dec.fully_controllable);
    if let Some(count) = class.min_window_count {
        record.scalar("min_window_count", count as f64);
    }
    let stabilizable = match verdict {
        HautusVerdict::Stabilizable => {
            record.verdict("stabilizable", true);
            true
        }
        HautusVerdict::NotStabilizable { witness } => {
            record
                .verdict("stabilizable", false)
                .scalar("witness_re", witness.re)
                .scalar("witness_im", witness.im);
            false
        }
    };
    let mut agreement_failed = false;
    if cfg.task.cross_check {
        let report = verdict_cross_check(
            &heat_cfg,
            &sched,
            1.0,
            1.0,
            cfg.solver.tol.max(1e-9),
            rank_tol,
        )
        .map_err(|e| e.to_string())?;
        record.verdict("cross_check_agreement", report.agreement);
        if let Some(rho) = report.monodromy_radius {
            record.scalar("monodromy_radius", rho);
        }
        if let Some(rate) = report.fitted_rate {
            record.scalar("decay_rate", rate);
        }
        if let (Some(e), Some(g0), Some(gr)) = (
            report.growth_expected,
            report.growth_measured_zero,
            report.growth_measured_random,
        ) {
            record
                .scalar("growth_expected", e)
                .scalar("growth_measured_zero_feedback", g0)
                .scalar("growth_measured_random_feedback", gr);
        }
        agreement_failed = !report.agreement;
    }
    let status = if agreement_failed {
        RunStatus::AssertionFailure
    } else if stabilizable {
        RunStatus::Positive
    } else {
        RunStatus::VerdictNegative
    };
    finish(record, started, ctx, status)
}

pub fn run_battery(ctx: &TaskContext) -> Result<RunStatus, String> {
    let started = std::time::Instant::now();
    let cfg = ctx.cfg;
    let section = cfg.battery.as_ref().ok_or("battery run needs a 'battery' section")?;
    let mut record = ResultRecord::new("battery", ctx.digest.clone(), cfg.solver.seed);
    if section.count == 0 {
        record.verdict("all_agree", true).scalar("count", 0.0);
        return finish(record, started, ctx, RunStatus::Positive);
    }
    let bcfg = BatteryConfig {
        count: section.count,
        max_state_dim: section.max_state_dim,
        max_input_dim: section.max_input_dim,
        seed: cfg.solver.seed,
        sigma: cfg.task.sigma.unwrap_or(0.5),
        max_horizon_periods: cfg.solver.k_max,
        tol: cfg.solver.tol,
    };
    let report = battery_run(&bcfg).map_err(|e| e.to_string())?;
    record
        .verdict("all_agree", report.all_agree)
        .scalar("count", report.instances.len() as f64)
        .scalar("agreement_count", report.agreement_count as f64)
        .scalar("both_positive", report.agreement_matrix[0] as f64)
        .scalar("riccati_only", report.agreement_matrix[1] as f64)
        .scalar("obs_only", report.agreement_matrix[2] as f64)
        .scalar("both_negative", report.agreement_matrix[3] as f64);
    if !report.all_agree {
        let failing = report.failing_instances();
        record.extra =
            Some(serde_json::to_value(&failing).map_err(|e| e.to_string())?);
        return finish(record, started, ctx, RunStatus::AssertionFailure);
    }
    finish(record, started, ctx, RunStatus::Positive)
}
