//! Scenario runner: build the model, validate it, compute critical data,
//! integrate, and emit the run artifacts.
//!
//! Artifacts per run directory:
//! * `summary.txt` / `summary.kv` — critical data (both density readings),
//!   regime classification, final diagnostics, run bookkeeping,
//! * `trajectory.csv` — `t, rho, c_1..c_J`,
//! * `diagnostics.csv` — configured tail masses, moments, strong distance,
//! * `states/state_<k>.bin` — optional binary snapshots for resumption.
//!
//! A truncation sweep runs its sizes concurrently, one output directory per
//! size, so files are never contended.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use bdk_core::analysis::DiagnosticsConfig;
use bdk_core::equilibrium::{
    activity_of_density, critical_density, equilibrium_profile, truncated_activity_of_density,
    CriticalData, Density,
};
use bdk_core::io::{format_f64, write_diagnostics_csv, write_state_binary, write_trajectory_csv};
use bdk_core::kinetics::{
    extend_integration, integrate, truncate_initial, IntegratorConfig, State, System, Trajectory,
    SNAPSHOT_PLACEMENT,
};
use bdk_core::{CoefficientModel, Error as CoreError};

use crate::config::{ConfigError, InitialCondition, RunConfig};

/// Densities within this relative distance of the critical density classify
/// as critical.
const CRITICAL_BAND: f64 = 1e-6;
/// Series tolerance used for all equilibrium computations in the runner.
const SERIES_TOL: f64 = 1e-10;

#[derive(Debug)]
pub enum RunError {
    /// Schema, model or hypothesis failures; exit code 2.
    Validation(String),
    /// The integrator gave up; exit code 3.
    Integration(String),
    /// Filesystem trouble writing artifacts; exit code 1.
    Io(std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Validation(_) => 2,
            RunError::Integration(_) => 3,
            RunError::Io(_) => 1,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Validation(msg) => write!(f, "validation failure: {msg}"),
            RunError::Integration(msg) => write!(f, "integration failure: {msg}"),
            RunError::Io(e) => write!(f, "i/o failure: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

/// Output root: `BDK_OUT_DIR` when set, `runs/` otherwise.
pub fn out_root() -> PathBuf {
    match std::env::var_os("BDK_OUT_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from("runs"),
    }
}

/// Result of one truncation size's run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub scenario: String,
    pub len: usize,
    pub regime: &'static str,
    pub rho0: f64,
    pub z_ref: f64,
    pub final_t: f64,
    pub final_strong_dist: f64,
    pub final_c1: f64,
    pub density_drift: f64,
    pub clamped_mass: f64,
    pub run_valid: bool,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub out_dir: PathBuf,
}

/// Execute a config: validation pass, then one integration per truncation
/// size (concurrently for sweeps), artifacts under `out_root`.
pub fn run(config: &RunConfig, out_root: &Path) -> Result<Vec<RunSummary>, RunError> {
    let model = config.build_model()?;
    let report = model
        .validate_hypotheses(config.validation_j_max)
        .map_err(|e| RunError::Validation(e.to_string()))?;
    if !report.all_passed() {
        return Err(RunError::Validation(format!(
            "structural hypotheses failed:\n{}",
            report.render_text()
        )));
    }
    let crit = critical_density(&model, SERIES_TOL).map_err(core_validation)?;

    let lengths = config.lengths();
    let sweep = lengths.len() > 1;
    let validation_text = report.render_text();

    let mut results: Vec<Result<RunSummary, RunError>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = lengths
            .iter()
            .map(|&len| {
                let model = &model;
                let crit = &crit;
                let validation_text = &validation_text;
                scope.spawn(move || {
                    run_one(config, model, crit, len, sweep, out_root, validation_text)
                })
            })
            .collect();
        for handle in handles {
            results.push(handle.join().expect("run thread panicked"));
        }
    });
    results.into_iter().collect()
}

fn core_validation(e: CoreError) -> RunError {
    RunError::Validation(e.to_string())
}

fn classify(rho0: f64, crit: &CriticalData) -> &'static str {
    match crit.rho_s {
        Density::Divergent => "subcritical",
        Density::Finite(rho_s) => {
            if (rho0 - rho_s).abs() <= CRITICAL_BAND * rho_s {
                "critical"
            } else if rho0 < rho_s {
                "subcritical"
            } else {
                "supercritical"
            }
        }
    }
}

/// Activity of the reference equilibrium for a density: the infinite
/// system's equilibrium below the critical density, the finite system's
/// above it (the infinite one does not exist there).
fn reference_activity(
    model: &CoefficientModel,
    crit: &CriticalData,
    rho: f64,
    len: usize,
) -> Result<f64, RunError> {
    match classify(rho, crit) {
        "critical" => Ok(crit.z_s),
        "supercritical" => {
            truncated_activity_of_density(model, rho, len, SERIES_TOL).map_err(core_validation)
        }
        _ => activity_of_density(model, rho, SERIES_TOL).map_err(core_validation),
    }
}

fn log_grid(from: f64, to: f64, points: usize) -> Vec<f64> {
    if points < 2 || from <= 0.0 || from >= to {
        return vec![to];
    }
    let ratio = (to / from).powf(1.0 / (points - 1) as f64);
    let mut v: Vec<f64> = (0..points - 1)
        .map(|i| from * ratio.powi(i as i32))
        .collect();
    v.retain(|t| *t < to);
    v.push(to);
    v.dedup();
    v
}

fn build_initial(
    config: &RunConfig,
    model: &CoefficientModel,
    len: usize,
) -> Result<State, RunError> {
    match &config.initial {
        InitialCondition::Monomer { rho0 } => {
            let mut c = vec![0.0; len];
            c[0] = *rho0;
            Ok(State::new(c, 0.0))
        }
        InitialCondition::Equilibrium { rho } => {
            let z = activity_of_density(model, *rho, SERIES_TOL).map_err(core_validation)?;
            let profile = equilibrium_profile(model, z, len).map_err(core_validation)?;
            Ok(State::new(profile.densities, 0.0))
        }
        InitialCondition::EquilibriumPlusMonomer { rho_eq, rho_extra } => {
            let z = activity_of_density(model, *rho_eq, SERIES_TOL).map_err(core_validation)?;
            let profile = equilibrium_profile(model, z, len).map_err(core_validation)?;
            let mut c = profile.densities;
            c[0] += rho_extra;
            Ok(State::new(c, 0.0))
        }
        InitialCondition::File { path } => {
            let resolved = config.resolve(path);
            let c = bdk_core::io::read_state_binary(&resolved).map_err(core_validation)?;
            let n = c.len().min(len);
            truncate_initial(&c, n, len).map_err(core_validation)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    config: &RunConfig,
    model: &CoefficientModel,
    crit: &CriticalData,
    len: usize,
    sweep: bool,
    out_root: &Path,
    validation_text: &str,
) -> Result<RunSummary, RunError> {
    let system = System::new(model, len).map_err(core_validation)?;
    let s0 = build_initial(config, model, len)?;
    let rho0 = s0.density();
    let regime = classify(rho0, crit);

    let rho_ref = config.diagnostics.reference_rho.unwrap_or(rho0);
    let z_ref = reference_activity(model, crit, rho_ref, len)?;
    let reference = equilibrium_profile(model, z_ref, len).map_err(core_validation)?;

    let diag = DiagnosticsConfig {
        tail_indices: config
            .diagnostics
            .tail_indices
            .iter()
            .copied()
            .filter(|&i| i >= 1 && i <= len)
            .collect(),
        moment_exponents: config.diagnostics.moment_exponents.clone(),
        head_len: config.diagnostics.head_len.min(len),
        reference: Some(reference),
    };

    let integ = &config.integrator;
    let mut horizon = integ.horizon;
    let base_cfg = IntegratorConfig {
        rel_tol: integ.rel_tol,
        abs_tol: integ.abs_tol,
        h_init: integ.h_init,
        h_max: integ.h_max,
        horizon,
        snapshot_times: if integ.snapshot_times.is_empty() {
            log_grid(horizon * 1e-4, horizon, integ.snapshot_count)
        } else {
            integ.snapshot_times.clone()
        },
    };
    let integration_err = |e: CoreError| RunError::Integration(e.to_string());
    let mut traj = integrate(&system, s0, &base_cfg, &diag).map_err(integration_err)?;

    if integ.auto_horizon {
        let mut d_prev = last_strong_dist(&traj);
        for _ in 0..integ.max_doublings {
            let next = horizon * 2.0;
            let cfg = IntegratorConfig {
                horizon: next,
                snapshot_times: log_grid(horizon * 1.05, next, 16),
                ..base_cfg.clone()
            };
            extend_integration(&system, &mut traj, &cfg, &diag).map_err(integration_err)?;
            horizon = next;
            let d = last_strong_dist(&traj);
            let plateaued = (d - d_prev).abs() <= integ.plateau_rel * d_prev.max(1e-8);
            d_prev = d;
            if plateaued {
                break;
            }
        }
    }

    let dir_name = if sweep {
        format!("{}-L{}", config.scenario, len)
    } else {
        config.scenario.clone()
    };
    let out_dir = out_root.join(dir_name);
    fs::create_dir_all(&out_dir)?;

    let summary = RunSummary {
        scenario: config.scenario.clone(),
        len,
        regime,
        rho0,
        z_ref,
        final_t: traj.last_state().t,
        final_strong_dist: last_strong_dist(&traj),
        final_c1: traj.last_state().c[0],
        density_drift: traj.density_drift(),
        clamped_mass: traj.clamped_mass,
        run_valid: traj.clamp_within_budget(),
        accepted_steps: traj.accepted_steps,
        rejected_steps: traj.rejected_steps,
        out_dir: out_dir.clone(),
    };

    write_artifacts(config, crit, &summary, &traj, &diag, &out_dir, validation_text)?;
    Ok(summary)
}

fn last_strong_dist(traj: &Trajectory) -> f64 {
    traj.snapshots
        .last()
        .and_then(|s| s.diagnostics.strong_distance)
        .unwrap_or(f64::NAN)
}

fn density_kv(d: Density) -> (String, bool) {
    match d {
        Density::Finite(v) => (format_f64(v), false),
        Density::Divergent => ("inf".to_string(), true),
    }
}

fn write_artifacts(
    config: &RunConfig,
    crit: &CriticalData,
    summary: &RunSummary,
    traj: &Trajectory,
    diag: &DiagnosticsConfig,
    out_dir: &Path,
    validation_text: &str,
) -> Result<(), RunError> {
    let mut t_csv = fs::File::create(out_dir.join("trajectory.csv"))?;
    write_trajectory_csv(&mut t_csv, traj, config.output.head_columns).map_err(io_only)?;
    let mut d_csv = fs::File::create(out_dir.join("diagnostics.csv"))?;
    write_diagnostics_csv(&mut d_csv, traj, diag).map_err(io_only)?;

    if config.output.binary_states {
        let states_dir = out_dir.join("states");
        fs::create_dir_all(&states_dir)?;
        for (idx, snap) in traj.snapshots.iter().enumerate() {
            write_state_binary(&states_dir.join(format!("state_{idx:04}.bin")), &snap.state.c)
                .map_err(io_only)?;
        }
    }

    let (rho_s, rho_s_div) = density_kv(crit.rho_s);
    let (rho_s_u, rho_s_u_div) = density_kv(crit.rho_s_unweighted);
    let kv = format!(
        "scenario = {}\nL = {}\nz_s = {}\nrho_s = {}\nrho_s_divergent = {}\n\
         rho_s_unweighted = {}\nrho_s_unweighted_divergent = {}\nrho0 = {}\nregime = {}\n\
         z_ref = {}\nfinal_t = {}\nfinal_strong_dist = {}\nfinal_c1 = {}\n\
         density_drift_rel = {}\nclamped_mass = {}\nrun_valid = {}\n\
         accepted_steps = {}\nrejected_steps = {}\nsnapshot_placement = {}\n",
        summary.scenario,
        summary.len,
        format_f64(crit.z_s),
        rho_s,
        rho_s_div,
        rho_s_u,
        rho_s_u_div,
        format_f64(summary.rho0),
        summary.regime,
        format_f64(summary.z_ref),
        format_f64(summary.final_t),
        format_f64(summary.final_strong_dist),
        format_f64(summary.final_c1),
        format_f64(summary.density_drift),
        format_f64(summary.clamped_mass),
        summary.run_valid,
        summary.accepted_steps,
        summary.rejected_steps,
        SNAPSHOT_PLACEMENT,
    );
    fs::write(out_dir.join("summary.kv"), &kv)?;

    let text = format!(
        "scenario {} (L = {})\n\
         ================================\n\
         critical activity z_s        : {}\n\
         critical density (mass)      : {}{}\n\
         critical density (number)    : {}{}\n\
         initial density rho0         : {}\n\
         regime                       : {}\n\
         reference activity           : {}\n\
         final time                   : {}\n\
         final strong distance        : {}\n\
         final monomer concentration  : {}\n\
         relative density drift       : {}\n\
         clamped mass                 : {} (run valid: {})\n\
         steps accepted / rejected    : {} / {}\n\
         snapshots                    : {} ({})\n\n\
         structural validation\n---------------------\n{}",
        summary.scenario,
        summary.len,
        format_f64(crit.z_s),
        rho_s,
        if rho_s_div { " (divergent)" } else { "" },
        rho_s_u,
        if rho_s_u_div { " (divergent)" } else { "" },
        format_f64(summary.rho0),
        summary.regime,
        format_f64(summary.z_ref),
        format_f64(summary.final_t),
        format_f64(summary.final_strong_dist),
        format_f64(summary.final_c1),
        format_f64(summary.density_drift),
        format_f64(summary.clamped_mass),
        summary.run_valid,
        summary.accepted_steps,
        summary.rejected_steps,
        traj.snapshots.len(),
        SNAPSHOT_PLACEMENT,
        validation_text,
    );
    fs::write(out_dir.join("summary.txt"), text)?;
    Ok(())
}

fn io_only(e: CoreError) -> RunError {
    match e {
        CoreError::Io(io) => RunError::Io(io),
        other => RunError::Integration(other.to_string()),
    }
}
