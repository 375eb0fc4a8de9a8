use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bdk_cli::config::RunConfig;
use bdk_cli::presets::preset;
use bdk_cli::runner::{self, RunError};
use bdk_core::equilibrium::{activity_of_density, critical_density};
use bdk_core::io::format_f64;

/// Becker-Döring kinetics laboratory: equilibria, critical density and
/// mass-conserving truncated dynamics of the cutoff
/// coagulation-fragmentation system.
#[derive(Parser)]
#[command(name = "bdk", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run config and write its artifacts.
    Run {
        /// Path to a `key = value` run config.
        config: PathBuf,
    },
    /// Print (or write) a canned scenario config.
    Preset {
        /// One of: subcritical, critical, supercritical, refinement.
        name: String,
        /// Write the config here instead of stdout.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Check the structural hypotheses of a config's model.
    Validate {
        config: PathBuf,
        /// Emit machine-readable `key = value` records instead of text.
        #[arg(long)]
        kv: bool,
    },
    /// Compute the equilibrium with a given density for a config's model.
    Equilibrium {
        config: PathBuf,
        /// Target density.
        #[arg(long)]
        rho: f64,
        /// Also write the profile as CSV (`j,c_j`) to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, message }) => {
            eprintln!("bdk: {message}");
            ExitCode::from(code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        Self { code: e.exit_code(), message: e.to_string() }
    }
}

impl From<bdk_cli::ConfigError> for CliError {
    fn from(e: bdk_cli::ConfigError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { code: 1, message: e.to_string() }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config } => {
            let config = RunConfig::load(&config)?;
            let summaries = runner::run(&config, &runner::out_root())?;
            for s in &summaries {
                println!(
                    "{} L={} regime={} final_t={} strong_dist={} c1={} -> {}",
                    s.scenario,
                    s.len,
                    s.regime,
                    format_f64(s.final_t),
                    format_f64(s.final_strong_dist),
                    format_f64(s.final_c1),
                    s.out_dir.display()
                );
            }
            Ok(())
        }
        Command::Preset { name, emit } => {
            let config = preset(&name).map_err(CliError::validation)?;
            let text = config.render();
            match emit {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Validate { config, kv } => {
            let config = RunConfig::load(&config)?;
            let model = config.build_model()?;
            let report = model
                .validate_hypotheses(config.validation_j_max)
                .map_err(|e| CliError::validation(e.to_string()))?;
            print!(
                "{}",
                if kv { report.render_kv() } else { report.render_text() }
            );
            if report.all_passed() {
                Ok(())
            } else {
                Err(CliError::validation("structural hypotheses failed"))
            }
        }
        Command::Equilibrium { config, rho, out } => {
            let config = RunConfig::load(&config)?;
            let model = config.build_model()?;
            let crit = critical_density(&model, 1e-10)
                .map_err(|e| CliError::validation(e.to_string()))?;
            let z = activity_of_density(&model, rho, 1e-10)
                .map_err(|e| CliError::validation(e.to_string()))?;
            let profile =
                bdk_core::equilibrium::equilibrium_profile(&model, z, config.truncation)
                    .map_err(|e| CliError::validation(e.to_string()))?;
            println!("z_s = {}", format_f64(crit.z_s));
            println!("rho_s = {}", crit.rho_s);
            println!("rho_s_unweighted = {}", crit.rho_s_unweighted);
            println!("rho = {}", format_f64(rho));
            println!("z = {}", format_f64(z));
            println!("c1 = {}", format_f64(profile.densities[0]));
            println!("profile_rho_truncated = {}", format_f64(profile.rho));
            if let Some(path) = out {
                let mut text = String::from("j,c_j\n");
                for (i, c) in profile.densities.iter().enumerate() {
                    text.push_str(&format!("{},{}\n", i + 1, format_f64(*c)));
                }
                std::fs::write(path, text)?;
            }
            Ok(())
        }
    }
}
