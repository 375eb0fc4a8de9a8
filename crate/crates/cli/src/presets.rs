//! Canned scenario configs. All presets share the reference kernel family
//! `a_jk = j^0.5 + k^0.5`, `log Q_j = j - j^0.5`, `N = 2`, whose critical
//! activity is `exp(-1)` and whose critical density is about 11.941.

use std::path::PathBuf;

use crate::config::{
    DiagnosticsSettings, InitialCondition, IntegratorSettings, ModelSpec, OutputSettings,
    RunConfig,
};

pub const PRESET_NAMES: [&str; 4] = ["subcritical", "critical", "supercritical", "refinement"];

/// Critical density of the reference family, from direct summation of
/// `sum j exp(j - sqrt(j)) z_s^j` with tail cutoff 1e-12.
pub const REFERENCE_CRITICAL_DENSITY: f64 = 11.941043116529912;

fn reference_model() -> ModelSpec {
    ModelSpec::PowerLaw { n: 2, c1: 1.0, alpha: 0.5, c2: 1.0, delta: 0.5 }
}

fn defaults(scenario: &str) -> RunConfig {
    RunConfig {
        scenario: scenario.to_string(),
        model: reference_model(),
        truncation: 2000,
        sweep: None,
        initial: InitialCondition::Monomer { rho0: 2.0 },
        integrator: IntegratorSettings {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            h_init: 1e-6,
            h_max: f64::INFINITY,
            horizon: 1000.0,
            snapshot_times: Vec::new(),
            snapshot_count: 40,
            auto_horizon: true,
            plateau_rel: 0.01,
            max_doublings: 6,
        },
        diagnostics: DiagnosticsSettings {
            tail_indices: vec![10, 100, 1000],
            moment_exponents: vec![2.0],
            head_len: 10,
            reference_rho: None,
        },
        output: OutputSettings { head_columns: 10, binary_states: false },
        validation_j_max: 10_000,
        base_dir: PathBuf::from("."),
    }
}

/// Look up a preset by name; unknown names list the available presets.
pub fn preset(name: &str) -> Result<RunConfig, String> {
    match name {
        "subcritical" => Ok(defaults("subcritical")),
        "critical" => {
            let mut cfg = defaults("critical");
            cfg.initial = InitialCondition::Monomer { rho0: REFERENCE_CRITICAL_DENSITY };
            Ok(cfg)
        }
        "supercritical" => {
            let mut cfg = defaults("supercritical");
            cfg.initial = InitialCondition::Monomer { rho0: 20.0 };
            cfg.sweep = Some(vec![250, 500, 1000, 2000]);
            cfg.integrator.max_doublings = 7;
            Ok(cfg)
        }
        "refinement" => {
            let mut cfg = defaults("refinement");
            cfg.sweep = Some(vec![250, 500, 1000, 2000]);
            cfg.integrator.auto_horizon = false;
            cfg.integrator.horizon = 200.0;
            cfg.integrator.snapshot_times = vec![1.0, 5.0, 10.0, 50.0, 100.0, 200.0];
            Ok(cfg)
        }
        other => Err(format!(
            "unknown preset `{other}`; available: {}",
            PRESET_NAMES.join(", ")
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_render_and_parse_back() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            let text = cfg.render();
            let back = RunConfig::parse(&text, PathBuf::from(".")).unwrap();
            assert_eq!(back.scenario, name);
            assert_eq!(back.lengths(), cfg.lengths());
        }
    }

    #[test]
    fn subcritical_matches_scenario_parameters() {
        let cfg = preset("subcritical").unwrap();
        assert!(matches!(cfg.initial, InitialCondition::Monomer { rho0 } if rho0 == 2.0));
        assert_eq!(cfg.truncation, 2000);
        match cfg.model {
            ModelSpec::PowerLaw { n, c1, alpha, c2, delta } => {
                assert_eq!((n, c1, alpha, c2, delta), (2, 1.0, 0.5, 1.0, 0.5));
            }
            _ => panic!("expected the power-law reference family"),
        }
    }

    #[test]
    fn refinement_sweeps_truncation() {
        let cfg = preset("refinement").unwrap();
        assert_eq!(cfg.lengths(), vec![250, 500, 1000, 2000]);
        assert!(!cfg.integrator.auto_horizon);
    }

    #[test]
    fn unknown_preset_lists_options() {
        let err = preset("bogus").unwrap_err();
        for name in PRESET_NAMES {
            assert!(err.contains(name));
        }
    }
}
