//! Run configuration: a flat, line-oriented `key = value` format with `#`
//! comments and dotted section keys, e.g.
//!
//! ```text
//! scenario = subcritical
//! model.family = power_law
//! model.C1 = 1.0
//! model.alpha = 0.5
//! model.C2 = 1.0
//! model.delta = 0.5
//! model.N = 2
//! truncation.L = 2000
//! initial.kind = monomer
//! initial.rho0 = 2.0
//! integrator.T = 1000
//! ```
//!
//! Unknown keys, malformed values and missing required keys are reported
//! with their line number. Tabulated coefficient files reuse the same
//! format with `table.N`, `table.logq` and `table.a.<j>` keys.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use bdk_core::{CoefficientModel, Result as CoreResult};

/// Schema or value error, located at a config line.
#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self { line: Some(line), message: message.into() }
    }

    fn general(message: impl Into<String>) -> Self {
        Self { line: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Kernel family selection plus parameters.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    PowerLaw { n: usize, c1: f64, alpha: f64, c2: f64, delta: f64 },
    Custom { n: Option<usize>, table: PathBuf },
}

/// Initial condition selection.
#[derive(Debug, Clone)]
pub enum InitialCondition {
    Monomer { rho0: f64 },
    Equilibrium { rho: f64 },
    EquilibriumPlusMonomer { rho_eq: f64, rho_extra: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub horizon: f64,
    /// Explicit snapshot times; when empty, a log grid of `snapshot_count`
    /// points is generated.
    pub snapshot_times: Vec<f64>,
    pub snapshot_count: usize,
    pub auto_horizon: bool,
    pub plateau_rel: f64,
    pub max_doublings: usize,
}

#[derive(Debug, Clone)]
pub struct DiagnosticsSettings {
    pub tail_indices: Vec<usize>,
    pub moment_exponents: Vec<f64>,
    pub head_len: usize,
    /// Density whose equilibrium serves as the strong-distance reference;
    /// defaults to the run's own initial density.
    pub reference_rho: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct OutputSettings {
    pub head_columns: usize,
    pub binary_states: bool,
}

/// Everything a run needs, resolved from one config file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: String,
    pub model: ModelSpec,
    pub truncation: usize,
    pub sweep: Option<Vec<usize>>,
    pub initial: InitialCondition,
    pub integrator: IntegratorSettings,
    pub diagnostics: DiagnosticsSettings,
    pub output: OutputSettings,
    /// Index range for the structural validation pass.
    pub validation_j_max: usize,
    /// Directory paths inside the config resolve against.
    pub base_dir: PathBuf,
}

struct KvFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvFile {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.split_once('#') {
                Some((before, _)) => before,
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError::at(line_no, format!("expected `key = value`, got `{raw}`"))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::at(line_no, "empty key"));
            }
            if entries.insert(key.clone(), (line_no, value)).is_some() {
                return Err(ConfigError::at(line_no, format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<(usize, String), ConfigError> {
        self.take(key)
            .ok_or_else(|| ConfigError::general(format!("missing required key `{key}`")))
    }

    fn finish(self) -> Result<(), ConfigError> {
        if let Some((key, (line, _))) = self.entries.into_iter().next() {
            return Err(ConfigError::at(line, format!("unknown key `{key}`")));
        }
        Ok(())
    }
}

fn parse_value<T: std::str::FromStr>(
    (line, raw): (usize, String),
    what: &str,
) -> Result<T, ConfigError> {
    raw.parse::<T>()
        .map_err(|_| ConfigError::at(line, format!("cannot parse `{raw}` as {what}")))
}

fn parse_list<T: std::str::FromStr>(
    (line, raw): (usize, String),
    what: &str,
) -> Result<Vec<T>, ConfigError> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|piece| {
            piece
                .trim()
                .parse::<T>()
                .map_err(|_| ConfigError::at(line, format!("cannot parse `{piece}` as {what}")))
        })
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::general(format!("cannot read {}: {e}", path.display())))?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, base_dir)
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self, ConfigError> {
        let mut kv = KvFile::parse(text)?;

        let scenario = kv
            .take("scenario")
            .map(|(_, v)| v)
            .unwrap_or_else(|| "run".to_string());

        let family = kv.require("model.family")?;
        let model = match family.1.as_str() {
            "power_law" => {
                let n = parse_value(kv.require("model.N")?, "an integer")?;
                ModelSpec::PowerLaw {
                    n,
                    c1: parse_value(kv.require("model.C1")?, "a number")?,
                    alpha: parse_value(kv.require("model.alpha")?, "a number")?,
                    c2: parse_value(kv.require("model.C2")?, "a number")?,
                    delta: parse_value(kv.require("model.delta")?, "a number")?,
                }
            }
            "custom" => {
                let table: String = parse_value(kv.require("model.table")?, "a path")?;
                let n = match kv.take("model.N") {
                    Some(entry) => Some(parse_value(entry, "an integer")?),
                    None => None,
                };
                ModelSpec::Custom { n, table: PathBuf::from(table) }
            }
            other => {
                return Err(ConfigError::at(
                    family.0,
                    format!("unknown model family `{other}` (expected power_law or custom)"),
                ))
            }
        };

        let truncation = parse_value(kv.require("truncation.L")?, "an integer")?;
        let sweep = match kv.take("truncation.sweep") {
            Some(entry) => {
                let list: Vec<usize> = parse_list(entry, "an integer")?;
                if list.is_empty() {
                    None
                } else {
                    Some(list)
                }
            }
            None => None,
        };

        let kind = kv.require("initial.kind")?;
        let initial = match kind.1.as_str() {
            "monomer" => InitialCondition::Monomer {
                rho0: parse_value(kv.require("initial.rho0")?, "a number")?,
            },
            "equilibrium" => InitialCondition::Equilibrium {
                rho: parse_value(kv.require("initial.rho")?, "a number")?,
            },
            "equilibrium_plus_monomer" => InitialCondition::EquilibriumPlusMonomer {
                rho_eq: parse_value(kv.require("initial.rho_eq")?, "a number")?,
                rho_extra: parse_value(kv.require("initial.rho_extra")?, "a number")?,
            },
            "file" => InitialCondition::File {
                path: PathBuf::from(parse_value::<String>(kv.require("initial.path")?, "a path")?),
            },
            other => {
                return Err(ConfigError::at(
                    kind.0,
                    format!(
                        "unknown initial condition `{other}` (expected monomer, equilibrium, \
                         equilibrium_plus_monomer or file)"
                    ),
                ))
            }
        };

        let take_f64 = |kv: &mut KvFile, key: &str, default: f64| -> Result<f64, ConfigError> {
            match kv.take(key) {
                Some(entry) => parse_value(entry, "a number"),
                None => Ok(default),
            }
        };

        let integrator = IntegratorSettings {
            rel_tol: take_f64(&mut kv, "integrator.rel_tol", 1e-8)?,
            abs_tol: take_f64(&mut kv, "integrator.abs_tol", 1e-12)?,
            h_init: take_f64(&mut kv, "integrator.h_init", 1e-6)?,
            h_max: take_f64(&mut kv, "integrator.h_max", f64::INFINITY)?,
            horizon: take_f64(&mut kv, "integrator.T", 1000.0)?,
            snapshot_times: match kv.take("integrator.snapshot_times") {
                Some(entry) => parse_list(entry, "a number")?,
                None => Vec::new(),
            },
            snapshot_count: match kv.take("integrator.snapshots") {
                Some(entry) => parse_value(entry, "an integer")?,
                None => 40,
            },
            auto_horizon: match kv.take("integrator.auto_horizon") {
                Some(entry) => parse_value(entry, "a boolean")?,
                None => false,
            },
            plateau_rel: take_f64(&mut kv, "integrator.plateau_rel", 0.01)?,
            max_doublings: match kv.take("integrator.max_doublings") {
                Some(entry) => parse_value(entry, "an integer")?,
                None => 6,
            },
        };

        let diagnostics = DiagnosticsSettings {
            tail_indices: match kv.take("diagnostics.g_indices") {
                Some(entry) => parse_list(entry, "an integer")?,
                None => vec![10, 100, 1000],
            },
            moment_exponents: match kv.take("diagnostics.moments") {
                Some(entry) => parse_list(entry, "a number")?,
                None => vec![2.0],
            },
            head_len: match kv.take("diagnostics.head") {
                Some(entry) => parse_value(entry, "an integer")?,
                None => 10,
            },
            reference_rho: match kv.take("diagnostics.reference_rho") {
                Some(entry) => Some(parse_value(entry, "a number")?),
                None => None,
            },
        };

        let output = OutputSettings {
            head_columns: match kv.take("output.head_columns") {
                Some(entry) => parse_value(entry, "an integer")?,
                None => 10,
            },
            binary_states: match kv.take("output.binary_states") {
                Some(entry) => parse_value(entry, "a boolean")?,
                None => false,
            },
        };

        let validation_j_max = match kv.take("validation.j_max") {
            Some(entry) => parse_value(entry, "an integer")?,
            None => 2000,
        };

        kv.finish()?;

        let config = Self {
            scenario,
            model,
            truncation,
            sweep,
            initial,
            integrator,
            diagnostics,
            output,
            validation_j_max,
            base_dir,
        };
        config.check()?;
        Ok(config)
    }

    fn check(&self) -> Result<(), ConfigError> {
        if let InitialCondition::Monomer { rho0 } = self.initial {
            if rho0.is_nan() || rho0 < 0.0 {
                return Err(ConfigError::general("initial.rho0 must be >= 0"));
            }
        }
        let n = match &self.model {
            ModelSpec::PowerLaw { n, .. } => *n,
            ModelSpec::Custom { n, .. } => n.unwrap_or(2),
        };
        for &len in self.lengths().iter() {
            if len < 2 * n + 1 {
                return Err(ConfigError::general(format!(
                    "truncation.L = {len} must be at least 2N+1 = {}",
                    2 * n + 1
                )));
            }
        }
        if !self.integrator.snapshot_times.is_empty() {
            let mut prev = 0.0;
            for &t in &self.integrator.snapshot_times {
                if t.is_nan() || t <= prev || t > self.integrator.horizon {
                    return Err(ConfigError::general(
                        "integrator.snapshot_times must be strictly increasing within (0, T]",
                    ));
                }
                prev = t;
            }
        }
        Ok(())
    }

    /// Truncation sizes this config runs: the sweep when present, the single
    /// truncation otherwise.
    pub fn lengths(&self) -> Vec<usize> {
        match &self.sweep {
            Some(list) => list.clone(),
            None => vec![self.truncation],
        }
    }

    /// Build the coefficient model, loading the table file for tabulated
    /// families.
    pub fn build_model(&self) -> Result<CoefficientModel, ConfigError> {
        match &self.model {
            ModelSpec::PowerLaw { n, c1, alpha, c2, delta } => {
                CoefficientModel::power_law(*n, *c1, *alpha, *c2, *delta)
                    .map_err(|e| ConfigError::general(e.to_string()))
            }
            ModelSpec::Custom { n, table } => {
                let path = self.resolve(table);
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    ConfigError::general(format!("cannot read table {}: {e}", path.display()))
                })?;
                load_custom_table(&text, *n).map_err(|mut e| {
                    e.message = format!("{}: {}", path.display(), e.message);
                    e
                })
            }
        }
    }

    /// Resolve a path from the config against the config's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Render back to config text (used by `bdk preset --emit`).
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("scenario = {}\n\n", self.scenario));
        match &self.model {
            ModelSpec::PowerLaw { n, c1, alpha, c2, delta } => {
                out.push_str("model.family = power_law\n");
                out.push_str(&format!("model.C1 = {c1}\n"));
                out.push_str(&format!("model.alpha = {alpha}\n"));
                out.push_str(&format!("model.C2 = {c2}\n"));
                out.push_str(&format!("model.delta = {delta}\n"));
                out.push_str(&format!("model.N = {n}\n"));
            }
            ModelSpec::Custom { n, table } => {
                out.push_str("model.family = custom\n");
                out.push_str(&format!("model.table = {}\n", table.display()));
                if let Some(n) = n {
                    out.push_str(&format!("model.N = {n}\n"));
                }
            }
        }
        out.push('\n');
        out.push_str(&format!("truncation.L = {}\n", self.truncation));
        if let Some(sweep) = &self.sweep {
            out.push_str(&format!("truncation.sweep = {}\n", join(sweep)));
        }
        out.push('\n');
        match &self.initial {
            InitialCondition::Monomer { rho0 } => {
                out.push_str("initial.kind = monomer\n");
                out.push_str(&format!("initial.rho0 = {rho0}\n"));
            }
            InitialCondition::Equilibrium { rho } => {
                out.push_str("initial.kind = equilibrium\n");
                out.push_str(&format!("initial.rho = {rho}\n"));
            }
            InitialCondition::EquilibriumPlusMonomer { rho_eq, rho_extra } => {
                out.push_str("initial.kind = equilibrium_plus_monomer\n");
                out.push_str(&format!("initial.rho_eq = {rho_eq}\n"));
                out.push_str(&format!("initial.rho_extra = {rho_extra}\n"));
            }
            InitialCondition::File { path } => {
                out.push_str("initial.kind = file\n");
                out.push_str(&format!("initial.path = {}\n", path.display()));
            }
        }
        out.push('\n');
        let integ = &self.integrator;
        out.push_str(&format!("integrator.rel_tol = {}\n", integ.rel_tol));
        out.push_str(&format!("integrator.abs_tol = {}\n", integ.abs_tol));
        out.push_str(&format!("integrator.h_init = {}\n", integ.h_init));
        if integ.h_max.is_finite() {
            out.push_str(&format!("integrator.h_max = {}\n", integ.h_max));
        }
        out.push_str(&format!("integrator.T = {}\n", integ.horizon));
        if integ.snapshot_times.is_empty() {
            out.push_str(&format!("integrator.snapshots = {}\n", integ.snapshot_count));
        } else {
            out.push_str(&format!(
                "integrator.snapshot_times = {}\n",
                join(&integ.snapshot_times)
            ));
        }
        out.push_str(&format!("integrator.auto_horizon = {}\n", integ.auto_horizon));
        if integ.auto_horizon {
            out.push_str(&format!("integrator.plateau_rel = {}\n", integ.plateau_rel));
            out.push_str(&format!("integrator.max_doublings = {}\n", integ.max_doublings));
        }
        out.push('\n');
        let diag = &self.diagnostics;
        out.push_str(&format!("diagnostics.g_indices = {}\n", join(&diag.tail_indices)));
        out.push_str(&format!("diagnostics.moments = {}\n", join(&diag.moment_exponents)));
        out.push_str(&format!("diagnostics.head = {}\n", diag.head_len));
        if let Some(rho) = diag.reference_rho {
            out.push_str(&format!("diagnostics.reference_rho = {rho}\n"));
        }
        out.push('\n');
        out.push_str(&format!("output.head_columns = {}\n", self.output.head_columns));
        out.push_str(&format!("output.binary_states = {}\n", self.output.binary_states));
        out.push_str(&format!("validation.j_max = {}\n", self.validation_j_max));
        out
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Parse a tabulated coefficient file: `table.N`, `table.logq` and one
/// `table.a.<j>` row per `j = 1..=N`.
fn load_custom_table(text: &str, expected_n: Option<usize>) -> Result<CoefficientModel, ConfigError> {
    let mut kv = KvFile::parse(text)?;
    let n: usize = parse_value(kv.require("table.N")?, "an integer")?;
    if let Some(expected) = expected_n {
        if expected != n {
            return Err(ConfigError::general(format!(
                "model.N = {expected} disagrees with table.N = {n}"
            )));
        }
    }
    let log_q: Vec<f64> = parse_list(kv.require("table.logq")?, "a number")?;
    let mut coag = Vec::with_capacity(n);
    for j in 1..=n {
        coag.push(parse_list(kv.require(&format!("table.a.{j}"))?, "a number")?);
    }
    kv.finish()?;
    wrap_core(CoefficientModel::custom(n, coag, log_q))
}

fn wrap_core(result: CoreResult<CoefficientModel>) -> Result<CoefficientModel, ConfigError> {
    result.map_err(|e| ConfigError::general(e.to_string()))
}
