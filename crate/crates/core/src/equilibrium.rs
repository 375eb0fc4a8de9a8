//! Equilibria of the cutoff system: critical activity, critical density,
//! equilibrium profiles and the density-to-activity inversion.
//!
//! Detailed balance makes `c_j = Q_j z^j` an exact equilibrium for every
//! activity `0 <= z <= z_s`, where `z_s = lim Q_j / Q_{j+1}`. Its density is
//! the series `rho(z) = sum_j j Q_j z^j`, strictly increasing in `z`; the
//! critical density is `rho_s = rho(z_s)`, possibly infinite. Densities
//! above a finite `rho_s` have no equilibrium.
//!
//! All series work happens on `log Q_j + j log z` exponents; partial sums
//! stop once a geometric majorant certifies the remainder below the caller's
//! tolerance, and term caps distinguish divergence from slow convergence.

use crate::coefficients::{CoefficientModel, KernelFamily};
use crate::error::{Error, Result};

/// Consecutive-term ratio below which the geometric remainder bound is
/// trusted (observed over a trailing window before it is applied).
const GEOMETRIC_RATIO: f64 = 0.999;
/// Ratios are watched over this many trailing terms.
const RATIO_WINDOW: usize = 10;
/// A series that has not certified convergence after this many terms is
/// declared divergent.
const TERM_CAP: usize = 10_000_000;
/// A partial sum beyond this is declared divergent outright.
const SUM_CAP: f64 = 1e12;

/// A density value that may carry the divergence flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Density {
    Finite(f64),
    Divergent,
}

impl Density {
    pub fn is_divergent(&self) -> bool {
        matches!(self, Density::Divergent)
    }

    /// Finite value, or `None` when divergent.
    pub fn finite(&self) -> Option<f64> {
        match self {
            Density::Finite(v) => Some(*v),
            Density::Divergent => None,
        }
    }

    /// Finite value, panicking on the divergence flag.
    pub fn expect_finite(&self, what: &str) -> f64 {
        self.finite()
            .unwrap_or_else(|| panic!("{what} is divergent"))
    }
}

impl std::fmt::Display for Density {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Density::Finite(v) => write!(f, "{v}"),
            Density::Divergent => write!(f, "inf"),
        }
    }
}

/// Critical point of the equilibrium family.
#[derive(Debug, Clone)]
pub struct CriticalData {
    /// Critical activity `z_s`; the monomer concentration of the critical
    /// equilibrium.
    pub z_s: f64,
    /// Mass-weighted critical density `sum_j j Q_j z_s^j`.
    pub rho_s: Density,
    /// Unweighted reading `sum_j Q_j z_s^j`. The two readings differ and
    /// both are always reported; see the run summaries.
    pub rho_s_unweighted: Density,
    pub series_terms_used: usize,
    /// Certified bound on the truncation remainder of the weighted series.
    pub tail_bound: f64,
}

/// Equilibrium profile `c_j = Q_j z^j` truncated to `L` components.
#[derive(Debug, Clone)]
pub struct EquilibriumProfile {
    pub activity: f64,
    /// `densities[j-1] = c_j`.
    pub densities: Vec<f64>,
    /// Truncated mass `sum_{j<=L} j c_j`.
    pub rho: f64,
}

impl EquilibriumProfile {
    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }
}

/// Critical activity `z_s = lim Q_j / Q_{j+1}`.
///
/// Closed form `exp(-c2)` for the power-law family. Tabulated families are
/// probed at `j_probe` with a stabilization check against `j_probe / 2`;
/// an unstabilized ratio is an error carrying both probe values.
pub fn critical_activity(model: &CoefficientModel, j_probe: usize) -> Result<f64> {
    match model.family() {
        KernelFamily::PowerLaw { c2, .. } => Ok((-c2).exp()),
        KernelFamily::Custom { .. } => {
            let probe = j_probe.min(model.log_q_limit().saturating_sub(1));
            let half = probe / 2;
            if half < 2 {
                return Err(Error::InvalidArgument(
                    "probe index too small to assess the activity limit".into(),
                ));
            }
            let ratio = |j: usize| -> Result<f64> {
                Ok((model.log_q(j)? - model.log_q(j + 1)?).exp())
            };
            let at_probe = ratio(probe)?;
            let at_half = ratio(half)?;
            if (at_probe - at_half).abs() > 1e-3 * at_probe.abs().max(1e-300) {
                return Err(Error::LimitNotResolved {
                    probe,
                    half_probe: half,
                    value_at_probe: at_probe,
                    value_at_half: at_half,
                });
            }
            Ok(at_probe)
        }
    }
}

/// Default probe choice for [`critical_activity`]: the table end for
/// tabulated families (unused by the closed form).
pub fn critical_activity_default(model: &CoefficientModel) -> Result<f64> {
    critical_activity(model, model.log_q_limit().saturating_sub(1).min(1_000_000))
}

struct SeriesResult {
    value: Density,
    terms: usize,
    tail_bound: f64,
}

/// Sum `sum_j j^w Q_j z^j` (w = 1 for mass, 0 for number) until the
/// geometric remainder bound drops below `tol`, or divergence triggers.
fn equilibrium_series(
    model: &CoefficientModel,
    z: f64,
    tol: f64,
    mass_weighted: bool,
) -> Result<SeriesResult> {
    if !(z >= 0.0) || !z.is_finite() {
        return Err(Error::InvalidArgument(format!("activity must be >= 0, got {z}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be > 0".into()));
    }
    if z == 0.0 {
        return Ok(SeriesResult { value: Density::Finite(0.0), terms: 0, tail_bound: 0.0 });
    }
    let ln_z = z.ln();
    let mut sum = 0.0f64;
    let mut prev = f64::NAN;
    let mut ratios = [f64::INFINITY; RATIO_WINDOW];
    for j in 1..=TERM_CAP {
        let exponent = model.log_q(j)? + j as f64 * ln_z;
        let term = if mass_weighted {
            (exponent + (j as f64).ln()).exp()
        } else {
            exponent.exp()
        };
        sum += term;
        if sum > SUM_CAP {
            return Ok(SeriesResult { value: Density::Divergent, terms: j, tail_bound: f64::INFINITY });
        }
        ratios[j % RATIO_WINDOW] = term / prev;
        prev = term;
        let window_ok = j > RATIO_WINDOW && ratios.iter().all(|r| *r <= GEOMETRIC_RATIO);
        if window_ok {
            let bound = term * GEOMETRIC_RATIO / (1.0 - GEOMETRIC_RATIO);
            if bound <= tol {
                return Ok(SeriesResult { value: Density::Finite(sum), terms: j, tail_bound: bound });
            }
        }
        if term == 0.0 && j > RATIO_WINDOW && ratios.iter().all(|r| *r < 1.0) {
            // underflowed inside a certified-decay stretch
            return Ok(SeriesResult { value: Density::Finite(sum), terms: j, tail_bound: 0.0 });
        }
    }
    Ok(SeriesResult { value: Density::Divergent, terms: TERM_CAP, tail_bound: f64::INFINITY })
}

/// Equilibrium density `rho(z) = sum_j j Q_j z^j`, or the divergence flag
/// when the series fails to decay (the `z >= z_s` regime).
pub fn density_of_activity(model: &CoefficientModel, z: f64, tol: f64) -> Result<Density> {
    Ok(equilibrium_series(model, z, tol, true)?.value)
}

/// Invert `z -> rho(z)` by bisection over `[0, z_s]`.
///
/// The map is strictly increasing (every term is), so the bracket never
/// loses its sign change; iteration stops once the density residual is
/// within `tol`. Densities above a finite `rho_s` are rejected.
pub fn activity_of_density(model: &CoefficientModel, rho: f64, tol: f64) -> Result<f64> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidArgument(format!("density must be >= 0, got {rho}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be > 0".into()));
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    let z_s = critical_activity_default(model)?;
    if let Density::Finite(rho_s) = density_of_activity(model, z_s, tol)? {
        if rho > rho_s + tol.max(1e-9 * rho_s) {
            return Err(Error::SupercriticalDensity { rho, rho_s });
        }
    }
    let mut lo = 0.0f64;
    let mut hi = z_s;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match density_of_activity(model, mid, tol)? {
            Density::Finite(d) => {
                if (d - rho).abs() <= tol {
                    return Ok(mid);
                }
                if d < rho {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Density::Divergent => hi = mid,
        }
        if hi == lo {
            break;
        }
    }
    // The bracket has collapsed to machine width; accept the endpoint whose
    // residual is smallest (this is the rho -> rho_s edge).
    let z = 0.5 * (lo + hi);
    match density_of_activity(model, z, tol)? {
        Density::Finite(d) if (d - rho).abs() <= 10.0 * tol.max(1e-12 * rho) => Ok(z),
        _ => Err(Error::RootNotConverged { tol, iterations: 200 }),
    }
}

/// Critical density `rho_s = rho(z_s)`, with both the mass-weighted and the
/// unweighted readings of the series.
pub fn critical_density(model: &CoefficientModel, tol: f64) -> Result<CriticalData> {
    let z_s = critical_activity_default(model)?;
    let weighted = equilibrium_series(model, z_s, tol, true)?;
    let unweighted = equilibrium_series(model, z_s, tol, false)?;
    Ok(CriticalData {
        z_s,
        rho_s: weighted.value,
        rho_s_unweighted: unweighted.value,
        series_terms_used: weighted.terms,
        tail_bound: weighted.tail_bound,
    })
}

/// Equilibrium profile `c_j = exp(log Q_j + j log z)` for `j = 1..=L`.
pub fn equilibrium_profile(
    model: &CoefficientModel,
    z: f64,
    len: usize,
) -> Result<EquilibriumProfile> {
    if !(z >= 0.0) || !z.is_finite() {
        return Err(Error::InvalidArgument(format!("activity must be >= 0, got {z}")));
    }
    if len < 1 {
        return Err(Error::InvalidArgument("profile length must be >= 1".into()));
    }
    let densities = if z == 0.0 {
        vec![0.0; len]
    } else {
        let ln_z = z.ln();
        (1..=len)
            .map(|j| Ok((model.log_q(j)? + j as f64 * ln_z).exp()))
            .collect::<Result<Vec<f64>>>()?
    };
    // accumulate smallest-first: for z < z_s the terms decay in j
    let rho = densities
        .iter()
        .enumerate()
        .rev()
        .map(|(i, c)| (i + 1) as f64 * c)
        .sum();
    Ok(EquilibriumProfile { activity: z, densities, rho })
}

/// Truncated mass `sum_{j<=L} j Q_j z^j` of the length-`L` profile.
pub fn truncated_density_of_activity(
    model: &CoefficientModel,
    z: f64,
    len: usize,
) -> Result<f64> {
    Ok(equilibrium_profile(model, z, len)?.rho)
}

/// Activity of the *finite* system's equilibrium with mass `rho`: inverts
/// the truncated polynomial `z -> sum_{j<=L} j Q_j z^j`.
///
/// Unlike the infinite system this is solvable for every `rho >= 0` — the
/// polynomial grows without bound in `z` — which is exactly how the finite
/// truncation absorbs supercritical mass: its activity sits above `z_s` and
/// creeps down toward it as `L` grows.
pub fn truncated_activity_of_density(
    model: &CoefficientModel,
    rho: f64,
    len: usize,
    tol: f64,
) -> Result<f64> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidArgument(format!("density must be >= 0, got {rho}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be > 0".into()));
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0f64;
    while truncated_density_of_activity(model, hi, len)? < rho {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::RootNotConverged { tol, iterations: 0 });
        }
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let d = truncated_density_of_activity(model, mid, len)?;
        if (d - rho).abs() <= tol {
            return Ok(mid);
        }
        if d < rho {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi == lo {
            break;
        }
    }
    Err(Error::RootNotConverged { tol, iterations: 200 })
}
