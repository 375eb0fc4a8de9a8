//! Convergence diagnostics for trajectories: tail masses, moments, strong
//! distance, tail envelopes and the flux identities behind the tail bound.
//!
//! The central objects are the tail masses
//!
//! ```text
//! G_i = sum_{j>=i} j c_j
//! ```
//!
//! the mass carried by clusters of size at least `i`. Subcritical relaxation
//! is controlled by dominating `G_i` with a decreasing envelope `r_i` whose
//! consecutive differences have a bounded ratio; [`build_tail_envelope`]
//! constructs such an envelope over any positive vanishing sequence, and
//! [`check_tail_bound`] measures how well `G_i(t) <= C r_i` holds along a
//! trajectory.
//!
//! All mass-weighted sums accumulate from the largest cluster downward so
//! the small tail terms are not absorbed into the bulk prematurely.

use crate::coefficients::CoefficientModel;
use crate::equilibrium::EquilibriumProfile;
use crate::error::{Error, Result};
use crate::kinetics::{State, System, Trajectory};

/// Tail mass `G_i = sum_{j=i}^{L} j c_j`, accumulated from `L` downward.
/// Indices above `L` give 0; indices below 1 are treated as 1.
pub fn tail_mass(state: &State, i: usize) -> f64 {
    let i = i.max(1);
    let mut acc = 0.0;
    for j in (i..=state.len()).rev() {
        acc += j as f64 * state.c[j - 1];
    }
    acc
}

/// Moment `sum_j j^mu c_j` for any real exponent `mu`.
pub fn moment(state: &State, mu: f64) -> f64 {
    let mut acc = 0.0;
    for j in (1..=state.len()).rev() {
        acc += (j as f64).powf(mu) * state.c[j - 1];
    }
    acc
}

/// Mass-norm distance `sum_j j |c_j - ref_j|` to an equilibrium profile.
pub fn strong_distance(state: &State, reference: &EquilibriumProfile) -> Result<f64> {
    if state.len() != reference.len() {
        return Err(Error::LengthMismatch {
            expected: reference.len(),
            found: state.len(),
        });
    }
    let mut acc = 0.0;
    for j in (1..=state.len()).rev() {
        acc += j as f64 * (state.c[j - 1] - reference.densities[j - 1]).abs();
    }
    Ok(acc)
}

/// Decreasing tail envelope with controlled difference ratios.
///
/// Invariants established by construction:
/// * `r_k > r_{k+1} > 0`,
/// * `r_k >= g_k` for the source sequence `g`,
/// * `(r_{k-1} - r_k) / (r_k - r_{k+1}) = s_{k-1} / s_k <= lambda`,
///
/// where `s` holds the differences the construction actually produced
/// (`r_k = sum_{j>=k} s_j` plus the geometric closure of the finite tail).
#[derive(Debug, Clone)]
pub struct TailEnvelope {
    /// `values[k-1] = r_k`, the rounded suffix sums of `steps`.
    pub values: Vec<f64>,
    /// `steps[k-1] = s_k`; equals `r_k - r_{k+1}` up to rounding and carries
    /// the exact difference-ratio structure.
    pub steps: Vec<f64>,
    pub lambda: f64,
    /// The dominated sequence `g`.
    pub source: Vec<f64>,
}

impl TailEnvelope {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Re-check all structural invariants, with a relative slack of a few
    /// ulps on the division-based ones.
    pub fn verify(&self) -> std::result::Result<(), String> {
        let m = self.len();
        let slack = 1.0 + 1e-12;
        for k in 0..m {
            if !(self.values[k] > 0.0) {
                return Err(format!("r_{} = {} not positive", k + 1, self.values[k]));
            }
            if !(self.steps[k] > 0.0) {
                return Err(format!("s_{} = {} not positive", k + 1, self.steps[k]));
            }
            if k + 1 < m && !(self.values[k] > self.values[k + 1]) {
                return Err(format!("r_{} !> r_{}", k + 1, k + 2));
            }
            if self.values[k] < self.source[k] / slack {
                return Err(format!(
                    "domination fails at {}: r = {} < g = {}",
                    k + 1,
                    self.values[k],
                    self.source[k]
                ));
            }
            if k > 0 && self.steps[k - 1] / self.steps[k] > self.lambda * slack {
                return Err(format!(
                    "difference ratio at {} exceeds lambda: {} / {}",
                    k + 1,
                    self.steps[k - 1],
                    self.steps[k]
                ));
            }
        }
        Ok(())
    }
}

/// Build a [`TailEnvelope`] dominating `g` with difference-ratio parameter
/// `lambda > 1`.
///
/// Construction: form the decreasing majorant `gbar_k = sup_{j>=k} g_j`
/// (with 1 added to the first entry so every step stays positive), take its
/// decrements `h_k`, then smooth them through
/// `s_1 = h_1`, `s_{k+1} = max(s_k / lambda, h_{k+1})` and set
/// `r_k = sum_{j>=k} s_j`. The finite tail is closed geometrically,
/// `s_{M+m} = s_M lambda^{-m}`, the minimal continuation consistent with the
/// ratio bound, which contributes `s_M / (lambda - 1)` to every `r_k`.
pub fn build_tail_envelope(g: &[f64], lambda: f64) -> Result<TailEnvelope> {
    if g.is_empty() {
        return Err(Error::InvalidArgument("envelope source must be nonempty".into()));
    }
    if g.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::InvalidArgument(
            "envelope source entries must be positive and finite".into(),
        ));
    }
    if !(lambda > 1.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ratio parameter must exceed 1, got {lambda}"
        )));
    }
    let m = g.len();

    // decreasing majorant; the sequence is treated as 0 beyond its end
    let mut gbar = vec![0.0; m];
    let mut running = 0.0f64;
    for k in (0..m).rev() {
        running = running.max(g[k]);
        gbar[k] = running;
    }
    gbar[0] += 1.0;

    let mut steps = vec![0.0; m];
    for k in 0..m {
        let next = if k + 1 < m { gbar[k + 1] } else { 0.0 };
        let h = gbar[k] - next;
        steps[k] = if k == 0 {
            h
        } else {
            // subnormal floor keeps positivity without disturbing the ratio
            (steps[k - 1] / lambda).max(h).max(f64::MIN_POSITIVE)
        };
    }

    let mut values = vec![0.0; m];
    let closure = steps[m - 1] / (lambda - 1.0);
    let mut acc = closure;
    for k in (0..m).rev() {
        acc += steps[k];
        // a step far below the ulp of the running sum rounds to a tie even
        // though the real-number sequence is strictly decreasing; break it
        if k + 1 < m && acc <= values[k + 1] {
            acc = values[k + 1].next_up();
        }
        values[k] = acc;
    }
    Ok(TailEnvelope { values, steps, lambda, source: g.to_vec() })
}

/// One violation of `G_i(t) <= C r_i`.
#[derive(Debug, Clone, Copy)]
pub struct BoundViolation {
    pub t: f64,
    pub index: usize,
    pub tail_mass: f64,
    pub bound: f64,
}

/// Outcome of [`check_tail_bound`].
#[derive(Debug, Clone)]
pub struct BoundReport {
    /// Factor `C` the check ran with.
    pub factor: f64,
    /// First index checked.
    pub k0: usize,
    /// Last index checked.
    pub k_end: usize,
    pub snapshots_checked: usize,
    pub violation_count: usize,
    /// At most the first 32 violations, in scan order.
    pub violations: Vec<BoundViolation>,
    /// Smallest factor that would have produced zero violations:
    /// `max_{t, i} G_i(t) / r_i`.
    pub minimal_factor: f64,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }

    pub fn render_text(&self) -> String {
        let mut out = format!(
            "tail bound G_i(t) <= C r_i with C = {} over i in [{}, {}], {} snapshots: {}\n\
             minimal admissible C = {}\n",
            self.factor,
            self.k0,
            self.k_end,
            self.snapshots_checked,
            if self.passed() {
                "no violations".to_string()
            } else {
                format!("{} violations", self.violation_count)
            },
            self.minimal_factor,
        );
        for v in &self.violations {
            out.push_str(&format!(
                "  t = {:<12} i = {:<6} G_i = {:e} > {:e}\n",
                v.t, v.index, v.tail_mass, v.bound
            ));
        }
        out
    }

    pub fn render_kv(&self) -> String {
        format!(
            "tail_bound_factor = {}\ntail_bound_k0 = {}\ntail_bound_k_end = {}\n\
             tail_bound_snapshots = {}\ntail_bound_violations = {}\ntail_bound_minimal_factor = {}\n",
            self.factor,
            self.k0,
            self.k_end,
            self.snapshots_checked,
            self.violation_count,
            self.minimal_factor
        )
    }
}

/// Scan a trajectory for violations of `G_i(t) <= factor * r_i` over
/// `i in [k0, min(envelope length, L)]` and report the minimal admissible
/// factor. The envelope is expected to dominate the tails at the
/// trajectory's reference time; this is the caller's contract and is not
/// re-derived here.
pub fn check_tail_bound(
    traj: &Trajectory,
    envelope: &TailEnvelope,
    factor: f64,
    k0: usize,
) -> Result<BoundReport> {
    if !(factor >= 0.0) {
        return Err(Error::InvalidArgument("bound factor must be >= 0".into()));
    }
    let k0 = k0.max(1);
    let k_end = envelope.len().min(traj.len);
    if k0 > k_end {
        return Err(Error::InvalidArgument(format!(
            "start index {k0} exceeds checkable range {k_end}"
        )));
    }
    let mut report = BoundReport {
        factor,
        k0,
        k_end,
        snapshots_checked: traj.snapshots.len(),
        violation_count: 0,
        violations: Vec::new(),
        minimal_factor: 0.0,
    };
    for snap in &traj.snapshots {
        // suffix accumulation gives every G_i of this snapshot in one pass
        let c = &snap.state.c;
        let mut g = 0.0f64;
        let mut tails = vec![0.0; k_end + 1 - k0];
        for j in (k0..=traj.len).rev() {
            g += j as f64 * c[j - 1];
            if j <= k_end {
                tails[j - k0] = g;
            }
        }
        for i in k0..=k_end {
            let g_i = tails[i - k0];
            let r_i = envelope.values[i - 1];
            report.minimal_factor = report.minimal_factor.max(g_i / r_i);
            if g_i > factor * r_i {
                report.violation_count += 1;
                if report.violations.len() < 32 {
                    report.violations.push(BoundViolation {
                        t: snap.state.t,
                        index: i,
                        tail_mass: g_i,
                        bound: factor * r_i,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Both sides of the tail flux identity at index `i`:
///
/// ```text
/// d/dt G_i = sum_{j<=N} sum_{k=i-j}^{i-1} (j+k) W_jk
///          + sum_{j<=N} sum_{k>=i} j W_jk
/// ```
///
/// Returns `(analytic, numeric)` where `analytic` is the double sum above
/// (truncated to reactions that exist, `j + k <= L`) and `numeric` is
/// `sum_{j>=i} j (dc_j/dt)`. The identity is an exact rearrangement, so any
/// disagreement beyond rounding is a bug, not model error. Valid for
/// `2N < i <= L - N`; the regime split that eliminates the half-counted
/// gains needs `i > 2N`, and beyond `L - N` the first sum would cross the
/// truncation boundary.
pub fn tail_flux_identity(system: &System, state: &State, i: usize) -> Result<(f64, f64)> {
    let n = system.model().cutoff();
    let len = system.len();
    if i <= 2 * n {
        return Err(Error::InvalidArgument(format!(
            "tail flux identity requires i > 2N = {}, got {i}",
            2 * n
        )));
    }
    if i > len - n {
        return Err(Error::InvalidArgument(format!(
            "tail flux identity requires i <= L - N = {}, got {i}",
            len - n
        )));
    }

    let mut analytic = 0.0;
    for j in 1..=n {
        for k in i - j..i {
            analytic += (j + k) as f64 * system.net_flux(state, j, k)?;
        }
        for k in i..=len - j {
            analytic += j as f64 * system.net_flux(state, j, k)?;
        }
    }

    let dc = system.rhs(state)?;
    let mut numeric = 0.0;
    for j in (i..=len).rev() {
        numeric += j as f64 * dc[j - 1];
    }
    Ok((analytic, numeric))
}

/// Ratio `B_jk / A_jk` of the envelope recursion coefficients,
///
/// ```text
/// B_jk / A_jk = k/(j+k) * Q_k/Q_{j+k} * z^-j  -  j k a_{j,j+k} / ((j+k)^2 a_jk)
/// ```
///
/// evaluated with the `Q` ratio in log space. As `k` grows this tends to
/// `(z_s / z)^j`, which is what makes tails contract below the critical
/// activity.
pub fn ab_ratio(model: &CoefficientModel, z: f64, j: usize, k: usize) -> Result<f64> {
    if j < 1 || k < 1 {
        return Err(Error::InvalidArgument("cluster indices must be >= 1".into()));
    }
    if j > model.cutoff() {
        return Err(Error::InvalidArgument(format!(
            "ratio needs j <= N = {}, got {j} (a_jk would vanish)",
            model.cutoff()
        )));
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::InvalidArgument(format!("activity must be in (0, z_s), got {z}")));
    }
    let a = model.coag_rate(j, k)?;
    if a == 0.0 {
        return Err(Error::InvalidArgument(format!("a({j},{k}) is zero")));
    }
    let a_shift = model.coag_rate(j, j + k)?;
    let jf = j as f64;
    let kf = k as f64;
    let sum = jf + kf;
    let log_first = kf.ln() - sum.ln() + model.log_q(k)? - model.log_q(j + k)? - jf * z.ln();
    Ok(log_first.exp() - jf * kf * a_shift / (sum * sum * a))
}

/// What [`diagnose`] computes per snapshot.
#[derive(Debug, Clone, Default)]
pub struct DiagnosticsConfig {
    /// Indices `i` at which tail masses `G_i` are recorded.
    pub tail_indices: Vec<usize>,
    /// Exponents `mu` at which moments are recorded.
    pub moment_exponents: Vec<f64>,
    /// Number of head components copied into the record.
    pub head_len: usize,
    /// Reference profile for the strong distance, when one applies.
    pub reference: Option<EquilibriumProfile>,
}

/// Per-snapshot diagnostics; `rho` always equals the tail mass at index 1.
#[derive(Debug, Clone)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub rho: f64,
    pub tail_masses: Vec<(usize, f64)>,
    pub moments: Vec<(f64, f64)>,
    /// Absent when no reference is configured or its length differs.
    pub strong_distance: Option<f64>,
    pub head: Vec<f64>,
}

/// Evaluate the configured diagnostics on one state.
pub fn diagnose(state: &State, cfg: &DiagnosticsConfig) -> DiagnosticsRecord {
    DiagnosticsRecord {
        t: state.t,
        rho: tail_mass(state, 1),
        tail_masses: cfg
            .tail_indices
            .iter()
            .map(|&i| (i, tail_mass(state, i)))
            .collect(),
        moments: cfg
            .moment_exponents
            .iter()
            .map(|&mu| (mu, moment(state, mu)))
            .collect(),
        strong_distance: cfg
            .reference
            .as_ref()
            .and_then(|r| strong_distance(state, r).ok()),
        head: state.c.iter().take(cfg.head_len).copied().collect(),
    }
}
