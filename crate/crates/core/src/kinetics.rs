//! Truncated dynamics of the cutoff coagulation-fragmentation system.
//!
//! The state is the concentration vector `c_1..c_L`. The evolution follows
//! the four index regimes of the cluster equations, with every reaction
//! `(j,k)` such that `j + k > L` dropped entirely — both the gain at `j+k`
//! and the losses at `j` and `k` — so the truncated system is closed and
//! conserves the mass `sum_j j c_j` identically, not just in the limit:
//!
//! ```text
//! dc_1/dt = - sum_{k<=L-1} W_1k
//! dc_j/dt = 1/2 sum_{k<j} W_{j-k,k} - sum_{k<=L-j} W_jk          2 <= j <= N
//! dc_j/dt = 1/2 sum_{k<j} W_{j-k,k} - sum_{k<=min(N,L-j)} W_jk   N < j <= 2N
//! dc_j/dt = sum_{k<=N} W_{j-k,k}    - sum_{k<=min(N,L-j)} W_jk   j > 2N
//! ```
//!
//! with `W_jk = a_jk c_j c_k - b_jk c_{j+k}`. Each right-hand side costs
//! `O(N L)`: only the first `N` species interact with everything.
//!
//! Time integration is an adaptive embedded Runge-Kutta pair of orders
//! (4,5) with two extra rules suited to concentrations: a step driving any
//! component below `-abs_tol` is rejected and retried at half the step, and
//! accepted small negatives are clamped to zero with the clamped mass
//! tallied on the trajectory. Snapshots are taken on accepted states — the
//! stepper clips its step to land exactly on every requested time — so
//! conservation checks on snapshots see integrator states, never
//! interpolants.

use crate::analysis::{self, DiagnosticsConfig, DiagnosticsRecord};
use crate::coefficients::CoefficientModel;
use crate::error::{Error, Result};

/// How snapshot states relate to integrator steps: steps are clipped so
/// every snapshot is an accepted state at exactly the requested time.
pub const SNAPSHOT_PLACEMENT: &str = "exact-accepted-step";

/// Phase point of the truncated system.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    /// `c[j-1]` is the concentration of clusters of size `j`.
    pub c: Vec<f64>,
    pub t: f64,
}

impl State {
    pub fn new(c: Vec<f64>, t: f64) -> Self {
        Self { c, t }
    }

    pub fn zero(len: usize) -> Self {
        Self { c: vec![0.0; len], t: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    /// Mass `sum_j j c_j`, accumulated from the largest cluster down.
    pub fn density(&self) -> f64 {
        self.c
            .iter()
            .enumerate()
            .rev()
            .map(|(i, c)| (i + 1) as f64 * c)
            .sum()
    }
}

/// Truncation of an initial sequence: keep `c0_j` for `j <= n`, zero beyond,
/// inside a system of size `len`.
pub fn truncate_initial(c0: &[f64], n: usize, len: usize) -> Result<State> {
    if n > len {
        return Err(Error::InvalidArgument(format!(
            "truncation index {n} exceeds system size {len}"
        )));
    }
    let mut c = vec![0.0; len];
    for (j, v) in c0.iter().take(n).enumerate() {
        c[j] = *v;
    }
    Ok(State { c, t: 0.0 })
}

/// The truncated system with its rate tables precomputed for size `len`.
///
/// Construction costs `O(N len)` kernel evaluations; after that the tables
/// are immutable and the right-hand side is pure arithmetic, safe to share
/// across threads.
pub struct System<'m> {
    model: &'m CoefficientModel,
    len: usize,
    cutoff: usize,
    /// `coag[(j-1)*len + (k-1)] = a_jk` for `j <= N`, `k <= len`.
    coag: Vec<f64>,
    frag: Vec<f64>,
}

impl<'m> System<'m> {
    pub fn new(model: &'m CoefficientModel, len: usize) -> Result<Self> {
        let cutoff = model.cutoff();
        if len < 2 * cutoff + 1 {
            return Err(Error::InvalidArgument(format!(
                "system size {len} degenerates the regime structure; need at least 2N+1 = {}",
                2 * cutoff + 1
            )));
        }
        let mut coag = vec![0.0; cutoff * len];
        let mut frag = vec![0.0; cutoff * len];
        for j in 1..=cutoff {
            for k in 1..=len {
                // only pairs with j + k <= len ever fire; the rest stay zero
                if j + k <= len {
                    coag[(j - 1) * len + (k - 1)] = model.coag_rate(j, k)?;
                    frag[(j - 1) * len + (k - 1)] = model.frag_rate(j, k)?;
                }
            }
        }
        Ok(Self { model, len, cutoff, coag, frag })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn model(&self) -> &CoefficientModel {
        self.model
    }

    #[inline]
    fn rate_pair(&self, j: usize, k: usize) -> (f64, f64) {
        let (lo, hi) = if j <= k { (j, k) } else { (k, j) };
        if lo > self.cutoff {
            return (0.0, 0.0);
        }
        let idx = (lo - 1) * self.len + (hi - 1);
        (self.coag[idx], self.frag[idx])
    }

    #[inline]
    fn flux(&self, c: &[f64], j: usize, k: usize) -> f64 {
        let (a, b) = self.rate_pair(j, k);
        a * c[j - 1] * c[k - 1] - b * c[j + k - 1]
    }

    /// Net flux `W_jk = a_jk c_j c_k - b_jk c_{j+k}` through one channel.
    pub fn net_flux(&self, state: &State, j: usize, k: usize) -> Result<f64> {
        if j < 1 || k < 1 {
            return Err(Error::InvalidArgument("cluster indices must be >= 1".into()));
        }
        if j + k > self.len {
            return Err(Error::IndexRange { index: j + k, size: self.len });
        }
        if state.len() != self.len {
            return Err(Error::LengthMismatch { expected: self.len, found: state.len() });
        }
        Ok(self.flux(&state.c, j, k))
    }

    /// Right-hand side of the truncated system.
    pub fn rhs(&self, state: &State) -> Result<Vec<f64>> {
        if state.len() != self.len {
            return Err(Error::LengthMismatch { expected: self.len, found: state.len() });
        }
        let mut out = vec![0.0; self.len];
        self.rhs_into(&state.c, &mut out);
        Ok(out)
    }

    /// Gershgorin-style bound on the fastest local relaxation rate at `c`:
    /// the largest diagonal magnitude of the Jacobian, from losses as a
    /// reactant (`sum_k a_jk c_k`) and as a fragmentation source
    /// (`sum_k b_{j-k,k}`).
    ///
    /// Near an equilibrium the embedded error estimate vanishes while the
    /// fast eigenmodes remain, so error control alone would push the step
    /// size across the explicit-method stability boundary and amplify
    /// roundoff; the integrator caps its step with this scale.
    pub fn stiffness_scale(&self, c: &[f64]) -> f64 {
        let n = self.cutoff;
        let len = self.len;
        let mut worst = 0.0f64;
        for j in 1..=len {
            let mut diag = 0.0;
            let k_hi = if j <= n { len - j } else { n.min(len - j) };
            for k in 1..=k_hi {
                let (a, _) = self.rate_pair(j, k);
                diag += a * c[k - 1];
            }
            let gain_weight = if j <= 2 * n { 0.5 } else { 1.0 };
            for k in 1..j.min(n + 1) {
                let (_, b) = self.rate_pair(j - k, k);
                diag += gain_weight * b;
            }
            worst = worst.max(diag);
        }
        worst
    }

    /// Core right-hand side on raw slices; `out.len() == c.len() == len`.
    pub fn rhs_into(&self, c: &[f64], out: &mut [f64]) {
        let n = self.cutoff;
        let len = self.len;
        debug_assert_eq!(c.len(), len);
        debug_assert_eq!(out.len(), len);

        // j = 1: pure loss against everything that still fits
        let mut loss = 0.0;
        for k in 1..=len - 1 {
            loss += self.flux(c, 1, k);
        }
        out[0] = -loss;

        // 2 <= j <= N: half-counted gains, loss against everything
        for j in 2..=n.min(len) {
            let mut gain = 0.0;
            for k in 1..j {
                gain += self.flux(c, j - k, k);
            }
            let mut loss = 0.0;
            for k in 1..=len - j {
                loss += self.flux(c, j, k);
            }
            out[j - 1] = 0.5 * gain - loss;
        }

        // N < j <= 2N: gains still half-counted (both halves can sit at or
        // below the cutoff), losses only against small partners
        for j in n + 1..=(2 * n).min(len) {
            let mut gain = 0.0;
            for k in 1..j {
                gain += self.flux(c, j - k, k);
            }
            let mut loss = 0.0;
            for k in 1..=n.min(len - j) {
                loss += self.flux(c, j, k);
            }
            out[j - 1] = 0.5 * gain - loss;
        }

        // j > 2N: every gain pair has exactly one small member, so the
        // symmetric double count collapses onto k <= N
        for j in 2 * n + 1..=len {
            let mut gain = 0.0;
            for k in 1..=n {
                gain += self.flux(c, j - k, k);
            }
            let mut loss = 0.0;
            for k in 1..=n.min(len - j) {
                loss += self.flux(c, j, k);
            }
            out[j - 1] = gain - loss;
        }
    }
}

/// Controls for [`integrate`].
#[derive(Debug, Clone)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: f64,
    pub h_max: f64,
    /// Integration horizon `T` (absolute time).
    pub horizon: f64,
    /// Requested snapshot times; strictly increasing, within the horizon.
    /// The initial and final states are always recorded.
    pub snapshot_times: Vec<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            h_init: 1e-6,
            h_max: f64::INFINITY,
            horizon: 1.0,
            snapshot_times: Vec::new(),
        }
    }
}

impl IntegratorConfig {
    fn validate(&self, t_start: f64) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be > 0".into()));
        }
        if !(self.h_init > 0.0) || !(self.h_max > 0.0) {
            return Err(Error::InvalidArgument("step bounds must be > 0".into()));
        }
        if !(self.horizon > t_start) {
            return Err(Error::InvalidArgument(format!(
                "horizon {} must exceed the start time {t_start}",
                self.horizon
            )));
        }
        let mut prev = t_start;
        for &s in &self.snapshot_times {
            if !(s > prev) {
                return Err(Error::InvalidArgument(
                    "snapshot times must be strictly increasing and beyond the start".into(),
                ));
            }
            if s > self.horizon {
                return Err(Error::InvalidArgument(
                    "snapshot times must not exceed the horizon".into(),
                ));
            }
            prev = s;
        }
        Ok(())
    }
}

/// One recorded point of a trajectory.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub state: State,
    pub diagnostics: DiagnosticsRecord,
}

/// Time-stamped snapshots plus integration bookkeeping.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    /// System size `L`.
    pub len: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Total mass removed by clamping small negative components to zero.
    pub clamped_mass: f64,
}

impl Trajectory {
    pub fn last_state(&self) -> &State {
        &self.snapshots.last().expect("trajectory holds >= 1 snapshot").state
    }

    pub fn initial_density(&self) -> f64 {
        self.snapshots.first().expect("trajectory holds >= 1 snapshot").state.density()
    }

    /// Largest relative mass deviation across snapshots.
    pub fn density_drift(&self) -> f64 {
        let rho0 = self.initial_density();
        if rho0 == 0.0 {
            return self
                .snapshots
                .iter()
                .map(|s| s.state.density().abs())
                .fold(0.0, f64::max);
        }
        self.snapshots
            .iter()
            .map(|s| ((s.state.density() - rho0) / rho0).abs())
            .fold(0.0, f64::max)
    }

    /// Whether the clamped mass stayed within budget (`1e-6` of the initial
    /// mass); runs beyond it are reported invalid.
    pub fn clamp_within_budget(&self) -> bool {
        self.clamped_mass <= 1e-6 * self.initial_density().max(f64::MIN_POSITIVE)
    }
}

/// Integrate from `s0` to `cfg.horizon`, recording snapshots.
pub fn integrate(
    system: &System,
    s0: State,
    cfg: &IntegratorConfig,
    diag: &DiagnosticsConfig,
) -> Result<Trajectory> {
    if s0.len() != system.len() {
        return Err(Error::LengthMismatch { expected: system.len(), found: s0.len() });
    }
    cfg.validate(s0.t)?;
    let mut traj = Trajectory {
        snapshots: vec![Snapshot {
            diagnostics: analysis::diagnose(&s0, diag),
            state: s0.clone(),
        }],
        len: system.len(),
        accepted_steps: 0,
        rejected_steps: 0,
        clamped_mass: 0.0,
    };
    advance(system, s0, cfg, diag, &mut traj)?;
    Ok(traj)
}

/// Continue an existing trajectory out to a larger horizon. Snapshot times
/// in `cfg` must lie beyond the trajectory's current end.
pub fn extend_integration(
    system: &System,
    traj: &mut Trajectory,
    cfg: &IntegratorConfig,
    diag: &DiagnosticsConfig,
) -> Result<()> {
    if traj.len != system.len() {
        return Err(Error::LengthMismatch { expected: system.len(), found: traj.len });
    }
    let start = traj.last_state().clone();
    cfg.validate(start.t)?;
    advance(system, start, cfg, diag, traj)
}

// Dormand-Prince 5(4) tableau; the fifth-order row doubles as stage 7, so an
// accepted step reuses its last evaluation as the next first stage.
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const A7: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
const ERR_W: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn advance(
    system: &System,
    mut state: State,
    cfg: &IntegratorConfig,
    diag: &DiagnosticsConfig,
    traj: &mut Trajectory,
) -> Result<()> {
    let len = system.len();
    let t_end = cfg.horizon;
    let h_floor = 1e-14 * (t_end - state.t);

    let mut marks: Vec<f64> = cfg
        .snapshot_times
        .iter()
        .copied()
        .filter(|&s| s > state.t)
        .collect();
    if marks.last().copied() != Some(t_end) {
        marks.push(t_end);
    }
    let mut next_mark = 0usize;

    let mut k = vec![vec![0.0f64; len]; 7];
    let mut y_stage = vec![0.0f64; len];
    let mut y_new = vec![0.0f64; len];
    let mut k1_valid = false;
    let mut h = cfg.h_init.min(cfg.h_max);
    // RK45's real-axis stability interval is about 3.3; stay well inside
    let mut h_stable = stability_cap(system, &state.c);

    while next_mark < marks.len() {
        let target = marks[next_mark];
        let h_lim = h.min(h_stable);
        let clipped = h_lim >= target - state.t;
        let h_try = if clipped { target - state.t } else { h_lim };
        if h_try < h_floor {
            return Err(Error::StiffnessFailure {
                t: state.t,
                h: h_try,
                last_state: Box::new(state),
            });
        }

        if !k1_valid {
            system.rhs_into(&state.c, &mut k[0]);
            k1_valid = true;
        }

        for stage in 1..7 {
            let a_row: &[f64] = match stage {
                1 => &A2,
                2 => &A3,
                3 => &A4,
                4 => &A5,
                5 => &A6,
                _ => &A7,
            };
            for i in 0..len {
                let mut acc = 0.0;
                for (m, a) in a_row.iter().enumerate() {
                    if *a != 0.0 {
                        acc += a * k[m][i];
                    }
                }
                y_stage[i] = state.c[i] + h_try * acc;
            }
            if stage == 6 {
                y_new.copy_from_slice(&y_stage);
            }
            system.rhs_into(&y_stage, &mut k[stage]);
        }

        // scaled max-norm error estimate of the embedded pair; any
        // non-finite value poisons the estimate so the step is rejected
        let mut err_norm = 0.0f64;
        for i in 0..len {
            let mut e = 0.0;
            for (m, w) in ERR_W.iter().enumerate() {
                if *w != 0.0 {
                    e += w * k[m][i];
                }
            }
            e *= h_try;
            let scale = cfg.abs_tol + cfg.rel_tol * state.c[i].abs().max(y_new[i].abs());
            let ratio = (e / scale).abs();
            if !ratio.is_finite() || !y_new[i].is_finite() {
                err_norm = f64::INFINITY;
                break;
            }
            err_norm = err_norm.max(ratio);
        }

        let negative = y_new.iter().any(|&v| v < -cfg.abs_tol);
        if negative {
            // positivity rejection: retry at half step
            traj.rejected_steps += 1;
            h = 0.5 * h_try;
            continue;
        }
        if !(err_norm <= 1.0) {
            traj.rejected_steps += 1;
            let factor = if err_norm.is_finite() {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, 1.0)
            } else {
                0.2
            };
            h = h_try * factor;
            continue;
        }

        // accept
        traj.accepted_steps += 1;
        let mut clamped = false;
        for (i, v) in y_new.iter_mut().enumerate() {
            if *v < 0.0 {
                traj.clamped_mass += (i + 1) as f64 * -*v;
                *v = 0.0;
                clamped = true;
            }
        }
        state.c.copy_from_slice(&y_new);
        state.t = if clipped { target } else { state.t + h_try };
        if clamped {
            k1_valid = false;
        } else {
            let (first, rest) = k.split_at_mut(1);
            first[0].copy_from_slice(&rest[5]);
        }
        h_stable = stability_cap(system, &state.c);

        if state.t == target {
            traj.snapshots.push(Snapshot {
                diagnostics: analysis::diagnose(&state, diag),
                state: state.clone(),
            });
            next_mark += 1;
        }

        let growth = if err_norm > 0.0 {
            (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h = (h_try * growth).min(cfg.h_max);
    }
    Ok(())
}

fn stability_cap(system: &System, c: &[f64]) -> f64 {
    let scale = system.stiffness_scale(c);
    if scale > 0.0 {
        2.0 / scale
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::equilibrium_profile;
    use rand::prelude::*;

    fn reference_model() -> CoefficientModel {
        CoefficientModel::power_law(2, 1.0, 0.5, 1.0, 0.5).unwrap()
    }

    fn monomer_state(rho0: f64, len: usize) -> State {
        let mut c = vec![0.0; len];
        c[0] = rho0;
        State::new(c, 0.0)
    }

    fn no_diag() -> DiagnosticsConfig {
        DiagnosticsConfig::default()
    }

    #[test]
    fn net_flux_values() {
        let model = reference_model();
        let system = System::new(&model, 40).unwrap();

        let s = monomer_state(1.5, 40);
        let a11 = model.coag_rate(1, 1).unwrap();
        assert_eq!(system.net_flux(&s, 1, 1).unwrap(), a11 * 1.5 * 1.5);

        // above the cutoff
        assert_eq!(system.net_flux(&s, 3, 5).unwrap(), 0.0);

        // outside the truncated system
        assert!(matches!(
            system.net_flux(&s, 20, 30),
            Err(Error::IndexRange { .. })
        ));
    }

    #[test]
    fn net_flux_vanishes_at_equilibrium() {
        let model = reference_model();
        let len = 300;
        let system = System::new(&model, len).unwrap();
        let profile = equilibrium_profile(&model, 0.25, len).unwrap();
        let s = State::new(profile.densities.clone(), 0.0);
        for j in 1..=2usize {
            for k in 1..=(len - j) {
                let w = system.net_flux(&s, j, k).unwrap();
                let scale = model.coag_rate(j, k).unwrap() * s.c[j - 1] * s.c[k - 1];
                if scale > 0.0 {
                    assert!((w / scale).abs() <= 1e-12, "flux at ({j},{k}): {w}");
                }
            }
        }
    }

    #[test]
    fn rhs_of_monomer_state() {
        let model = reference_model();
        let system = System::new(&model, 12).unwrap();
        let rho0 = 2.0;
        let s = monomer_state(rho0, 12);
        let dc = system.rhs(&s).unwrap();
        let a11 = model.coag_rate(1, 1).unwrap();
        assert_eq!(dc[0], -a11 * rho0 * rho0);
        assert_eq!(dc[1], 0.5 * a11 * rho0 * rho0);
        assert!(dc[2..].iter().all(|&v| v == 0.0));
        // the weighted sum cancels exactly for this state
        assert_eq!(1.0 * dc[0] + 2.0 * dc[1], 0.0);
    }

    #[test]
    fn rhs_of_zero_and_equilibrium_states() {
        let model = reference_model();
        let len = 300;
        let system = System::new(&model, len).unwrap();

        let zero = State::zero(len);
        assert!(system.rhs(&zero).unwrap().iter().all(|&v| v == 0.0));

        let profile = equilibrium_profile(&model, (-1.0f64).exp(), len).unwrap();
        let s = State::new(profile.densities.clone(), 0.0);
        let dc = system.rhs(&s).unwrap();
        // compare against the per-component magnitude of the flux sums
        let mag = rhs_magnitude(&system, &s.c);
        for j in 0..len {
            assert!(
                dc[j].abs() <= 1e-12 * mag[j].max(1e-300),
                "component {}: rhs {} vs magnitude {}",
                j + 1,
                dc[j],
                mag[j]
            );
        }
    }

    #[test]
    fn system_size_must_cover_regimes() {
        let model = reference_model();
        assert!(System::new(&model, 4).is_err());
        assert!(System::new(&model, 5).is_ok());
    }

    /// Sum of |flux| contributions per component, mirroring the rhs loops.
    fn rhs_magnitude(system: &System, c: &[f64]) -> Vec<f64> {
        let len = c.len();
        let n = system.model().cutoff();
        let mut mag = vec![0.0; len];
        let absflux = |j: usize, k: usize| -> f64 {
            let a = system.model().coag_rate(j, k).unwrap();
            let b = system.model().frag_rate(j, k).unwrap();
            (a * c[j - 1] * c[k - 1]).abs() + (b * c[j + k - 1]).abs()
        };
        for k in 1..=len - 1 {
            mag[0] += absflux(1, k);
        }
        for j in 2..=len {
            for k in 1..j {
                if j <= 2 * n {
                    mag[j - 1] += 0.5 * absflux(j - k, k);
                } else if k <= n {
                    mag[j - 1] += absflux(j - k, k);
                }
            }
            for k in 1..=(len - j).min(if j <= n { len } else { n }) {
                mag[j - 1] += absflux(j, k);
            }
        }
        mag
    }

    /// Brute-force closed coagulation-fragmentation right-hand side with the
    /// cutoff kernel; `O(L^2)`, used as the structural oracle.
    fn brute_force_rhs(model: &CoefficientModel, c: &[f64]) -> Vec<f64> {
        let len = c.len();
        let w = |j: usize, k: usize| -> f64 {
            let a = model.coag_rate(j, k).unwrap();
            let b = model.frag_rate(j, k).unwrap();
            a * c[j - 1] * c[k - 1] - b * c[j + k - 1]
        };
        let mut out = vec![0.0; len];
        for j in 1..=len {
            let mut gain = 0.0;
            for k in 1..j {
                gain += w(j - k, k);
            }
            let mut loss = 0.0;
            for k in 1..=len - j {
                loss += w(j, k);
            }
            out[j - 1] = 0.5 * gain - loss;
        }
        out
    }

    fn random_state(rng: &mut StdRng, len: usize) -> State {
        let c: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        State::new(c, 0.0)
    }

    #[test]
    fn rhs_matches_brute_force_oracle() {
        let model = reference_model();
        let len = 60;
        let system = System::new(&model, len).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let s = random_state(&mut rng, len);
            let fast = system.rhs(&s).unwrap();
            let slow = brute_force_rhs(&model, &s.c);
            for j in 0..len {
                let scale = fast[j].abs().max(slow[j].abs()).max(1e-300);
                assert!(
                    (fast[j] - slow[j]).abs() <= 1e-12 * scale,
                    "component {}: {} vs {}",
                    j + 1,
                    fast[j],
                    slow[j]
                );
            }
        }
    }

    #[test]
    fn rhs_conserves_mass() {
        let model = reference_model();
        let len = 120;
        let system = System::new(&model, len).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let s = random_state(&mut rng, len);
            let dc = system.rhs(&s).unwrap();
            let weighted: f64 = dc.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
            let scale: f64 = dc
                .iter()
                .enumerate()
                .map(|(i, v)| ((i + 1) as f64 * v).abs())
                .sum();
            assert!(
                weighted.abs() <= 1e-12 * scale,
                "weighted rhs sum {weighted} vs scale {scale}"
            );
        }
    }

    #[test]
    fn truncate_initial_cases() {
        let c0 = [5.0, 1.0, 1.0, 1.0];
        let s = truncate_initial(&c0, 2, 10).unwrap();
        assert_eq!(s.c[0], 5.0);
        assert_eq!(s.c[1], 1.0);
        assert!(s.c[2..].iter().all(|&v| v == 0.0));
        assert_eq!(s.t, 0.0);

        let s = truncate_initial(&c0, 0, 6).unwrap();
        assert!(s.c.iter().all(|&v| v == 0.0));

        assert!(truncate_initial(&c0, 11, 10).is_err());
    }

    #[test]
    fn equilibrium_is_a_fixed_point_of_integration() {
        let model = reference_model();
        let len = 120;
        let system = System::new(&model, len).unwrap();
        let profile = equilibrium_profile(&model, 0.3, len).unwrap();
        let s0 = State::new(profile.densities.clone(), 0.0);
        // the drift of a fixed point is the integrated floating-point
        // residual of the rhs, about T * 1e-12 here; abs_tol is set so the
        // componentwise contract is meaningful
        let cfg = IntegratorConfig {
            horizon: 50.0,
            abs_tol: 1e-10,
            ..Default::default()
        };
        let traj = integrate(&system, s0, &cfg, &no_diag()).unwrap();
        let end = traj.last_state();
        for j in 0..len {
            assert!(
                (end.c[j] - profile.densities[j]).abs() <= 10.0 * cfg.abs_tol,
                "component {} drifted: {} vs {}",
                j + 1,
                end.c[j],
                profile.densities[j]
            );
        }
    }

    #[test]
    fn short_horizon_matches_first_order_growth() {
        let model = reference_model();
        let system = System::new(&model, 30).unwrap();
        let rho0 = 2.0;
        let h = 1e-4;
        let cfg = IntegratorConfig {
            horizon: h,
            h_init: 1e-7,
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            ..Default::default()
        };
        let traj = integrate(&system, monomer_state(rho0, 30), &cfg, &no_diag()).unwrap();
        let a11 = model.coag_rate(1, 1).unwrap();
        let expected = 0.5 * a11 * rho0 * rho0 * h;
        let got = traj.last_state().c[1];
        assert!(
            (got - expected).abs() <= 50.0 * h * h,
            "c_2({h}) = {got}, first order {expected}"
        );
    }

    /// Plain fixed-step fourth-order Runge-Kutta, independent of the
    /// adaptive path.
    fn rk4_reference(system: &System, mut c: Vec<f64>, t_end: f64, steps: usize) -> Vec<f64> {
        let len = c.len();
        let h = t_end / steps as f64;
        let mut k1 = vec![0.0; len];
        let mut k2 = vec![0.0; len];
        let mut k3 = vec![0.0; len];
        let mut k4 = vec![0.0; len];
        let mut tmp = vec![0.0; len];
        for _ in 0..steps {
            system.rhs_into(&c, &mut k1);
            for i in 0..len {
                tmp[i] = c[i] + 0.5 * h * k1[i];
            }
            system.rhs_into(&tmp, &mut k2);
            for i in 0..len {
                tmp[i] = c[i] + 0.5 * h * k2[i];
            }
            system.rhs_into(&tmp, &mut k3);
            for i in 0..len {
                tmp[i] = c[i] + h * k3[i];
            }
            system.rhs_into(&tmp, &mut k4);
            for i in 0..len {
                c[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        c
    }

    #[test]
    fn adaptive_run_agrees_with_fixed_step_reference_and_conserves_mass() {
        let model = reference_model();
        let len = 20;
        let system = System::new(&model, len).unwrap();
        let s0 = monomer_state(2.0, len);
        let cfg = IntegratorConfig {
            horizon: 5.0,
            rel_tol: 1e-10,
            abs_tol: 1e-13,
            snapshot_times: vec![1.0, 2.5],
            ..Default::default()
        };
        let traj = integrate(&system, s0.clone(), &cfg, &no_diag()).unwrap();
        assert!(traj.density_drift() <= 1e-8, "drift {}", traj.density_drift());
        assert!(traj.clamp_within_budget());

        let reference = rk4_reference(&system, s0.c, 5.0, 20_000);
        let end = traj.last_state();
        for (j, (got, want)) in end.c.iter().zip(&reference).enumerate() {
            let scale = want.abs().max(1e-12);
            assert!(
                (got - want).abs() <= 1e-6 * scale,
                "component {}: adaptive {got} vs rk4 {want}",
                j + 1
            );
        }
    }

    #[test]
    fn snapshots_land_exactly_on_requested_times() {
        let model = reference_model();
        let system = System::new(&model, 20).unwrap();
        let times = vec![0.125, 0.5, 1.75, 3.0];
        let cfg = IntegratorConfig {
            horizon: 4.0,
            snapshot_times: times.clone(),
            ..Default::default()
        };
        let traj = integrate(&system, monomer_state(1.0, 20), &cfg, &no_diag()).unwrap();
        let recorded: Vec<f64> = traj.snapshots.iter().map(|s| s.state.t).collect();
        assert_eq!(recorded, vec![0.0, 0.125, 0.5, 1.75, 3.0, 4.0]);
    }

    #[test]
    fn refinement_in_system_size_is_cauchy() {
        // run long enough that the smallest truncation genuinely distorts
        // the state; the distortion must then vanish as L doubles
        let model = reference_model();
        let t_end = 300.0;
        let sizes = [40usize, 80, 160, 320];
        let mut heads: Vec<Vec<f64>> = Vec::new();
        for &len in &sizes {
            let system = System::new(&model, len).unwrap();
            let cfg = IntegratorConfig { horizon: t_end, ..Default::default() };
            let traj = integrate(&system, monomer_state(2.0, len), &cfg, &no_diag()).unwrap();
            heads.push(traj.last_state().c[..30].to_vec());
        }
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        let d01 = dist(&heads[0], &heads[1]);
        let d12 = dist(&heads[1], &heads[2]);
        let d23 = dist(&heads[2], &heads[3]);
        let floor = 1e-10;
        assert!(d01 > 1e-7, "coarsest truncation should be visible, got {d01}");
        assert!(d12 <= (d01 / 10.0).max(floor), "not contracting: {d01} -> {d12}");
        assert!(d23 <= d12.max(floor), "not contracting: {d12} -> {d23}");
        assert!(d23 <= 1e-8, "finest pair still differs by {d23}");
    }

    #[test]
    fn extreme_rates_trigger_the_stiffness_error() {
        let model = CoefficientModel::power_law(2, 1e14, 0.5, 0.0, 0.5).unwrap();
        let system = System::new(&model, 10).unwrap();
        let cfg = IntegratorConfig { horizon: 1.0, ..Default::default() };
        match integrate(&system, monomer_state(1.0, 10), &cfg, &no_diag()) {
            Err(Error::StiffnessFailure { last_state, .. }) => {
                assert_eq!(last_state.len(), 10);
            }
            other => panic!("expected StiffnessFailure, got {other:?}"),
        }
    }

    #[test]
    fn zero_initial_data_stays_zero() {
        let model = reference_model();
        let system = System::new(&model, 15).unwrap();
        let cfg = IntegratorConfig { horizon: 3.0, ..Default::default() };
        let traj = integrate(&system, State::zero(15), &cfg, &no_diag()).unwrap();
        assert!(traj.last_state().c.iter().all(|&v| v == 0.0));
    }
}
