//! Relaxation on both sides of the critical density, at desk scale.
//!
//! Integrates two monomer-only initial conditions in a truncated system of
//! 400 cluster sizes: one below the critical density and one above it. The
//! subcritical run relaxes to the equilibrium with its own mass; the
//! supercritical run parks its head near the critical equilibrium while the
//! excess mass drifts into the largest represented clusters.
//!
//! ```sh
//! cargo run --release -p bdk-core --example dichotomy
//! ```

use bdk_core::analysis::{strong_distance, tail_mass, DiagnosticsConfig};
use bdk_core::equilibrium::{
    activity_of_density, critical_density, equilibrium_profile, truncated_activity_of_density,
};
use bdk_core::kinetics::{integrate, IntegratorConfig, State, System};
use bdk_core::CoefficientModel;

fn main() {
    let model = CoefficientModel::power_law(2, 1.0, 0.5, 1.0, 0.5).unwrap();
    let crit = critical_density(&model, 1e-10).unwrap();
    let rho_s = crit.rho_s.expect_finite("rho_s");
    println!("critical activity z_s = {:.6}, critical density rho_s = {:.4}", crit.z_s, rho_s);

    let len = 400;
    let system = System::new(&model, len).unwrap();
    let horizon = 4000.0;

    for rho0 in [2.0, 20.0] {
        let supercritical = rho0 > rho_s;
        let z_ref = if supercritical {
            truncated_activity_of_density(&model, rho0, len, 1e-10).unwrap()
        } else {
            activity_of_density(&model, rho0, 1e-10).unwrap()
        };
        let reference = equilibrium_profile(&model, z_ref, len).unwrap();

        let mut c0 = vec![0.0; len];
        c0[0] = rho0;
        let cfg = IntegratorConfig {
            horizon,
            snapshot_times: vec![1.0, 10.0, 100.0, 1000.0],
            ..Default::default()
        };
        let traj = integrate(
            &system,
            State::new(c0, 0.0),
            &cfg,
            &DiagnosticsConfig::default(),
        )
        .unwrap();

        println!();
        println!(
            "rho0 = {rho0}: {} (target activity {z_ref:.6})",
            if supercritical { "supercritical" } else { "subcritical" },
        );
        println!("  {:>8}  {:>12}  {:>10}  {:>10}", "t", "dist", "c_1", "G_{L/2}");
        for snap in &traj.snapshots {
            let d = strong_distance(&snap.state, &reference).unwrap();
            println!(
                "  {:>8}  {:>12.4e}  {:>10.6}  {:>10.4e}",
                snap.state.t,
                d,
                snap.state.c[0],
                tail_mass(&snap.state, len / 2),
            );
        }
        println!(
            "  mass drift {:.2e}, {} steps",
            traj.density_drift(),
            traj.accepted_steps
        );
    }
}
