//! End-to-end tests of the `bdk` binary: exit codes, artifact layout,
//! reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};

static DIR_COUNTER: AtomicUsize = AtomicUsize::new(0);

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "bdk-cli-test-{}-{}-{}",
        std::process::id(),
        tag,
        DIR_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn bdk() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bdk"))
}

fn run_bdk(args: &[&str], out_dir: &Path) -> Output {
    bdk()
        .args(args)
        .env("BDK_OUT_DIR", out_dir)
        .output()
        .expect("bdk binary runs")
}

const SMALL_RUN: &str = "\
scenario = smoke
model.family = power_law
model.C1 = 1.0
model.alpha = 0.5
model.C2 = 1.0
model.delta = 0.5
model.N = 2
truncation.L = 50
initial.kind = monomer
initial.rho0 = 2.0
integrator.T = 2.0
integrator.snapshot_times = 0.5,1.0,2.0
diagnostics.g_indices = 5,20
diagnostics.head = 5
validation.j_max = 300
";

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_artifacts_and_reproduces_bitwise() {
    let dir = temp_dir("run");
    let cfg = write_config(&dir, SMALL_RUN);

    let out_a = dir.join("a");
    let output = run_bdk(&["run", cfg.to_str().unwrap()], &out_a);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let run_dir = out_a.join("smoke");
    for file in ["summary.txt", "summary.kv", "trajectory.csv", "diagnostics.csv"] {
        assert!(run_dir.join(file).exists(), "missing {file}");
    }
    let kv = std::fs::read_to_string(run_dir.join("summary.kv")).unwrap();
    for key in [
        "z_s = ",
        "rho_s = ",
        "rho_s_divergent = ",
        "rho_s_unweighted = ",
        "rho0 = 2",
        "regime = subcritical",
        "final_strong_dist = ",
        "final_c1 = ",
        "run_valid = true",
    ] {
        assert!(kv.contains(key), "summary.kv lacks `{key}`:\n{kv}");
    }

    // identical config, fresh output root: byte-identical CSVs
    let out_b = dir.join("b");
    let output = run_bdk(&["run", cfg.to_str().unwrap()], &out_b);
    assert!(output.status.success());
    for file in ["trajectory.csv", "diagnostics.csv", "summary.kv"] {
        let a = std::fs::read(run_dir.join(file)).unwrap();
        let b = std::fs::read(out_b.join("smoke").join(file)).unwrap();
        assert_eq!(a, b, "{file} not reproducible");
    }
}

#[test]
fn cutoff_below_two_exits_with_validation_code() {
    let dir = temp_dir("n1");
    let cfg = write_config(&dir, &SMALL_RUN.replace("model.N = 2", "model.N = 1"));
    let output = run_bdk(&["run", cfg.to_str().unwrap()], &dir);
    assert_eq!(output.status.code(), Some(2), "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn schema_violations_exit_with_located_message() {
    let dir = temp_dir("schema");
    let cfg = write_config(&dir, &format!("{SMALL_RUN}nonsense.key = 1\n"));
    let output = run_bdk(&["run", cfg.to_str().unwrap()], &dir);
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("line 16"), "{err}");
    assert!(err.contains("nonsense.key"), "{err}");
}

#[test]
fn zero_density_run_stays_zero() {
    let dir = temp_dir("zero");
    let cfg = write_config(&dir, &SMALL_RUN.replace("initial.rho0 = 2.0", "initial.rho0 = 0.0"));
    let output = run_bdk(&["run", cfg.to_str().unwrap()], &dir);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let csv = std::fs::read_to_string(dir.join("smoke/trajectory.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let rho = line.split(',').nth(1).unwrap();
        assert_eq!(rho, "0", "nonzero density in {line}");
    }
}

#[test]
fn preset_emits_parseable_configs_and_rejects_unknown() {
    let dir = temp_dir("preset");
    for name in ["subcritical", "critical", "supercritical", "refinement"] {
        let path = dir.join(format!("{name}.cfg"));
        let output = bdk()
            .args(["preset", name, "--emit", path.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(output.status.success());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("model.family = power_law"));
        assert!(text.contains(&format!("scenario = {name}")));
    }

    let output = bdk().args(["preset", "bogus"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("subcritical") && err.contains("refinement"), "{err}");
}

#[test]
fn preset_supercritical_matches_scenario() {
    let output = bdk().args(["preset", "supercritical"]).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("initial.rho0 = 20"), "{text}");
    assert!(text.contains("truncation.sweep = 250,500,1000,2000"), "{text}");
}

#[test]
fn validate_passes_reference_family() {
    let dir = temp_dir("validate");
    let cfg = write_config(&dir, SMALL_RUN);
    let output = bdk()
        .args(["validate", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("detailed-balance") && text.contains("PASS"), "{text}");

    let output = bdk()
        .args(["validate", cfg.to_str().unwrap(), "--kv"])
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("all_passed = true"), "{text}");
}

#[test]
fn validate_fails_on_irregular_table() {
    let dir = temp_dir("validate-bad");
    // a_jk = exp(-j-k): the kernel ratio limit is e^m, not 1
    let mut table = String::from("table.N = 2\n");
    let k_max = 400;
    table.push_str(&format!(
        "table.logq = {}\n",
        (0..k_max + 2).map(|_| "0").collect::<Vec<_>>().join(",")
    ));
    for j in 1..=2 {
        let row: Vec<String> = (1..=k_max)
            .map(|k| format!("{:e}", (-(j as f64) - k as f64).exp()))
            .collect();
        table.push_str(&format!("table.a.{j} = {}\n", row.join(",")));
    }
    std::fs::write(dir.join("table.cfg"), table).unwrap();

    let cfg = write_config(
        &dir,
        "model.family = custom\nmodel.table = table.cfg\ntruncation.L = 50\n\
         initial.kind = monomer\ninitial.rho0 = 1.0\nvalidation.j_max = 300\n",
    );
    let output = bdk()
        .args(["validate", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("kernel-ratio-limit") && text.contains("FAIL"), "{text}");
}

#[test]
fn equilibrium_subcommand_inverts_density() {
    let dir = temp_dir("equilibrium");
    let cfg = write_config(&dir, SMALL_RUN);
    let profile_csv = dir.join("profile.csv");
    let output = bdk()
        .args([
            "equilibrium",
            cfg.to_str().unwrap(),
            "--rho",
            "2.0",
            "--out",
            profile_csv.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let text = String::from_utf8_lossy(&output.stdout);
    let z_line = text.lines().find(|l| l.starts_with("z = ")).unwrap();
    let z: f64 = z_line.trim_start_matches("z = ").parse().unwrap();
    assert!((z - 0.29953879482).abs() < 1e-6, "z = {z}");
    assert!(profile_csv.exists());

    // densities above the critical density have no equilibrium
    let output = bdk()
        .args(["equilibrium", cfg.to_str().unwrap(), "--rho", "20.0"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("no equilibrium"), "{err}");
}

#[test]
fn binary_states_resume_a_run() {
    let dir = temp_dir("resume");
    let cfg_text = format!("{SMALL_RUN}output.binary_states = true\n");
    let cfg = write_config(&dir, &cfg_text);
    let output = run_bdk(&["run", cfg.to_str().unwrap()], &dir);
    assert!(output.status.success());
    let states: Vec<_> = std::fs::read_dir(dir.join("smoke/states"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(states.len(), 4); // t = 0, 0.5, 1.0, 2.0

    let last = dir.join("smoke/states/state_0003.bin");
    let resume_cfg = dir.join("resume.cfg");
    std::fs::write(
        &resume_cfg,
        format!(
            "scenario = resumed\nmodel.family = power_law\nmodel.C1 = 1.0\n\
             model.alpha = 0.5\nmodel.C2 = 1.0\nmodel.delta = 0.5\nmodel.N = 2\n\
             truncation.L = 50\ninitial.kind = file\ninitial.path = {}\n\
             integrator.T = 1.0\nvalidation.j_max = 300\n",
            last.display()
        ),
    )
    .unwrap();
    let output = run_bdk(&["run", resume_cfg.to_str().unwrap()], &dir);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let kv = std::fs::read_to_string(dir.join("resumed/summary.kv")).unwrap();
    let rho_line = kv.lines().find(|l| l.starts_with("rho0 = ")).unwrap();
    let rho: f64 = rho_line.trim_start_matches("rho0 = ").parse().unwrap();
    assert!((rho - 2.0).abs() < 1e-8, "resumed density {rho}");
}

#[test]
fn supercritical_equilibrium_ic_is_rejected() {
    let dir = temp_dir("super-eq");
    let cfg = write_config(
        &dir,
        &SMALL_RUN
            .replace("initial.kind = monomer", "initial.kind = equilibrium")
            .replace("initial.rho0 = 2.0", "initial.rho = 20.0"),
    );
    let output = run_bdk(&["run", cfg.to_str().unwrap()], &dir);
    assert_eq!(output.status.code(), Some(2));
}
