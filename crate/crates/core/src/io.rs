//! File formats: trajectory and diagnostics CSV, and a binary state format
//! for exact resumption.
//!
//! CSV numbers use the shortest decimal representation that round-trips the
//! underlying `f64`, so identical runs produce bit-identical files.
//!
//! The state format is a 16-byte header — magic `BDK1`, four reserved zero
//! bytes, the component count as a little-endian `u64` — followed by the
//! concentrations `c_1..c_L` as little-endian `f64`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::analysis::DiagnosticsConfig;
use crate::error::{Error, Result};
use crate::kinetics::Trajectory;

const STATE_MAGIC: &[u8; 4] = b"BDK1";

/// Shortest round-trip decimal for a float; plain notation in the ordinary
/// magnitude range, exponent notation outside it.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Write `t, rho, c_1..c_J` per snapshot.
pub fn write_trajectory_csv<W: Write>(out: &mut W, traj: &Trajectory, head: usize) -> Result<()> {
    let head = head.min(traj.len);
    let mut line = String::from("t,rho");
    for j in 1..=head {
        line.push_str(&format!(",c_{j}"));
    }
    writeln!(out, "{line}")?;
    for snap in &traj.snapshots {
        line.clear();
        line.push_str(&format_f64(snap.state.t));
        line.push(',');
        line.push_str(&format_f64(snap.diagnostics.rho));
        for j in 0..head {
            line.push(',');
            line.push_str(&format_f64(snap.state.c[j]));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Write `t, rho, moment_<mu>.., strong_dist, c1, G_<i>..` per snapshot,
/// with the column set taken from the diagnostics configuration.
pub fn write_diagnostics_csv<W: Write>(
    out: &mut W,
    traj: &Trajectory,
    cfg: &DiagnosticsConfig,
) -> Result<()> {
    let mut line = String::from("t,rho");
    for mu in &cfg.moment_exponents {
        line.push_str(&format!(",moment_{}", format_exponent(*mu)));
    }
    line.push_str(",strong_dist,c1");
    for i in &cfg.tail_indices {
        line.push_str(&format!(",G_{i}"));
    }
    writeln!(out, "{line}")?;

    for snap in &traj.snapshots {
        let d = &snap.diagnostics;
        line.clear();
        line.push_str(&format_f64(d.t));
        line.push(',');
        line.push_str(&format_f64(d.rho));
        for (_, value) in &d.moments {
            line.push(',');
            line.push_str(&format_f64(*value));
        }
        line.push(',');
        match d.strong_distance {
            Some(v) => line.push_str(&format_f64(v)),
            None => line.push_str("nan"),
        }
        line.push(',');
        line.push_str(&format_f64(snap.state.c.first().copied().unwrap_or(0.0)));
        for (_, g) in &d.tail_masses {
            line.push(',');
            line.push_str(&format_f64(*g));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn format_exponent(mu: f64) -> String {
    if mu == mu.trunc() && mu.abs() < 1e15 {
        format!("{}", mu as i64)
    } else {
        format!("{mu}")
    }
}

/// Write one state vector in the binary resumption format.
pub fn write_state_binary(path: &Path, c: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(STATE_MAGIC)?;
    out.write_all(&[0u8; 4])?;
    out.write_all(&(c.len() as u64).to_le_bytes())?;
    for v in c {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Read a state vector written by [`write_state_binary`].
pub fn read_state_binary(path: &Path) -> Result<Vec<f64>> {
    let mut file = File::open(path)?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|_| Error::MalformedStateFile("file shorter than its header".into()))?;
    if &header[..4] != STATE_MAGIC {
        return Err(Error::MalformedStateFile("bad magic".into()));
    }
    let len = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let len = usize::try_from(len)
        .map_err(|_| Error::MalformedStateFile("state length overflows usize".into()))?;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)?;
    if raw.len() != len * 8 {
        return Err(Error::MalformedStateFile(format!(
            "expected {} payload bytes for {len} components, found {}",
            len * 8,
            raw.len()
        )));
    }
    Ok(raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::DiagnosticsConfig;
    use crate::coefficients::CoefficientModel;
    use crate::kinetics::{integrate, IntegratorConfig, State, System};

    #[test]
    fn format_round_trips() {
        for v in [0.0, 1.0, -2.5, 1e-300, 3.7e222, 0.1, 11.941043116529912] {
            let s = format_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn state_binary_round_trip() {
        let dir = std::env::temp_dir().join("bdk_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.bin");
        let c: Vec<f64> = (0..257).map(|i| (i as f64).sin() * 1e-30).collect();
        write_state_binary(&path, &c).unwrap();
        let back = read_state_binary(&path).unwrap();
        assert_eq!(c, back);

        std::fs::write(&path, b"BAD!").unwrap();
        assert!(read_state_binary(&path).is_err());
    }

    #[test]
    fn csv_outputs_are_deterministic() {
        let model = CoefficientModel::power_law(2, 1.0, 0.5, 1.0, 0.5).unwrap();
        let system = System::new(&model, 30).unwrap();
        let mut c0 = vec![0.0; 30];
        c0[0] = 2.0;
        let cfg = IntegratorConfig {
            horizon: 2.0,
            snapshot_times: vec![0.5, 1.0],
            ..Default::default()
        };
        let diag = DiagnosticsConfig {
            tail_indices: vec![2, 10],
            moment_exponents: vec![2.0],
            head_len: 3,
            reference: None,
        };
        let run = || {
            let traj = integrate(&system, State::new(c0.clone(), 0.0), &cfg, &diag).unwrap();
            let mut t_csv = Vec::new();
            let mut d_csv = Vec::new();
            write_trajectory_csv(&mut t_csv, &traj, 5).unwrap();
            write_diagnostics_csv(&mut d_csv, &traj, &diag).unwrap();
            (t_csv, d_csv)
        };
        let (t1, d1) = run();
        let (t2, d2) = run();
        assert_eq!(t1, t2);
        assert_eq!(d1, d2);
        let text = String::from_utf8(d1).unwrap();
        assert!(text.starts_with("t,rho,moment_2,strong_dist,c1,G_2,G_10\n"), "{text}");
    }
}
