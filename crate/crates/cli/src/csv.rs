//! Trajectory tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fxtes::experiments::probe_point;
use fxtes::plant::Measure;
use fxtes::sim::Trajectory;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("cannot write {path}: {source}")]
pub struct WriteError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), WriteError> {
    std::fs::write(path, contents).map_err(|source| WriteError {
        path: path.to_path_buf(),
        source,
    })
}

/// Nine significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn header(n: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=n).map(|i| format!("xi2_{i}")));
    for i in 1..=n {
        cols.extend((1..=n).map(|j| format!("xi1_{i}{j}")));
    }
    cols.extend((1..=n).map(|i| format!("z{i}")));
    cols.push("phi".into());
    cols.push("dist_to_opt".into());
    cols.join(",")
}

/// `t, x, ξ₂, ξ₁ (row-major), z, φ(z), ‖x − z*‖`, one row per sample.
pub fn trajectory_csv<M: Measure + ?Sized>(
    traj: &Trajectory,
    map: &M,
    a: f64,
    z_star: &[f64],
) -> String {
    let layout = traj.layout;
    let n = layout.n().expect("controller trajectory");
    let (xs, xi1, xi2) = (
        layout.x().unwrap(),
        layout.xi1().unwrap(),
        layout.xi2().unwrap(),
    );
    let dist = traj.distances(z_star);
    let mut out = header(n);
    out.push('\n');
    for (i, (t, s)) in traj.times.iter().zip(traj.states()).enumerate() {
        let z = probe_point(&layout, s, a);
        let row = std::iter::once(*t)
            .chain(s[xs.clone()].iter().copied())
            .chain(s[xi2.clone()].iter().copied())
            .chain(s[xi1.clone()].iter().copied())
            .chain(z.iter().copied())
            .chain([map.measure(&z), dist[i]]);
        for (c, v) in row.enumerate() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", num(v));
        }
        out.push('\n');
    }
    out
}

pub fn write_trajectory_csv<M: Measure + ?Sized>(
    traj: &Trajectory,
    map: &M,
    a: f64,
    z_star: &[f64],
    path: &Path,
) -> Result<(), WriteError> {
    write_file(path, &trajectory_csv(traj, map, a, z_star))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fxtes::dynamics::ClosedLoopState;
    use fxtes::plant::{reference_quadratic, Analytic};
    use fxtes::sim::Layout;
    use nalgebra::DMatrix;

    #[test]
    fn one_sample_two_inputs() {
        let map = reference_quadratic();
        let mut tr = Trajectory::new(Layout::ClosedLoop { n: 2 });
        tr.push(
            0.0,
            &ClosedLoopState::initial(&[-5.0, -5.0], DMatrix::identity(2, 2)).to_flat(),
        );
        let z = map.minimizer().unwrap();
        let text = trajectory_csv(&tr, &map, 0.1, z.as_slice());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 13);
        assert_eq!(lines[1].split(',').count(), 13);
        assert!(
            lines[0].starts_with("t,x1,x2,xi2_1,xi2_2,xi1_11,xi1_12,xi1_21,xi1_22,z1,z2,phi,dist")
        );
        assert!(!text.contains('\r'));
        let cols: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(&cols[9..11], &[-4.9, -4.9]);
        assert!((cols[11] - map.measure(&[-4.9, -4.9])).abs() < 1e-6);
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(num(1.0 / 3.0), "3.33333333e-1");
        assert_eq!(num(0.0), "0.00000000e0");
    }
}
