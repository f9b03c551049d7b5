//! Text file formats. Floats are written with Rust's shortest round-trip
//! representation, so reading a file back reproduces the values exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::diagnostics::DiagnosticsRecord;
use crate::ensemble::EnsembleStats;
use crate::error::{Result, SimError};
use crate::grid::Field;

pub const TRAJECTORY_HEADER: [&str; 9] = [
    "t",
    "mass",
    "energy_J",
    "entropy",
    "min_u",
    "max_u",
    "sup_dev",
    "cum_dissipation",
    "cum_d2",
];

pub const ENSEMBLE_HEADER: [&str; 7] = [
    "t",
    "J_mean",
    "J_q05",
    "J_q95",
    "supdev_mean",
    "supdev_max",
    "fraction_decayed",
];

fn fmt(x: f64) -> String {
    format!("{x:?}")
}

fn csv_err(path: &Path, e: csv::Error) -> SimError {
    SimError::io(path, e)
}

pub(crate) fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row.into_iter().map(fmt)).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let found = r.headers().map_err(|e| csv_err(path, e))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(SimError::io(
            path,
            format!("unexpected header '{}'", found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            rec.iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| SimError::io(path, e)))
                .collect()
        })
        .collect()
}

pub fn write_trajectory_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    write_rows(
        path,
        &TRAJECTORY_HEADER,
        records.iter().map(|r| {
            vec![
                r.t,
                r.mass,
                r.energy_j,
                r.entropy,
                r.min_u,
                r.max_u,
                r.sup_dev,
                r.cum_dissipation,
                r.cum_d2,
            ]
        }),
    )
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    Ok(read_rows(path, &TRAJECTORY_HEADER)?
        .into_iter()
        .map(|v| DiagnosticsRecord {
            t: v[0],
            mass: v[1],
            energy_j: v[2],
            entropy: v[3],
            min_u: v[4],
            max_u: v[5],
            sup_dev: v[6],
            cum_dissipation: v[7],
            cum_d2: v[8],
        })
        .collect())
}

pub fn write_ensemble_csv(path: &Path, stats: &EnsembleStats) -> Result<()> {
    write_rows(
        path,
        &ENSEMBLE_HEADER,
        (0..stats.times.len()).map(|i| {
            vec![
                stats.times[i],
                stats.j_mean[i],
                stats.j_q05[i],
                stats.j_q95[i],
                stats.supdev_mean[i],
                stats.supdev_max[i],
                stats.fraction_decayed[i],
            ]
        }),
    )
}

pub fn read_ensemble_csv(path: &Path) -> Result<EnsembleStats> {
    let rows = read_rows(path, &ENSEMBLE_HEADER)?;
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
    Ok(EnsembleStats {
        times: col(0),
        j_mean: col(1),
        j_q05: col(2),
        j_q95: col(3),
        supdev_mean: col(4),
        supdev_max: col(5),
        fraction_decayed: col(6),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub length: f64,
    pub t: f64,
    pub epsilon: f64,
    pub values: Vec<f64>,
}

/// Writes `# L=`, `# n=`, `# t=`, `# epsilon=` header lines, then one
/// `x,u` row per node.
pub fn write_snapshot(path: &Path, u: &Field, t: f64, epsilon: f64) -> Result<()> {
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let g = u.grid();
    let mut out = format!(
        "# L={}\n# n={}\n# t={}\n# epsilon={}\n",
        fmt(g.length()),
        g.points(),
        fmt(t),
        fmt(epsilon)
    );
    for (j, v) in u.values().iter().enumerate() {
        out.push_str(&format!("{},{}\n", fmt(g.coord(j)), fmt(*v)));
    }
    w.write_all(out.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| SimError::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let file = File::open(path).map_err(|e| SimError::io(path, e))?;
    let bad = |msg: String| SimError::io(path, msg);
    let (mut length, mut n, mut t, mut epsilon) = (None, None, None, None);
    let mut values = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| SimError::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.split_once('=') {
                let v = v.trim();
                let num = || v.parse::<f64>().map_err(|_| bad(format!("bad header value '{v}'")));
                match k.trim() {
                    "L" => length = Some(num()?),
                    "n" => n = Some(v.parse::<usize>().map_err(|_| bad(format!("bad n '{v}'")))?),
                    "t" => t = Some(num()?),
                    "epsilon" => epsilon = Some(num()?),
                    _ => {}
                }
            }
            continue;
        }
        let (_, u) = line.split_once(',').ok_or_else(|| bad(format!("expected 'x,u', got '{line}'")))?;
        values.push(u.trim().parse::<f64>().map_err(|_| bad(format!("bad value '{u}'")))?);
    }
    let length = length.ok_or_else(|| bad("missing '# L=' header".into()))?;
    let n = n.ok_or_else(|| bad("missing '# n=' header".into()))?;
    if n != values.len() {
        return Err(bad(format!("header says n = {n}, found {} rows", values.len())));
    }
    Ok(Snapshot {
        length,
        t: t.unwrap_or(0.0),
        epsilon: epsilon.unwrap_or(f64::NAN),
        values,
    })
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))
}

/// `dir/path_XXXX.csv`
pub fn path_csv_name(dir: &Path, replica: usize) -> PathBuf {
    dir.join(format!("path_{replica:04}.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;

    fn record(t: f64) -> DiagnosticsRecord {
        DiagnosticsRecord {
            t,
            mass: 1.0 / 3.0,
            energy_j: 1e-300,
            entropy: -0.1,
            min_u: 0.2,
            max_u: 1.7,
            sup_dev: 0.5,
            cum_dissipation: 1e-7,
            cum_d2: 12.25,
        }
    }

    #[test]
    fn trajectory_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.csv");
        let recs = vec![record(0.0), record(0.1 + 0.2)];
        write_trajectory_csv(&p, &recs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,mass,energy_J,entropy,min_u,max_u,sup_dev,cum_dissipation,cum_d2\n"));
        assert_eq!(read_trajectory_csv(&p).unwrap(), recs);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(read_trajectory_csv(&p).is_err());
        assert!(read_trajectory_csv(&dir.path().join("missing.csv")).is_err());
    }

    #[test]
    fn snapshot_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("snap.csv");
        let g = TorusGrid::new(2.0, 8).unwrap();
        let u = Field::from_fn(g, |x| 1.0 + x.sin() / 3.0);
        write_snapshot(&p, &u, 0.25, 0.01).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# L=2.0\n# n=8\n# t=0.25\n# epsilon=0.01\n0.0,"));
        let s = read_snapshot(&p).unwrap();
        assert_eq!(s.values, u.values());
        assert_eq!((s.length, s.t, s.epsilon), (2.0, 0.25, 0.01));
        std::fs::write(&p, "# L=1\n# n=3\n0,1\n").unwrap();
        assert!(read_snapshot(&p).is_err());
    }

    #[test]
    fn ensemble_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ensemble.csv");
        let s = EnsembleStats {
            times: vec![0.0, 1.0],
            j_mean: vec![2.0, 1.0],
            j_q05: vec![1.5, 0.5],
            j_q95: vec![2.5, 1.5],
            supdev_mean: vec![0.3, 0.1],
            supdev_max: vec![0.4, 0.2],
            fraction_decayed: vec![0.0, 1.0],
        };
        write_ensemble_csv(&p, &s).unwrap();
        assert_eq!(read_ensemble_csv(&p).unwrap(), s);
    }
}
