//! Snapshot matrices on disk: rows are degrees of freedom, columns are
//! samples. The payload is either little-endian `f64` in column-major order
//! or CSV; a JSON sidecar at `<path>.json` lists samples and grid metadata.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    Binary,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSidecar {
    pub format: SnapshotFormat,
    pub n_dofs: usize,
    pub n_samples: usize,
    pub samples: Vec<Sample>,
    pub grid: Grid,
}

/// Formats a float with 17 significant digits, enough to round-trip exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn f64s_to_le_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f64s_from_le_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::arg("binary payload length is not a multiple of 8"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write_snapshots(path: &Path, columns: &[Field], samples: &[Sample], grid: &Grid, format: SnapshotFormat) -> Result<()> {
    if columns.len() != samples.len() {
        return Err(Error::arg("one snapshot column per sample is required"));
    }
    let n_dofs = grid.n_cells();
    if columns.iter().any(|c| c.len() != n_dofs) {
        return Err(Error::arg("snapshot length does not match the grid"));
    }
    match format {
        SnapshotFormat::Binary => {
            let flat: Vec<f64> = columns.iter().flatten().copied().collect();
            fs::write(path, f64s_to_le_bytes(&flat))?;
        }
        SnapshotFormat::Csv => {
            let mut out = std::io::BufWriter::new(fs::File::create(path)?);
            for r in 0..n_dofs {
                let row: Vec<String> = columns.iter().map(|c| fmt_f64(c[r])).collect();
                writeln!(out, "{}", row.join(","))?;
            }
            out.flush()?;
        }
    }
    let sidecar = SnapshotSidecar {
        format,
        n_dofs,
        n_samples: columns.len(),
        samples: samples.to_vec(),
        grid: *grid,
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_snapshots(path: &Path) -> Result<(Vec<Field>, SnapshotSidecar)> {
    let sidecar: SnapshotSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let (n, m) = (sidecar.n_dofs, sidecar.n_samples);
    if sidecar.samples.len() != m || sidecar.grid.n_cells() != n {
        return Err(Error::arg("snapshot sidecar is inconsistent"));
    }
    let columns = match sidecar.format {
        SnapshotFormat::Binary => {
            let flat = f64s_from_le_bytes(&fs::read(path)?)?;
            if flat.len() != n * m {
                return Err(Error::arg(format!("expected {} values, found {}", n * m, flat.len())));
            }
            flat.chunks_exact(n.max(1)).map(<[f64]>::to_vec).collect()
        }
        SnapshotFormat::Csv => {
            let text = fs::read_to_string(path)?;
            let mut cols = vec![Vec::with_capacity(n); m];
            let mut rows = 0;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let vals: Vec<&str> = line.split(',').collect();
                if vals.len() != m {
                    return Err(Error::arg(format!("row {rows} has {} columns, expected {m}", vals.len())));
                }
                for (c, v) in vals.iter().enumerate() {
                    let x: f64 = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::arg(format!("unparsable value {v:?} in row {rows}")))?;
                    cols[c].push(x);
                }
                rows += 1;
            }
            if rows != n {
                return Err(Error::arg(format!("expected {n} rows, found {rows}")));
            }
            cols
        }
    };
    if columns.iter().flatten().any(|v: &f64| !v.is_finite()) {
        return Err(Error::arg("snapshot contains non-finite values"));
    }
    Ok((columns, sidecar))
}
