//! Metric and field files. Floats carry 17 significant digits so every value
//! parses back to the same `f64`.
//!
//! - `metrics.csv`: `z_<param>…, component, E, E_R, eta, tau_HF, tau_MOR`
//!   (one row per test sample and component; `eta` empty when `E = 0`)
//! - `average_error.csv`: `n, n_psi, component, E_a`
//! - `projection.csv`: `n, component, E_proj_G, E_proj_U, S_PROJ_E_a`
//! - `summary.json`: the benchmark summary
//! - `online.csv`: `z_<param>…, component, E_R, extrapolated, tau_MOR, field_file`
//! - field dumps: one CSV line per grid row (`y` index), `x` along the line;
//!   1D fields have one value per line. The binary form is the same values
//!   row-major as little-endian `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::grid::Grid;
use crate::hf::io::fmt_f64;
use crate::hf::TestCase;
use crate::pipeline::{BenchmarkReport, OnlineResult};

pub const METRICS: &str = "metrics.csv";
pub const AVERAGE_ERROR: &str = "average_error.csv";
pub const PROJECTION: &str = "projection.csv";
pub const SUMMARY: &str = "summary.json";
pub const ONLINE: &str = "online.csv";

fn z_headers(test: &TestCase) -> Vec<String> {
    test.param_names.iter().map(|n| format!("z_{n}")).collect()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path).map_err(std::io::Error::from)?)
}

fn finish(mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn write_record<I, S>(w: &mut csv::Writer<fs::File>, rec: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(rec).map_err(std::io::Error::from)?;
    Ok(())
}

/// Writes the four benchmark files into `dir`; returns their paths.
pub fn write_benchmark(dir: &Path, test: &TestCase, report: &BenchmarkReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let zh = z_headers(test);

    let metrics = dir.join(METRICS);
    let mut w = writer(&metrics)?;
    write_record(&mut w, zh.iter().map(String::as_str).chain(["component", "E", "E_R", "eta", "tau_HF", "tau_MOR"]))?;
    for r in &report.rows {
        let mut rec: Vec<String> = r.z.iter().map(|v| fmt_f64(*v)).collect();
        rec.push(r.component.to_string());
        rec.push(fmt_f64(r.e));
        rec.push(fmt_f64(r.e_r));
        rec.push(r.eta.map(fmt_f64).unwrap_or_default());
        rec.push(fmt_f64(r.tau_hf));
        rec.push(fmt_f64(r.tau_mor));
        write_record(&mut w, &rec)?;
    }
    finish(w)?;

    let average = dir.join(AVERAGE_ERROR);
    let mut w = writer(&average)?;
    write_record(&mut w, ["n", "n_psi", "component", "E_a"])?;
    for r in &report.average_errors {
        write_record(&mut w, [r.n.to_string(), r.n_psi.to_string(), r.component.to_string(), fmt_f64(r.e_a)])?;
    }
    finish(w)?;

    let projection = dir.join(PROJECTION);
    let mut w = writer(&projection)?;
    write_record(&mut w, ["n", "component", "E_proj_G", "E_proj_U", "S_PROJ_E_a"])?;
    for r in &report.projection {
        write_record(
            &mut w,
            [
                r.n.to_string(),
                r.component.to_string(),
                fmt_f64(r.e_proj_transformed),
                fmt_f64(r.e_proj_untransformed),
                fmt_f64(r.s_proj_e_a),
            ],
        )?;
    }
    finish(w)?;

    let summary = dir.join(SUMMARY);
    fs::write(&summary, serde_json::to_vec_pretty(&report.summary)?)?;
    Ok(vec![metrics, average, projection, summary])
}

/// Grid-shaped CSV of one field.
pub fn write_field(path: &Path, grid: &Grid, field: &[f64]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path).map_err(std::io::Error::from)?;
    match grid {
        Grid::D1(_) => {
            for v in field {
                write_record(&mut w, [fmt_f64(*v)])?;
            }
        }
        Grid::D2(g) => {
            for j in 0..g.ny() {
                write_record(&mut w, (0..g.nx()).map(|i| fmt_f64(field[g.index(i, j)])))?;
            }
        }
    }
    finish(w)
}

/// Row-major little-endian dump of one field.
pub fn write_field_binary(path: &Path, field: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = field.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldDump {
    None,
    Csv,
    Binary,
}

/// Writes `online.csv` and one field file per query and component named
/// `field_<k>_c<c>.{csv,f64}`. Results without fields get no field file.
pub fn write_online(dir: &Path, test: &TestCase, results: &[OnlineResult], dump: FieldDump) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(ONLINE);
    let mut w = writer(&path)?;
    let zh = z_headers(test);
    write_record(&mut w, zh.iter().map(String::as_str).chain(["component", "E_R", "extrapolated", "tau_MOR", "field_file"]))?;
    for (k, r) in results.iter().enumerate() {
        for (c, e) in r.predicted_error.iter().enumerate() {
            let file = match (dump, r.fields.get(c)) {
                (FieldDump::Csv, Some(f)) => {
                    let name = format!("field_{k}_c{c}.csv");
                    write_field(&dir.join(&name), &test.grid, f)?;
                    name
                }
                (FieldDump::Binary, Some(f)) => {
                    let name = format!("field_{k}_c{c}.f64");
                    write_field_binary(&dir.join(&name), f)?;
                    name
                }
                _ => String::new(),
            };
            let mut rec: Vec<String> = r.z.iter().map(|v| fmt_f64(*v)).collect();
            rec.extend([c.to_string(), fmt_f64(*e), r.extrapolated.to_string(), fmt_f64(r.timings.total), file]);
            write_record(&mut w, &rec)?;
        }
    }
    finish(w)?;
    Ok(path)
}

/// Header and rows of a CSV written by this module.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(std::io::Error::from)?;
    let header = r.headers().map_err(std::io::Error::from)?.iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(str::to_owned).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(std::io::Error::from)?;
    Ok((header, rows))
}
