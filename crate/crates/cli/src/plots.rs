//! `plots`: columnar data files from a finished run, ready for gnuplot or
//! any tool that reads whitespace-separated columns.

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use tori_core::FourierSeries;

use crate::run::{ConvergenceRow, CONVERGENCE_FILE, K_DUMP};
use crate::{create_file, io_context, CliError};

pub const PLOT_DIR: &str = "plots";
pub const CONVERGENCE_PLOT: &str = "convergence.dat";

pub fn surface_file(j: usize) -> String {
    format!("surface_K{j}.dat")
}

fn require(dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::MissingArtifact(p.display().to_string()))
    }
}

pub fn read_convergence(path: &Path) -> Result<Vec<ConvergenceRow>, CliError> {
    let bad = |e: csv::Error| CliError::MissingArtifact(format!("{} is unreadable: {e}", path.display()));
    csv::Reader::from_path(path)
        .map_err(bad)?
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(bad)
}

/// Write `plots/convergence.dat` (step, |E_K|, |E_W|, |Δλ|) and one surface
/// file `plots/surface_K{j}.dat` (θ₁, θ₂, K_j) per component, sampled on the
/// run's grid. Returns the written paths.
pub fn emit_plots(run_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let conv = require(run_dir, CONVERGENCE_FILE)?;
    let dump = require(run_dir, K_DUMP)?;
    let rows = read_convergence(&conv)?;
    let file = std::fs::File::open(&dump).map_err(io_context(format!("cannot open {}", dump.display())))?;
    let k = FourierSeries::read_coeffs(BufReader::new(file))
        .map_err(|e| CliError::MissingArtifact(format!("{} is unreadable: {e}", dump.display())))?;

    let out = run_dir.join(PLOT_DIR);
    std::fs::create_dir_all(&out).map_err(io_context(format!("cannot create {}", out.display())))?;
    let mut written = Vec::new();

    let path = out.join(CONVERGENCE_PLOT);
    let mut f = create_file(&path)?;
    let mut text = String::from("# step |E_K| |E_W| |dlambda|\n");
    for r in &rows {
        text += &format!("{} {:.16e} {:.16e} {:.16e}\n", r.step, r.e_k, r.e_w, r.dlambda);
    }
    f.write_all(text.as_bytes())
        .map_err(io_context(format!("cannot write {}", path.display())))?;
    written.push(path);

    let grid = k.grid();
    let points: Vec<Vec<f64>> = (0..grid.len()).map(|p| grid.angles(p)).collect();
    for j in 0..k.rows() {
        let path = out.join(surface_file(j + 1));
        let mut text = format!("# theta1 theta2 K{}\n", j + 1);
        for (p, theta) in points.iter().enumerate() {
            let coords: Vec<String> = theta.iter().map(|t| format!("{t:.16e}")).collect();
            text += &format!("{} {:.16e}\n", coords.join(" "), k.component_samples(j, 0)[p]);
        }
        create_file(&path)?
            .write_all(text.as_bytes())
            .map_err(io_context(format!("cannot write {}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}
