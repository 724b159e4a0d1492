//! `mesh icosphere | simplify | deform`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thor_core::mesh::{deform_sphere, icosphere, qecd_simplify, read_mesh, write_mesh, DeformConfig, DeformStep, Mesh};

use crate::error::{CliError, Result};

pub fn cmd_icosphere(level: u32, out: &Path) -> Result<Mesh<f64>> {
    if level > 7 {
        return Err(CliError::Config(format!("icosphere level {level} is above 7")));
    }
    let m = icosphere::<f64>(level);
    write(&m, out)?;
    Ok(m)
}

pub fn cmd_simplify(input: &Path, target: usize, out: &Path) -> Result<Mesh<f64>> {
    let m = read(input)?;
    let s = qecd_simplify(&m, target)?;
    write(&s, out)?;
    Ok(s)
}

/// Deforms `template` (default: the 1000-vertex sphere) onto `target` and
/// writes the mesh plus `<out>.loss.csv`.
pub fn cmd_deform(
    target: &Path,
    template: Option<&Path>,
    config: &DeformConfig,
    out: &Path,
) -> Result<(Mesh<f64>, PathBuf)> {
    let target = read(target)?;
    let template = match template {
        Some(p) => read(p)?,
        None => qecd_simplify(&icosphere::<f64>(4), 1000)?,
    };
    let r = deform_sphere(&template, &target, config)?;
    write(&r.mesh, out)?;
    let csv = loss_csv_path(out);
    write_history(&csv, &r.history, &r.final_loss)?;
    Ok((r.mesh, csv))
}

pub fn loss_csv_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".loss.csv");
    out.with_file_name(name)
}

fn write_history(path: &Path, history: &[DeformStep], last: &DeformStep) -> Result<()> {
    let mut s = String::from("iteration,total,chamfer,edge,normal,laplacian\n");
    for h in history.iter().chain(std::iter::once(last)) {
        let t = &h.terms;
        let _ = writeln!(s, "{},{},{},{},{},{}", h.iteration, h.total, t.chamfer, t.edge, t.normal, t.laplacian);
    }
    std::fs::write(path, s).map_err(|e| CliError::io(path, e))
}

fn read(path: &Path) -> Result<Mesh<f64>> {
    read_mesh(path).map_err(|e| CliError::io(path, e))
}

fn write(m: &Mesh<f64>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    write_mesh(m, path).map_err(|e| CliError::io(path, e))
}
