//! The `ablate` command: stage count and graph input variants trained with
//! a shared seed and step budget.

use std::fmt::Write as _;
use std::path::Path;

use thor_core::data::{InputModality, Templates};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::eval::EvalSummary;
use crate::train::train;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationRow {
    pub id: usize,
    pub stages: usize,
    pub input: InputModality,
    pub feature_size: usize,
}

const fn row(id: usize, stages: usize, input: InputModality, feature_size: usize) -> AblationRow {
    AblationRow {
        id,
        stages,
        input,
        feature_size,
    }
}

pub const ABLATION_ROWS: [AblationRow; 7] = [
    row(1, 1, InputModality::Heatmap, 2048),
    row(2, 2, InputModality::Heatmap, 2048),
    row(3, 3, InputModality::Pose3d, 2048),
    row(4, 3, InputModality::Pose2d, 2048),
    row(5, 3, InputModality::Heatmap, 1024),
    row(6, 3, InputModality::Heatmap, 4096),
    row(7, 3, InputModality::Heatmap, 2048),
];

#[derive(Debug, Clone)]
pub struct RowResult {
    pub row: AblationRow,
    pub seed: u64,
    pub steps: usize,
    pub outcome: std::result::Result<EvalSummary, String>,
}

pub const ABLATION_CSV: &str = "ablation.csv";

pub fn row_config(base: &RunConfig, r: &AblationRow) -> RunConfig {
    let mut c = base.clone();
    c.model.stages = r.stages;
    c.model.input = r.input;
    c.model.feature_size = r.feature_size;
    c.out = base.out.join("rows").join(format!("id-{}", r.id));
    c.eval_every = 0;
    c.checkpoint_every = 0;
    c
}

pub fn write_csv(path: &Path, rows: &[RowResult]) -> Result<()> {
    let mut s = String::from("id,stages,input,feature_size,seed,steps,mesh_error_aligned_mm,mesh_error_mm,mpjpe_mm,status\n");
    for r in rows {
        let a = &r.row;
        let _ = write!(s, "{},{},{},{},{},{},", a.id, a.stages, a.input.name(), a.feature_size, r.seed, r.steps);
        match &r.outcome {
            Ok(e) => {
                let _ = writeln!(s, "{},{},{},ok", e.mesh_error_aligned, e.mesh_error, e.mpjpe);
            }
            Err(msg) => {
                let _ = writeln!(s, ",,,failed: {}", msg.replace([',', '\n'], ";"));
            }
        }
    }
    std::fs::write(path, s).map_err(|e| CliError::io(path, e))
}

/// Runs every row in order; a failing row is recorded and the table is
/// still written.
pub fn cmd_ablate(base: &RunConfig, templates: &Templates) -> Result<Vec<RowResult>> {
    base.validate()?;
    std::fs::create_dir_all(&base.out).map_err(|e| CliError::io(&base.out, e))?;
    let mut results = Vec::with_capacity(ABLATION_ROWS.len());
    for r in &ABLATION_ROWS {
        let cfg = row_config(base, r);
        let outcome = cfg
            .validate()
            .and_then(|_| train(&cfg, templates, None))
            .and_then(|o| {
                o.evals
                    .last()
                    .map(|e| e.1)
                    .ok_or_else(|| CliError::Other("no evaluation".into()))
            })
            .map_err(|e| e.to_string());
        results.push(RowResult {
            row: *r,
            seed: cfg.dataset.seed,
            steps: cfg.optimizer.steps,
            outcome,
        });
        write_csv(&base.out.join(ABLATION_CSV), &results)?;
    }
    Ok(results)
}
