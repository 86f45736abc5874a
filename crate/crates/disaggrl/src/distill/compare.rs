//! Depth-teacher vs state-teacher comparison: distill each into stereo
//! students under identical budgets and seeds, report the final success
//! rates and learning curves.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{distill, DistillConfig, DistillError, DistillRecord};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistillRunSummary {
    pub teacher: String,
    pub seed: u64,
    pub final_sr: f64,
    pub step0_action_mse: f64,
    pub final_action_mse: f64,
    pub records: Vec<DistillRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareReport {
    pub depth_runs: Vec<DistillRunSummary>,
    pub state_runs: Vec<DistillRunSummary>,
    pub mean_depth_sr: f64,
    pub mean_state_sr: f64,
    /// Whether depth-teacher students matched or beat state-teacher students.
    pub depth_at_least_state: bool,
}

/// Distill both teachers into students with `seeds` seeds each, identical
/// budgets. Writes `report.json` and `curves.csv` under `out_dir`.
pub fn compare_teachers(
    depth_teacher: &Path,
    state_teacher: &Path,
    base: &DistillConfig,
    seeds: u32,
    out_dir: &Path,
) -> Result<CompareReport, DistillError> {
    if seeds == 0 {
        return Err(DistillError::Config("need at least one seed".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let run = |teacher: &Path, kind: &str| -> Result<Vec<DistillRunSummary>, DistillError> {
        let mut out = Vec::new();
        for s in 0..seeds {
            let cfg = DistillConfig {
                teacher_ckpt: teacher.to_path_buf(),
                seed: base.seed + s as u64,
                ..base.clone()
            };
            let dir = out_dir.join(format!("{kind}_seed{s}"));
            let report = distill(&cfg, &dir)?;
            out.push(DistillRunSummary {
                teacher: kind.to_string(),
                seed: cfg.seed,
                final_sr: report.final_sr,
                step0_action_mse: report.step0_action_mse,
                final_action_mse: report.final_action_mse,
                records: report.records,
            });
        }
        Ok(out)
    };
    let depth_runs = run(depth_teacher, "depth")?;
    let state_runs = run(state_teacher, "state")?;

    let mean = |runs: &[DistillRunSummary]| {
        runs.iter().map(|r| r.final_sr).sum::<f64>() / runs.len() as f64
    };
    let report = CompareReport {
        mean_depth_sr: mean(&depth_runs),
        mean_state_sr: mean(&state_runs),
        depth_at_least_state: mean(&depth_runs) >= mean(&state_runs),
        depth_runs,
        state_runs,
    };

    let mut csv = std::io::BufWriter::new(std::fs::File::create(out_dir.join("curves.csv"))?);
    writeln!(csv, "teacher,seed,round,beta,action_mse,student_sr")?;
    for r in report.depth_runs.iter().chain(&report.state_runs) {
        for rec in &r.records {
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.teacher,
                r.seed,
                rec.round,
                rec.beta,
                rec.action_mse,
                rec.student_sr.map(|v| v.to_string()).unwrap_or_default()
            )?;
        }
    }
    csv.flush()?;
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(|e| DistillError::Config(e.to_string()))?,
    )?;
    Ok(report)
}
