use std::path::PathBuf;

use clap::Args;
use kaa_core::attention::{gradient_check_configs, scorer_gradient_error, ScoringConfig, Variant};
use kaa_core::kan::kan_layer_gradient_error;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::report::Report;

pub const TOLERANCE: f64 = 1e-4;
pub const KAN_OP: &str = "kan";
const SCORER_IN_DIM: usize = 3;
const SCORER_PAIRS: usize = 4;
const KAN_POINTS: usize = 4;

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// Check every scoring function and KAN layer (the default).
    #[arg(long, conflicts_with = "op")]
    pub all: bool,
    /// Check one op, such as `gat`, `kaa_gat` or `kan`.
    #[arg(long, value_name = "NAME")]
    pub op: Option<String>,
    /// Random draws per case.
    #[arg(long, default_value_t = 20)]
    pub points: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
enum Case {
    Scorer(ScoringConfig),
    KanLayer { grid_size: usize, order: usize },
}

impl Case {
    fn op(&self) -> String {
        match self {
            Case::Scorer(cfg) => match cfg.variant {
                Variant::Original => cfg.backbone.as_str().to_string(),
                Variant::Kaa => format!("kaa_{}", cfg.backbone.as_str()),
            },
            Case::KanLayer { .. } => KAN_OP.to_string(),
        }
    }

    fn detail(&self) -> String {
        match self {
            Case::Scorer(cfg) if cfg.variant == Variant::Kaa => {
                format!("order {} depth {}", cfg.kan.order, cfg.kan.depth)
            }
            Case::Scorer(_) => String::new(),
            Case::KanLayer { grid_size, order } => format!("order {order} grid {grid_size}"),
        }
    }

    fn error(&self, seed: u64) -> kaa_core::Result<f64> {
        match *self {
            Case::Scorer(cfg) => scorer_gradient_error(&cfg, SCORER_IN_DIM, SCORER_PAIRS, seed),
            Case::KanLayer { grid_size, order } => {
                kan_layer_gradient_error(grid_size, order, KAN_POINTS, seed)
            }
        }
    }
}

fn all_cases() -> Vec<Case> {
    let mut cases: Vec<Case> = gradient_check_configs()
        .into_iter()
        .map(Case::Scorer)
        .collect();
    for order in 0..=3 {
        for grid_size in 1..=8 {
            cases.push(Case::KanLayer { grid_size, order });
        }
    }
    cases
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckRow {
    pub op: String,
    pub detail: String,
    pub points: u64,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Worst relative error of each selected case over `points` seeds.
pub fn check(op: Option<&str>, points: u64) -> CliResult<Vec<GradcheckRow>> {
    let mut cases = all_cases();
    if let Some(op) = op {
        cases.retain(|c| c.op() == op);
        if cases.is_empty() {
            let mut names: Vec<String> = all_cases().iter().map(Case::op).collect();
            names.dedup();
            return Err(CliError::Usage(format!(
                "unknown op `{op}`; expected one of {}",
                names.join(", ")
            )));
        }
    }
    if points == 0 {
        return Err(CliError::Usage("--points must be positive".into()));
    }
    cases
        .par_iter()
        .map(|case| {
            let worst = (0..points)
                .map(|seed| case.error(seed))
                .try_fold(0.0f64, |acc, e| e.map(|e| acc.max(e)))?;
            Ok(GradcheckRow {
                op: case.op(),
                detail: case.detail(),
                points,
                max_rel_error: worst,
                passed: worst < TOLERANCE,
            })
        })
        .collect()
}

pub fn run(args: &GradcheckArgs) -> CliResult<()> {
    let table = check(args.op.as_deref(), args.points)?;
    println!(
        "{:<16}{:<22}{:>8}{:>14}  status",
        "op", "case", "points", "max_rel_err"
    );
    for r in &table {
        let status = if r.passed { "ok" } else { "FAIL" };
        println!(
            "{:<16}{:<22}{:>8}{:>14.3e}  {status}",
            r.op, r.detail, r.points, r.max_rel_error
        );
    }
    if let Some(out) = &args.out {
        Report::new("gradcheck", args, &table).write(out, "gradcheck.json")?;
    }
    let failed = table.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} gradient checks exceed relative error {TOLERANCE:e}"
        )));
    }
    Ok(())
}
