use std::path::PathBuf;

use clap::{Args, ValueEnum};
use kaa_core::mrd::{
    check_family_ordering, kaa_mrd, mlp_worst_case, mrd_bruteforce_lt, AlignmentMatrixP, MrdReport,
    SearchMode, EXHAUSTIVE_MAX_N,
};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::report::Report;

/// Samples used when `N` is too large to enumerate and `--sampled` is absent.
pub const DEFAULT_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyArg {
    Lt,
    Mlp,
    Kaa,
    /// All three families, checked for a non-decreasing ordering.
    All,
}

impl FamilyArg {
    fn as_str(self) -> &'static str {
        match self {
            FamilyArg::Lt => "lt",
            FamilyArg::Mlp => "mlp",
            FamilyArg::Kaa => "kaa",
            FamilyArg::All => "all",
        }
    }
}

#[derive(Debug, Args)]
pub struct MrdArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    #[arg(long)]
    pub d: usize,
    /// Sample this many permutations instead of enumerating all of them.
    #[arg(long, value_name = "N")]
    pub sampled: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The settings a run actually used.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MrdConfig {
    pub family: FamilyArg,
    pub d: usize,
    pub mode: SearchMode,
}

impl MrdConfig {
    pub fn resolve(args: &MrdArgs) -> CliResult<Self> {
        if args.d < 2 {
            return Err(CliError::Usage(format!(
                "--d must be at least 2, got {}",
                args.d
            )));
        }
        let mode = match args.sampled {
            Some(0) => {
                return Err(CliError::Usage(
                    "--sampled needs at least one sample".into(),
                ))
            }
            Some(samples) => SearchMode::Sampled {
                samples,
                seed: args.seed,
            },
            None if args.d * args.d > EXHAUSTIVE_MAX_N && args.family != FamilyArg::All => {
                eprintln!(
                    "note: N = {} is too large to enumerate; sampling {DEFAULT_SAMPLES} permutations",
                    args.d * args.d
                );
                SearchMode::Sampled {
                    samples: DEFAULT_SAMPLES,
                    seed: args.seed,
                }
            }
            None => SearchMode::Exhaustive,
        };
        if args.family == FamilyArg::All && mode != SearchMode::Exhaustive {
            return Err(CliError::Usage(
                "--family all always enumerates; drop --sampled".into(),
            ));
        }
        Ok(Self {
            family: args.family,
            d: args.d,
            mode,
        })
    }
}

fn print_report(r: &MrdReport) {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.5}"));
    let witness: Vec<String> = r.witness.iter().map(ToString::to_string).collect();
    println!("{:<14}{}", "family", r.family);
    println!("{:<14}{}", "d", r.d);
    println!("{:<14}{}", "N", r.n);
    match r.samples {
        Some(s) => println!("{:<14}{} ({s} permutations)", "mode", r.mode),
        None => println!("{:<14}{}", "mode", r.mode),
    }
    println!("{:<14}{:.5}", "oracle", r.oracle);
    match &r.lower_bound_label {
        Some(label) => println!("{:<14}{:.5} ({label})", "lower bound", r.lower_bound),
        None => println!("{:<14}{:.5}", "lower bound", r.lower_bound),
    }
    println!("{:<14}{}", "upper bound", opt(r.upper_bound));
    println!("{:<14}{}", "witness", witness.join(" "));
}

pub fn run(args: &MrdArgs) -> CliResult<()> {
    let cfg = MrdConfig::resolve(args)?;
    let name = format!("mrd_{}_d{}.json", cfg.family.as_str(), cfg.d);
    if cfg.family == FamilyArg::All {
        let report = check_family_ordering(cfg.d)?;
        println!("{:<6}{:>12}", "family", "worst case");
        println!("{:<6}{:>12.5}", "kaa", report.kaa);
        println!("{:<6}{:>12.5}", "mlp", report.mlp);
        println!("{:<6}{:>12.5}", "lt", report.lt);
        println!("ordering holds: {}", report.holds);
        if let Some(out) = &args.out {
            Report::new("mrd", &cfg, &report).write(out, &name)?;
        }
        return Ok(());
    }
    let p = AlignmentMatrixP::new(cfg.d)?;
    let report = match cfg.family {
        FamilyArg::Lt => mrd_bruteforce_lt(&p, cfg.mode)?,
        FamilyArg::Mlp => mlp_worst_case(&p, cfg.mode)?,
        FamilyArg::Kaa => kaa_mrd(&p, cfg.mode)?,
        FamilyArg::All => unreachable!("handled above"),
    };
    print_report(&report);
    if let Some(out) = &args.out {
        Report::new("mrd", &cfg, &report).write(out, &name)?;
    }
    Ok(())
}
