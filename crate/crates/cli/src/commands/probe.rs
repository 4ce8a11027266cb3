use std::path::PathBuf;

use clap::Args;
use kaa_core::attention::{static_attention_probe, Backbone, ScoringConfig, Variant};
use kaa_core::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::report::Report;

#[derive(Debug, Args, Serialize)]
pub struct ProbeArgs {
    #[arg(long, value_parser = parse_backbone)]
    pub backbone: Backbone,
    #[arg(long, value_parser = parse_variant, default_value = "original")]
    pub variant: Variant,
    /// Random parameterizations to draw.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 8)]
    pub queries: usize,
    #[arg(long, default_value_t = 8)]
    pub keys: usize,
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_backbone(s: &str) -> Result<Backbone, String> {
    Backbone::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Backbone::ALL.iter().map(|b| b.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| "expected original or kaa".to_string())
}

pub fn run(args: &ProbeArgs) -> CliResult<()> {
    if args.samples == 0 || args.queries == 0 || args.keys == 0 || args.dim == 0 {
        return Err(CliError::Usage(
            "--samples, --queries, --keys and --dim must be positive".into(),
        ));
    }
    let cfg = ScoringConfig::new(args.backbone, args.variant);
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let queries = Tensor::randn(&[args.queries, args.dim], 1.0, &mut rng);
    let keys = Tensor::randn(&[args.keys, args.dim], 1.0, &mut rng);
    let report = static_attention_probe(&cfg, &queries, &keys, args.samples, args.seed)?;
    println!("{:<16}{}", "backbone", report.backbone.as_str());
    println!("{:<16}{}", "variant", report.variant.as_str());
    println!("{:<16}{}", "samples", report.samples);
    println!("{:<16}{}", "static", report.static_samples);
    println!("{:<16}{:.4}", "static fraction", report.fraction);
    if let Some(out) = &args.out {
        let name = format!(
            "probe_{}_{}.json",
            args.backbone.as_str(),
            args.variant.as_str()
        );
        Report::new("probe", args, &report).write(out, &name)?;
    }
    Ok(())
}
