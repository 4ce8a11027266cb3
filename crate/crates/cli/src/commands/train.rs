use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use kaa_core::gnn::{train, RunReport};
use kaa_core::graph::{
    gen_dictionary_lookup_with, gen_sbm, GraphCollection, LoadOptions, SbmParams,
};

use super::gen::load_dir;
use crate::config::{DataConfig, DataSource, RunConfig};
use crate::error::{CliError, CliResult};
use crate::report::Report;

pub const REPORT: &str = "report.json";

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Sectioned `key = value` file; unset keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `section.key=value`, applied after the file. Repeatable.
    #[arg(long = "override", short = 'o', value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Training seed; wins over the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Directory for `report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn resolve(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::resolve(args.config.as_deref(), &args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_data(data: &DataConfig) -> CliResult<GraphCollection> {
    match data.source {
        DataSource::Dictlookup => Ok(gen_dictionary_lookup_with(data.k, data.graphs, data.seed)?),
        DataSource::Sbm => {
            let params = SbmParams::new(data.blocks, data.per_block, data.p_in, data.p_out);
            Ok(GraphCollection::single(
                gen_sbm(&params, data.seed)?,
                data.task,
            )?)
        }
        DataSource::Dir => {
            let path = data
                .path
                .as_deref()
                .ok_or_else(|| CliError::Usage("[data] source = dir needs a path".into()))?;
            let opts = LoadOptions {
                undirected: data.undirected,
                split_seed: data.seed,
            };
            load_dir(path, data.task, opts)
        }
    }
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let cfg = resolve(args)?;
    let data = load_data(&cfg.data)?;
    let started = Instant::now();
    let result = train(&cfg.model, &data, &cfg.train)?;
    let report = RunReport::new(&cfg.model, &cfg.train, data.task(), &result, started);

    let scoring = cfg.model.scoring();
    println!("{:<16}{}", "task", cfg.model.task_head.as_str());
    println!(
        "{:<16}{}/{}",
        "scoring",
        scoring.backbone.as_str(),
        scoring.variant.as_str()
    );
    println!("{:<16}{}", "parameters", report.num_parameters);
    println!("{:<16}{}", "epochs run", report.epochs_run);
    println!("{:<16}{}", "best epoch", report.best_epoch);
    if let Some(v) = report.best_val {
        println!("{:<16}{v:.4}", "best val");
    }
    if let Some(a) = report.test.accuracy {
        println!("{:<16}{a:.4}", "test accuracy");
    }
    if let Some(a) = report.test.roc_auc {
        println!("{:<16}{a:.4}", "test roc-auc");
    }
    if let Some(out) = &args.out {
        let path = Report::new("train", &cfg, &report).write(out, REPORT)?;
        println!("{:<16}{}", "report", path.display());
    }
    Ok(())
}
