use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use kaa_core::graph::{
    gen_dictionary_lookup_with, gen_sbm, load_graph, write_graph, Graph, GraphCollection,
    GraphPaths, LoadOptions, SbmParams, Task,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::report::Report;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GenTask {
    Dictlookup,
    Sbm,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub task: GenTask,
    /// Keys per dictionary graph.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Number of dictionary graphs.
    #[arg(long, default_value_t = 64)]
    pub graphs: usize,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    #[arg(long, default_value_t = 50)]
    pub per_block: usize,
    #[arg(long, default_value_t = 0.3)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.02)]
    pub p_out: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dir: String,
    pub nodes: usize,
    pub edges: usize,
    pub graph_label: Option<usize>,
}

/// Index of a generated collection: one subdirectory per graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub task: Task,
    pub graphs: Vec<ManifestEntry>,
}

fn graph_dir(i: usize) -> String {
    format!("graph_{i:03}")
}

pub fn write_collection(data: &GraphCollection, out: &Path) -> CliResult<Manifest> {
    let mut graphs = Vec::with_capacity(data.len());
    for (i, g) in data.graphs().iter().enumerate() {
        let name = graph_dir(i);
        let dir = out.join(&name);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        write_graph(g, &GraphPaths::in_dir(&dir)).map_err(|e| match e {
            kaa_core::KaaError::Io(source) => CliError::io(&dir, source),
            other => other.into(),
        })?;
        graphs.push(ManifestEntry {
            dir: name,
            nodes: g.num_nodes(),
            edges: g.num_edges(),
            graph_label: g.graph_label(),
        });
    }
    Ok(Manifest {
        task: data.task(),
        graphs,
    })
}

pub fn run(args: &GenArgs) -> CliResult<()> {
    let data = match args.task {
        GenTask::Dictlookup => gen_dictionary_lookup_with(args.k, args.graphs, args.seed)?,
        GenTask::Sbm => {
            let params = SbmParams::new(args.blocks, args.per_block, args.p_in, args.p_out);
            GraphCollection::single(gen_sbm(&params, args.seed)?, Task::NodeClassification)?
        }
    };
    let manifest = write_collection(&data, &args.out)?;
    let path = Report::new("gen", args, &manifest).write(&args.out, MANIFEST)?;
    let nodes: usize = manifest.graphs.iter().map(|g| g.nodes).sum();
    let edges: usize = manifest.graphs.iter().map(|g| g.edges).sum();
    println!("{:<10}{}", "graphs", manifest.graphs.len());
    println!("{:<10}{nodes}", "nodes");
    println!("{:<10}{edges}", "edges");
    println!("{:<10}{}", "manifest", path.display());
    Ok(())
}

fn load_one(dir: &Path, opts: LoadOptions) -> CliResult<Graph> {
    let mut paths = GraphPaths::in_dir(dir);
    if paths.masks.as_ref().is_some_and(|m| !m.exists()) {
        paths.masks = None;
    }
    for p in [&paths.edges, &paths.features, &paths.labels] {
        fs::metadata(p).map_err(|e| CliError::io(p, e))?;
    }
    Ok(load_graph(&paths, opts)?)
}

/// Reads a directory written by `gen`, or a single graph directory without
/// a manifest. The collection takes the given task.
pub fn load_dir(dir: &Path, task: Task, opts: LoadOptions) -> CliResult<GraphCollection> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        fs::metadata(dir).map_err(|e| CliError::io(dir, e))?;
        return Ok(GraphCollection::single(load_one(dir, opts)?, task)?);
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    let manifest: Manifest = serde_json::from_value(doc["result"].clone())?;
    let graphs = manifest
        .graphs
        .iter()
        .map(|entry| {
            let g = load_one(&dir.join(&entry.dir), opts)?;
            Ok(match entry.graph_label {
                Some(l) => g.with_graph_label(l),
                None => g,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(GraphCollection::new(graphs, task)?)
}
