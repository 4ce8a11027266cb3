//! Training run configuration: sectioned `key = value` files plus overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use kaa_core::attention::{Backbone, ScoringConfig, Variant};
use kaa_core::gnn::{ModelConfig, TaskHead, TrainConfig};
use kaa_core::graph::Task;
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Dictlookup,
    Sbm,
    Dir,
}

impl FromStr for DataSource {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "dictlookup" => Ok(DataSource::Dictlookup),
            "sbm" => Ok(DataSource::Sbm),
            "dir" => Ok(DataSource::Dir),
            _ => Err(()),
        }
    }
}

/// Where the training graphs come from. Generator fields are ignored for
/// `dir`, and `path`/`undirected` only apply to `dir`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataConfig {
    pub source: DataSource,
    pub task: Task,
    pub seed: u64,
    pub k: usize,
    pub graphs: usize,
    pub blocks: usize,
    pub per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub path: Option<PathBuf>,
    pub undirected: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Dictlookup,
            task: Task::NodeClassification,
            seed: 0,
            k: 5,
            graphs: 64,
            blocks: 2,
            per_block: 50,
            p_in: 0.3,
            p_out: 0.02,
            path: None,
            undirected: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::new(
                ScoringConfig::new(Backbone::Gat, Variant::Kaa),
                TaskHead::NodeSoftmax,
            ),
            train: TrainConfig::default(),
        }
    }
}

fn value<T: FromStr>(section: &str, key: &str, raw: &str) -> CliResult<T> {
    raw.parse()
        .map_err(|_| CliError::Usage(format!("[{section}] {key}: invalid value `{raw}`")))
}

fn named<T>(section: &str, key: &str, raw: &str, parsed: Option<T>) -> CliResult<T> {
    parsed.ok_or_else(|| CliError::Usage(format!("[{section}] {key}: unknown value `{raw}`")))
}

impl RunConfig {
    /// Defaults, then the file at `path`, then `overrides` in order.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut cfg = Self::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        for o in overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        for (section, props) in ini.iter() {
            for (key, raw) in props.iter() {
                let section = section.ok_or_else(|| {
                    CliError::Usage(format!("config: `{key}` appears before any section"))
                })?;
                self.set(section, key, raw)?;
            }
        }
        Ok(())
    }

    /// `section.key=value`
    pub fn apply_override(&mut self, text: &str) -> CliResult<()> {
        let bad = || CliError::Usage(format!("override `{text}` is not section.key=value"));
        let (path, raw) = text.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.split_once('.').ok_or_else(bad)?;
        self.set(section.trim(), key.trim(), raw.trim())
    }

    pub fn set(&mut self, section: &str, key: &str, raw: &str) -> CliResult<()> {
        let data = &mut self.data;
        let model = &mut self.model;
        let kan = &mut model.scoring.kan;
        match (section, key) {
            ("data", "source") => data.source = value(section, key, raw)?,
            ("data", "task") => {
                data.task = named(section, key, raw, TaskHead::parse(raw).map(TaskHead::task))?
            }
            ("data", "seed") => data.seed = value(section, key, raw)?,
            ("data", "k") => data.k = value(section, key, raw)?,
            ("data", "graphs") => data.graphs = value(section, key, raw)?,
            ("data", "blocks") => data.blocks = value(section, key, raw)?,
            ("data", "per_block") => data.per_block = value(section, key, raw)?,
            ("data", "p_in") => data.p_in = value(section, key, raw)?,
            ("data", "p_out") => data.p_out = value(section, key, raw)?,
            ("data", "path") => data.path = Some(PathBuf::from(raw)),
            ("data", "undirected") => data.undirected = value(section, key, raw)?,
            ("model", "layers") => model.num_layers = value(section, key, raw)?,
            ("model", "hidden") => model.hidden_dim = value(section, key, raw)?,
            ("model", "heads") => model.heads = value(section, key, raw)?,
            ("model", "dropout") => model.dropout = value(section, key, raw)?,
            ("model", "attention_dropout") => model.attention_dropout = value(section, key, raw)?,
            ("model", "value_transform") => model.value_transform = value(section, key, raw)?,
            ("scoring", "backbone") => {
                model.scoring.backbone = named(section, key, raw, Backbone::parse(raw))?
            }
            ("scoring", "variant") => {
                model.scoring.variant = named(section, key, raw, Variant::parse(raw))?
            }
            ("scoring", "gamma") => model.scoring.gamma = value(section, key, raw)?,
            ("scoring", "proj_dim") => model.scoring.proj_dim = value(section, key, raw)?,
            ("kan", "grid_size") => kan.grid_size = value(section, key, raw)?,
            ("kan", "order") => kan.order = value(section, key, raw)?,
            ("kan", "range_min") => kan.range_min = value(section, key, raw)?,
            ("kan", "range_max") => kan.range_max = value(section, key, raw)?,
            ("kan", "depth") => kan.depth = value(section, key, raw)?,
            ("kan", "hidden") => kan.hidden = value(section, key, raw)?,
            ("kan", "residual") => kan.options.residual = value(section, key, raw)?,
            ("kan", "squash_inputs") => kan.options.squash_inputs = value(section, key, raw)?,
            ("train", "lr") => self.train.lr = value(section, key, raw)?,
            ("train", "weight_decay") => self.train.weight_decay = value(section, key, raw)?,
            ("train", "epochs") => self.train.epochs = value(section, key, raw)?,
            ("train", "seed") => self.train.seed = value(section, key, raw)?,
            ("train", "patience") => self.train.patience = value(section, key, raw)?,
            _ => {
                return Err(CliError::Usage(format!(
                    "unknown config key `{section}.{key}`"
                )))
            }
        }
        self.model.task_head = TaskHead::for_task(self.data.task);
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.model.scoring().validate()?;
        self.train.validate()?;
        if self.data.source == DataSource::Dir && self.data.path.is_none() {
            return Err(CliError::Usage("[data] source = dir needs a path".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# run\n[model]\nhidden = 16\nlayers = 3\n\n[scoring]\nbackbone = glcn\nvariant = original\n[kan]\ngrid_size = 4\n",
        )
        .unwrap();
        cfg.apply_override("model.hidden=64").unwrap();
        assert_eq!(cfg.model.hidden_dim, 64);
        assert_eq!(cfg.model.num_layers, 3);
        assert_eq!(cfg.model.scoring.backbone, Backbone::Glcn);
        assert_eq!(cfg.model.scoring.variant, Variant::Original);
        assert_eq!(cfg.model.scoring.kan.grid_size, 4);
    }

    #[test]
    fn task_sets_the_head() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("data.task = link").unwrap();
        assert_eq!(cfg.data.task, Task::LinkPrediction);
        assert_eq!(cfg.model.task_head, TaskHead::LinkDot);
    }

    #[test]
    fn unknown_key_is_usage_error() {
        let err = RunConfig::default()
            .apply_override("model.width=3")
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = RunConfig::default()
            .apply_text("[bogus]\nx = 1\n")
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn malformed_values_are_usage_errors() {
        for o in [
            "model.hidden=wide",
            "scoring.backbone=transformer",
            "nodot=1",
            "model.layers",
        ] {
            let err = RunConfig::default().apply_override(o).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{o}");
        }
        assert!(RunConfig::default().apply_text("lr = 0.1\n").is_err());
    }

    #[test]
    fn invalid_combination_fails_validation() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("scoring.backbone=gat_modified").unwrap();
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = RunConfig::resolve(Some(Path::new("/nonexistent/run.cfg")), &[]).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
