//! Run configuration: a TOML file, then `DFL_SEED`, then `--set key=value`
//! overrides, in that order of precedence (last wins).

use std::path::{Path, PathBuf};

use dfl_core::{AggregationMode, Graph, Hyperparams, ModelSpec, RoundSemantics, Schedule, SchedulerName};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_text, CmdResult, Failure};

pub const SEED_ENV: &str = "DFL_SEED";

/// Value of `graph` selecting the built-in 10-node network.
pub const REFERENCE_GRAPH: &str = "reference";

/// Documented defaults, printed by `dfl defaults`. Kept equal to
/// `RunConfig::default()` by a test.
pub const DEFAULTS_TOML: &str = r#"# Master seed (0 ..= 2^63-1). DFL_SEED overrides it.
seed = 42
rounds = 10
# `reference` for the built-in 10-node network, or a graph file path.
graph = "reference"
# A, B or C for a built-in schedule, or a schedule file path.
schedule = "B"

[model]
# Layer widths: input, hidden..., classes.
layers = [784, 128, 10]

[hyper]
learning_rate = 0.05
batch_size = 10
local_epochs = 5

[aggregation]
# memory: fresh parameters plus stored global models, equal weights.
# fedavg: fresh parameters weighted by local sample count.
mode = "memory"

[engine]
# sequential or snapshot
semantics = "sequential"

[init]
# Start every node from the same initial parameters.
shared = true

[data]
# IDX files, split IID across the nodes (train) and used for evaluation (test).
train_images = "data/mnist/train-images-idx3-ubyte"
train_labels = "data/mnist/train-labels-idx1-ubyte"
test_images = "data/mnist/t10k-images-idx3-ubyte"
test_labels = "data/mnist/t10k-labels-idx1-ubyte"
# Setting data.synthetic replaces the files with Gaussian blobs:
# synthetic = { classes = 3, dims = 2, per_class = 200, spread = 0.1, test_per_class = 50 }

[output]
# Runs are written to <dir>/run-<config hash>.
dir = "runs"
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub rounds: u32,
    pub graph: String,
    pub schedule: String,
    pub model: ModelConfig,
    pub hyper: HyperConfig,
    pub aggregation: AggregationConfig,
    pub engine: EngineConfig,
    pub init: InitConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            rounds: 10,
            graph: REFERENCE_GRAPH.into(),
            schedule: "B".into(),
            model: ModelConfig::default(),
            hyper: HyperConfig::default(),
            aggregation: AggregationConfig::default(),
            engine: EngineConfig::default(),
            init: InitConfig::default(),
            data: DataConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { layers: vec![784, 128, 10] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for HyperConfig {
    fn default() -> Self {
        let h = Hyperparams::default();
        HyperConfig { learning_rate: h.learning_rate, batch_size: h.batch_size, local_epochs: h.local_epochs }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    pub mode: AggregationMode,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub semantics: RoundSemantics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub shared: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { shared: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let dir = Path::new("data/mnist");
        DataConfig {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
            synthetic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub dims: usize,
    /// Training samples per class, before the split across nodes.
    pub per_class: usize,
    pub spread: f64,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
}

fn default_test_per_class() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("runs") }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from the defaults), then applies the seed
    /// from the environment and the `key=value` overrides.
    pub fn load(path: Option<&Path>, env_seed: Option<&str>, overrides: &[String]) -> CmdResult<Self> {
        let mut table = match path {
            Some(p) => toml::from_str::<toml::Table>(&read_text(p)?)
                .map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?,
            None => toml::Table::new(),
        };
        if let Some(raw) = env_seed {
            let seed: i64 = raw
                .trim()
                .parse()
                .ok()
                .filter(|s| *s >= 0)
                .ok_or_else(|| Failure::Input(format!("{SEED_ENV}=`{raw}` is not an integer in 0..=2^63-1")))?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Failure::Input(format!("config: {}", e.message())))?;
        if cfg.seed > i64::MAX as u64 {
            return Err(Failure::Input(format!("seed {} exceeds 2^63-1", cfg.seed)));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the configuration without its `output` section, as hex.
    /// Where a run is written does not change what it computes.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { output: OutputConfig::default(), ..self.clone() };
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output.dir.join(format!("run-{}", &self.hash()[..16]))
    }

    pub fn graph(&self) -> CmdResult<Graph> {
        load_graph(&self.graph)
    }

    pub fn schedule(&self) -> CmdResult<Schedule> {
        load_schedule(&self.schedule)
    }

    pub fn model(&self) -> CmdResult<ModelSpec> {
        ModelSpec::new(self.model.layers.clone()).map_err(|e| Failure::Semantic(format!("model.layers: {e}")))
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            learning_rate: self.hyper.learning_rate,
            batch_size: self.hyper.batch_size,
            local_epochs: self.hyper.local_epochs,
            seed: self.seed,
        }
    }
}

/// `reference` or a graph file.
pub fn load_graph(spec: &str) -> CmdResult<Graph> {
    if spec == REFERENCE_GRAPH {
        return Ok(Graph::reference());
    }
    let path = Path::new(spec);
    Graph::parse(&read_text(path)?).map_err(|e| Failure::io(path, e))
}

/// A built-in scheduler name or a schedule file.
pub fn load_schedule(spec: &str) -> CmdResult<Schedule> {
    if let Ok(name) = spec.parse::<SchedulerName>() {
        return Ok(Schedule::builtin(name));
    }
    let path = Path::new(spec);
    Schedule::parse(&read_text(path)?).map_err(|e| Failure::io(path, e))
}

/// Sets a dotted key. The value is read as a TOML value when it parses as
/// one, otherwise as a bare string (`schedule=C`).
fn apply_override(table: &mut toml::Table, raw: &str) -> CmdResult<()> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Failure::Input(format!("override `{raw}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Failure::Input(format!("override `{raw}` has an empty key segment")));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));

    let (last, parents) = parts.split_last().expect("split yields one segment");
    let mut current = table;
    for p in parents {
        let entry = current.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry
            .as_table_mut()
            .ok_or_else(|| Failure::Input(format!("override `{raw}`: `{p}` is not a table")))?;
    }
    current.insert(last.to_string(), parsed);
    Ok(())
}
