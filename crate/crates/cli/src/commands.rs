use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use dfl_core::dataio::{load_mnist, partition_iid, synthetic_blobs};
use dfl_core::learner::{evaluate, init_params, Evaluation};
use dfl_core::schedule::{pair_connectivity, validate};
use dfl_core::{seed, Dataset, EngineError, MetricsTable, NodeId, SimConfig};
use serde::{Deserialize, Serialize};

use crate::config::{load_graph, load_schedule, RunConfig, DEFAULTS_TOML};
use crate::error::{write_file, CmdResult, Failure};
use crate::report::{load_metrics, write_report, NodeView, ReportFiles, ReportFormat};

pub const VERSION: &str = concat!("dfl ", env!("CARGO_PKG_VERSION"));

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| Failure::Input(format!("writing output: {e}")))
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSeeds {
    pub master: u64,
    pub init: u64,
    pub partition: u64,
    /// Per-node training seed; each round derives its own stream from it.
    pub node_training: BTreeMap<u32, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_init: Option<BTreeMap<u32, u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub metrics_csv: PathBuf,
    pub metrics_json: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub seeds: ResolvedSeeds,
    /// Evaluation of the shared initial model, when there is one.
    pub initial_evaluation: Option<Evaluation>,
    /// Relative to the run directory.
    pub artifacts: Artifacts,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    /// Raw `DFL_SEED` value.
    pub env_seed: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub table: MetricsTable,
    pub manifest: RunManifest,
}

fn engine_failure(e: EngineError) -> Failure {
    Failure::Semantic(e.to_string())
}

/// Training shards (one per node) and the evaluation set.
fn load_data(cfg: &RunConfig, nodes: usize) -> CmdResult<(Vec<Arc<Dataset>>, Dataset)> {
    let (train, test) = match &cfg.data.synthetic {
        Some(s) => {
            let pool = synthetic_blobs(s.classes, s.dims, s.per_class + s.test_per_class, s.spread, cfg.seed)
                .map_err(|e| Failure::Semantic(format!("data.synthetic: {e}")))?;
            // Samples are grouped by class; the tail of each group is held out.
            let block = s.per_class + s.test_per_class;
            let (mut train_idx, mut test_idx) = (Vec::new(), Vec::new());
            for c in 0..s.classes {
                train_idx.extend(c * block..c * block + s.per_class);
                test_idx.extend(c * block + s.per_class..(c + 1) * block);
            }
            (pool.subset(&train_idx), pool.subset(&test_idx))
        }
        None => {
            let d = &cfg.data;
            let load = |images: &Path, labels: &Path| {
                load_mnist(images, labels)
                    .map_err(|e| Failure::Input(format!("{} / {}: {e}", images.display(), labels.display())))
            };
            (load(&d.train_images, &d.train_labels)?, load(&d.test_images, &d.test_labels)?)
        }
    };
    let shards = partition_iid(&train, nodes, seed::partition_seed(cfg.seed))
        .map_err(|e| Failure::Semantic(format!("partitioning training data: {e}")))?;
    Ok((shards.into_iter().map(Arc::new).collect(), test))
}

/// Resolves the configuration, runs the simulation and writes
/// `metrics.csv`, `metrics.json` and `manifest.json` into the run directory.
pub fn cmd_run(opts: &RunOptions, out: &mut dyn Write) -> CmdResult<RunOutcome> {
    let cfg = RunConfig::load(opts.config.as_deref(), opts.env_seed.as_deref(), &opts.overrides)?;
    let graph = cfg.graph()?;
    let schedule = cfg.schedule()?;
    let model = cfg.model()?;
    let (node_data, eval_data) = load_data(&cfg, graph.node_count())?;
    let sim = SimConfig {
        graph,
        schedule,
        rounds: cfg.rounds,
        model,
        hyper: cfg.hyperparams(),
        mode: cfg.aggregation.mode,
        semantics: cfg.engine.semantics,
        node_data,
        eval_data: Arc::new(eval_data),
        master_seed: cfg.seed,
        shared_init: cfg.init.shared,
    };
    sim.check().map_err(engine_failure)?;

    let nodes: Vec<u32> = sim.graph.nodes().map(NodeId::get).collect();
    let seeds = ResolvedSeeds {
        master: cfg.seed,
        init: seed::init_seed(cfg.seed),
        partition: seed::partition_seed(cfg.seed),
        node_training: nodes.iter().map(|&n| (n, seed::node_seed(cfg.seed, n))).collect(),
        node_init: (!cfg.init.shared).then(|| nodes.iter().map(|&n| (n, seed::node_init_seed(cfg.seed, n))).collect()),
    };
    let initial_evaluation = if cfg.init.shared {
        Some(evaluate(&init_params(&sim.model, seeds.init), &sim.eval_data).map_err(|e| Failure::Semantic(e.to_string()))?)
    } else {
        None
    };

    let dir = cfg.run_dir();
    say!(out, "run directory: {}", dir.display())?;
    if let Some(e) = &initial_evaluation {
        say!(out, "round 0: loss {:.4} accuracy {:.2}%", e.loss, e.accuracy * 100.0)?;
    }
    let started = Instant::now();
    let mut progress_err = None;
    let table = dfl_core::engine::run_with(sim, |t, records| {
        let parts: Vec<String> = records
            .iter()
            .map(|r| format!("node {} loss {:.4} acc {:.2}%", r.aggregator, r.loss, r.accuracy * 100.0))
            .collect();
        if let Err(e) = writeln!(out, "round {t}: {}", parts.join("; ")) {
            progress_err.get_or_insert(e);
        }
    })
    .map_err(engine_failure)?;
    if let Some(e) = progress_err {
        return Err(Failure::Input(format!("writing output: {e}")));
    }
    let elapsed = started.elapsed().as_secs_f64();

    std::fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
    let artifacts = Artifacts { metrics_csv: "metrics.csv".into(), metrics_json: "metrics.json".into() };
    write_file(&dir.join(&artifacts.metrics_csv), table.to_csv())?;
    write_file(&dir.join(&artifacts.metrics_json), table.to_json())?;
    let manifest = RunManifest {
        version: VERSION.into(),
        config_hash: cfg.hash(),
        config: cfg,
        seeds,
        initial_evaluation,
        artifacts,
        wall_clock_secs: elapsed,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), json + "\n")?;

    say!(out, "final global model per aggregator:")?;
    for agg in table.aggregators() {
        if let Some(r) = table.records.iter().rev().find(|r| r.aggregator == agg) {
            say!(out, "  node {agg}: round {} loss {:.4} accuracy {:.2}%", r.round, r.loss, r.accuracy * 100.0)?;
        }
    }
    say!(out, "messages: {} in {} rounds ({:.1}s)", table.total_messages(), table.rounds(), elapsed)?;
    Ok(RunOutcome { dir, table, manifest })
}

pub fn read_manifest(dir: &Path) -> CmdResult<RunManifest> {
    let path = dir.join("manifest.json");
    let text = crate::error::read_text(&path)?;
    serde_json::from_str(&text).map_err(|e| Failure::io(&path, e))
}

/// Prints the violations and pair connectivity. Exit status 0 iff the
/// schedule is valid on the graph.
pub fn cmd_validate(graph: &str, schedule: &str, out: &mut dyn Write) -> CmdResult<u8> {
    let g = load_graph(graph)?;
    let s = load_schedule(schedule)?;
    let report = validate(&s, &g);
    for v in &report.violations {
        say!(out, "violation: {v}")?;
    }
    say!(out, "violations: {}", report.violations.len())?;
    say!(out, "pair-connectivity: {}", pair_connectivity(&s, &g))?;
    Ok(if report.is_valid() { 0 } else { 1 })
}

/// Prints the table and writes it, the series files and the chart to
/// `out_dir` (default: `report/` next to the metrics file).
pub fn cmd_report(
    metrics: &Path,
    format: ReportFormat,
    out_dir: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult<ReportFiles> {
    let table = load_metrics(metrics)?;
    let view = NodeView::new(&table);
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None if metrics.is_dir() => metrics.join("report"),
        None => metrics.parent().unwrap_or(Path::new(".")).join("report"),
    };
    let files = write_report(&view, format, &dir)?;
    write!(out, "{}", crate::report::render_table(&view, format))
        .map_err(|e| Failure::Input(format!("writing output: {e}")))?;
    say!(out, "wrote {}, {} series files, {}", files.table.display(), files.series.len(), files.chart.display())?;
    Ok(files)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub run: String,
    pub schedule: String,
    pub mode: String,
    pub rounds: u32,
    pub best: (NodeId, f64),
    pub worst: (NodeId, f64),
    /// Mean over the aggregator columns holding a model in the last round.
    pub mean_accuracy: f64,
    pub total_messages: u64,
}

pub fn compare_row(dir: &Path) -> CmdResult<CompareRow> {
    let table = load_metrics(&dir.join("metrics.csv"))?;
    let view = NodeView::new(&table);
    let last = view.final_cells();
    if last.is_empty() {
        return Err(Failure::Input(format!("{}: no aggregator holds a model in the last round", dir.display())));
    }
    // Ties go to the lower node id.
    let mut best = (last[0].0, last[0].1.accuracy);
    let mut worst = best;
    for &(n, c) in &last[1..] {
        if c.accuracy > best.1 {
            best = (n, c.accuracy);
        }
        if c.accuracy < worst.1 {
            worst = (n, c.accuracy);
        }
    }
    let mean_accuracy = last.iter().map(|(_, c)| c.accuracy).sum::<f64>() / last.len() as f64;
    let manifest = read_manifest(dir).ok();
    let run = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(CompareRow {
        run,
        schedule: manifest.as_ref().map_or_else(|| "?".into(), |m| m.config.schedule.clone()),
        mode: manifest.as_ref().map_or_else(|| "?".into(), |m| m.config.aggregation.mode.to_string()),
        rounds: table.rounds(),
        best,
        worst,
        mean_accuracy,
        total_messages: table.total_messages(),
    })
}

pub fn cmd_compare(dirs: &[PathBuf], out: &mut dyn Write) -> CmdResult<Vec<CompareRow>> {
    if dirs.len() < 2 {
        return Err(Failure::Input(format!("compare needs at least two run directories, got {}", dirs.len())));
    }
    let rows = dirs.iter().map(|d| compare_row(d)).collect::<CmdResult<Vec<_>>>()?;
    let header = ["run", "schedule", "mode", "rounds", "best node", "worst node", "mean acc", "messages"];
    let lines: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.run.clone(),
                r.schedule.clone(),
                r.mode.clone(),
                r.rounds.to_string(),
                format!("{} ({:.2}%)", r.best.0, r.best.1 * 100.0),
                format!("{} ({:.2}%)", r.worst.0, r.worst.1 * 100.0),
                format!("{:.2}%", r.mean_accuracy * 100.0),
                r.total_messages.to_string(),
            ]
        })
        .collect();
    let widths: Vec<usize> =
        (0..header.len()).map(|k| lines.iter().map(|l| l[k].len()).chain([header[k].len()]).max().unwrap_or(0)).collect();
    let fmt = |cells: Vec<&str>| {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
    };
    say!(out, "{}", fmt(header.to_vec()))?;
    for l in &lines {
        say!(out, "{}", fmt(l.iter().map(String::as_str).collect()))?;
    }
    Ok(rows)
}

pub fn cmd_defaults(out: &mut dyn Write) -> CmdResult<()> {
    write!(out, "{DEFAULTS_TOML}").map_err(|e| Failure::Input(format!("writing output: {e}")))
}
