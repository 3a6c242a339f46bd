use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dfl_cli::{RunConfig, RunManifest};
use dfl_core::MetricsTable;

const SYNTHETIC: &str = "data.synthetic={classes=3, dims=2, per_class=40, spread=0.1, test_per_class=10}";

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn dfl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfl"))
        .args(args)
        .current_dir(dir)
        .env_remove("DFL_SEED")
        .output()
        .expect("spawn dfl")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synthetic_run(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--set", SYNTHETIC, "--set", "model.layers=[2, 8, 3]", "--set", "rounds=4"];
    for e in extra {
        args.extend(["--set", e]);
    }
    dfl(dir, &args)
}

fn only_run_dir(out: &Path) -> PathBuf {
    let entries: Vec<PathBuf> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(entries.len(), 1, "{entries:?}");
    entries[0].clone()
}

#[test]
fn validate_schedule_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = dfl(tmp.path(), &["validate-schedule", "--graph", "reference", "--schedule", "A"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).contains("pair-connectivity: true"));

    let graph = repo().join("configs/reference_graph.txt");
    let bad = repo().join("configs/bad_schedule.txt");
    let o = dfl(tmp.path(), &["validate-schedule", "--graph", graph.to_str().unwrap(), "--schedule", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let violations: Vec<String> = stdout(&o).lines().filter(|l| l.starts_with("violation:")).map(String::from).collect();
    assert_eq!(violations, ["violation: client 3 not adjacent to aggregator 9 (odd rounds)"]);

    let o = dfl(tmp.path(), &["validate-schedule", "--graph", "missing.txt", "--schedule", "B"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.txt"));

    std::fs::write(tmp.path().join("broken.txt"), "odd:\n2 -> \n").unwrap();
    let o = dfl(tmp.path(), &["validate-schedule", "--schedule", "broken.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn bundled_schedule_files_equal_builtins() {
    for (file, name) in [("scheduler_a.txt", "A"), ("scheduler_b.txt", "B"), ("scheduler_c.txt", "C")] {
        let path = repo().join("configs").join(file);
        assert_eq!(
            dfl_cli::config::load_schedule(path.to_str().unwrap()).unwrap(),
            dfl_cli::config::load_schedule(name).unwrap()
        );
    }
    let g = dfl_cli::config::load_graph(repo().join("configs/reference_graph.txt").to_str().unwrap()).unwrap();
    assert_eq!(g, dfl_core::Graph::reference());
}

#[test]
fn defaults_output_is_a_loadable_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dfl(tmp.path(), &["defaults"]);
    assert_eq!(o.status.code(), Some(0));
    let path = tmp.path().join("defaults.toml");
    std::fs::write(&path, &o.stdout).unwrap();
    assert_eq!(RunConfig::load(Some(&path), None, &[]).unwrap(), RunConfig::default());
}

#[test]
fn run_writes_consistent_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let o = synthetic_run(tmp.path(), &["output.dir=out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dir = only_run_dir(&tmp.path().join("out"));
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config_hash, manifest.config.hash());
    let name = dir.file_name().unwrap().to_str().unwrap();
    assert_eq!(name, format!("run-{}", &manifest.config_hash[..16]));

    let table = MetricsTable::from_csv(&std::fs::read_to_string(dir.join("metrics.csv")).unwrap()).unwrap();
    let json = MetricsTable::from_json(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(table, json);
    assert_eq!(table.rounds(), 4);
    let summary = stdout(&o);
    for node in [2, 4, 5, 9] {
        assert!(summary.contains(&format!("  node {node}: round")), "{summary}");
    }

    // Only the run directory was created.
    let top: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(top, ["out"]);
}

#[test]
fn zero_learning_rate_keeps_initial_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let o = synthetic_run(tmp.path(), &["hyper.learning_rate=0", "output.dir=out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dir = only_run_dir(&tmp.path().join("out"));
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let initial = manifest.initial_evaluation.unwrap();
    let table = MetricsTable::from_csv(&std::fs::read_to_string(dir.join("metrics.csv")).unwrap()).unwrap();
    for r in &table.records {
        assert_eq!(r.loss, initial.loss);
        assert_eq!(r.accuracy, initial.accuracy);
    }
}

#[test]
fn seed_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed: Option<&str>, out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_dfl"));
        cmd.args(["run", "--set", SYNTHETIC, "--set", "model.layers=[2, 8, 3]", "--set", "rounds=2"])
            .args(["--set", &format!("output.dir={out}")])
            .current_dir(tmp.path())
            .env_remove("DFL_SEED");
        if let Some(s) = seed {
            cmd.env("DFL_SEED", s);
        }
        let o = cmd.output().unwrap();
        assert_eq!(o.status.code(), Some(if seed == Some("nope") { 2 } else { 0 }), "{}", stderr(&o));
        o
    };
    run(None, "a");
    run(Some("42"), "b");
    run(Some("7"), "c");
    run(Some("nope"), "d");
    let name = |d: &str| only_run_dir(&tmp.path().join(d)).file_name().unwrap().to_owned();
    // 42 is the default seed.
    assert_eq!(name("a"), name("b"));
    assert_ne!(name("a"), name("c"));
}

#[test]
fn run_failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    // Model input width does not match the data.
    let o = synthetic_run(tmp.path(), &["model.layers=[3, 4, 3]"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("features"));

    let o = synthetic_run(tmp.path(), &["hyper.learning_rate=-1"]);
    assert_eq!(o.status.code(), Some(1));

    let o = synthetic_run(tmp.path(), &["hyper.momentum=0.9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("momentum"), "{}", stderr(&o));

    // Default MNIST paths, relative to an empty directory.
    let o = dfl(tmp.path(), &["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train-images-idx3-ubyte"), "{}", stderr(&o));

    let o = dfl(tmp.path(), &["run", "--config", "absent.toml"]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(tmp.path().join("bad_graph.txt"), "n 10\ne 1 2\n").unwrap();
    let o = synthetic_run(tmp.path(), &["graph=bad_graph.txt"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("not adjacent"));
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn report_matches_golden_table() {
    let tmp = tempfile::tempdir().unwrap();
    let metrics = fixture("scheduler_b_metrics.csv");
    let o = dfl(tmp.path(), &["report", metrics.to_str().unwrap(), "--out", "rep"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = std::fs::read(tmp.path().join("rep/table.txt")).unwrap();
    assert_eq!(table, std::fs::read(fixture("scheduler_b_table.txt")).unwrap());

    let text = String::from_utf8(table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0].split("  ").map(str::trim).filter(|s| !s.is_empty()).collect::<Vec<_>>(), [
        "round", "node 2", "node 4", "node 5", "node 9"
    ]);
    assert_eq!(lines.len(), 2 + 10);
    for k in [2, 4, 5, 9] {
        let series = std::fs::read_to_string(tmp.path().join(format!("rep/series/node_{k}.csv"))).unwrap();
        assert_eq!(series.lines().count(), 11, "node {k}");
    }
    let svg = std::fs::read_to_string(tmp.path().join("rep/chart.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("node 9"));

    let o = dfl(tmp.path(), &["report", metrics.to_str().unwrap(), "--format", "markdown", "--out", "md"]);
    assert_eq!(o.status.code(), Some(0));
    let md = std::fs::read_to_string(tmp.path().join("md/table.md")).unwrap();
    assert!(md.starts_with("| round | node 2 | node 4 | node 5 | node 9 |"));
}

#[test]
fn report_rejects_empty_and_malformed_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("empty.csv"), "").unwrap();
    let o = dfl(tmp.path(), &["report", "empty.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no records"), "{}", stderr(&o));

    std::fs::write(tmp.path().join("bad.csv"), "round,aggregator,loss,accuracy,messages,participants\n1,4,x,0.5,2,3;4\n")
        .unwrap();
    let o = dfl(tmp.path(), &["report", "bad.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"));
}

#[test]
fn compare_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dfl(tmp.path(), &["compare", "only-one"]);
    assert_eq!(o.status.code(), Some(2));

    for (out, schedule) in [("x", "B"), ("y", "B"), ("z", "A")] {
        let o = synthetic_run(tmp.path(), &[&format!("output.dir={out}"), &format!("schedule={schedule}")]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let dirs: Vec<String> = ["x", "y", "z"].iter().map(|d| only_run_dir(&tmp.path().join(d)).display().to_string()).collect();
    let o = dfl(tmp.path(), &["compare", &dirs[0], &dirs[1], &dirs[2]]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], rows[1]);
    assert_ne!(rows[0], rows[2]);
    // 4 rounds: two odd/even pairs of 18 messages each.
    for r in &rows {
        assert!(r.trim_end().ends_with("36"), "{r}");
    }

    std::fs::create_dir(tmp.path().join("junk")).unwrap();
    std::fs::write(tmp.path().join("junk/metrics.csv"), "a,b\n1,2\n").unwrap();
    let o = dfl(tmp.path(), &["compare", &dirs[0], "junk"]);
    assert_eq!(o.status.code(), Some(2));
}
