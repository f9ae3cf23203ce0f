use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cogmap::pipeline::{ProviderKind, RunConfig};
use cogmap::synthetic::planted_corpus;

fn cogmap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogmap"))
        .current_dir(dir)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn error_json(o: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {stderr}"))
}

/// Writes a fixture corpus and config into `dir`, returning the config path.
fn fixture(dir: &Path) -> PathBuf {
    let fx = planted_corpus(2, 3, 5, 40);
    let (lexicon, corpus) = fx.write_files(dir).unwrap();
    let mut c = RunConfig::default();
    c.seed = 3;
    c.paths.lexicon = Some(lexicon);
    c.paths.corpus = Some(corpus);
    c.embedder.provider = ProviderKind::TokenMock;
    c.graph.n_samples = 1024;
    c.walks.walks_per_node = 20;
    c.walks.walk_length = 20;
    c.sgns.dim = 16;
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    path
}

#[test]
fn empty_query_fails_with_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = cogmap(dir.path(), &["query", ""]);
    assert!(!o.status.success());
    let e = error_json(&o);
    assert_eq!(e["error"]["kind"], "query");
}

#[test]
fn stage_out_of_order_names_upstream() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let o = cogmap(dir.path(), &["--config", config.to_str().unwrap(), "topics"]);
    assert!(!o.status.success());
    let e = error_json(&o);
    assert_eq!(e["error"]["kind"], "pipeline");
    assert!(e["error"]["message"].as_str().unwrap().contains("embed"), "{e}");
}

#[test]
fn bad_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"sede": 1}"#).unwrap();
    let o = cogmap(dir.path(), &["--config", "c.json", "run"]);
    assert!(!o.status.success());
    assert!(error_json(&o)["error"]["message"].as_str().unwrap().contains("sede"));
}

#[test]
fn full_session() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let cfg = config.to_str().unwrap();

    let run = cogmap(dir.path(), &["--config", cfg, "run"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout(&run).contains("hypergraph"));
    let again = cogmap(dir.path(), &["--config", cfg, "run"]);
    assert_eq!(stdout(&again).matches("up to date").count(), 7, "{}", stdout(&again));

    let q = cogmap(dir.path(), &["--config", cfg, "query", "Construct 0 + Construct 1 - Construct 2", "--top-k", "5"]);
    assert!(q.status.success(), "{}", String::from_utf8_lossy(&q.stderr));
    // Header plus five rows.
    assert_eq!(stdout(&q).lines().count(), 6, "{}", stdout(&q));
    let written: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cogmap-out/results/query.json")).unwrap()).unwrap();
    assert_eq!(written["results"].as_array().unwrap().len(), 5);

    let b = cogmap(dir.path(), &["--config", cfg, "battery", "c0", "c1", "--json", "battery.json"]);
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    let battery: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("battery.json")).unwrap()).unwrap();
    assert!(!battery["tasks"].as_array().unwrap().is_empty());
    assert!(battery["edges"].is_array());

    let unknown = cogmap(dir.path(), &["--config", cfg, "query", "Constrct 0"]);
    assert!(!unknown.status.success());
    let e = error_json(&unknown);
    assert_eq!(e["error"]["suggestions"][0], "Construct 0");

    let d = cogmap(dir.path(), &["--config", cfg, "distance", "t0_0", "t0_1"]);
    assert!(d.status.success());
    let v: f64 = stdout(&d).trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&v));

    let n = cogmap(dir.path(), &["--config", cfg, "nearest", "t0_0", "-k", "2"]);
    assert_eq!(stdout(&n).lines().count(), 3);

    let s = cogmap(dir.path(), &["--config", cfg, "stats", "tasks-per-paper"]);
    assert!(s.status.success());
    assert!(stdout(&s).contains("tasks"), "{}", stdout(&s));

    let x = cogmap(dir.path(), &["--config", cfg, "export", "graphml", "g.graphml"]);
    assert!(x.status.success());
    assert!(std::fs::read_to_string(dir.path().join("g.graphml")).unwrap().contains("<graphml"));
}
