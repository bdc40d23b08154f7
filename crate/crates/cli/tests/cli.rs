use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMOKE: &str = r#"
name = "cli-smoke"
seeds = [2]

[data.generator]
num_classes = 3
seqs_per_class = 4
frames = 24

[net]
layers = [{ out_dim = 6, activation = "tanh" }]

[admm]
max_iter = 1
batch_size = 6

[admm.manifold]
h = 1

[probe]
epochs = 2
"#;

fn stmn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stmn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn missing_config_names_the_path() {
    let o = stmn(&["run", "/no/such/config.toml"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/no/such/config.toml"), "{}", stderr(&o));
}

#[test]
fn invalid_config_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "name = \"x\"\n\n[admm]\nbogus_key = 1\n");
    let o = stmn(&["run", &cfg]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("bogus_key") && err.contains("line 4"), "{err}");
}

#[test]
fn smoke_run_writes_parseable_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    let o = stmn(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 2);
    for mode in ["baseline", "stmn"] {
        let run = out.join("seed-2").join(mode);
        let history = fs::read_to_string(run.join("history.jsonl")).unwrap();
        assert_eq!(history.lines().count(), 1);
        let rec: serde_json::Value = serde_json::from_str(history.lines().next().unwrap()).unwrap();
        for key in ["k", "loss", "eps", "sigma", "accepted", "train_acc", "val_acc"] {
            assert!(rec.get(key).is_some(), "history record lacks {key}");
        }
        let stats: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(run.join("stats.json")).unwrap()).unwrap();
        assert!(stats["probe_accuracy"].is_number());
        let features = fs::read_to_string(run.join("features.csv")).unwrap();
        let mut rdr = csv::Reader::from_reader(features.as_bytes());
        assert!(rdr.records().all(|r| r.is_ok()));
    }
    let report = String::from_utf8_lossy(&o.stdout);
    assert!(report.contains("var_ratio"), "{report}");
}

#[test]
fn seed_and_mode_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    let o = stmn(&["run", &cfg, "--out", out.to_str().unwrap(), "--seed", "7", "--mode", "stmn"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("seed-7").join("stmn").join("stats.json").exists());
    assert!(!out.join("seed-7").join("baseline").exists());
    assert_eq!(fs::read_to_string(out.join("config.toml")).unwrap(), SMOKE);
}

#[test]
fn reruns_give_identical_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = stmn(&["run", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(
        fs::read(a.join("summary.json")).unwrap(),
        fs::read(b.join("summary.json")).unwrap()
    );
}

#[test]
fn report_on_empty_dir_lists_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = stmn(&["report", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    for f in ["summary.json", "history.jsonl", "features.csv", "stats.json"] {
        assert!(err.contains(f), "{err}");
    }
}

#[test]
fn sweep_rejects_h_not_below_batch_size() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    let o = stmn(&["sweep-h", &cfg, "--values", "1,6", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("batch size"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn sweep_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("out");
    let o = stmn(&["sweep-h", &cfg, "--values", "2,1,2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("h_sweep.csv")).unwrap();
    let hs: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(hs, vec!["1", "2"]);
}

#[test]
fn generated_data_feeds_back_as_input_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let data = dir.path().join("data.csv");
    let o = stmn(&["gen-data", &cfg, "--seed", "2", "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let with_file = SMOKE.replace(
        "[data.generator]",
        &format!("[data]\ninput_file = {:?}\n\n[data.generator]", data.to_str().unwrap()),
    );
    let cfg = write_config(dir.path(), &with_file);
    let out = dir.path().join("out");
    let o = stmn(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}
