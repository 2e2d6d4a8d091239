//! The `metapn` binary end to end on small synthetic bundles.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use metapn::checkpoint::Checkpoint;
use metapn::runlog::LogRecord;

fn metapn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metapn"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn metapn")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "metapn failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) {
    ok(metapn(
        &[
            "synth-sbm", "--n", "60", "--blocks", "2", "--p-in", "0.3", "--p-out", "0.02",
            "--sigma", "0.5", "--seed", "1", "--out", "sbm",
        ],
        dir,
    ));
}

const FAST: &str = "[train]\nhidden_dim = 8\nmax_epochs = 30\npatience = 10\nfinetune_epochs = 10\n";

#[test]
fn synth_then_validate() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let summary: serde_json::Value =
        serde_json::from_str(&ok(metapn(&["bundle-validate", "sbm"], tmp.path()))).unwrap();
    assert_eq!(summary["n"], 60);
    assert_eq!(summary["c"], 2);
    assert_eq!(summary["f"], 2);
    assert_eq!(summary["class_counts"], serde_json::json!([30, 30]));
}

#[test]
fn validate_reports_bad_labels() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let labels = tmp.path().join("sbm/labels.tsv");
    let text = fs::read_to_string(&labels).unwrap().replacen('0', "7", 1);
    fs::write(&labels, text).unwrap();
    let out = metapn(&["bundle-validate", "sbm"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("label out of range"));
}

#[test]
fn train_writes_log_and_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    fs::write(tmp.path().join("fast.toml"), format!("val_per_class = 5\n{FAST}")).unwrap();
    let stdout = ok(metapn(
        &[
            "train", "--bundle", "sbm", "--method", "meta-pn", "--shots", "2", "--config",
            "fast.toml", "--seed", "3", "--out", "run",
        ],
        tmp.path(),
    ));
    let summary: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let acc = summary["test_accuracy"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&acc));

    let log = fs::read_to_string(tmp.path().join("run/train_log.jsonl")).unwrap();
    let records: Vec<LogRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len() as u64, summary["epochs"].as_u64().unwrap());
    assert_eq!(records[0].epoch, 1);

    let ckpt = Checkpoint::read(tmp.path().join("run/model.mpn")).unwrap();
    let (theta, phi) = ckpt.to_params(0.3).unwrap();
    assert_eq!(theta.in_dim(), 2);
    assert_eq!(theta.hidden_dim(), 8);
    assert_eq!(phi.classes(), 2);
}

#[test]
fn unknown_method_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = metapn(&["train", "--bundle", "x", "--method", "gcn", "--shots", "1"], tmp.path());
    assert!(!out.status.success());
}

#[test]
fn bench_appends_rows_and_logs() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    fs::write(
        tmp.path().join("exp.toml"),
        format!("bundle = \"sbm\"\nmethod = \"static-lp\"\nshots = 2\nval_per_class = 5\nruns = 2\nout_dir = \"out\"\n{FAST}"),
    )
    .unwrap();
    ok(metapn(&["bench", "--config", "exp.toml"], tmp.path()));
    ok(metapn(&["bench", "--config", "exp.toml", "--runs", "1"], tmp.path()));

    let csv = fs::read_to_string(tmp.path().join("out/results.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,dataset,shots,k,runs,mean,ci95");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("static-lp,sbm,2,10,2,"));
    assert!(lines[2].starts_with("static-lp,sbm,2,10,1,") && lines[2].ends_with(",0.00"));

    let jsonl = fs::read_to_string(tmp.path().join("out/results.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 2);
    let logs = fs::read_dir(tmp.path().join("out/logs")).unwrap().count();
    assert_eq!(logs, 2, "seeds 0 and 1 of the first bench; the second rewrites seed 0");
}

#[test]
fn ablation_emits_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    fs::write(
        tmp.path().join("abl.toml"),
        format!(
            "bundle = \"sbm\"\nmethods = [\"meta-pn\", \"static-lp\"]\nshots = 2\nval_per_class = 5\nruns = 1\nout_dir = \"out\"\n{FAST}"
        ),
    )
    .unwrap();
    let stdout = ok(metapn(&["ablate-k", "--config", "abl.toml", "--k", "1,2,5"], tmp.path()));
    assert_eq!(stdout.lines().count(), 6);
    let csv = fs::read_to_string(tmp.path().join("out/results.csv")).unwrap();
    let ks: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(ks, ["1", "2", "5", "1", "2", "5"]);
}
