//! Command-line behaviour: exit codes, output formats, checkpoints and
//! reproducibility.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
class_counts=3,3
hours=0.15
hidden_widths=16,8
state_width=6
gate_hidden_width=6
learning_rate=0.05
batch_size=16
plateau_patience=2
max_lr_decays=1
initial_pruning_ratio=0.3
pruning_ratio_floor=0.1
";

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsenet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture(extra: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("run.cfg");
    fs::write(&config, format!("{SMALL}{extra}")).unwrap();
    let data = root.join("data");
    ok(&[
        "synth",
        "--config",
        &s(&config),
        "--seed",
        "3",
        "--out",
        &s(&data),
    ]);
    Fixture {
        _dir: dir,
        root,
        config,
        data,
    }
}

fn csv_map(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .map(|l| {
            let (k, v) = l.split_once(',').expect("name,value line");
            (k.to_string(), v.to_string())
        })
        .collect()
}

fn dir_contents(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

#[test]
fn exit_codes() {
    let f = fixture("");
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cli(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
    assert_eq!(
        cli(&[
            "train",
            "--set",
            "no_such_key=1",
            "--data",
            &s(&f.data),
            "--out",
            "x"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        cli(&[
            "train",
            "--set",
            "batch_size=0",
            "--data",
            &s(&f.data),
            "--out",
            "x"
        ])
        .status
        .code(),
        Some(1)
    );
    // missing dataset and unreadable model files are data errors
    let missing = f.root.join("missing");
    assert_eq!(
        cli(&[
            "train",
            "--data",
            &s(&missing),
            "--out",
            &s(&f.root.join("m"))
        ])
        .status
        .code(),
        Some(2)
    );
    let junk = f.root.join("junk.bin");
    fs::write(&junk, b"not a model").unwrap();
    assert_eq!(cli(&["inspect", &s(&junk)]).status.code(), Some(2));
}

#[test]
fn synth_census_and_reproducibility() {
    let f = fixture("");
    let again = f.root.join("again");
    let text = ok(&[
        "synth",
        "--config",
        &s(&f.config),
        "--seed",
        "3",
        "--out",
        &s(&again),
    ]);
    assert!(text.contains("wrote 6 subjects (per class: 3/3)"), "{text}");
    assert_eq!(dir_contents(&f.data), dir_contents(&again));
    let other = f.root.join("other");
    ok(&[
        "synth",
        "--config",
        &s(&f.config),
        "--seed",
        "4",
        "--out",
        &s(&other),
    ]);
    assert_ne!(dir_contents(&f.data), dir_contents(&other));

    let defaults = f.root.join("defaults.cfg");
    fs::write(&defaults, "hours=0.01\n").unwrap();
    let full = f.root.join("full");
    let text = ok(&["synth", "--config", &s(&defaults), "--out", &s(&full)]);
    assert!(
        text.contains("wrote 52 subjects (per class: 27/25)"),
        "{text}"
    );
}

#[test]
fn train_eval_round_trip() {
    let f = fixture("");
    let model = f.root.join("model.bin");
    let cfg = s(&f.config);
    ok(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--data",
        &s(&f.data),
        "--out",
        &s(&model),
    ]);
    let report = fs::read_to_string(f.root.join("model.bin.report.csv")).unwrap();
    assert!(report.starts_with("epoch,phase,train_loss,train_acc,val_loss,val_acc,sparsity,lr\n"));
    assert!(f.root.join("model.bin.report.csv.timing.csv").exists());

    let csv = ok(&[
        "eval",
        "--model",
        &s(&model),
        "--data",
        &s(&f.data),
        "--format",
        "csv",
    ]);
    for line in csv.lines() {
        assert_eq!(line.split(',').count(), 2, "{line}");
    }
    let metrics = csv_map(&csv);
    assert_eq!(metrics["split"], "test");
    // the report records the same held-out metrics
    let summary: BTreeMap<String, String> =
        report.rsplit("\nname,value\n").next().map(csv_map).unwrap();
    for key in [
        "instances",
        "accuracy",
        "fpr",
        "fnr",
        "f1",
        "cm_0_0",
        "cm_1_1",
    ] {
        assert_eq!(summary[&format!("test_{key}")], metrics[key], "{key}");
    }
    assert_eq!(
        csv,
        ok(&[
            "eval",
            "--model",
            &s(&model),
            "--data",
            &s(&f.data),
            "--format",
            "csv"
        ])
    );

    let text = ok(&[
        "eval",
        "--model",
        &s(&model),
        "--data",
        &s(&f.data),
        "--split",
        "train",
    ]);
    assert!(text.contains("confusion matrix"), "{text}");
    let inspect = csv_map(&ok(&["inspect", &s(&model), "--format", "csv"]));
    assert_eq!(inspect["kind"], "server");
    assert_eq!(inspect["classes"], "2");
    assert_eq!(inspect["input_width"], "3712");
}

#[test]
fn resume_after_growth_matches_uninterrupted_run() {
    let f = fixture("kind=edge\n");
    let cfg = s(&f.config);
    let data = s(&f.data);
    let full = f.root.join("full.bin");
    let ck = f.root.join("ck.bin");
    let resumed = f.root.join("resumed.bin");
    ok(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "9",
        "--data",
        &data,
        "--out",
        &s(&full),
    ]);
    ok(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "9",
        "--data",
        &data,
        "--out",
        &s(&ck),
        "--stop-after-growth",
    ]);
    assert_eq!(
        csv_map(&ok(&["inspect", &s(&ck), "--format", "csv"]))["phase"],
        "growth"
    );
    ok(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "9",
        "--data",
        &data,
        "--out",
        &s(&resumed),
        "--resume",
        &s(&ck),
    ]);
    assert_eq!(fs::read(&full).unwrap(), fs::read(&resumed).unwrap());
    assert_eq!(
        fs::read(f.root.join("full.bin.report.csv")).unwrap(),
        fs::read(f.root.join("resumed.bin.report.csv")).unwrap()
    );
    // a checkpoint cannot be resumed under different settings
    let out = cli(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "10",
        "--data",
        &data,
        "--out",
        &s(&resumed),
        "--resume",
        &s(&ck),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn three_class_models_and_class_mismatch() {
    let f = fixture("classes=3\nclass_counts=2,2,2\n");
    let model = f.root.join("m3.bin");
    ok(&[
        "train",
        "--config",
        &s(&f.config),
        "--data",
        &s(&f.data),
        "--out",
        &s(&model),
    ]);
    let info = csv_map(&ok(&["inspect", &s(&model), "--format", "csv"]));
    assert_eq!(info["classes"], "3");
    let metrics = csv_map(&ok(&[
        "eval",
        "--model",
        &s(&model),
        "--data",
        &s(&f.data),
        "--format",
        "csv",
    ]));
    assert!(metrics.contains_key("healthy_fpr"));
    assert!(metrics.contains_key("fnr_class0") && metrics.contains_key("fnr_class1"));

    // evaluating a three-class model on binary data is a config error
    let binary = fixture("");
    let out = cli(&["eval", "--model", &s(&model), "--data", &s(&binary.data)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_concatenates_runs() {
    let f = fixture("");
    let a = f.root.join("dense.cfg");
    let b = f.root.join("sparse.cfg");
    fs::write(&a, format!("{SMALL}seed_fill_rate=0.5\n")).unwrap();
    fs::write(&b, format!("{SMALL}seed_fill_rate=0.1\n")).unwrap();
    let out = f.root.join("sweep");
    let text = ok(&[
        "sweep",
        &s(&a),
        &s(&b),
        "--data",
        &s(&f.data),
        "--out",
        &s(&out),
    ]);
    assert!(text.starts_with("config,name,value\n"));
    assert!(text.contains("dense,flops,") && text.contains("sparse,flops,"));
    assert_eq!(fs::read_to_string(out.join("sweep.csv")).unwrap(), text);
    assert!(out.join("dense.model").exists() && out.join("sparse.report.csv").exists());
}

#[test]
fn null_signal_gives_chance_accuracy() {
    let f = fixture("");
    let cfg = f.root.join("null.cfg");
    fs::write(
        &cfg,
        "class_counts=10,10\nhours=1\nseparation=0\nsubject_jitter=0\ndemographic_spread=0\n\
         hidden_widths=64,32\nlearning_rate=0.05\nbatch_size=32\nplateau_patience=5\nmax_lr_decays=1\n\
         pruning_ratio_floor=0.05\n",
    )
    .unwrap();
    let data = f.root.join("null");
    ok(&[
        "synth",
        "--config",
        &s(&cfg),
        "--seed",
        "12",
        "--out",
        &s(&data),
    ]);
    let model = f.root.join("null.bin");
    ok(&[
        "train",
        "--config",
        &s(&cfg),
        "--seed",
        "12",
        "--data",
        &s(&data),
        "--out",
        &s(&model),
    ]);
    let m = csv_map(&ok(&[
        "eval",
        "--model",
        &s(&model),
        "--data",
        &s(&data),
        "--format",
        "csv",
    ]));
    let acc: f64 = m["accuracy"].parse().unwrap();
    assert!(
        (45.0..=55.0).contains(&acc),
        "accuracy {acc}% on class-independent data"
    );
}
