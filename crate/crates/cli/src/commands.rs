use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparsenet::datapipe::{
    class_count, encode_set, load_windows, prepare, split, window_subjects, write_manifest,
    write_subject, SynthModel, Window, SPLIT_FRACTIONS,
};
use sparsenet::growprune::{
    evaluate, growth_phase, pruning_phase, seed_init, EpochRecord, NoObserver, Phase, TrainData,
    TrainReport,
};
use sparsenet::metrics::{
    binary_metrics, confusion, count_params, format_percent, multiclass_metrics, ConfusionMatrix,
    CostReport, HEALTHY_CLASS,
};
use sparsenet::model::{EdgeSpec, Inputs, LabeledSet, Model, ModelKind, ServerSpec};
use sparsenet::modelfile::{load_model, save_model, ModelFile, FORMAT_VERSION};

use crate::config::{parse_training_text, RunConfig, SplitName};
use crate::error::{CliError, CliResult};

/// Independent random streams derived from the run seed, so that resuming
/// after the growth phase replays exactly the same draws.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Split = 0,
    Init = 1,
    Growth = 2,
    Pruning = 3,
    Synth = 4,
}

fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

fn create_parent(path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| sparsenet::Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| {
        sparsenet::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn synth(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    let mut r = rng(cfg.seed, Stream::Synth);
    let generator = SynthModel::new(cfg.synth.clone(), &mut r)?;
    let mut entries = Vec::new();
    let mut windows = 0;
    for i in 0..cfg.synth.num_subjects() {
        let subject = generator.subject(i, &mut r)?;
        windows += window_subjects(std::slice::from_ref(&subject))?.len();
        write_subject(out, &subject)?;
        entries.push((subject.id.clone(), subject.label));
    }
    write_manifest(out, &entries)?;
    let per_class: Vec<String> = cfg
        .synth
        .class_counts
        .iter()
        .map(ToString::to_string)
        .collect();
    Ok(format!(
        "wrote {} subjects (per class: {}) with {windows} windows to {}\n",
        entries.len(),
        per_class.join("/"),
        out.display()
    ))
}

fn input_width(set: &LabeledSet) -> usize {
    match &set.inputs {
        Inputs::Flat(x) => x.ncols(),
        Inputs::Sequence(x) => x.shape()[2],
    }
}

fn build_model(cfg: &RunConfig, width: usize, classes: usize) -> CliResult<Model> {
    let mut r = rng(cfg.seed, Stream::Init);
    let mut model = match cfg.kind {
        ModelKind::Server => ServerSpec {
            input_width: width,
            hidden_widths: cfg.hidden_widths.clone(),
            dropout: cfg.dropout(),
        }
        .build(classes, &mut r)?,
        ModelKind::Edge => EdgeSpec {
            input_width: width,
            state_width: cfg.state_width,
            gate_hidden_width: cfg.gate_hidden_width,
            dropout: cfg.dropout(),
        }
        .build(classes, &mut r)?,
    };
    seed_init(&mut model, cfg.schedule.seed_fill_rate, &mut r)?;
    Ok(model)
}

fn epoch_line(e: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        e.epoch,
        e.train_loss,
        e.train_accuracy,
        e.val_loss,
        e.val_accuracy,
        e.sparsity,
        e.learning_rate,
        e.wall_ms
    )
}

fn parse_epoch_line(line: &str) -> Option<EpochRecord> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 8 {
        return None;
    }
    Some(EpochRecord {
        epoch: f[0].parse().ok()?,
        phase: Phase::Growth,
        train_loss: f[1].parse().ok()?,
        train_accuracy: f[2].parse().ok()?,
        val_loss: f[3].parse().ok()?,
        val_accuracy: f[4].parse().ok()?,
        sparsity: f[5].parse().ok()?,
        learning_rate: f[6].parse().ok()?,
        wall_ms: f[7].parse().ok()?,
    })
}

/// Metric `(name, value)` pairs for a confusion matrix; percentages to one
/// decimal.
pub fn metric_lines(cm: &ConfusionMatrix) -> CliResult<Vec<(String, String)>> {
    let mut out = vec![("instances".to_string(), cm.total().to_string())];
    for (i, row) in cm.counts().iter().enumerate() {
        for (j, n) in row.iter().enumerate() {
            out.push((format!("cm_{i}_{j}"), n.to_string()));
        }
    }
    if cm.classes() == 2 {
        let m = binary_metrics(cm)?;
        out.push(("accuracy".into(), format_percent(m.accuracy)));
        out.push(("fpr".into(), format_percent(m.fpr)));
        out.push(("fnr".into(), format_percent(m.fnr)));
        out.push(("f1".into(), format_percent(m.f1)));
    } else {
        let m = multiclass_metrics(cm, HEALTHY_CLASS)?;
        out.push(("accuracy".into(), format_percent(m.accuracy)));
        out.push(("healthy_fpr".into(), format_percent(m.healthy_fpr)));
        for (c, v) in m.fnr.iter().enumerate() {
            if c != HEALTHY_CLASS {
                out.push((format!("fnr_class{c}"), format_percent(*v)));
            }
        }
    }
    Ok(out)
}

fn cost_lines(cost: &CostReport) -> Vec<(String, String)> {
    vec![
        ("params_nnz".into(), cost.nnz.to_string()),
        ("params_dense".into(), cost.dense.to_string()),
        ("sparsity".into(), format!("{:.4}", cost.sparsity())),
        ("flops".into(), cost.flops.to_string()),
    ]
}

fn classify(model: &Model, set: &LabeledSet) -> CliResult<ConfusionMatrix> {
    let eval = evaluate(model, set)?;
    Ok(confusion(
        &eval.predictions,
        &set.labels,
        model.num_classes(),
    )?)
}

/// Checks that `data` matches what the model was trained for.
fn check_schema(model: &Model, windows: &[Window], width: usize) -> CliResult<()> {
    let classes = class_count(windows);
    if classes != model.num_classes() {
        return Err(CliError::Config(format!(
            "dataset has {classes} classes but the model predicts {}",
            model.num_classes()
        )));
    }
    if width != model.input_width() {
        return Err(CliError::Config(format!(
            "{} model expects inputs of width {} but the dataset encodes to {width}",
            model.kind().name(),
            model.input_width()
        )));
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    let data_dir = required(&cfg.data, "dataset (--data)")?;
    create_parent(out)?;
    let windows = load_windows(data_dir)?;
    let classes = class_count(&windows);
    if classes > 3 {
        return Err(CliError::Config(format!(
            "dataset has {classes} classes; at most 3 are supported"
        )));
    }
    let prepared = prepare(&windows, cfg.kind, &mut rng(cfg.seed, Stream::Split))?;
    let data = TrainData::new(prepared.train.clone(), prepared.val.clone())?;
    let width = input_width(&prepared.train);
    let config_text = cfg.training_text();

    let mut report = TrainReport::default();
    let mut model = match &cfg.resume {
        Some(path) => {
            let ck = load_model(path)?;
            if ck.meta("phase") != Some("growth") {
                return Err(CliError::Config(format!(
                    "{} is not a growth checkpoint",
                    path.display()
                )));
            }
            if ck.meta("config") != Some(config_text.as_str()) {
                return Err(CliError::Config(format!(
                    "{} was produced with different training settings",
                    path.display()
                )));
            }
            check_schema(&ck.model, &windows, width)?;
            for line in ck.meta("growth_epochs").unwrap_or("").lines() {
                report.epochs.push(parse_epoch_line(line).ok_or_else(|| {
                    sparsenet::Error::Corrupt(format!("bad epoch record `{line}` in checkpoint"))
                })?);
            }
            ck.model
        }
        None => {
            let mut model = build_model(cfg, width, classes)?;
            growth_phase(
                &mut model,
                &data,
                &cfg.schedule,
                &mut rng(cfg.seed, Stream::Growth),
                &mut report,
                &mut NoObserver,
            )?;
            model
        }
    };

    let mut metadata = vec![
        ("config".to_string(), config_text),
        ("instances".to_string(), windows.len().to_string()),
    ];
    if cfg.stop_after_growth && cfg.resume.is_none() {
        let epochs: String = report.epochs.iter().map(|e| epoch_line(e) + "\n").collect();
        metadata.push(("phase".into(), "growth".into()));
        metadata.push(("growth_epochs".into(), epochs));
        save_model(
            out,
            &ModelFile {
                model,
                scaler: prepared.scaler,
                metadata,
            },
        )?;
        return Ok(format!(
            "growth checkpoint after {} epochs written to {}\n",
            report.epochs.len(),
            out.display()
        ));
    }

    pruning_phase(
        &mut model,
        &data,
        &cfg.schedule,
        &mut rng(cfg.seed, Stream::Pruning),
        &mut report,
        &mut NoObserver,
    )?;
    let cm = classify(&model, &prepared.test)?;
    let test_lines = metric_lines(&cm)?;
    report.summary.extend(
        test_lines
            .iter()
            .map(|(k, v)| (format!("test_{k}"), v.clone())),
    );
    report.summary.extend(cost_lines(&count_params(&model)));

    metadata.push(("phase".into(), "final".into()));
    let file = ModelFile {
        model,
        scaler: prepared.scaler,
        metadata,
    };
    save_model(out, &file)?;
    let report_path = cfg
        .report
        .clone()
        .unwrap_or_else(|| with_suffix(out, ".report.csv"));
    write_text(&report_path, &report.to_csv())?;
    write_text(
        &with_suffix(&report_path, ".timing.csv"),
        &report.timing_csv(),
    )?;

    let accuracy = test_lines
        .iter()
        .find(|(k, _)| k == "accuracy")
        .map(|(_, v)| v.clone())
        .unwrap_or_default();
    Ok(format!(
        "{} model: {} epochs, {} pruning iterations, sparsity {:.4}, test accuracy {accuracy}%\n\
             model written to {}\nreport written to {}\n",
        file.model.kind().name(),
        report.epochs.len(),
        report.prunes.len(),
        file.model.sparsity(),
        out.display(),
        report_path.display()
    ))
}

/// Evaluates a saved model on one split of a dataset. The split is rebuilt
/// from the seed recorded in the model file.
pub fn eval_lines(
    model_path: &Path,
    data_dir: &Path,
    which: SplitName,
) -> CliResult<(ModelFile, Vec<(String, String)>)> {
    let file = load_model(model_path)?;
    let settings = parse_training_text(file.meta("config").unwrap_or(""))?;
    let seed: u64 = settings
        .get("seed")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            CliError::Config(format!("{} does not record its seed", model_path.display()))
        })?;
    let windows = load_windows(data_dir)?;
    if let Some(n) = file.meta("instances") {
        if n != windows.len().to_string() {
            return Err(CliError::Config(format!(
                "model was trained on {n} windows but the dataset has {}",
                windows.len()
            )));
        }
    }
    let parts = split(&windows, SPLIT_FRACTIONS, &mut rng(seed, Stream::Split))?;
    let indices = match which {
        SplitName::Train => &parts.train,
        SplitName::Val => &parts.val,
        SplitName::Test => &parts.test,
    };
    if file.scaler.channels() != windows[0].channel_count() {
        return Err(CliError::Config(format!(
            "model scaler covers {} channels but the dataset has {}",
            file.scaler.channels(),
            windows[0].channel_count()
        )));
    }
    let set = encode_set(&windows, indices, &file.scaler, file.model.kind())?;
    check_schema(&file.model, &windows, input_width(&set))?;
    let cm = classify(&file.model, &set)?;
    let mut lines = vec![
        ("kind".to_string(), file.model.kind().name().to_string()),
        ("classes".to_string(), file.model.num_classes().to_string()),
        ("split".to_string(), which.name().to_string()),
    ];
    lines.extend(metric_lines(&cm)?);
    lines.extend(cost_lines(&count_params(&file.model)));
    Ok((file, lines))
}

pub fn eval(
    model_path: &Path,
    data_dir: &Path,
    which: SplitName,
    format: Format,
) -> CliResult<String> {
    let (file, lines) = eval_lines(model_path, data_dir, which)?;
    Ok(match format {
        Format::Csv => csv(&lines),
        Format::Text => eval_text(&file, &lines),
    })
}

fn csv(lines: &[(String, String)]) -> String {
    lines.iter().map(|(k, v)| format!("{k},{v}\n")).collect()
}

fn eval_text(file: &ModelFile, lines: &[(String, String)]) -> String {
    let get = |k: &str| {
        lines
            .iter()
            .find(|(n, _)| n == k)
            .map_or("", |(_, v)| v.as_str())
    };
    let k = file.model.num_classes();
    let mut out = String::new();
    let _ = writeln!(out, "model      {} ({k} classes)", get("kind"));
    let _ = writeln!(
        out,
        "split      {} ({} instances)",
        get("split"),
        get("instances")
    );
    let _ = writeln!(
        out,
        "confusion matrix (rows: true class, columns: predicted class)"
    );
    let _ = write!(out, "        ");
    for j in 0..k {
        let _ = write!(out, "{:>8}", format!("pred {j}"));
    }
    out.push('\n');
    for i in 0..k {
        let _ = write!(out, "{:<8}", format!("true {i}"));
        for j in 0..k {
            let _ = write!(out, "{:>8}", get(&format!("cm_{i}_{j}")));
        }
        out.push('\n');
    }
    for (name, value) in lines.iter().skip_while(|(n, _)| !n.starts_with("accuracy")) {
        if name.starts_with("params") || name == "sparsity" || name == "flops" {
            continue;
        }
        let unit = if value == "undefined" { "" } else { "%" };
        let _ = writeln!(out, "{name:<11}{value}{unit}");
    }
    out.push_str(&cost_text(&count_params(&file.model)));
    out
}

fn cost_text(cost: &CostReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "weights    {} nonzero of {} ({:.2}% sparse)",
        cost.nnz,
        cost.dense,
        100.0 * cost.sparsity()
    );
    let _ = writeln!(out, "flops      {} per inference", cost.flops);
    let _ = writeln!(
        out,
        "layer             shape        nnz   sparsity  counted"
    );
    for l in &cost.layers {
        let _ = writeln!(
            out,
            "{:<14}{:>11}{:>11}{:>10.4}  {}",
            l.name,
            format!("{}x{}", l.rows, l.cols),
            l.nnz,
            l.sparsity(),
            if l.counted { "yes" } else { "no" }
        );
    }
    out
}

pub fn inspect(path: &Path, format: Format) -> CliResult<String> {
    let file = load_model(path)?;
    let cost = count_params(&file.model);
    let mut lines = vec![
        ("format_version".to_string(), FORMAT_VERSION.to_string()),
        ("kind".to_string(), file.model.kind().name().to_string()),
        ("classes".to_string(), file.model.num_classes().to_string()),
        (
            "input_width".to_string(),
            file.model.input_width().to_string(),
        ),
        (
            "scaler_channels".to_string(),
            file.scaler.channels().to_string(),
        ),
        (
            "phase".to_string(),
            file.meta("phase").unwrap_or("unknown").to_string(),
        ),
    ];
    lines.extend(cost_lines(&cost));
    Ok(match format {
        Format::Csv => {
            let mut out = csv(&lines);
            for l in &cost.layers {
                let _ = writeln!(out, "{}.nnz,{}", l.name, l.nnz);
            }
            out
        }
        Format::Text => {
            let mut out = String::new();
            for (k, v) in lines.iter().take(6) {
                let _ = writeln!(out, "{k:<16}{v}");
            }
            if let Some(cfg) = file.meta("config") {
                out.push_str("training settings\n");
                for l in cfg.lines() {
                    let _ = writeln!(out, "  {l}");
                }
            }
            out.push_str(&cost_text(&cost));
            out
        }
    })
}

/// Trains and evaluates every config in turn. Returns one long-format CSV
/// (`config,name,value`) covering all runs.
pub fn sweep(runs: &[(String, RunConfig)], out_dir: &Path) -> CliResult<String> {
    let mut out = String::from("config,name,value\n");
    for (name, cfg) in runs {
        let model_path = out_dir.join(format!("{name}.model"));
        let mut cfg = cfg.clone();
        cfg.report
            .get_or_insert_with(|| out_dir.join(format!("{name}.report.csv")));
        train(&cfg, &model_path)?;
        let data = required(&cfg.data, "dataset (--data)")?;
        let (_, lines) = eval_lines(&model_path, data, SplitName::Test)?;
        for (k, v) in lines {
            let _ = writeln!(out, "{name},{k},{v}");
        }
    }
    write_text(&out_dir.join("sweep.csv"), &out)?;
    Ok(out)
}
