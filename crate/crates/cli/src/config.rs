//! Flat `key = value` run configuration. Later sources override earlier
//! ones: defaults for the model kind, then the config file, then `--set`
//! flags and dedicated command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sparsenet::datapipe::SynthConfig;
use sparsenet::growprune::GrowPruneSchedule;
use sparsenet::model::{ModelKind, EDGE_GATE_HIDDEN_WIDTH, EDGE_STATE_WIDTH, SERVER_HIDDEN_WIDTHS};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(format!("unknown split `{other}` (train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub kind: ModelKind,
    pub classes: usize,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub split: SplitName,
    pub stop_after_growth: bool,
    pub resume: Option<PathBuf>,
    pub synth: SynthConfig,
    pub hidden_widths: Vec<usize>,
    pub state_width: usize,
    pub gate_hidden_width: usize,
    pub schedule: GrowPruneSchedule,
}

impl RunConfig {
    pub fn defaults(kind: ModelKind, classes: usize) -> Self {
        RunConfig {
            seed: 0,
            kind,
            classes,
            data: None,
            model: None,
            report: None,
            split: SplitName::Test,
            stop_after_growth: false,
            resume: None,
            synth: if classes == 3 {
                SynthConfig::three_class()
            } else {
                SynthConfig::default()
            },
            hidden_widths: SERVER_HIDDEN_WIDTHS.to_vec(),
            state_width: EDGE_STATE_WIDTH,
            gate_hidden_width: EDGE_GATE_HIDDEN_WIDTH,
            schedule: match kind {
                ModelKind::Server => GrowPruneSchedule::server(),
                ModelKind::Edge => GrowPruneSchedule::edge(),
            },
        }
    }

    pub fn dropout(&self) -> f64 {
        self.schedule.dropout_rate
    }

    /// Builds a configuration from ordered `(key, value)` settings.
    pub fn from_settings(settings: &[(String, String)]) -> CliResult<Self> {
        let last = |key: &str| {
            settings
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        };
        let kind = match last("kind") {
            Some(v) => parse_value("kind", v)?,
            None => ModelKind::Server,
        };
        let classes = match last("classes") {
            Some(v) => parse_value("classes", v)?,
            None => 2,
        };
        let mut cfg = RunConfig::defaults(kind, classes);
        for (k, v) in settings {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        if !(2..=3).contains(&self.classes) {
            return Err(CliError::Config(format!(
                "classes must be 2 or 3, got {}",
                self.classes
            )));
        }
        if self.synth.class_counts.len() != self.classes {
            return Err(CliError::Config(format!(
                "class_counts lists {} classes but classes = {}",
                self.synth.class_counts.len(),
                self.classes
            )));
        }
        if self.hidden_widths.contains(&0) || self.state_width == 0 || self.gate_hidden_width == 0 {
            return Err(CliError::Config("layer widths must be positive".into()));
        }
        self.schedule.validate()?;
        self.synth.validate()?;
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let s = &mut self.schedule;
        let y = &mut self.synth;
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "kind" => self.kind = parse_value(key, value)?,
            "classes" => self.classes = parse_value(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "model" => self.model = Some(PathBuf::from(value)),
            "report" => self.report = Some(PathBuf::from(value)),
            "split" => self.split = parse_value(key, value)?,
            "stop_after_growth" => self.stop_after_growth = parse_value(key, value)?,
            "resume" => self.resume = Some(PathBuf::from(value)),

            "class_counts" => y.class_counts = parse_list(key, value)?,
            "min_hours" => y.min_hours = parse_value(key, value)?,
            "max_hours" => y.max_hours = parse_value(key, value)?,
            "hours" => {
                y.min_hours = parse_value(key, value)?;
                y.max_hours = y.min_hours;
            }
            "separation" => y.separation = parse_value(key, value)?,
            "subject_jitter" => y.subject_jitter = parse_value(key, value)?,
            "demographic_spread" => y.demographic_spread = parse_value(key, value)?,
            "phi" => y.phi = parse_value(key, value)?,
            "noise" => y.noise = parse_value(key, value)?,
            "shared_noise" => y.shared_noise = parse_value(key, value)?,
            "max_start_offset_ms" => y.max_start_offset_ms = parse_value(key, value)?,

            "hidden_widths" => self.hidden_widths = parse_list(key, value)?,
            "state_width" => self.state_width = parse_value(key, value)?,
            "gate_hidden_width" => self.gate_hidden_width = parse_value(key, value)?,

            "seed_fill_rate" => s.seed_fill_rate = parse_value(key, value)?,
            "growth_ratio" => s.growth_ratio = parse_value(key, value)?,
            "growth_epochs" => s.growth_epochs = parse_value(key, value)?,
            "initial_pruning_ratio" => s.initial_pruning_ratio = parse_value(key, value)?,
            "pruning_ratio_floor" => s.pruning_ratio_floor = parse_value(key, value)?,
            "learning_rate" => s.learning_rate = parse_value(key, value)?,
            "lr_decay_factor" => s.lr_decay_factor = parse_value(key, value)?,
            "plateau_patience" => s.plateau_patience = parse_value(key, value)?,
            "max_epochs" => s.max_epochs = parse_value(key, value)?,
            "max_lr_decays" => s.max_lr_decays = parse_value(key, value)?,
            "batch_size" => s.batch_size = parse_value(key, value)?,
            "dropout_rate" => s.dropout_rate = parse_value(key, value)?,
            "momentum" => s.momentum = parse_value(key, value)?,
            "recovery_tolerance" => s.recovery_tolerance = parse_value(key, value)?,
            "max_prune_iterations" => s.max_prune_iterations = parse_value(key, value)?,
            other => return Err(CliError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// The settings that determine a model, as `key=value` lines.
    pub fn training_text(&self) -> String {
        let s = &self.schedule;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        line("seed", self.seed.to_string());
        line("kind", self.kind.name().to_string());
        line("hidden_widths", join(&self.hidden_widths));
        line("state_width", self.state_width.to_string());
        line("gate_hidden_width", self.gate_hidden_width.to_string());
        line("seed_fill_rate", s.seed_fill_rate.to_string());
        line("growth_ratio", s.growth_ratio.to_string());
        line("growth_epochs", s.growth_epochs.to_string());
        line("initial_pruning_ratio", s.initial_pruning_ratio.to_string());
        line("pruning_ratio_floor", s.pruning_ratio_floor.to_string());
        line("learning_rate", s.learning_rate.to_string());
        line("lr_decay_factor", s.lr_decay_factor.to_string());
        line("plateau_patience", s.plateau_patience.to_string());
        line("max_epochs", s.max_epochs.to_string());
        line("max_lr_decays", s.max_lr_decays.to_string());
        line("batch_size", s.batch_size.to_string());
        line("dropout_rate", s.dropout_rate.to_string());
        line("momentum", s.momentum.to_string());
        line("recovery_tolerance", s.recovery_tolerance.to_string());
        line("max_prune_iterations", s.max_prune_iterations.to_string());
        out
    }
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list(key: &str, value: &str) -> CliResult<Vec<usize>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

/// Splits one `key=value` setting.
pub fn parse_setting(text: &str) -> CliResult<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("expected key=value, got `{text}`")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(CliError::Config(format!("empty key in `{text}`")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

/// Reads a config file: one `key=value` per line, `#` starts a comment.
pub fn read_config_file(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(
            parse_setting(line)
                .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Ordered settings gathered from all sources.
pub fn gather(
    config: Option<&Path>,
    sets: &[String],
    extra: impl IntoIterator<Item = (&'static str, Option<String>)>,
) -> CliResult<Vec<(String, String)>> {
    let mut settings = match config {
        Some(p) => read_config_file(p)?,
        None => Vec::new(),
    };
    for s in sets {
        settings.push(parse_setting(s)?);
    }
    for (k, v) in extra {
        if let Some(v) = v {
            settings.push((k.to_string(), v));
        }
    }
    Ok(settings)
}

/// Reads a metadata block written by [`RunConfig::training_text`].
pub fn parse_training_text(text: &str) -> CliResult<BTreeMap<String, String>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_setting)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use sparsenet::model::DEFAULT_DROPOUT;

    fn settings(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn kind_selects_recipe_defaults() {
        let server = RunConfig::from_settings(&[]).unwrap();
        assert_eq!(server.schedule.learning_rate, 0.005);
        assert_eq!(server.schedule.batch_size, 256);
        assert_eq!(server.schedule.plateau_patience, 50);
        let edge = RunConfig::from_settings(&settings(&[("kind", "edge")])).unwrap();
        assert_eq!(edge.schedule.learning_rate, 0.001);
        assert_eq!(edge.schedule.batch_size, 64);
        assert_eq!(edge.schedule.plateau_patience, 30);
        assert_eq!(edge.schedule.seed_fill_rate, 0.2);
        assert_eq!(server.dropout(), DEFAULT_DROPOUT);
    }

    #[test]
    fn later_settings_win_and_unknown_keys_fail() {
        let cfg = RunConfig::from_settings(&settings(&[("batch_size", "8"), ("batch_size", "16")]))
            .unwrap();
        assert_eq!(cfg.schedule.batch_size, 16);
        assert!(matches!(
            RunConfig::from_settings(&settings(&[("nope", "1")])),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_settings(&settings(&[("batch_size", "x")])),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn three_classes_use_three_class_counts() {
        let cfg = RunConfig::from_settings(&settings(&[("classes", "3")])).unwrap();
        assert_eq!(cfg.synth.class_counts, vec![14, 13, 25]);
        assert!(
            RunConfig::from_settings(&settings(&[("classes", "3"), ("class_counts", "5,5")]))
                .is_err()
        );
    }

    #[test]
    fn training_text_round_trips() {
        let cfg = RunConfig::from_settings(&settings(&[("kind", "edge"), ("state_width", "16")]))
            .unwrap();
        let map = parse_training_text(&cfg.training_text()).unwrap();
        let pairs: Vec<(String, String)> = map.into_iter().collect();
        assert_eq!(
            RunConfig::from_settings(&pairs).unwrap().training_text(),
            cfg.training_text()
        );
    }
}
