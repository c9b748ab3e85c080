//! Run configuration: `key = value` lines grouped under `[section]`
//! headers. `#` starts a comment. Unknown sections and keys are rejected
//! with their line number.
//!
//! ```text
//! [train]   epochs batch_size learning_rate momentum weight_decay
//!           lr_step lr_gamma seed hflip parallel
//! [prune]   enabled ratio method metric min_filters pair_dedup
//!           ratio_base prune_epochs
//! [data]    path train_files test_files subset test_subset
//! [model]   conv hidden
//! [output]  dir
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::engine::{PruneConfig, VggMini};
use crate::error::{Error, Result};
use crate::io::cifar::DatasetSpec;
use crate::linalg::Exec;
use crate::ranking::check_ratio;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `train.prune` is ignored; see [`RunConfig::train_config`].
    pub train: TrainConfig,
    pub prune: PruneConfig,
    pub prune_enabled: bool,
    pub data: DatasetSpec,
    pub model: VggMini,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig {
                prune: None,
                ..TrainConfig::default()
            },
            prune: PruneConfig::default(),
            prune_enabled: true,
            data: DatasetSpec::default(),
            model: VggMini::default(),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::invalid(key, format!("{value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::invalid(key, format!("{value:?} is not a boolean"))),
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn parse_subset(key: &str, value: &str) -> Result<Option<usize>> {
    if value.eq_ignore_ascii_case("all") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at_line = |message: String| Error::Config {
                line: line_no,
                message,
            };
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| at_line(format!("malformed section header {line:?}")))?
                    .trim();
                if !["train", "prune", "data", "model", "output"].contains(&name) {
                    return Err(at_line(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at_line(format!("expected `key = value`, got {line:?}")))?;
            let sec = section
                .as_deref()
                .ok_or_else(|| at_line(format!("key {:?} appears before any [section]", key.trim())))?;
            self.set(sec, key.trim(), value.trim()).map_err(|e| match e {
                Error::InvalidValue { key, message } => at_line(format!("{key}: {message}")),
                other => at_line(other.to_string()),
            })?;
        }
        Ok(())
    }

    /// Sets one key; the same entry point serves config files and flags.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let full = format!("{section}.{key}");
        let k = full.as_str();
        match (section, key) {
            ("train", "epochs") => self.train.epochs = parse(k, value)?,
            ("train", "batch_size") => self.train.batch_size = parse(k, value)?,
            ("train", "learning_rate") => self.train.learning_rate = parse(k, value)?,
            ("train", "momentum") => self.train.momentum = parse(k, value)?,
            ("train", "weight_decay") => self.train.weight_decay = parse(k, value)?,
            ("train", "lr_step") => self.train.lr_step = parse(k, value)?,
            ("train", "lr_gamma") => self.train.lr_gamma = parse(k, value)?,
            ("train", "seed") => {
                self.train.seed = parse(k, value)?;
                self.data.seed = self.train.seed;
            }
            ("train", "hflip") => self.train.hflip = parse_bool(k, value)?,
            ("train", "parallel") => {
                self.train.exec = if parse_bool(k, value)? {
                    Exec::Parallel
                } else {
                    Exec::Sequential
                }
            }
            ("prune", "enabled") => self.prune_enabled = parse_bool(k, value)?,
            ("prune", "ratio") => {
                let ratio = parse(k, value)?;
                check_ratio(ratio).map_err(|e| Error::invalid(k, e.to_string()))?;
                self.prune.ratio = ratio;
            }
            ("prune", "method") => self.prune.method = value.parse()?,
            ("prune", "metric") => self.prune.metric = value.parse()?,
            ("prune", "min_filters") => self.prune.min_filters = parse(k, value)?,
            ("prune", "pair_dedup") => self.prune.pair_dedup = parse_bool(k, value)?,
            ("prune", "ratio_base") => self.prune.ratio_base = value.parse()?,
            ("prune", "prune_epochs") => self.prune.prune_epochs = parse(k, value)?,
            ("data", "path") => self.data.dir = PathBuf::from(value),
            ("data", "train_files") => self.data.train_files = parse_list(value),
            ("data", "test_files") => self.data.test_files = parse_list(value),
            ("data", "subset") => self.data.subset = parse_subset(k, value)?,
            ("data", "test_subset") => self.data.test_subset = parse_subset(k, value)?,
            ("model", "conv") => {
                let widths = parse_list(value)
                    .iter()
                    .map(|w| parse::<usize>(k, w))
                    .collect::<Result<Vec<_>>>()?;
                self.model.conv = widths
                    .try_into()
                    .map_err(|_| Error::invalid(k, "expected four comma-separated widths"))?;
            }
            ("model", "hidden") => self.model.hidden = parse(k, value)?,
            ("output", "dir") => self.out_dir = PathBuf::from(value),
            _ => return Err(Error::invalid(k, "unknown key")),
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            prune: self.prune_enabled.then(|| self.prune.clone()),
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.model.conv.contains(&0) || self.model.hidden == 0 {
            return Err(Error::invalid("model", "layer widths must be positive"));
        }
        Ok(())
    }

    /// Renders the resolved configuration in the file format it was read from.
    pub fn to_config_string(&self) -> String {
        let t = &self.train;
        let p = &self.prune;
        let d = &self.data;
        let subset = |s: Option<usize>| s.map_or("all".to_string(), |v| v.to_string());
        let mut s = String::new();
        let _ = writeln!(s, "[train]");
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "momentum = {}", t.momentum);
        let _ = writeln!(s, "weight_decay = {}", t.weight_decay);
        let _ = writeln!(s, "lr_step = {}", t.lr_step);
        let _ = writeln!(s, "lr_gamma = {}", t.lr_gamma);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "hflip = {}", t.hflip);
        let _ = writeln!(s, "parallel = {}", t.exec == Exec::Parallel);
        let _ = writeln!(s, "\n[prune]");
        let _ = writeln!(s, "enabled = {}", self.prune_enabled);
        let _ = writeln!(s, "ratio = {}", p.ratio);
        let _ = writeln!(s, "method = {}", p.method);
        let _ = writeln!(s, "metric = {}", p.metric);
        let _ = writeln!(s, "min_filters = {}", p.min_filters);
        let _ = writeln!(s, "pair_dedup = {}", p.pair_dedup);
        let _ = writeln!(s, "ratio_base = {}", p.ratio_base);
        let _ = writeln!(s, "prune_epochs = {}", p.prune_epochs);
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "path = {}", d.dir.display());
        let _ = writeln!(s, "train_files = {}", d.train_files.join(", "));
        let _ = writeln!(s, "test_files = {}", d.test_files.join(", "));
        let _ = writeln!(s, "subset = {}", subset(d.subset));
        let _ = writeln!(s, "test_subset = {}", subset(d.test_subset));
        let _ = writeln!(s, "\n[model]");
        let c = self.model.conv;
        let _ = writeln!(s, "conv = {}, {}, {}, {}", c[0], c[1], c[2], c[3]);
        let _ = writeln!(s, "hidden = {}", self.model.hidden);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.out_dir.display());
        s
    }
}
