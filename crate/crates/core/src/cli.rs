//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
//! error, 3 internal invariant violation.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{conv_param_count, InputShape, ModelGraph, PruneReport};
use crate::error::{Error, Result};
use crate::io::{self, load_checkpoint, save_checkpoint, RunConfig, SyntheticSpec};
use crate::ranking::{check_ratio, rank, RankMethod};
use crate::similarity::{build_ssm, MetricKind};
use crate::tensor::flatten_filters;
use crate::trainer::{train_prune, Dataset, EpochRecord};

pub const METRICS_HEADER: [&str; 6] = ["epoch", "train_loss", "train_acc", "test_acc", "conv_params", "reduction_pct"];
pub const PRUNE_LOG_HEADER: [&str; 5] = ["epoch", "layer", "indices", "params_before", "params_after"];
pub const RANKING_HEADER: [&str; 3] = ["rank", "filter_index", "score"];
pub const SWEEP_HEADER: [&str; 4] = ["ratio", "epoch", "test_acc", "reduction_pct"];

#[derive(Debug, Parser)]
#[command(name = "ssmprune", version, about = "Self-similarity filter pruning while training")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the reference network, pruning after each early epoch.
    Train(RunFlags),
    /// Dump per-layer SSMs and rankings of a checkpoint.
    Analyze(AnalyzeArgs),
    /// Train once per pruning ratio and collect the curves.
    Sweep(SweepArgs),
    /// Write a synthetic dataset in CIFAR-10 binary format.
    Synth(SynthArgs),
}

/// Flags mirror config keys; a flag wins over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    prune_epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    subset: Option<String>,
    #[arg(long)]
    test_subset: Option<String>,
    #[arg(long)]
    ratio: Option<String>,
    #[arg(long, value_parser = ["greedy", "area"])]
    method: Option<String>,
    #[arg(long, value_parser = ["l2", "cosine", "cityblock", "kl"])]
    metric: Option<String>,
    #[arg(long, value_parser = ["current", "original"])]
    ratio_base: Option<String>,
    #[arg(long)]
    min_filters: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pair_dedup: Option<String>,
    #[arg(long)]
    no_prune: bool,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    hflip: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    parallel: Option<String>,
    /// Four comma-separated conv widths.
    #[arg(long)]
    conv: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
}

impl RunFlags {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let pairs = [
            ("output", "dir", &self.out),
            ("data", "path", &self.data),
            ("train", "epochs", &self.epochs),
            ("prune", "prune_epochs", &self.prune_epochs),
            ("train", "batch_size", &self.batch_size),
            ("train", "learning_rate", &self.lr),
            ("train", "momentum", &self.momentum),
            ("train", "weight_decay", &self.weight_decay),
            ("train", "seed", &self.seed),
            ("data", "subset", &self.subset),
            ("data", "test_subset", &self.test_subset),
            ("prune", "ratio", &self.ratio),
            ("prune", "method", &self.method),
            ("prune", "metric", &self.metric),
            ("prune", "ratio_base", &self.ratio_base),
            ("prune", "min_filters", &self.min_filters),
            ("prune", "pair_dedup", &self.pair_dedup),
            ("train", "hflip", &self.hflip),
            ("train", "parallel", &self.parallel),
            ("model", "conv", &self.conv),
            ("model", "hidden", &self.hidden),
        ];
        for (section, key, value) in pairs {
            if let Some(v) = value {
                cfg.set(section, key, v)?;
            }
        }
        if self.no_prune {
            cfg.prune_enabled = false;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    checkpoint: PathBuf,
    #[arg(long, default_value = "l2", value_parser = ["l2", "cosine", "cityblock", "kl"])]
    metric: String,
    #[arg(long, default_value = "area", value_parser = ["greedy", "area"])]
    method: String,
    #[arg(long, default_value = "analysis")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Comma-separated ratios; 0 means a no-prune baseline.
    #[arg(long, value_delimiter = ',', required = true)]
    ratios: Vec<f64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    train_files: usize,
    #[arg(long, default_value_t = 1000)]
    per_file: usize,
    #[arg(long, default_value_t = 1000)]
    test: usize,
    #[arg(long, default_value_t = 48.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidValue { .. } | Error::InvalidRatio(_) => 1,
        Error::Io { .. }
        | Error::MissingFile(_)
        | Error::MalformedRecord { .. }
        | Error::BadMagic
        | Error::BadChecksum
        | Error::UnsupportedVersion(_)
        | Error::MalformedCheckpoint(_)
        | Error::Csv(_) => 2,
        _ => 3,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(flags) => flags.resolve().and_then(|cfg| cmd_train(&cfg).map(|_| ())),
        Command::Analyze(a) => (|| cmd_analyze(&a.checkpoint, a.metric.parse()?, a.method.parse()?, &a.out))(),
        Command::Sweep(s) => s.run.resolve().and_then(|cfg| cmd_sweep(&cfg, &s.ratios).map(|_| ())),
        Command::Synth(s) => io::write_synthetic_cifar(
            &s.out,
            &SyntheticSpec {
                train_files: s.train_files,
                per_file: s.per_file,
                test: s.test,
                noise: s.noise,
                seed: s.seed,
            },
        ),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub reports: Vec<PruneReport>,
    pub model: ModelGraph,
}

pub fn initial_model(cfg: &RunConfig) -> Result<ModelGraph> {
    let mut g: ModelGraph = cfg.model.build(InputShape::CIFAR)?;
    g.init_he(&mut ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x5353_4d50));
    Ok(g)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let (train, test, _) = io::load_cifar10(&cfg.data)?;
    train_on(cfg, &train, &test)
}

/// Runs `cmd_train` on already loaded data and writes every artifact.
pub fn train_on(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<TrainSummary> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    create_dir(out)?;
    let model = initial_model(cfg)?;
    let before = conv_param_count(&model);
    info!(
        "training {} examples, testing {}; conv params {} ({} without bias)",
        train.len(),
        test.len(),
        before.total(),
        before.weights
    );
    let outcome = train_prune(model, train, test, &cfg.train_config(), |_| {})?;

    let mut w = csv_writer(&out.join("metrics.csv"))?;
    w.write_record(METRICS_HEADER)?;
    for r in &outcome.records {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_acc.to_string(),
            r.test_acc.to_string(),
            r.conv_params.to_string(),
            r.cumulative_reduction_percent.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(out.join("metrics.csv"), e))?;

    let mut w = csv_writer(&out.join("prune_log.csv"))?;
    w.write_record(PRUNE_LOG_HEADER)?;
    for rep in &outcome.reports {
        for l in &rep.layers {
            let idx: Vec<String> = l.pruned_indices.iter().map(usize::to_string).collect();
            w.write_record([
                rep.epoch.to_string(),
                l.layer_id.to_string(),
                idx.join(";"),
                l.conv_params_before.to_string(),
                l.conv_params_after.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(out.join("prune_log.csv"), e))?;

    save_checkpoint(&outcome.model, &out.join("model.ssmp"))?;

    let after = conv_param_count(&outcome.model);
    let last = outcome.records.last();
    let mut summary = cfg.to_config_string();
    summary.push_str(&format!(
        "\n# result\n# conv params before: {} ({} without bias)\n# conv params after: {} ({} without bias)\n# reduction: {}%\n# final test accuracy: {}%\n",
        before.total(),
        before.weights,
        after.total(),
        after.weights,
        last.map_or(0.0, |r| r.cumulative_reduction_percent),
        last.map_or(0.0, |r| r.test_acc),
    ));
    let path = out.join("summary.txt");
    fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;

    Ok(TrainSummary {
        records: outcome.records,
        reports: outcome.reports,
        model: outcome.model,
    })
}

/// Writes `ssm_<layer>.csv` and `ranking_<layer>.csv` for every conv layer
/// with at least two filters. The model is left untouched.
pub fn cmd_analyze(checkpoint: &Path, metric: MetricKind, method: RankMethod, out: &Path) -> Result<()> {
    let g = load_checkpoint(checkpoint)?;
    create_dir(out)?;
    for id in g.conv_layer_ids() {
        let filters = flatten_filters(&g.conv(id)?.weights);
        if filters.n() < 2 {
            continue;
        }
        let ssm = build_ssm(&filters, metric)?;
        let n = ssm.n();

        let mut w = csv_writer(&out.join(format!("ssm_{id}.csv")))?;
        let mut header = vec!["filter".to_string()];
        header.extend((0..n).map(|j| j.to_string()));
        w.write_record(&header)?;
        for i in 0..n {
            let mut row = vec![i.to_string()];
            row.extend(ssm.row(i).iter().map(f32::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(out, e))?;

        let ranking = rank(&ssm, method)?;
        let mut w = csv_writer(&out.join(format!("ranking_{id}.csv")))?;
        w.write_record(RANKING_HEADER)?;
        for (pos, &f) in ranking.order.iter().enumerate() {
            w.write_record([pos.to_string(), f.to_string(), ranking.scores[f].to_string()])?;
        }
        w.flush().map_err(|e| Error::io(out, e))?;
        info!("layer {id}: {n} filters analysed");
    }
    Ok(())
}

/// Trains once per ratio into `<out>/ratio_<r>/` and writes `<out>/sweep.csv`.
pub fn cmd_sweep(cfg: &RunConfig, ratios: &[f64]) -> Result<Vec<(f64, TrainSummary)>> {
    if ratios.is_empty() {
        return Err(Error::invalid("ratios", "need at least one ratio"));
    }
    for &ratio in ratios.iter().filter(|&&r| r != 0.0) {
        check_ratio(ratio).map_err(|e| Error::invalid("ratios", format!("ratio {ratio}: {e}")))?;
    }
    cfg.validate()?;
    create_dir(&cfg.out_dir)?;
    let (train, test, _) = io::load_cifar10(&cfg.data)?;
    let mut runs = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let mut run = cfg.clone();
        run.out_dir = cfg.out_dir.join(format!("ratio_{ratio}"));
        if ratio == 0.0 {
            run.prune_enabled = false;
        } else {
            run.prune_enabled = true;
            run.prune.ratio = ratio;
        }
        info!("sweep: ratio {ratio}");
        let summary = train_on(&run, &train, &test).map_err(|e| {
            log::error!("sweep run with ratio {ratio} failed");
            match e {
                Error::InvalidRatio(_) | Error::InvalidValue { .. } => {
                    Error::invalid("ratios", format!("ratio {ratio}: {e}"))
                }
                other => other,
            }
        })?;
        runs.push((ratio, summary));
    }

    let path = cfg.out_dir.join("sweep.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(SWEEP_HEADER)?;
    for (ratio, s) in &runs {
        for r in &s.records {
            w.write_record([
                ratio.to_string(),
                r.epoch.to_string(),
                r.test_acc.to_string(),
                r.cumulative_reduction_percent.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(runs)
}
