//! Command-line front end: training, gradient and bound checks, sweeps,
//! rendering and run reports over TOML config files.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error, 3 a check ran and
//! failed its tolerance.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use clusterhead_core::diagnostics::{
    default_sparsity_grid, gradient_bound, log_grid, run_report, sparsity_curve, BoundReport, SUCCESS_ACCURACY,
};
use clusterhead_core::gradients::{gradient_check, CheckReport, CheckTolerances, EnginePair, TrainMask};
use clusterhead_core::model::{init_params, HyperParams};
use clusterhead_core::numerics::NormVariant;
use clusterhead_core::render::{frame_file_name, render_frame, render_metrics, Layout, METRICS_FIGURE};
use clusterhead_core::snapshot::{read_run_log, read_run_log_partial, RunLog};
use clusterhead_core::task::sample_dataset;
use clusterhead_core::training::{
    datasets, finetune, hyper_sweep, read_metrics_csv, train, write_sweep_csv, GradLog, MetricsRow, RunArtifacts,
    SweepGrid, TrainConfig, METRICS_FILE, RUN_LOG_FILE, SWEEP_FILE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

pub const CONFIG_ECHO_FILE: &str = "config.echo";
pub const GRAD_CHECK_FILE: &str = "grad_check.json";
pub const BOUND_FILE: &str = "bound.json";
pub const REPORT_FILE: &str = "report.json";
pub const SPARSITY_FILE: &str = "sparsity.csv";

#[derive(Debug, Parser)]
#[command(name = "clusterhead", version, about = "Train and inspect a one-layer transformer on sparse modular addition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model; writes config.echo, metrics.csv and run.jsonl.
    Train(TrainArgs),
    /// Grow the vocabulary of a trained run and keep training.
    Finetune(FinetuneArgs),
    /// Compare closed-form, backprop and finite-difference gradients.
    GradCheck(GradCheckArgs),
    /// Check the gradient bound at every snapshot of a run.
    BoundCheck(RunDirArgs),
    /// Grid over batch size, width, learning rate and MLP discount.
    Sweep(SweepArgs),
    /// Train several seeds and tabulate activation sparsity against ε.
    SparsitySweep(SparsityArgs),
    /// SVG frames for the snapshots of a run, plus metrics.svg.
    Render(RenderArgs),
    /// Loss events, bound slack, clusters and sparsity of a finished run.
    Report(RunDirArgs),
}

/// One flag per config field; flags override `--config`.
#[derive(Debug, Default, Clone, Args)]
pub struct ConfigArgs {
    /// TOML config file; missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Freeze E and P and assert the gradient bound every epoch.
    #[arg(long, visible_alias = "theory_mode")]
    pub theory_mode: bool,
    #[arg(long, visible_alias = "seq_len")]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub h: Option<usize>,
    /// standard | smoothed
    #[arg(long, value_parser = parse_enum::<NormVariant>)]
    pub norm: Option<NormVariant>,
    #[arg(long, visible_alias = "n_train")]
    pub n_train: Option<usize>,
    #[arg(long, visible_alias = "n_test")]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// 0 means full batch.
    #[arg(long, visible_alias = "batch_size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, visible_alias = "mlp_lr_discount")]
    pub mlp_lr_discount: Option<f64>,
    /// Two comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub betas: Option<Vec<f64>>,
    #[arg(long, visible_alias = "adam_eps")]
    pub adam_eps: Option<f64>,
    /// Trainable tensors, e.g. `q,V,W,U`.
    #[arg(long, value_delimiter = ',')]
    pub mask: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// 0 keeps only the first and last epoch.
    #[arg(long, visible_alias = "snapshot_every")]
    pub snapshot_every: Option<usize>,
    /// full_batch_norms | minibatch_norms
    #[arg(long, visible_alias = "grad_log", value_parser = parse_enum::<GradLog>)]
    pub grad_log: Option<GradLog>,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

/// Raised for bad invocations that clap itself cannot see: unreadable or
/// invalid config files, invalid field values.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

impl ConfigArgs {
    /// `base`, then the config file, then `--theory-mode`, then flags.
    pub fn resolve(&self, base: TrainConfig) -> anyhow::Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                load_config_over(&base, &text).map_err(|e| usage(format!("{}: {e}", path.display())))?
            }
            None => base,
        };
        if self.theory_mode {
            c = c.theory_mode();
        }
        let task = &mut c.hyper.task;
        set(&mut task.seq_len, self.seq_len);
        set(&mut task.prefix_len, self.k);
        set(&mut task.vocab, self.p);
        set(&mut c.hyper.embed_dim, self.d);
        set(&mut c.hyper.hidden, self.h);
        set(&mut c.hyper.norm, self.norm);
        set(&mut c.n_train, self.n_train);
        set(&mut c.n_test, self.n_test);
        set(&mut c.epochs, self.epochs);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.lr, self.lr);
        set(&mut c.mlp_lr_discount, self.mlp_lr_discount);
        if let Some(b) = &self.betas {
            c.betas = [b[0], b[1]];
        }
        set(&mut c.adam_eps, self.adam_eps);
        if let Some(m) = &self.mask {
            c.mask = TrainMask::from_symbols(m).map_err(usage)?;
        }
        set(&mut c.seed, self.seed);
        set(&mut c.snapshot_every, self.snapshot_every);
        set(&mut c.grad_log, self.grad_log);
        c.validate().map_err(|e| usage(e.to_string()))?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Parses TOML keys over `base`: keys absent from the file keep `base`'s values.
pub fn load_config_over(base: &TrainConfig, text: &str) -> anyhow::Result<TrainConfig> {
    let overlay: toml::Table = toml::from_str(text)?;
    let mut merged = toml::Table::try_from(base)?;
    merge_tables(&mut merged, overlay);
    Ok(toml::Value::Table(merged).try_into()?)
}

fn merge_tables(into: &mut toml::Table, from: toml::Table) {
    for (key, value) in from {
        match (into.get_mut(&key), value) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge_tables(a, b),
            (_, v) => {
                into.insert(key, v);
            }
        }
    }
}

pub fn config_to_toml(config: &TrainConfig) -> anyhow::Result<String> {
    Ok(toml::to_string(config)?)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Directory of the pretrained run; its config is the base config.
    #[arg(long)]
    pub from: PathBuf,
    /// Vocabulary size after expansion.
    #[arg(long, visible_alias = "new_p")]
    pub new_p: Option<usize>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Number of seeds, starting at the config seed.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Tensors compared against finite differences.
    #[arg(long, value_delimiter = ',', default_value = "q,V,W,U")]
    pub tensors: Vec<String>,
    #[arg(long, visible_alias = "fd_step", default_value_t = 1e-5)]
    pub fd_step: f64,
    #[arg(long, visible_alias = "engine_tol", default_value_t = 1e-10)]
    pub engine_tol: f64,
    #[arg(long, visible_alias = "fd_tol", default_value_t = 1e-6)]
    pub fd_tol: f64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Also write grad_check.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunDirArgs {
    /// Directory written by `train` or `finetune`.
    pub run: PathBuf,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, visible_alias = "grid_batch_size", value_delimiter = ',')]
    pub grid_batch_size: Vec<usize>,
    #[arg(long, visible_alias = "grid_h", value_delimiter = ',')]
    pub grid_h: Vec<usize>,
    #[arg(long, visible_alias = "grid_lr", value_delimiter = ',')]
    pub grid_lr: Vec<f64>,
    #[arg(long, visible_alias = "grid_mlp_lr_discount", value_delimiter = ',')]
    pub grid_mlp_lr_discount: Vec<f64>,
    /// Number of seeds, starting at the config seed.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SparsityArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, visible_alias = "eps_min", default_value_t = 1e-5)]
    pub eps_min: f64,
    #[arg(long, visible_alias = "eps_max", default_value_t = 1e2)]
    pub eps_max: f64,
    #[arg(long, visible_alias = "eps_points", default_value_t = 22)]
    pub eps_points: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    pub run: PathBuf,
    /// Render snapshots whose epoch is a multiple of this (the last always).
    #[arg(long, default_value_t = 10)]
    pub every: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(Outcome::Passed) => EXIT_OK,
        Ok(Outcome::CheckFailed) => EXIT_CHECK_FAILED,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    CheckFailed,
}

pub fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::BoundCheck(a) => cmd_bound_check(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::SparsitySweep(a) => cmd_sparsity(a),
        Command::Render(a) => cmd_render(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn save_run(out: &Path, run: &RunArtifacts) -> anyhow::Result<()> {
    run.write_to_dir(out).with_context(|| format!("writing run to {}", out.display()))?;
    let last = run.final_metrics();
    println!(
        "epoch {}: train loss {:.4}, test loss {:.4}, test acc {:.4}",
        last.epoch, last.train_loss, last.test_loss, last.test_acc
    );
    Ok(())
}

fn echo_config(out: &Path, config: &TrainConfig) -> anyhow::Result<()> {
    create_dir(out)?;
    fs::write(out.join(CONFIG_ECHO_FILE), config_to_toml(config)?).context("writing config echo")
}

fn cmd_train(a: &TrainArgs) -> anyhow::Result<Outcome> {
    let config = a.config.resolve(TrainConfig::default())?;
    echo_config(&a.out, &config)?;
    let run = train(&config).context("training")?;
    save_run(&a.out, &run)?;
    Ok(Outcome::Passed)
}

fn cmd_finetune(a: &FinetuneArgs) -> anyhow::Result<Outcome> {
    let log = read_run_log(&a.from.join(RUN_LOG_FILE)).with_context(|| format!("reading {}", a.from.display()))?;
    let pretrained = &log.last().ok_or_else(|| anyhow!("{} has no snapshots", a.from.display()))?.params;
    let new_p = a.new_p.unwrap_or(pretrained.vocab() + 1);
    let mut base = log.header.config.clone();
    base.hyper.task.vocab = new_p;
    let config = a.config.resolve(base)?;
    echo_config(&a.out, &config)?;
    let run = finetune(pretrained, new_p, &config).context("finetuning")?;
    save_run(&a.out, &run)?;
    Ok(Outcome::Passed)
}

#[derive(Debug, Serialize)]
pub struct GradCheckSummary {
    pub hyper: HyperParams,
    pub seeds: Vec<u64>,
    pub batch: usize,
    pub tolerances: CheckTolerances,
    /// Worst error per (engine pair, tensor) over all seeds.
    pub worst: CheckReport,
    pub failing_seeds: Vec<u64>,
    pub pass: bool,
}

/// Gradient check on freshly initialized parameters for each seed.
pub fn grad_check_suite(
    hyper: &HyperParams,
    seeds: &[u64],
    batch: usize,
    mask: TrainMask,
    tol: &CheckTolerances,
    workers: usize,
) -> anyhow::Result<GradCheckSummary> {
    let one = |&seed: &u64| -> anyhow::Result<CheckReport> {
        let params = init_params(hyper, seed)?;
        let data = sample_dataset(batch, &hyper.task, seed)?;
        Ok(gradient_check(&params, &data, mask, tol))
    };
    let reports: Vec<CheckReport> = pool(workers)?.install(|| seeds.par_iter().map(one).collect::<anyhow::Result<_>>())?;
    let mut worst = CheckReport { checks: Vec::new(), pass: true };
    let mut failing_seeds = Vec::new();
    for (seed, r) in seeds.iter().zip(&reports) {
        worst.merge(r);
        if !r.pass {
            failing_seeds.push(*seed);
        }
    }
    let pass = failing_seeds.is_empty();
    Ok(GradCheckSummary { hyper: *hyper, seeds: seeds.to_vec(), batch, tolerances: *tol, worst, failing_seeds, pass })
}

fn pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?)
}

fn pair_name(pair: EnginePair) -> &'static str {
    match pair {
        EnginePair::ClosedFormVsBackprop => "closed-form vs backprop",
        EnginePair::ClosedFormVsFiniteDifference => "closed-form vs finite-diff",
        EnginePair::BackpropVsFiniteDifference => "backprop vs finite-diff",
    }
}

fn cmd_grad_check(a: &GradCheckArgs) -> anyhow::Result<Outcome> {
    let config = a.config.resolve(TrainConfig::default())?;
    let mask = TrainMask::from_symbols(&a.tensors).map_err(usage)?;
    let tol = CheckTolerances { engine_pair: a.engine_tol, finite_difference: a.fd_tol, fd_step: a.fd_step };
    if a.batch == 0 {
        return Err(usage("--batch must be positive"));
    }
    let seeds: Vec<u64> = (config.seed..config.seed + a.seeds).collect();
    let summary = grad_check_suite(&config.hyper, &seeds, a.batch, mask, &tol, a.workers)?;
    for c in &summary.worst.checks {
        println!(
            "{:<28} {:<2} max rel err {:.3e} (tol {:.0e}) {}",
            pair_name(c.pair),
            c.tensor.symbol(),
            c.rel_error,
            c.tolerance,
            if c.pass { "ok" } else { "FAIL" }
        );
    }
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_json(&out.join(GRAD_CHECK_FILE), &summary)?;
    }
    Ok(if summary.pass { Outcome::Passed } else { Outcome::CheckFailed })
}

#[derive(Debug, Serialize)]
pub struct BoundCheckEntry {
    pub epoch: usize,
    #[serde(flatten)]
    pub report: BoundReport,
    pub holds: bool,
}

#[derive(Debug, Serialize)]
pub struct BoundCheckSummary {
    pub entries: Vec<BoundCheckEntry>,
    pub min_slack: f64,
    pub pass: bool,
}

/// The gradient bound at every snapshot of `log`, on the run's training set.
pub fn bound_check_log(log: &RunLog) -> anyhow::Result<BoundCheckSummary> {
    let (train, _) = datasets(&log.header.config)?;
    let mut entries = Vec::new();
    for s in log.snapshots() {
        let report = gradient_bound(&s.params, &train).with_context(|| format!("epoch {}", s.epoch))?;
        entries.push(BoundCheckEntry { epoch: s.epoch, holds: report.holds(), report });
    }
    let min_slack = entries.iter().map(|e| e.report.slack).fold(f64::INFINITY, f64::min);
    let pass = entries.iter().all(|e| e.holds);
    Ok(BoundCheckSummary { entries, min_slack, pass })
}

fn cmd_bound_check(a: &RunDirArgs) -> anyhow::Result<Outcome> {
    let log = read_run_log(&a.run.join(RUN_LOG_FILE)).with_context(|| format!("reading {}", a.run.display()))?;
    let summary = bound_check_log(&log)?;
    let out = a.out.as_ref().unwrap_or(&a.run);
    create_dir(out)?;
    write_json(&out.join(BOUND_FILE), &summary)?;
    let failures = summary.entries.iter().filter(|e| !e.holds).count();
    println!(
        "{} snapshots, {} violations, min slack {:.3e}",
        summary.entries.len(),
        failures,
        summary.min_slack
    );
    Ok(if summary.pass { Outcome::Passed } else { Outcome::CheckFailed })
}

fn cmd_sweep(a: &SweepArgs) -> anyhow::Result<Outcome> {
    let base = a.config.resolve(TrainConfig::default())?;
    let grid = SweepGrid {
        batch_size: a.grid_batch_size.clone(),
        h: a.grid_h.clone(),
        lr: a.grid_lr.clone(),
        mlp_lr_discount: a.grid_mlp_lr_discount.clone(),
    };
    let seeds: Vec<u64> = (base.seed..base.seed + a.seeds).collect();
    echo_config(&a.out, &base)?;
    let table = hyper_sweep(&base, &grid, &seeds, a.workers).context("sweep")?;
    write_sweep_csv(&table, fs::File::create(a.out.join(SWEEP_FILE))?)?;
    for row in &table.rows {
        let c = &row.cell;
        println!(
            "batch {} h {} lr {:e} discount {}: mean {:.3} std {:.3}",
            c.batch_size, c.h, c.lr, c.mlp_lr_discount, row.mean, row.std
        );
    }
    Ok(Outcome::Passed)
}

#[derive(Clone, Debug, Serialize)]
pub struct SparsityModel {
    pub seed: u64,
    pub test_acc: f64,
    pub success: bool,
    /// Sparsity at each grid point.
    pub curve: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SparsityTable {
    pub grid: Vec<f64>,
    pub models: Vec<SparsityModel>,
}

impl SparsityTable {
    /// Median sparsity at `eps` over successful and failed models; `None`
    /// for an empty population or when `eps` is not on the grid.
    pub fn medians_at(&self, eps: f64) -> (Option<f64>, Option<f64>) {
        let Some(i) = self.grid.iter().position(|&g| (g - eps).abs() <= 1e-12 * eps.abs().max(1.0)) else {
            return (None, None);
        };
        let median = |success: bool| {
            let mut v: Vec<f64> = self.models.iter().filter(|m| m.success == success).map(|m| m.curve[i]).collect();
            v.sort_by(f64::total_cmp);
            match v.len() {
                0 => None,
                n if n % 2 == 1 => Some(v[n / 2]),
                n => Some((v[n / 2 - 1] + v[n / 2]) / 2.0),
            }
        };
        (median(true), median(false))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> anyhow::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["seed".to_string(), "test_acc".into(), "success".into()];
        header.extend(self.grid.iter().map(|e| format!("eps_{e:e}")));
        out.write_record(&header)?;
        for m in &self.models {
            let mut rec = vec![m.seed.to_string(), m.test_acc.to_string(), m.success.to_string()];
            rec.extend(m.curve.iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Sparsity curve of a trained run on its own training set.
pub fn sparsity_of(run: &RunArtifacts, grid: &[f64]) -> anyhow::Result<SparsityModel> {
    let (train, _) = datasets(&run.config)?;
    let curve = sparsity_curve(&run.params, &train, grid, run.config.hyper.norm)?;
    let test_acc = run.final_metrics().test_acc;
    Ok(SparsityModel {
        seed: run.config.seed,
        test_acc,
        success: test_acc >= SUCCESS_ACCURACY,
        curve: curve.into_iter().map(|(_, s)| s).collect(),
    })
}

/// Trains one model per seed and measures sparsity over `grid`.
pub fn sparsity_sweep(base: &TrainConfig, seeds: &[u64], grid: &[f64], workers: usize) -> anyhow::Result<SparsityTable> {
    let one = |&seed: &u64| -> anyhow::Result<SparsityModel> {
        let config = TrainConfig { seed, ..base.clone() };
        let run = train(&config).with_context(|| format!("seed {seed}"))?;
        sparsity_of(&run, grid)
    };
    let models = pool(workers)?.install(|| seeds.par_iter().map(one).collect::<anyhow::Result<Vec<_>>>())?;
    Ok(SparsityTable { grid: grid.to_vec(), models })
}

fn cmd_sparsity(a: &SparsityArgs) -> anyhow::Result<Outcome> {
    let mut base = a.config.resolve(TrainConfig::default())?;
    if a.config.snapshot_every.is_none() {
        base.snapshot_every = 0;
    }
    if !(a.eps_min > 0.0 && a.eps_max > a.eps_min && a.eps_points >= 2) {
        return Err(usage("need 0 < --eps-min < --eps-max and --eps-points ≥ 2"));
    }
    let grid = if (a.eps_min, a.eps_max, a.eps_points) == (1e-5, 1e2, 22) {
        default_sparsity_grid()
    } else {
        log_grid(a.eps_min, a.eps_max, a.eps_points)
    };
    let seeds: Vec<u64> = (base.seed..base.seed + a.seeds).collect();
    echo_config(&a.out, &base)?;
    let table = sparsity_sweep(&base, &seeds, &grid, a.workers)?;
    table.write_csv(fs::File::create(a.out.join(SPARSITY_FILE))?)?;
    let successes = table.models.iter().filter(|m| m.success).count();
    let (ok, failed) = table.medians_at(1.0);
    let show = |m: Option<f64>| m.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    println!(
        "{successes}/{} successful; median sparsity at eps=1: successful {}, failed {}",
        table.models.len(),
        show(ok),
        show(failed)
    );
    Ok(Outcome::Passed)
}

fn load_metrics(run: &Path, log: &RunLog) -> anyhow::Result<Vec<MetricsRow>> {
    let path = run.join(METRICS_FILE);
    if path.exists() {
        Ok(read_metrics_csv(fs::File::open(&path)?).with_context(|| format!("reading {}", path.display()))?)
    } else {
        Ok(log.metrics())
    }
}

fn cmd_render(a: &RenderArgs) -> anyhow::Result<Outcome> {
    if a.every == 0 {
        return Err(usage("--every must be positive"));
    }
    let (log, tail_error) =
        read_run_log_partial(&a.run.join(RUN_LOG_FILE)).with_context(|| format!("reading {}", a.run.display()))?;
    if let Some(e) = tail_error {
        eprintln!("warning: stopped reading the run log: {e}");
    }
    let metrics = load_metrics(&a.run, &log)?;
    let out = a.out.as_ref().unwrap_or(&a.run);
    create_dir(out)?;
    let layout = Layout::for_log(&log, &metrics);
    let snapshots = log.snapshots();
    let mut frames = 0;
    for (i, s) in snapshots.iter().enumerate() {
        if s.epoch % a.every == 0 || i + 1 == snapshots.len() {
            fs::write(out.join(frame_file_name(s.epoch)), render_frame(s, &layout))?;
            frames += 1;
        }
    }
    fs::write(out.join(METRICS_FIGURE), render_metrics(&metrics)?)?;
    println!("{frames} frames and {METRICS_FIGURE} written to {}", out.display());
    Ok(Outcome::Passed)
}

fn cmd_report(a: &RunDirArgs) -> anyhow::Result<Outcome> {
    let log = read_run_log(&a.run.join(RUN_LOG_FILE)).with_context(|| format!("reading {}", a.run.display()))?;
    let metrics = load_metrics(&a.run, &log)?;
    let last = log.last().ok_or_else(|| anyhow!("{} has no snapshots", a.run.display()))?;
    let config = &log.header.config;
    let (train, _) = datasets(config)?;
    let report = run_report(&metrics, &last.params, &train, &log.header.probes, config.hyper.norm)?;
    let out = a.out.as_ref().unwrap_or(&a.run);
    create_dir(out)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    println!(
        "final test acc {:.4} ({}), drops {:?}, spikes {:?}, {} clusters",
        report.final_test_accuracy,
        if report.success { "success" } else { "failure" },
        report.events.drops,
        report.events.spikes,
        report.clusters.detected_clusters
    );
    Ok(Outcome::Passed)
}

