mod config;
mod manifest;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mppde::datagen::{generate_to_dir, load_dataset, read_meta, read_shard, shard_to_trajectory, GenerateConfig, OmegaMode, Task};
use mppde::error::Error;
use mppde::evaluation::{benchmark, evaluate, rollout, Metric};
use mppde::model::{Architecture, Model, ModelConfig};
use mppde::training::{split_by_seed, train, TrainConfig, TrainMode};
use mppde::validate::run_validation;

use manifest::{parent_dir, RunManifest};

#[derive(Parser)]
#[command(name = "mppde", version, about = "Neural PDE solver: groundtruth generation, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a groundtruth dataset.
    #[command(args_override_self = true)]
    Generate(GenerateArgs),
    /// Check the numerical solvers against closed forms and invariants.
    #[command(args_override_self = true)]
    Validate(ValidateArgs),
    /// Train a model on a dataset.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Roll a model out over a dataset and score it.
    #[command(args_override_self = true)]
    Evaluate(EvaluateArgs),
    /// Roll a model out on one trajectory and write (t, x, u) as CSV.
    #[command(args_override_self = true)]
    Rollout(RolloutArgs),
    /// Time a model rollout against groundtruth generation.
    #[command(args_override_self = true)]
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    /// E1, E2, E3, WE1, WE2 or WE3.
    #[arg(long)]
    task: String,
    /// Number of trajectories.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 250)]
    nt: usize,
    #[arg(long, default_value_t = 100)]
    nx: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Solver resolution for E tasks (defaults to max(200, nx)).
    #[arg(long)]
    gen_nx: Option<usize>,
    /// Overrides the task's final time.
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-8)]
    atol: f64,
    /// Draw forcing frequencies from [-0.4, 0.4] instead of fixing them.
    #[arg(long)]
    symmetric_omega: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ValidateArgs {
    /// Suites to run (comma separated); all when omitted.
    #[arg(long, value_delimiter = ',')]
    suite: Vec<String>,
    /// Report file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    #[value(alias = "onestep")]
    OneStep,
    Pushforward,
    #[value(alias = "noise")]
    GaussianNoise,
    #[value(alias = "pf-gradients")]
    PushforwardWithGradients,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ArchArg {
    MpPde,
    Cnn,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Must match the dataset's task when given.
    #[arg(long)]
    task: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::Pushforward)]
    mode: ModeArg,
    /// Standard deviation of the input noise in gaussian-noise mode.
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    /// Unroll length of the pushforward modes.
    #[arg(long = "N", default_value_t = 2)]
    unroll: usize,
    /// Time slices per bundle.
    #[arg(long = "K", default_value_t = 25)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    /// Message passing layers.
    #[arg(long, default_value_t = 6)]
    layers: usize,
    #[arg(long, value_enum, default_value_t = ArchArg::MpPde)]
    arch: ArchArg,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1e-8)]
    weight_decay: f64,
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    /// Seeds both the initial weights and the window draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SplitArg {
    All,
    Train,
    Val,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Any of accerr, survival, onestep.
    #[arg(long, value_delimiter = ',', default_value = "accerr,survival")]
    metrics: Vec<String>,
    /// Evaluate only the training or validation part of the seed split.
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    /// Report file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct RolloutArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Trajectory shard inside a dataset directory.
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Slices to produce, including the initial bundle; defaults to the trajectory length.
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BenchmarkArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value = "E1")]
    task: String,
    #[arg(long, default_value_t = 250)]
    nt: usize,
    #[arg(long, default_value_t = 100)]
    nx: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Some validation suite did not pass.
#[derive(Debug)]
struct ValidationFailed;

impl std::fmt::Display for ValidationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("validation failed")
    }
}

impl std::error::Error for ValidationFailed {}

fn parse_task(s: &str) -> Result<Task> {
    Ok(s.parse::<Task>()?)
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => {
            fs::create_dir_all(parent_dir(p))?;
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let started = manifest::now();
    let mut cfg = GenerateConfig::new(parse_task(&a.task)?, a.n, a.nt, a.nx, a.seed);
    cfg.gen_nx = a.gen_nx;
    cfg.t_end = a.t_end;
    cfg.rtol = a.rtol;
    cfg.atol = a.atol;
    if a.symmetric_omega {
        cfg.omega_mode = OmegaMode::Symmetric;
    }
    let meta = generate_to_dir(&cfg, &a.out, a.workers)?;
    eprintln!("wrote {} trajectories of {}x{} to {}", meta.n_traj, meta.n_t, meta.n_x, a.out.display());
    RunManifest::new("generate", a, vec![a.seed], started)?.output(&a.out).write(&a.out)
}

fn cmd_validate(a: &ValidateArgs) -> Result<()> {
    let started = manifest::now();
    let report = run_validation(&a.suite)?;
    for s in &report.suites {
        for c in &s.checks {
            let cmp = if c.at_least { ">=" } else { "<" };
            eprintln!(
                "{} {:<13} {:<44} {:>12.4e} {cmp} {:.1e}",
                if c.passed { "PASS" } else { "FAIL" },
                s.name,
                c.name,
                c.value,
                c.limit
            );
        }
    }
    write_json(&report, a.out.as_deref())?;
    if let Some(out) = &a.out {
        RunManifest::new("validate", a, Vec::new(), started)?.output(out).write(&parent_dir(out))?;
    }
    if !report.passed {
        return Err(ValidationFailed.into());
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let started = manifest::now();
    let data = load_dataset(&a.data)?;
    if let Some(t) = &a.task {
        let task = parse_task(t)?;
        if task != data.meta.task {
            return Err(Error::Data(format!("dataset holds {} trajectories, not {task}", data.meta.task)).into());
        }
    }
    let meta = &data.meta;
    let mut cfg = ModelConfig::for_task(meta.task, meta.n_t, meta.n_x, a.k, a.hidden, a.layers)?;
    cfg.dt = meta.t_end / (meta.n_t - 1) as f64;
    if let ArchArg::Cnn = a.arch {
        cfg.arch = Architecture::Cnn1d;
    }
    let mut model = Model::init(cfg, a.seed)?;
    let tc = TrainConfig {
        mode: match a.mode {
            ModeArg::OneStep => TrainMode::OneStep,
            ModeArg::Pushforward => TrainMode::Pushforward,
            ModeArg::GaussianNoise => TrainMode::GaussianNoise { sigma: a.sigma },
            ModeArg::PushforwardWithGradients => TrainMode::PushforwardWithGradients,
        },
        unroll: a.unroll,
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        weight_decay: a.weight_decay,
        seed: a.seed,
        clip: a.clip,
        workers: a.workers,
    };
    let report = train(&mut model, &data, &tc, Some(&a.out))?;
    for e in &report.epochs {
        eprintln!("epoch {:>3}  train rmse {:.4e}  val mse {:.4e}", e.epoch, e.train_rmse, e.val_mse);
    }
    eprintln!(
        "initial val mse {:.4e}, best {:.4e} at epoch {}",
        report.initial_val_mse, report.best_val_mse, report.best_epoch
    );
    write_json(&report, Some(&a.out.join("train_report.json")))?;
    RunManifest::new("train", a, vec![a.seed], started)?
        .input(&a.data)
        .output(&a.out)
        .write(&a.out)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let started = manifest::now();
    let model = Model::load(&a.ckpt)?;
    let mut data = load_dataset(&a.data)?;
    if a.split != SplitArg::All {
        let (train_idx, val_idx) = split_by_seed(&data.meta.seeds)?;
        let keep = if a.split == SplitArg::Train { train_idx } else { val_idx };
        let mut all: Vec<Option<_>> = data.trajectories.into_iter().map(Some).collect();
        data.trajectories = keep.iter().filter_map(|&i| all[i].take()).collect();
    }
    let metrics = a.metrics.iter().map(|m| m.parse::<Metric>()).collect::<mppde::error::Result<Vec<_>>>()?;
    let report = evaluate(&model, &data, &metrics, a.workers)?;
    if let Some(e) = report.mean_accumulated_error {
        eprintln!("mean accumulated error {e:.4e}");
    }
    if let Some(m) = report.one_step_mse {
        eprintln!("one-step mse {m:.4e}");
    }
    if let Some(s) = report.median_survival_time {
        eprintln!("median survival time {s:.4}");
    }
    write_json(&report, a.out.as_deref())?;
    if let Some(out) = &a.out {
        let seeds = data.trajectories.iter().map(|t| t.seed).collect();
        RunManifest::new("evaluate", a, seeds, started)?
            .input(&a.ckpt)
            .input(&a.data)
            .output(out)
            .write(&parent_dir(out))?;
    }
    Ok(())
}

fn cmd_rollout(a: &RolloutArgs) -> Result<()> {
    let started = manifest::now();
    let dir = parent_dir(&a.traj);
    let meta = read_meta(&dir)?;
    let index = a
        .traj
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("traj_"))
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&i| i < meta.seeds.len())
        .ok_or_else(|| Error::Data(format!("{} is not a shard of {}", a.traj.display(), dir.display())))?;
    let seed = meta.seeds[index];
    let f = fs::File::open(&a.traj).map_err(|e| Error::Data(format!("{}: {e}", a.traj.display())))?;
    let shard = read_shard(&mut std::io::BufReader::new(f))?;
    let traj = shard_to_trajectory(&meta, shard, seed)?;
    let model = Model::load(&a.ckpt)?;
    let ctx = model.context(&traj.grid)?;
    let (n, k) = (traj.n_x(), model.cfg.k);
    let n_t = a.nt.unwrap_or(traj.n_t());
    if traj.n_t() < k {
        bail!(Error::Data(format!("trajectory has {} slices, fewer than K = {k}", traj.n_t())));
    }
    let ro = rollout(&model, &ctx, &traj.data[..k * n], traj.times[0], traj.params.theta(), n_t)?;

    fs::create_dir_all(parent_dir(&a.out))?;
    let mut w = BufWriter::new(fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    writeln!(w, "t,x,u")?;
    for s in 0..n_t {
        let t = traj.times[0] + s as f64 * model.cfg.dt;
        for (i, x) in traj.grid.centers().iter().enumerate() {
            writeln!(w, "{t},{x},{}", ro.frames[s * n + i])?;
        }
    }
    w.flush()?;
    eprintln!("{} model calls, {n_t} slices written to {}", ro.calls, a.out.display());
    RunManifest::new("rollout", a, vec![seed], started)?
        .input(&a.ckpt)
        .input(&a.traj)
        .output(&a.out)
        .write(&parent_dir(&a.out))?;
    if ro.truncated {
        let first = (0..n_t).find(|&s| ro.frames[s * n..(s + 1) * n].iter().any(|v| !v.is_finite())).unwrap_or(0);
        return Err(Error::BlowUp {
            t: traj.times[0] + first as f64 * model.cfg.dt,
            stage: 0,
        }
        .into());
    }
    Ok(())
}

fn cmd_benchmark(a: &BenchmarkArgs) -> Result<()> {
    let started = manifest::now();
    let model = Model::load(&a.ckpt)?;
    let report = benchmark(&model, parse_task(&a.task)?, a.nt, a.nx, a.seed, a.repeats)?;
    eprintln!(
        "neural rollout {:.4e} s, groundtruth {:.4e} s (median of {})",
        report.neural.median, report.groundtruth.median, a.repeats
    );
    write_json(&report, a.out.as_deref())?;
    if let Some(out) = &a.out {
        RunManifest::new("benchmark", a, vec![a.seed], started)?
            .input(&a.ckpt)
            .output(out)
            .write(&parent_dir(out))?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ValidationFailed>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_blow_up() => 4,
        Some(e) if e.is_data() => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Rollout(a) => cmd_rollout(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    mppde::evaluation::retain_freed_memory();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<ValidationFailed>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
