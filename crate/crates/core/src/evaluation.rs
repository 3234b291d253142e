//! Autoregressive rollouts, error metrics and wallclock benchmarks.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::dataset::parallel_map;
use crate::datagen::{generate_trajectory, Dataset, GenerateConfig, Task, Trajectory};
use crate::error::{Error, Result};
use crate::model::{Model, ModelContext, ModelInput};
use crate::training::one_step_mse;

pub const SURVIVAL_THRESHOLD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// `n_t × n_x`, time-major; the first `K` slices are the given history.
    /// Slices after a non-finite prediction are NaN.
    pub frames: Vec<f64>,
    pub calls: usize,
    /// A prediction contained non-finite values and the rollout stopped.
    pub truncated: bool,
}

/// Model calls needed to extend a `K`-slice history to `n_t` slices.
pub fn solver_calls(n_t: usize, k: usize) -> usize {
    n_t.saturating_sub(k).div_ceil(k)
}

/// Extends `history` (`K` slices starting at time `t0`) to `n_t` slices,
/// each call consuming the previous bundle.
pub fn rollout(model: &Model, ctx: &ModelContext, history: &[f64], t0: f64, theta: [f64; 3], n_t: usize) -> Result<Rollout> {
    let (n, k) = (ctx.n_nodes(), model.cfg.k);
    if history.len() != k * n {
        return Err(Error::Contract(format!(
            "history has {} values, expected K·n_x = {}",
            history.len(),
            k * n
        )));
    }
    if n_t < k {
        return Err(Error::Contract(format!("n_t={n_t} is shorter than the history K={k}")));
    }
    let mut frames = Vec::with_capacity(n_t * n);
    frames.extend_from_slice(history);
    let (mut calls, mut truncated) = (0, false);
    while frames.len() < n_t * n {
        let have = frames.len() / n;
        let t = t0 + (have - 1) as f64 * model.cfg.dt;
        let hist = &frames[(have - k) * n..];
        let pred = model.predict(ctx, &[ModelInput { hist, t, theta }])?.remove(0);
        calls += 1;
        if pred.iter().any(|v| !v.is_finite()) {
            truncated = true;
            frames.resize(n_t * n, f64::NAN);
            break;
        }
        let take = (n_t * n - frames.len()).min(pred.len());
        frames.extend_from_slice(&pred[..take]);
    }
    Ok(Rollout { frames, calls, truncated })
}

fn check_shapes(pred: &[f64], gt: &[f64], n_x: usize) -> Result<()> {
    if n_x == 0 || pred.len() != gt.len() || gt.len() % n_x != 0 {
        return Err(Error::Contract(format!(
            "prediction ({}) and groundtruth ({}) do not form equal n_t × {n_x} arrays",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// `(1/n_x) Σ_{t,x} (û − u)²`.
pub fn accumulated_error(pred: &[f64], gt: &[f64], n_x: usize) -> Result<f64> {
    check_shapes(pred, gt, n_x)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / n_x as f64)
}

/// Per-step `(1/n_x) Σ |û − u| / max |u|`.
pub fn normalized_l1(pred: &[f64], gt: &[f64], n_x: usize) -> Result<Vec<f64>> {
    check_shapes(pred, gt, n_x)?;
    pred.chunks_exact(n_x)
        .zip(gt.chunks_exact(n_x))
        .enumerate()
        .map(|(step, (p, g))| {
            let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if scale == 0.0 {
                return Err(Error::Normalization { step });
            }
            let l1: f64 = p.iter().zip(g).map(|(a, b)| (a - b).abs()).sum();
            Ok(l1 / n_x as f64 / scale)
        })
        .collect()
}

/// Time of the first step whose normalised L1 error reaches `threshold`
/// (non-finite errors count as diverged); the last time if none does.
pub fn survival_time(pred: &[f64], gt: &[f64], n_x: usize, times: &[f64], threshold: f64) -> Result<f64> {
    let errs = normalized_l1(pred, gt, n_x)?;
    if times.len() != errs.len() {
        return Err(Error::Contract(format!("{} times for {} steps", times.len(), errs.len())));
    }
    for (e, &t) in errs.iter().zip(times) {
        if !(*e < threshold) {
            return Ok(t);
        }
    }
    Ok(*times.last().unwrap_or(&0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accerr,
    Survival,
    /// Mean squared error of single bundles predicted from groundtruth history.
    OneStep,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "accerr" => Ok(Metric::Accerr),
            "survival" => Ok(Metric::Survival),
            "onestep" | "one-step" | "one_step" => Ok(Metric::OneStep),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEval {
    pub seed: u64,
    pub theta: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accumulated_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub survival_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub one_step_mse: Option<f64>,
    pub calls: usize,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_traj: usize,
    pub n_t: usize,
    pub n_x: usize,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_accumulated_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_survival_time: Option<f64>,
    /// Pooled over all bundles of all trajectories, as in training validation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub one_step_mse: Option<f64>,
    pub trajectories: Vec<TrajectoryEval>,
}

pub fn evaluate_trajectory(model: &Model, ctx: &ModelContext, traj: &Trajectory, metrics: &[Metric]) -> Result<(TrajectoryEval, Rollout)> {
    let (n, k) = (traj.n_x(), model.cfg.k);
    if traj.n_t() < k {
        return Err(Error::Data(format!("trajectory {} is shorter than K={k}", traj.seed)));
    }
    let theta = traj.params.theta();
    let ro = rollout(model, ctx, &traj.data[..k * n], traj.times[0], theta, traj.n_t())?;
    let acc = if metrics.contains(&Metric::Accerr) {
        Some(accumulated_error(&ro.frames, &traj.data, n)?)
    } else {
        None
    };
    let surv = if metrics.contains(&Metric::Survival) {
        Some(survival_time(&ro.frames, &traj.data, n, &traj.times, SURVIVAL_THRESHOLD)?)
    } else {
        None
    };
    let one = if metrics.contains(&Metric::OneStep) {
        Some(one_step_mse(model, ctx, &[traj])?)
    } else {
        None
    };
    let eval = TrajectoryEval {
        seed: traj.seed,
        theta,
        accumulated_error: acc,
        survival_time: surv,
        one_step_mse: one,
        calls: ro.calls,
        truncated: ro.truncated,
    };
    Ok((eval, ro))
}

/// Rolls out every trajectory from its first `K` slices, in parallel.
pub fn evaluate(model: &Model, data: &Dataset, metrics: &[Metric], workers: usize) -> Result<EvalReport> {
    let first = data.trajectories.first().ok_or_else(|| Error::Data("dataset is empty".into()))?;
    if data.trajectories.iter().any(|t| t.grid != first.grid) {
        return Err(Error::Data("trajectories do not share one grid".into()));
    }
    let ctx = model.context(&first.grid)?;
    let evals = parallel_map(data.trajectories.len(), workers, |i| {
        evaluate_trajectory(model, &ctx, &data.trajectories[i], metrics).map(|(e, _)| e)
    })?;
    let acc: Option<Vec<f64>> = evals.iter().map(|e| e.accumulated_error).collect();
    let surv: Option<Vec<f64>> = evals.iter().map(|e| e.survival_time).collect();
    let one = if metrics.contains(&Metric::OneStep) {
        let refs: Vec<&Trajectory> = data.trajectories.iter().collect();
        Some(one_step_mse(model, &ctx, &refs)?)
    } else {
        None
    };
    Ok(EvalReport {
        n_traj: evals.len(),
        n_t: first.n_t(),
        n_x: first.n_x(),
        k: model.cfg.k,
        mean_accumulated_error: acc.map(|v| v.iter().sum::<f64>() / v.len() as f64),
        median_survival_time: surv.map(|v| median(&v)),
        one_step_mse: one,
        trajectories: evals,
    })
}

/// Linear-interpolation quantile of unsorted samples.
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

pub fn median(samples: &[f64]) -> f64 {
    quantile(samples, 0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median: f64,
    pub iqr: f64,
    pub samples: Vec<f64>,
}

impl Timing {
    fn from_samples(samples: Vec<f64>) -> Self {
        Timing {
            median: median(&samples),
            iqr: quantile(&samples, 0.75) - quantile(&samples, 0.25),
            samples,
        }
    }
}

/// One warm-up call, then `repeats` timed calls.
pub fn time_repeats<F: FnMut() -> Result<()>>(repeats: usize, mut f: F) -> Result<Timing> {
    f()?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64());
    }
    Ok(Timing::from_samples(samples))
}

/// Times `f` and `g` in alternation so machine load drifts hit both alike.
pub fn time_alternating<F, G>(repeats: usize, mut f: F, mut g: G) -> Result<(Timing, Timing)>
where
    F: FnMut() -> Result<()>,
    G: FnMut() -> Result<()>,
{
    f()?;
    g()?;
    let (mut a, mut b) = (Vec::with_capacity(repeats), Vec::with_capacity(repeats));
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        f()?;
        a.push(start.elapsed().as_secs_f64());
        let start = Instant::now();
        g()?;
        b.push(start.elapsed().as_secs_f64());
    }
    Ok((Timing::from_samples(a), Timing::from_samples(b)))
}

/// Asks the C allocator to keep freed memory instead of handing it back to
/// the OS. Forward passes allocate and drop large buffers in a loop, and
/// without this every one of them is page-faulted in again. Process-wide;
/// a no-op outside glibc.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tuning parameters
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub task: Task,
    pub n_t: usize,
    pub n_x: usize,
    pub repeats: usize,
    /// Full autoregressive rollout from the first `K` slices.
    pub neural: Timing,
    /// Groundtruth generation at the same resolution.
    pub groundtruth: Timing,
}

/// Wallclock of a neural rollout against solver generation at `n_x` cells.
/// The reference trajectory is produced before either timer starts.
pub fn benchmark(model: &Model, task: Task, n_t: usize, n_x: usize, seed: u64, repeats: usize) -> Result<BenchmarkReport> {
    let mut gen = GenerateConfig::new(task, 1, n_t, n_x, seed);
    gen.gen_nx = Some(n_x);
    let traj = generate_trajectory(&gen, seed)?;
    let ctx = model.context(&traj.grid)?;
    let k = model.cfg.k;
    let history = traj.data[..k * n_x].to_vec();
    let theta = traj.params.theta();
    let (neural, groundtruth) = time_alternating(
        repeats,
        || rollout(model, &ctx, &history, traj.times[0], theta, n_t).map(|_| ()),
        || generate_trajectory(&gen, seed).map(|_| ()),
    )?;
    Ok(BenchmarkReport {
        task,
        n_t,
        n_x,
        repeats,
        neural,
        groundtruth,
    })
}
