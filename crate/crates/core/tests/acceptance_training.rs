//! Acceptance criteria that train models at desk scale. They share one
//! dataset and run in sequence inside a single test so the wallclock
//! comparison is not disturbed by concurrent training.

use std::io::Write;
use std::time::{Duration, Instant};

use mppde::datagen::{generate_dataset, Dataset, GenerateConfig, Task};
use mppde::evaluation::{benchmark, evaluate, retain_freed_memory, Metric};
use mppde::model::{Model, ModelConfig};
use mppde::training::{train, TrainConfig, TrainMode, TrainReport};

const N_TRAJ: usize = 256;
const N_T: usize = 250;
const N_X: usize = 40;
const K: usize = 25;
const HIDDEN: usize = 64;
const LAYERS: usize = 6;
const DATA_SEED: u64 = 1000;
/// Seeds of the long held-out rollouts, disjoint from the training seeds.
const HELD_OUT_SEED: u64 = 900_000;
const HELD_OUT: usize = 16;
const LONG_N_T: usize = 1000;
/// Learning rate used at desk scale.
const LR: f64 = 1e-3;

fn verdict(id: u32, title: &str, passed: bool, detail: &str) {
    // straight to the stdout handle so the line survives test output capture
    let line = format!("{} [{id:02}] {title}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}

fn train_arm(data: &Dataset, mode: TrainMode) -> (Model, TrainReport, Duration) {
    let cfg = ModelConfig::for_task(Task::E1, N_T, N_X, K, HIDDEN, LAYERS).unwrap();
    let mut model = Model::init(cfg, 1).unwrap();
    let tc = TrainConfig {
        mode,
        lr: LR,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = train(&mut model, data, &tc, None).unwrap();
    let took = start.elapsed();
    for e in &report.epochs {
        println!("  {mode:?} epoch {:>2}: train rmse {:.4e}, val mse {:.4e}", e.epoch, e.train_rmse, e.val_mse);
    }
    (model, report, took)
}

fn median_survival(model: &Model, held_out: &Dataset) -> f64 {
    evaluate(model, held_out, &[Metric::Survival], 1)
        .unwrap()
        .median_survival_time
        .unwrap()
}

#[test]
fn criteria_11_to_13_desk_scale_training() {
    retain_freed_memory();
    let mut failed = Vec::new();

    // 11: one-step validation error of the pushforward model
    let start = Instant::now();
    let data = generate_dataset(&GenerateConfig::new(Task::E1, N_TRAJ, N_T, N_X, DATA_SEED), 1).unwrap();
    let (pf, pf_report, _) = train_arm(&data, TrainMode::Pushforward);
    let took = start.elapsed();
    let ratio = pf_report.initial_val_mse / pf_report.best_val_mse;
    let passed = ratio >= 10.0 && took <= Duration::from_secs(2 * 3600);
    verdict(
        11,
        "desk-scale training",
        passed,
        &format!(
            "val MSE {:.4e} -> {:.4e} (best epoch {}), {ratio:.1}x drop, in {took:.0?}",
            pf_report.initial_val_mse, pf_report.best_val_mse, pf_report.best_epoch
        ),
    );
    if !passed {
        failed.push(11);
    }

    // 12: survival on long held-out rollouts at the training time step
    let start = Instant::now();
    let mut long = GenerateConfig::new(Task::E1, HELD_OUT, LONG_N_T, N_X, HELD_OUT_SEED);
    long.t_end = Some(pf.cfg.dt * (LONG_N_T - 1) as f64);
    let held_out = generate_dataset(&long, 1).unwrap();
    let (one, _, _) = train_arm(&data, TrainMode::OneStep);
    let (noise, _, _) = train_arm(&data, TrainMode::GaussianNoise { sigma: 0.01 });
    let s_pf = median_survival(&pf, &held_out);
    let s_one = median_survival(&one, &held_out);
    let s_noise = median_survival(&noise, &held_out);
    let took = start.elapsed();
    let passed = s_pf >= s_one && took <= Duration::from_secs(6 * 3600);
    verdict(
        12,
        "pushforward ordering",
        passed,
        &format!(
            "median survival over {HELD_OUT} rollouts to n_t={LONG_N_T}: pushforward {s_pf:.3}, one-step {s_one:.3}, gaussian noise 0.01 {s_noise:.3}; in {took:.0?}"
        ),
    );
    if !passed {
        failed.push(12);
    }

    // 13: rollout against groundtruth generation at n_x = 100
    let bench = benchmark(&pf, Task::E1, N_T, 100, 77, 9).unwrap();
    let passed = bench.neural.median < bench.groundtruth.median;
    verdict(
        13,
        "runtime ordering",
        passed,
        &format!(
            "n_x=100, 250 steps: neural rollout {:.4} s (IQR {:.4}), WENO5 generation {:.4} s (IQR {:.4})",
            bench.neural.median, bench.neural.iqr, bench.groundtruth.median, bench.groundtruth.iqr
        ),
    );
    if !passed {
        failed.push(13);
    }

    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
