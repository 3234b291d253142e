//! Dataset generation, striding and the `MPD1` shard format.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::combined::generate_combined;
use crate::datagen::forcing::{ForcingSpec, OmegaMode};
use crate::datagen::task::{PdeParams, Task, TaskKind};
use crate::datagen::wave::{generate_wave, Pulse};
use crate::datagen::Trajectory;
use crate::error::{Error, Result};
use crate::grid::{Boundary, Grid, GridKind};
use crate::timestep::AdaptiveOptions;

pub const SHARD_MAGIC: &[u8; 4] = b"MPD1";
pub const FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
/// Resolution the combined equation is solved at before striding.
pub const DEFAULT_GEN_NX: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub task: Task,
    pub n_traj: usize,
    pub n_t: usize,
    pub n_x: usize,
    pub seed: u64,
    /// Solver resolution for combined tasks; `n_x` must divide it.
    pub gen_nx: Option<usize>,
    #[serde(default)]
    pub omega_mode: OmegaMode,
    pub rtol: f64,
    pub atol: f64,
    /// Overrides the task's end time.
    #[serde(default)]
    pub t_end: Option<f64>,
}

impl GenerateConfig {
    pub fn new(task: Task, n_traj: usize, n_t: usize, n_x: usize, seed: u64) -> Self {
        let opts = AdaptiveOptions::default();
        Self {
            task,
            n_traj,
            n_t,
            n_x,
            seed,
            gen_nx: None,
            omega_mode: OmegaMode::Fixed,
            rtol: opts.rtol,
            atol: opts.atol,
            t_end: None,
        }
    }

    pub fn t_end(&self) -> f64 {
        self.t_end.unwrap_or_else(|| self.task.t_end())
    }

    pub fn solver_nx(&self) -> usize {
        match self.task.kind() {
            TaskKind::Combined => self.gen_nx.unwrap_or(DEFAULT_GEN_NX.max(self.n_x)),
            TaskKind::Wave => self.n_x,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_traj as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.n_t < 2 || self.n_x < 3 {
            return Err(Error::Config(format!("resolution ({}, {}) too small", self.n_t, self.n_x)));
        }
        let g = self.solver_nx();
        if g % self.n_x != 0 {
            return Err(Error::Resolution(format!(
                "solver resolution {g} is not a multiple of n_x={}",
                self.n_x
            )));
        }
        if !(self.t_end() > 0.0) {
            return Err(Error::Config("t_end must be positive".into()));
        }
        Ok(())
    }
}

/// The random draws behind one trajectory: parameters first, then the
/// forcing (combined tasks) or the pulse (wave tasks).
pub fn sample_draws(task: Task, seed: u64, omega: OmegaMode) -> (PdeParams, Option<ForcingSpec>, Option<Pulse>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = task.sample_params(&mut rng);
    match task.kind() {
        TaskKind::Combined => {
            let (lo, hi) = task.domain();
            (params, Some(ForcingSpec::sample(&mut rng, hi - lo, omega)), None)
        }
        TaskKind::Wave => (params, None, Some(Pulse::sample(&mut rng, task.domain()))),
    }
}

/// Generates the trajectory for `seed` at the configured resolution.
pub fn generate_trajectory(cfg: &GenerateConfig, seed: u64) -> Result<Trajectory> {
    cfg.validate()?;
    let (params, forcing, pulse) = sample_draws(cfg.task, seed, cfg.omega_mode);
    match cfg.task.kind() {
        TaskKind::Combined => {
            let grid = Grid::uniform(cfg.solver_nx(), cfg.task.domain(), Boundary::Periodic)?;
            let opts = AdaptiveOptions {
                rtol: cfg.rtol,
                atol: cfg.atol,
                ..AdaptiveOptions::default()
            };
            let forcing = forcing.expect("combined draws include forcing");
            let full = generate_combined(&grid, &params, &forcing, seed, cfg.n_t, cfg.t_end(), &opts)?;
            downsample(&full, cfg.n_t, cfg.n_x)
        }
        TaskKind::Wave => generate_wave(
            &params,
            &pulse.expect("wave draws include a pulse"),
            seed,
            cfg.n_t,
            cfg.n_x,
            cfg.task.domain(),
            cfg.t_end(),
        ),
    }
}

/// Stride subsampling in time and space keeping index 0.
pub fn downsample(traj: &Trajectory, n_t: usize, n_x: usize) -> Result<Trajectory> {
    let (src_t, src_x) = (traj.n_t(), traj.n_x());
    if n_t == 0 || n_x == 0 || src_t % n_t != 0 || src_x % n_x != 0 {
        return Err(Error::Resolution(format!(
            "cannot stride ({src_t}, {src_x}) down to ({n_t}, {n_x})"
        )));
    }
    let (st, sx) = (src_t / n_t, src_x / n_x);
    if st == 1 && sx == 1 {
        return Ok(traj.clone());
    }
    let centers: Vec<f64> = traj.grid.centers().iter().step_by(sx).copied().collect();
    let (left, right) = traj.grid.boundaries();
    let grid = Grid::from_centers(centers, traj.grid.domain(), left, right)?;
    let mut data = Vec::with_capacity(n_t * n_x);
    for k in (0..src_t).step_by(st) {
        data.extend(traj.frame(k).iter().step_by(sx));
    }
    Ok(Trajectory {
        data,
        times: traj.times.iter().step_by(st).copied().collect(),
        grid,
        params: traj.params,
        forcing: traj.forcing.clone(),
        seed: traj.seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub task: Task,
    pub kind: TaskKind,
    pub theta_names: [String; 3],
    pub theta_ranges: [(f64, f64); 3],
    pub n_traj: usize,
    pub n_t: usize,
    pub n_x: usize,
    pub t_end: f64,
    pub domain: (f64, f64),
    pub seeds: Vec<u64>,
    pub gen_nx: usize,
    pub omega_mode: OmegaMode,
    pub rtol: f64,
    pub atol: f64,
}

impl DatasetMeta {
    pub fn from_config(cfg: &GenerateConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            task: cfg.task,
            kind: cfg.task.kind(),
            theta_names: cfg.task.theta_names().map(String::from),
            theta_ranges: cfg.task.theta_ranges(),
            n_traj: cfg.n_traj,
            n_t: cfg.n_t,
            n_x: cfg.n_x,
            t_end: cfg.t_end(),
            domain: cfg.task.domain(),
            seeds: cfg.seeds(),
            gen_nx: cfg.solver_nx(),
            omega_mode: cfg.omega_mode,
            rtol: cfg.rtol,
            atol: cfg.atol,
        }
    }

    /// Configuration that regenerates this dataset, optionally at another
    /// temporal resolution and horizon.
    pub fn config(&self) -> GenerateConfig {
        GenerateConfig {
            task: self.task,
            n_traj: self.n_traj,
            n_t: self.n_t,
            n_x: self.n_x,
            seed: self.seeds.first().copied().unwrap_or(0),
            gen_nx: Some(self.gen_nx),
            omega_mode: self.omega_mode,
            rtol: self.rtol,
            atol: self.atol,
            t_end: Some(self.t_end),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

pub fn shard_name(index: usize) -> String {
    format!("traj_{index:05}.mpd")
}

/// Runs `job(i)` for `i < n` on `workers` threads; results come back in index
/// order and the error with the lowest index wins.
pub(crate) fn parallel_map<T: Send, F>(n: usize, workers: usize, job: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = workers.clamp(1, n.max(1));
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let failed = AtomicUsize::new(usize::MAX);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n || i > failed.load(Ordering::Relaxed) {
                    break;
                }
                let r = job(i);
                if r.is_err() {
                    failed.fetch_min(i, Ordering::Relaxed);
                }
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    let mut out = Vec::with_capacity(n);
    for slot in slots {
        match slot.into_inner().expect("slot lock") {
            Some(r) => out.push(r?),
            None => break,
        }
    }
    if out.len() != n {
        return Err(Error::Contract("generation stopped early".into()));
    }
    Ok(out)
}

/// Generates every trajectory in memory.
pub fn generate_dataset(cfg: &GenerateConfig, workers: usize) -> Result<Dataset> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let trajectories = parallel_map(seeds.len(), workers, |i| generate_trajectory(cfg, seeds[i]))?;
    Ok(Dataset {
        meta: DatasetMeta::from_config(cfg),
        trajectories,
    })
}

/// Generates every trajectory straight to shards in `dir`.
pub fn generate_to_dir(cfg: &GenerateConfig, dir: &Path, workers: usize) -> Result<DatasetMeta> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let seeds = cfg.seeds();
    parallel_map(seeds.len(), workers, |i| {
        let traj = generate_trajectory(cfg, seeds[i])?;
        write_shard_file(&dir.join(shard_name(i)), &traj)
    })?;
    let meta = DatasetMeta::from_config(cfg);
    write_meta(dir, &meta)?;
    Ok(meta)
}

pub fn write_meta(dir: &Path, meta: &DatasetMeta) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(dir.join(META_FILE))?);
    serde_json::to_writer_pretty(&mut f, meta)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join(META_FILE);
    let f = fs::File::open(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let meta: DatasetMeta = serde_json::from_reader(BufReader::new(f))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported format version {}", meta.format_version)));
    }
    if meta.seeds.len() != meta.n_traj {
        return Err(Error::Data("seed list length disagrees with n_traj".into()));
    }
    Ok(meta)
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, t) in ds.trajectories.iter().enumerate() {
        write_shard_file(&dir.join(shard_name(i)), t)?;
    }
    write_meta(dir, &ds.meta)
}

fn write_shard_file(path: &PathBuf, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_shard(&mut w, traj)?;
    w.flush()?;
    Ok(())
}

pub fn write_shard<W: Write>(w: &mut W, traj: &Trajectory) -> Result<()> {
    traj.validate()?;
    w.write_all(SHARD_MAGIC)?;
    w.write_all(&(traj.n_t() as u64).to_le_bytes())?;
    w.write_all(&(traj.n_x() as u64).to_le_bytes())?;
    let theta = traj.params.theta();
    for v in traj.times.iter().chain(traj.grid.centers()).chain(&theta).chain(&traj.data) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Raw shard contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Shard {
    pub times: Vec<f64>,
    pub centers: Vec<f64>,
    pub theta: [f64; 3],
    pub data: Vec<f64>,
}

pub fn read_shard<R: Read>(r: &mut R) -> Result<Shard> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != SHARD_MAGIC {
        return Err(Error::Data(format!("bad shard magic {magic:?}")));
    }
    let n_t = read_u64(r)? as usize;
    let n_x = read_u64(r)? as usize;
    let total = n_t
        .checked_mul(n_x)
        .filter(|&v| v < (1 << 32))
        .ok_or_else(|| Error::Data(format!("implausible shard shape ({n_t}, {n_x})")))?;
    let times = read_f64s(r, n_t)?;
    let centers = read_f64s(r, n_x)?;
    let th = read_f64s(r, 3)?;
    let data = read_f64s(r, total)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Data("trailing bytes after shard payload".into()));
    }
    Ok(Shard {
        times,
        centers,
        theta: [th[0], th[1], th[2]],
        data,
    })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Data("truncated shard".into()),
        _ => Error::Io(e),
    })
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    read_exact(r, &mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Rebuilds a trajectory from a shard and its dataset metadata.
pub fn shard_to_trajectory(meta: &DatasetMeta, shard: Shard, seed: u64) -> Result<Trajectory> {
    if shard.times.len() != meta.n_t || shard.centers.len() != meta.n_x {
        return Err(Error::Data(format!(
            "shard shape ({}, {}) disagrees with metadata ({}, {})",
            shard.times.len(),
            shard.centers.len(),
            meta.n_t,
            meta.n_x
        )));
    }
    let params = PdeParams::from_theta(meta.kind, shard.theta).map_err(|e| Error::Data(e.to_string()))?;
    let (left, right) = match params {
        PdeParams::Combined { .. } => (Boundary::Periodic, Boundary::Periodic),
        PdeParams::Wave { left, right, .. } => (left, right),
    };
    let grid = match Grid::chebyshev(meta.n_x, meta.domain, left, right) {
        Ok(g) if meta.kind == TaskKind::Wave && g.centers() == shard.centers.as_slice() => g,
        _ => Grid::from_centers(shard.centers, meta.domain, left, right)
            .map_err(|e| Error::Data(e.to_string()))?,
    };
    debug_assert!(meta.kind == TaskKind::Combined || grid.kind() != GridKind::Uniform);
    let forcing = match meta.kind {
        TaskKind::Combined => sample_draws(meta.task, seed, meta.omega_mode).1,
        TaskKind::Wave => None,
    };
    let traj = Trajectory {
        data: shard.data,
        times: shard.times,
        grid,
        params,
        forcing,
        seed,
    };
    traj.validate()?;
    Ok(traj)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta = read_meta(dir)?;
    let mut trajectories = Vec::with_capacity(meta.n_traj);
    for (i, &seed) in meta.seeds.iter().enumerate() {
        let path = dir.join(shard_name(i));
        let f = fs::File::open(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let shard = read_shard(&mut BufReader::new(f))
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        trajectories.push(shard_to_trajectory(&meta, shard, seed)?);
    }
    Ok(Dataset { meta, trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(task: Task) -> GenerateConfig {
        let mut c = GenerateConfig::new(task, 3, 11, 20, 7);
        c.gen_nx = Some(40);
        c.t_end = Some(1.0);
        c
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let cfg = small(Task::E2);
        let a = generate_dataset(&cfg, 1).unwrap();
        let b = generate_dataset(&cfg, 3).unwrap();
        for (x, y) in a.trajectories.iter().zip(&b.trajectories) {
            let bits = |t: &Trajectory| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x), bits(y));
        }
    }

    #[test]
    fn downsample_identity_and_stride() {
        let t = generate_trajectory(&small(Task::E1), 7).unwrap();
        assert_eq!(downsample(&t, 11, 20).unwrap(), t);
        let d = downsample(&t, 11, 4).unwrap();
        assert_eq!(d.grid.centers()[1], t.grid.centers()[5]);
        assert_eq!(d.frame(3)[2], t.frame(3)[10]);
        assert!(downsample(&t, 11, 3).is_err());
    }

    #[test]
    fn downsample_composes() {
        let mut cfg = small(Task::E1);
        cfg.n_t = 12;
        let t = generate_trajectory(&cfg, 7).unwrap();
        let twice = downsample(&downsample(&t, 6, 10).unwrap(), 3, 5).unwrap();
        let once = downsample(&t, 3, 5).unwrap();
        assert_eq!(twice.data, once.data);
        assert_eq!(twice.times, once.times);
        assert_eq!(twice.grid.centers(), once.grid.centers());
    }

    #[test]
    fn shard_round_trip_through_directory() {
        for task in [Task::E3, Task::WE3] {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = small(task);
            if task.kind() == TaskKind::Wave {
                cfg.gen_nx = None;
            }
            let meta = generate_to_dir(&cfg, dir.path(), 2).unwrap();
            let ds = load_dataset(dir.path()).unwrap();
            assert_eq!(ds.meta, meta);
            let mem = generate_dataset(&cfg, 1).unwrap();
            for (a, b) in ds.trajectories.iter().zip(&mem.trajectories) {
                assert_eq!(a.data, b.data);
                assert_eq!(a.params, b.params);
                assert_eq!(a.forcing, b.forcing);
                assert_eq!(a.grid.centers(), b.grid.centers());
            }
        }
    }

    #[test]
    fn corrupt_shards_are_rejected() {
        let t = generate_trajectory(&small(Task::E1), 7).unwrap();
        let mut buf = Vec::new();
        write_shard(&mut buf, &t).unwrap();
        assert!(read_shard(&mut buf.as_slice()).is_ok());
        assert!(read_shard(&mut &buf[..buf.len() - 1]).unwrap_err().is_data());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_shard(&mut extra.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_shard(&mut bad.as_slice()).is_err());
    }

    #[test]
    fn missing_dataset_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().is_data());
    }
}
