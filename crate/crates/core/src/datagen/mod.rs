//! Groundtruth trajectories for the combined equation and the wave equation,
//! closed-form Burgers validators and the on-disk dataset format.

pub mod analytic;
pub mod combined;
pub mod dataset;
pub mod forcing;
pub mod task;
pub mod wave;

pub use analytic::{burgers_case1, burgers_case2, gauss_hermite};
pub use combined::{combined_rhs, generate_combined, save_times, CombinedRhs};
pub use dataset::{
    downsample, generate_dataset, generate_to_dir, generate_trajectory, load_dataset, read_meta, read_shard,
    shard_name, shard_to_trajectory, write_dataset, write_shard, Dataset, DatasetMeta, GenerateConfig,
};
pub use forcing::{ForcingSpec, ForcingTerm, OmegaMode};
pub use task::{PdeParams, Task, TaskKind};
pub use wave::{chebyshev_diff_matrix, generate_wave, Pulse};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `n_t × n_x` values, time-major.
    pub data: Vec<f64>,
    pub times: Vec<f64>,
    pub grid: Grid,
    pub params: PdeParams,
    pub forcing: Option<ForcingSpec>,
    pub seed: u64,
}

impl Trajectory {
    pub fn n_t(&self) -> usize {
        self.times.len()
    }

    pub fn n_x(&self) -> usize {
        self.grid.n_x()
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        let n = self.n_x();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_x())
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.n_t() * self.n_x() {
            return Err(Error::Data(format!(
                "data has {} values, expected {}×{}",
                self.data.len(),
                self.n_t(),
                self.n_x()
            )));
        }
        if self.times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Data("times must increase strictly".into()));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at frame {}, node {}",
                i / self.n_x(),
                i % self.n_x()
            )));
        }
        Ok(())
    }
}
