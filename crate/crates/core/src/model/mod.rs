//! Message passing neural PDE solver and the convolutional baseline.

mod cnn;
mod fdm;
mod mpnn;

pub use cnn::cnn_forward;
pub use fdm::fdm_emulation_weights;
pub use mpnn::{decode, encode, mp_layer, mpnn_forward};

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::rc::Rc;

use autodiff::{read_checkpoint, write_checkpoint, BoundParams, ParamStore, Tensor, Tape};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Task, TaskKind};
use crate::error::{Error, Result};
use crate::graph::{Graph, NeighborRule};
use crate::grid::{Grid, GridKind};

pub const DECODER_CHANNELS: usize = 8;
pub const CNN_CHANNELS: usize = 40;
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    MpPde,
    Cnn1d,
}

/// Two valid convolutions mapping a length-`hidden` signal to length `K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderPlan {
    pub kernel1: usize,
    pub stride1: usize,
    pub kernel2: usize,
    pub stride2: usize,
}

impl DecoderPlan {
    /// Largest first stride `s` with kernel `2s` that still leaves at least
    /// `k` samples; the second convolution trims to exactly `k`.
    pub fn search(hidden: usize, k: usize) -> Result<Self> {
        if k == 0 || hidden < k {
            return Err(Error::Config(format!("no decoder maps width {hidden} to {k} slices")));
        }
        for s in (1..=hidden / 2).rev() {
            let k1 = 2 * s;
            let l1 = (hidden - k1) / s + 1;
            if l1 >= k {
                return Ok(Self {
                    kernel1: k1,
                    stride1: s,
                    kernel2: l1 - k + 1,
                    stride2: 1,
                });
            }
        }
        Ok(Self {
            kernel1: 1,
            stride1: 1,
            kernel2: hidden - k + 1,
            stride2: 1,
        })
    }

    pub fn lengths(&self, hidden: usize) -> Result<(usize, usize)> {
        let conv = |len: usize, k: usize, s: usize| {
            if k == 0 || s == 0 || k > len {
                None
            } else {
                Some((len - k) / s + 1)
            }
        };
        let l1 = conv(hidden, self.kernel1, self.stride1)
            .ok_or_else(|| Error::Config(format!("decoder conv1 {self:?} does not fit width {hidden}")))?;
        let l2 = conv(l1, self.kernel2, self.stride2)
            .ok_or_else(|| Error::Config(format!("decoder conv2 {self:?} does not fit length {l1}")))?;
        Ok((l1, l2))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    /// Bundle size: slices consumed and produced per call.
    pub k: usize,
    /// Message passing layers.
    pub m: usize,
    pub hidden: usize,
    pub neighbors: NeighborRule,
    pub use_theta: bool,
    /// Feed absolute node positions to the encoder.
    pub use_position: bool,
    pub instance_norm: bool,
    pub decoder: DecoderPlan,
    /// Spacing of the saved time slices.
    pub dt: f64,
    pub t_end: f64,
    pub domain: (f64, f64),
    pub theta_ranges: [(f64, f64); 3],
}

impl ModelConfig {
    /// Defaults for a task at resolution `(n_t, n_x)`.
    pub fn for_task(task: Task, n_t: usize, n_x: usize, k: usize, hidden: usize, m: usize) -> Result<Self> {
        let (lo, hi) = task.domain();
        let len = hi - lo;
        let neighbors = match task.kind() {
            TaskKind::Combined => NeighborRule::Radius(3.5 * len / n_x as f64),
            TaskKind::Wave => NeighborRule::Knn((n_x / 10).clamp(6, 20)),
        };
        if n_t < 2 {
            return Err(Error::Config("need at least two time slices".into()));
        }
        let cfg = Self {
            arch: Architecture::MpPde,
            k,
            m,
            hidden,
            neighbors,
            use_theta: true,
            use_position: task.kind() == TaskKind::Wave,
            instance_norm: true,
            decoder: DecoderPlan::search(hidden, k)?,
            dt: task.t_end() / (n_t - 1) as f64,
            t_end: task.t_end(),
            domain: task.domain(),
            theta_ranges: task.theta_ranges(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("bundle size K must be positive".into()));
        }
        if !(self.dt > 0.0 && self.t_end > 0.0 && self.domain.1 > self.domain.0) {
            return Err(Error::Config("dt, t_end and the domain must be positive".into()));
        }
        if self.arch == Architecture::MpPde {
            if self.m == 0 {
                return Err(Error::Config("need at least one message passing layer".into()));
            }
            if self.hidden == 0 {
                return Err(Error::Config("hidden width must be positive".into()));
            }
            let (_, out) = self.decoder.lengths(self.hidden)?;
            if out != self.k {
                return Err(Error::Config(format!(
                    "decoder {:?} maps width {} to {out}, not K={}",
                    self.decoder, self.hidden, self.k
                )));
            }
        }
        Ok(())
    }

    pub fn n_theta(&self) -> usize {
        if self.use_theta {
            3
        } else {
            0
        }
    }

    pub fn encoder_inputs(&self) -> usize {
        self.k + usize::from(self.use_position) + 1 + self.n_theta()
    }

    pub fn edge_inputs(&self) -> usize {
        self.k + 1 + self.n_theta()
    }

    /// `(θ − lo)/(hi − lo)` per coefficient, 0 for fixed coefficients.
    pub fn standardize_theta(&self, theta: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (o, (v, (lo, hi))) in out.iter_mut().zip(theta.iter().zip(self.theta_ranges)) {
            *o = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        }
        out
    }

    /// Parameter names, shapes and fan-in in store order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out: Vec<(String, Vec<usize>, usize)> = Vec::new();
        let mut w = |name: String, shape: Vec<usize>, fan_in: usize| out.push((name, shape, fan_in));
        match self.arch {
            Architecture::MpPde => {
                let (h, nt, e) = (self.hidden, self.n_theta(), self.edge_inputs());
                let lin = |w: &mut dyn FnMut(String, Vec<usize>, usize), name: &str, rows: usize, cols: usize| {
                    w(format!("{name}.w"), vec![rows, cols], rows);
                    w(format!("{name}.b"), vec![cols], rows);
                };
                lin(&mut w, "enc.l1", self.encoder_inputs(), h);
                lin(&mut w, "enc.l2", h, h);
                for l in 0..self.m {
                    // first message layer split into receiver, sender and edge blocks
                    let fan = 2 * h + e;
                    w(format!("mp{l}.phi1.wi"), vec![h, h], fan);
                    w(format!("mp{l}.phi1.wj"), vec![h, h], fan);
                    w(format!("mp{l}.phi1.we"), vec![e, h], fan);
                    w(format!("mp{l}.phi1.b"), vec![h], fan);
                    lin(&mut w, &format!("mp{l}.phi2"), h, h);
                    lin(&mut w, &format!("mp{l}.psi1"), 2 * h + nt, h);
                    lin(&mut w, &format!("mp{l}.psi2"), h, h);
                }
                let (c, p) = (DECODER_CHANNELS, self.decoder);
                w("dec.c1.w".into(), vec![c, 1, p.kernel1], p.kernel1);
                w("dec.c1.b".into(), vec![c], p.kernel1);
                w("dec.c2.w".into(), vec![1, c, p.kernel2], c * p.kernel2);
                w("dec.c2.b".into(), vec![1], c * p.kernel2);
            }
            Architecture::Cnn1d => {
                for (l, (ci, co, k)) in cnn::layers(self.k).into_iter().enumerate() {
                    w(format!("cnn{l}.w"), vec![co, ci, k], ci * k);
                    w(format!("cnn{l}.b"), vec![co], ci * k);
                }
            }
        }
        out
    }
}

/// Node and edge data shared by every forward pass on one grid.
#[derive(Clone, Debug)]
pub struct ModelContext {
    pub grid: Grid,
    pub graph: Option<Graph>,
    /// `(x − lo)/L`.
    pub x_norm: Vec<f64>,
    /// Edge displacements divided by `L`, in graph edge order.
    pub disp_norm: Vec<f64>,
}

impl ModelContext {
    pub fn new(grid: &Grid, cfg: &ModelConfig) -> Result<Self> {
        let (lo, _) = grid.domain();
        let len = grid.length();
        let x_norm = grid.centers().iter().map(|x| (x - lo) / len).collect();
        match cfg.arch {
            Architecture::MpPde => {
                let graph = Graph::build(grid, cfg.neighbors)?;
                Ok(Self::with_graph(grid, graph, x_norm))
            }
            Architecture::Cnn1d => {
                if !grid.is_periodic() || grid.kind() != GridKind::Uniform {
                    return Err(Error::Unsupported("the CNN baseline needs a uniform periodic grid".into()));
                }
                Ok(Self {
                    grid: grid.clone(),
                    graph: None,
                    x_norm,
                    disp_norm: Vec::new(),
                })
            }
        }
    }

    /// Context over an explicit graph, e.g. a relabelled one.
    pub fn with_graph(grid: &Grid, graph: Graph, x_norm: Vec<f64>) -> Self {
        let len = grid.length();
        let disp_norm = graph.displacements().iter().map(|d| d / len).collect();
        Self {
            grid: grid.clone(),
            graph: Some(graph),
            x_norm,
            disp_norm,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.x_norm.len()
    }

    fn graph(&self) -> Result<&Graph> {
        self.graph
            .as_ref()
            .ok_or_else(|| Error::Contract("message passing needs a graph context".into()))
    }
}

/// Time of the newest input slice and the equation coefficients of one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMeta {
    pub t: f64,
    pub theta: [f64; 3],
}

/// One model call: the last `K` slices (time-major, oldest first), the time
/// of the newest slice and the equation coefficients.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub hist: &'a [f64],
    pub t: f64,
    pub theta: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

pub const WEIGHTS_FILE: &str = "model.mpw";
pub const CONFIG_FILE: &str = "model.json";

impl Model {
    /// Uniform `±1/√fan_in` initialisation from a seeded stream.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, fan_in) in cfg.param_layout() {
            let n: usize = shape.iter().product();
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            params.insert(name, shape, data)?;
        }
        Ok(Self { cfg, params })
    }

    /// Every parameter set to zero.
    pub fn zeros(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, _) in cfg.param_layout() {
            let n = shape.iter().product();
            params.insert(name, shape, vec![0.0; n])?;
        }
        Ok(Self { cfg, params })
    }

    pub fn context(&self, grid: &Grid) -> Result<ModelContext> {
        ModelContext::new(grid, &self.cfg)
    }

    /// Predicted bundle as a `[batch·n_x, K]` tensor, node-major.
    pub fn forward(&self, bound: &BoundParams, ctx: &ModelContext, inputs: &[ModelInput]) -> Result<Tensor> {
        let h = Tensor::constant(vec![inputs.len() * ctx.n_nodes(), self.cfg.k], history_matrix(inputs, ctx.n_nodes(), self.cfg.k)?)?;
        let meta: Vec<SampleMeta> = inputs.iter().map(|i| SampleMeta { t: i.t, theta: i.theta }).collect();
        self.forward_hist(bound, ctx, &h, &meta)
    }

    /// Forward from a node-major `[batch·n_x, K]` history, possibly itself
    /// a tracked prediction.
    pub fn forward_hist(&self, bound: &BoundParams, ctx: &ModelContext, h: &Tensor, meta: &[SampleMeta]) -> Result<Tensor> {
        let rows = meta.len() * ctx.n_nodes();
        if h.shape() != [rows, self.cfg.k] {
            return Err(Error::Contract(format!(
                "history shape {:?}, expected [{rows}, {}]",
                h.shape(),
                self.cfg.k
            )));
        }
        match self.cfg.arch {
            Architecture::MpPde => mpnn_forward(&self.cfg, bound, ctx, h, meta),
            Architecture::Cnn1d => cnn_forward(&self.cfg, bound, ctx, h, meta),
        }
    }

    /// Untracked forward returning each sample's bundle as `K` time-major slices.
    pub fn predict(&self, ctx: &ModelContext, inputs: &[ModelInput]) -> Result<Vec<Vec<f64>>> {
        let bound = self.params.bind(None)?;
        let out = self.forward(&bound, ctx, inputs)?;
        Ok(node_major_to_frames(out.data(), inputs.len(), ctx.n_nodes(), self.cfg.k))
    }

    /// Forward on a fresh tape with parameters as leaves.
    pub fn forward_tracked(&self, tape: &Tape, ctx: &ModelContext, inputs: &[ModelInput]) -> Result<(BoundParams, Tensor)> {
        let bound = self.params.bind(Some(tape))?;
        let out = self.forward(&bound, ctx, inputs)?;
        Ok((bound, out))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(fs::File::create(dir.join(WEIGHTS_FILE))?);
        write_checkpoint(&mut w, &self.params)?;
        w.flush()?;
        let mut c = BufWriter::new(fs::File::create(dir.join(CONFIG_FILE))?);
        serde_json::to_writer_pretty(&mut c, &self.cfg)?;
        c.write_all(b"\n")?;
        c.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let open = |name: &str| {
            let p = dir.join(name);
            fs::File::open(&p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
        };
        let cfg: ModelConfig = serde_json::from_reader(BufReader::new(open(CONFIG_FILE)?))?;
        cfg.validate()?;
        let params = read_checkpoint(BufReader::new(open(WEIGHTS_FILE)?))?;
        let expected = Model::zeros(cfg.clone())?;
        if !expected.params.same_layout(&params) {
            return Err(Error::Data("checkpoint layout does not match the model configuration".into()));
        }
        Ok(Self { cfg, params })
    }
}

/// `[batch·n, K]` node-major values to per-sample time-major slices.
pub fn node_major_to_frames(data: &[f64], batch: usize, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..batch)
        .map(|b| {
            let mut out = vec![0.0; k * n];
            for i in 0..n {
                for l in 0..k {
                    out[l * n + i] = data[(b * n + i) * k + l];
                }
            }
            out
        })
        .collect()
}

/// Time-major histories to a `[batch·n, K]` node-major matrix.
pub(crate) fn history_matrix(inputs: &[ModelInput], n: usize, k: usize) -> Result<Vec<f64>> {
    let mut h = vec![0.0; inputs.len() * n * k];
    for (b, inp) in inputs.iter().enumerate() {
        if inp.hist.len() != n * k {
            return Err(Error::Contract(format!(
                "history has {} values, expected K·n_x = {}",
                inp.hist.len(),
                n * k
            )));
        }
        for l in 0..k {
            for i in 0..n {
                h[(b * n + i) * k + l] = inp.hist[l * n + i];
            }
        }
    }
    Ok(h)
}

/// `u^{k+ℓ} = u^k + ℓ·dt·d^ℓ` with `u^k` the newest column of `h`.
pub(crate) fn time_update(d: &Tensor, h: &Tensor, k: usize, dt: f64) -> Result<Tensor> {
    let rows = h.shape()[0];
    let mut pick = vec![0.0; k * k];
    pick[(k - 1) * k..].fill(1.0);
    let base = h.matmul(&Tensor::constant(vec![k, k], pick)?)?;
    let coef: Vec<f64> = (0..rows * k).map(|r| (r % k + 1) as f64 * dt).collect();
    let coef = Tensor::constant(vec![rows, k], coef)?;
    Ok(d.mul(&coef)?.add(&base)?)
}

pub(crate) fn batched_index(idx: &[usize], batch: usize, n: usize) -> Rc<[usize]> {
    (0..batch).flat_map(|b| idx.iter().map(move |&i| b * n + i)).collect()
}
