//! Fully convolutional baseline on periodic uniform grids.

use std::rc::Rc;

use autodiff::{BoundParams, Padding, Tensor};

use super::{time_update, ModelConfig, ModelContext, SampleMeta, CNN_CHANNELS};
use crate::error::Result;

/// `(c_in, c_out, kernel)` for every layer.
pub fn layers(k: usize) -> Vec<(usize, usize, usize)> {
    let c = CNN_CHANNELS;
    let mut out = vec![(k, c, 3)];
    out.extend([(c, c, 5); 3]);
    out.extend([(c, c, 7); 3]);
    out.push((c, k, 7));
    out
}

/// Circular convolutions with ELU and residual links between hidden layers;
/// the `K` input slices are the channels.
pub fn cnn_forward(cfg: &ModelConfig, p: &BoundParams, ctx: &ModelContext, h: &Tensor, meta: &[SampleMeta]) -> Result<Tensor> {
    let (batch, n, k) = (meta.len(), ctx.n_nodes(), cfg.k);
    // node-major [B·n, K] to [B, K, n] and back
    let to_nodes: Rc<[usize]> = (0..n).flat_map(|i| (0..batch).map(move |b| b * n + i)).collect();
    let from_nodes: Rc<[usize]> = (0..batch).flat_map(|b| (0..n).map(move |i| i * batch + b)).collect();
    let x = h
        .gather_rows(&to_nodes)?
        .reshape(vec![n, batch * k])?
        .transpose()?
        .reshape(vec![batch, k, n])?;
    let spec = layers(k);
    let conv = |x: &Tensor, l: usize| -> Result<Tensor> {
        Ok(x.conv1d(p.get(&format!("cnn{l}.w"))?, p.get(&format!("cnn{l}.b"))?, 1, Padding::Circular)?)
    };
    let mut y = conv(&x, 0)?.elu()?;
    for l in 1..spec.len() - 1 {
        y = y.add(&conv(&y, l)?.elu()?)?;
    }
    let y = conv(&y, spec.len() - 1)?;
    let d = y
        .reshape(vec![batch * k, n])?
        .transpose()?
        .reshape(vec![n * batch, k])?
        .gather_rows(&from_nodes)?;
    time_update(&d, h, k, cfg.dt)
}
