//! Encoder, message passing layers and convolutional decoder.

use std::rc::Rc;

use autodiff::{BoundParams, Padding, Tensor};

use super::{batched_index, time_update, ModelConfig, ModelContext, SampleMeta, DECODER_CHANNELS, NORM_EPS};
use crate::error::Result;

fn linear(p: &BoundParams, name: &str, x: &Tensor) -> Result<Tensor> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    Ok(x.affine(w, b)?)
}

/// Node embedding from `[rows, encoder_inputs]` features.
pub fn encode(p: &BoundParams, features: &Tensor) -> Result<Tensor> {
    let h = linear(p, "enc.l1", features)?.swish()?;
    Ok(linear(p, "enc.l2", &h)?.swish()?)
}

/// Graph structure of a batch: receiver and sender row of every edge.
pub struct BatchEdges {
    pub recv: Rc<[usize]>,
    pub send: Rc<[usize]>,
    pub rows: usize,
    pub batch: usize,
}

/// One message passing layer with residual update.
pub fn mp_layer(
    cfg: &ModelConfig,
    p: &BoundParams,
    layer: usize,
    f: &Tensor,
    edge_feat: &Tensor,
    node_theta: Option<&Tensor>,
    edges: &BatchEdges,
) -> Result<Tensor> {
    let name = |s: &str| format!("mp{layer}.{s}");
    // φ's first layer is linear in [f_i, f_j, e_ij]: project nodes before gathering
    let fi = f.matmul(p.get(&name("phi1.wi"))?)?.gather_rows(&edges.recv)?;
    let fj = f.matmul(p.get(&name("phi1.wj"))?)?.gather_rows(&edges.send)?;
    let fe = edge_feat.affine(p.get(&name("phi1.we"))?, p.get(&name("phi1.b"))?)?;
    let m = fe.add(&fi)?.add(&fj)?.swish()?;
    let m = linear(p, &name("phi2"), &m)?.swish()?;
    let agg = m.scatter_add_rows(&edges.recv, edges.rows)?;
    let upd_in = match node_theta {
        Some(th) => Tensor::concat_cols(&[f, &agg, th])?,
        None => Tensor::concat_cols(&[f, &agg])?,
    };
    let upd = linear(p, &name("psi1"), &upd_in)?.swish()?;
    let upd = linear(p, &name("psi2"), &upd)?.swish()?;
    let out = f.add(&upd)?;
    if cfg.instance_norm {
        Ok(out.instance_norm(edges.batch, NORM_EPS)?)
    } else {
        Ok(out)
    }
}

/// Two strided convolutions over the hidden axis, `[rows, h]` to `[rows, K]`.
pub fn decode(cfg: &ModelConfig, p: &BoundParams, f: &Tensor) -> Result<Tensor> {
    let rows = f.shape()[0];
    let plan = cfg.decoder;
    let x = f.reshape(vec![rows, 1, cfg.hidden])?;
    let x = x
        .conv1d(p.get("dec.c1.w")?, p.get("dec.c1.b")?, plan.stride1, Padding::Valid)?
        .swish()?;
    debug_assert_eq!(x.shape()[1], DECODER_CHANNELS);
    let x = x.conv1d(p.get("dec.c2.w")?, p.get("dec.c2.b")?, plan.stride2, Padding::Valid)?;
    Ok(x.reshape(vec![rows, cfg.k])?)
}

pub fn mpnn_forward(cfg: &ModelConfig, p: &BoundParams, ctx: &ModelContext, h: &Tensor, meta: &[SampleMeta]) -> Result<Tensor> {
    let graph = ctx.graph()?;
    let (batch, n) = (meta.len(), ctx.n_nodes());
    let rows = batch * n;
    let thetas: Vec<[f64; 3]> = meta.iter().map(|m| cfg.standardize_theta(m.theta)).collect();
    let nt = cfg.n_theta();

    // [x, t, θ] beside the history
    let width = usize::from(cfg.use_position) + 1 + nt;
    let mut feat = Vec::with_capacity(rows * width);
    for (b, m) in meta.iter().enumerate() {
        let t_norm = m.t / cfg.t_end;
        for i in 0..n {
            if cfg.use_position {
                feat.push(ctx.x_norm[i]);
            }
            feat.push(t_norm);
            feat.extend_from_slice(&thetas[b][..nt]);
        }
    }
    let feat = Tensor::constant(vec![rows, width], feat)?;
    let f = encode(p, &Tensor::concat_cols(&[h, &feat])?)?;

    let edges = BatchEdges {
        recv: batched_index(graph.receivers(), batch, n),
        send: batched_index(graph.senders(), batch, n),
        rows,
        batch,
    };
    let ne = graph.n_edges();
    let mut efeat = Vec::with_capacity(batch * ne * (1 + nt));
    for th in &thetas {
        for &d in &ctx.disp_norm {
            efeat.push(d);
            efeat.extend_from_slice(&th[..nt]);
        }
    }
    let efeat = Tensor::constant(vec![batch * ne, 1 + nt], efeat)?;
    let du = h.gather_rows(&edges.recv)?.sub(&h.gather_rows(&edges.send)?)?;
    let efeat = Tensor::concat_cols(&[&du, &efeat])?;
    let node_theta = if nt > 0 {
        let data = (0..rows).flat_map(|r| thetas[r / n][..nt].to_vec()).collect();
        Some(Tensor::constant(vec![rows, nt], data)?)
    } else {
        None
    };

    let mut f = f;
    for layer in 0..cfg.m {
        f = mp_layer(cfg, p, layer, &f, &efeat, node_theta.as_ref(), &edges)?;
    }
    let d = decode(cfg, p, &f)?;
    time_update(&d, h, cfg.k, cfg.dt)
}
