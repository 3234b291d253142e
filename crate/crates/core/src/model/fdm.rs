//! Hand-set weights under which one message passing layer reproduces an
//! explicit finite difference update `u ← u + dt·Σ_k c_k u(x + p_k)`.
//!
//! Signed values pass through swish layers exactly via
//! `swish(v) − swish(−v) = v`. Each stencil offset gets three φ units whose
//! second difference is an indicator of the edge displacement; the indicator
//! gates the scaled difference `c_k (u_i − u_j)` through a large negative bias.

use super::{Architecture, Model, ModelConfig, ModelContext};
use crate::error::{Error, Result};
use crate::stencil::Stencil;

/// Gate height; valid while `|c_k (u_i − u_j)|` stays well below `GATE·(1 + max|c|)`.
const GATE: f64 = 1e3;
/// Half width of the displacement indicator in units of the smallest gap.
const BUMP: f64 = 100.0;

fn set(model: &mut Model, name: &str, idx: usize, v: f64) -> Result<()> {
    let p = model.params.get_mut(name)?;
    p.data[idx] = v;
    Ok(())
}

pub fn fdm_emulation_weights(cfg: &ModelConfig, ctx: &ModelContext, stencil: &Stencil) -> Result<Model> {
    if cfg.arch != Architecture::MpPde || cfg.m != 1 || cfg.k != 1 || cfg.instance_norm {
        return Err(Error::Config("emulation needs one layer, K = 1 and no normalisation".into()));
    }
    let graph = ctx.graph()?;
    let len = ctx.grid.length();
    let tol = 1e-9;
    // normalised displacement x_i − x_j of the edge reaching each stencil point
    let mut offsets = Vec::new();
    let mut coeffs = Vec::new();
    let mut c_total = 0.0;
    for (p, c) in stencil.points.iter().zip(&stencil.coeffs) {
        c_total += c;
        let off = (p - stencil.eval_point) / len;
        if off.abs() > tol {
            offsets.push(-off);
            coeffs.push(*c);
        }
    }
    let h = cfg.hidden;
    if h < 4 || h < 2 + 3 * offsets.len() || cfg.decoder.kernel1 < 2 {
        return Err(Error::Config(format!(
            "hidden width {h} too small for {} stencil offsets",
            offsets.len()
        )));
    }

    let mut gap = f64::INFINITY;
    for i in 0..graph.n_nodes() {
        let start = graph.receivers().partition_point(|&r| r < i);
        let end = graph.receivers().partition_point(|&r| r <= i);
        let disp = &ctx.disp_norm[start..end];
        for &d in &offsets {
            if !disp.iter().any(|e| (e - d).abs() <= tol) {
                return Err(Error::Containment(format!(
                    "node {i} has no neighbour at offset {:.6}",
                    -d * len
                )));
            }
            for e in disp {
                let g = (e - d).abs();
                if g > tol {
                    gap = gap.min(g);
                }
            }
        }
    }
    let scale = if gap.is_finite() { 2.0 * BUMP / gap } else { 1.0 };
    let c_max = coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let gate = GATE * (1.0 + c_max);

    let mut model = Model::zeros(cfg.clone())?;
    let m = &mut model;

    // encoder: units 2, 3 hold swish(±u)
    set(m, "enc.l1.w", 0, 1.0)?;
    set(m, "enc.l1.w", 1, -1.0)?;
    for (unit, sign) in [(2, 1.0), (3, -1.0)] {
        set(m, "enc.l2.w", unit, sign)?;
        set(m, "enc.l2.w", h + unit, -sign)?;
    }

    // φ first layer: units 0, 1 carry ±Δu; three indicator units per offset
    set(m, "mp0.phi1.we", 0, 1.0)?;
    set(m, "mp0.phi1.we", 1, -1.0)?;
    for (k, &d) in offsets.iter().enumerate() {
        for (q, shift) in [BUMP, 0.0, -BUMP].into_iter().enumerate() {
            let unit = 2 + 3 * k + q;
            set(m, "mp0.phi1.we", h + unit, scale)?;
            set(m, "mp0.phi1.b", unit, -scale * d + shift)?;
        }
    }

    // φ second layer: units 2k, 2k+1 are swish(±c_k Δu) when the edge matches offset k
    for (k, &c) in coeffs.iter().enumerate() {
        for (unit, sign) in [(2 * k, 1.0), (2 * k + 1, -1.0)] {
            set(m, "mp0.phi2.w", unit, sign * c)?;
            set(m, "mp0.phi2.w", h + unit, -sign * c)?;
            let base = 2 + 3 * k;
            for (q, wq) in [1.0, -2.0, 1.0].into_iter().enumerate() {
                set(m, "mp0.phi2.w", (base + q) * h + unit, wq * gate / BUMP)?;
            }
            set(m, "mp0.phi2.b", unit, -gate)?;
        }
    }

    // ψ: w = Σc·u − Σ_k c_k (u_i − u_j), emitted as swish(±w) in units 0, 1
    for (unit, sign) in [(0, 1.0), (1, -1.0)] {
        set(m, "mp0.psi1.w", 2 * h + unit, sign * c_total)?;
        set(m, "mp0.psi1.w", 3 * h + unit, -sign * c_total)?;
        for k in 0..coeffs.len() {
            set(m, "mp0.psi1.w", (h + 2 * k) * h + unit, -sign)?;
            set(m, "mp0.psi1.w", (h + 2 * k + 1) * h + unit, sign)?;
        }
        set(m, "mp0.psi2.w", unit, sign)?;
        set(m, "mp0.psi2.w", h + unit, -sign)?;
    }

    // decoder: first window reads hidden units 0, 1 and recovers w
    let k1 = cfg.decoder.kernel1;
    let k2 = cfg.decoder.kernel2;
    set(m, "dec.c1.w", 0, 1.0)?;
    set(m, "dec.c1.w", 1, -1.0)?;
    set(m, "dec.c1.w", k1, -1.0)?;
    set(m, "dec.c1.w", k1 + 1, 1.0)?;
    set(m, "dec.c2.w", 0, 1.0)?;
    set(m, "dec.c2.w", k2, -1.0)?;
    Ok(model)
}
