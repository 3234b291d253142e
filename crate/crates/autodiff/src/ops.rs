//! Differentiable primitives.
//!
//! Every primitive validates shapes up front and reports mismatches as
//! [`AutodiffError::Shape`](crate::AutodiffError::Shape) naming the primitive.

use std::rc::Rc;

use crate::error::{shape_err, Result};
use crate::linalg::gemm;
use crate::tensor::Tensor;

/// Boundary handling for [`Tensor::conv1d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding; the output shrinks by `kernel - 1` before striding.
    Valid,
    /// Wrap-around padding of `(kernel - 1) / 2` on the left and the rest on
    /// the right, so stride 1 preserves length.
    Circular,
}

#[inline(always)]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

#[inline(always)]
fn swish_slice(xs: &mut [f64]) {
    xs.iter_mut().for_each(|v| *v *= sigmoid(*v));
}

/// Same arithmetic compiled for wider vectors; no fused operations, so the
/// results are bit-identical to the baseline path.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn swish_slice_avx2(xs: &mut [f64]) {
    swish_slice(xs);
}

fn swish_in_place(xs: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime
        unsafe { swish_slice_avx2(xs) };
        return;
    }
    swish_slice(xs);
}

/// Branch-free `e^x` that the compiler can vectorize. Inputs are clamped
/// to `[-708, 709]`; relative error stays within a few ulp.
#[inline(always)]
fn exp(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // adding 1.5·2^52 rounds to an integer held in the low mantissa bits
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    // NaN fails both comparisons and propagates
    let x = if x < -708.0 { -708.0 } else if x > 709.0 { 709.0 } else { x };
    let kf = x * std::f64::consts::LOG2_E + SHIFT;
    let k = kf.to_bits().wrapping_sub(SHIFT.to_bits());
    let kf = kf - SHIFT;
    let r = x - kf * LN2_HI - kf * LN2_LO;
    // Taylor terms to r^13, evaluated Estrin style for a short dependency chain
    const C: [f64; 14] = [
        1.0,
        1.0,
        1.0 / 2.0,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5_040.0,
        1.0 / 40_320.0,
        1.0 / 362_880.0,
        1.0 / 3_628_800.0,
        1.0 / 39_916_800.0,
        1.0 / 479_001_600.0,
        1.0 / 6_227_020_800.0,
    ];
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let q0 = (C[0] + C[1] * r) + (C[2] + C[3] * r) * r2;
    let q1 = (C[4] + C[5] * r) + (C[6] + C[7] * r) * r2;
    let q2 = (C[8] + C[9] * r) + (C[10] + C[11] * r) * r2;
    let q3 = C[12] + C[13] * r;
    let p = (q0 + q1 * r4) + (q2 + q3 * r4) * r8;
    p * f64::from_bits(k.wrapping_add(1023) << 52)
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(shape_err(op, format!("expected a 2-d tensor, got {:?}", t.shape()))),
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(
            op,
            format!("operands differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tensor {
    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = dims2("matmul", self)?;
        let (k2, n) = dims2("matmul", other)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), false, other.data(), false, 0.0, &mut out);
        let (a, b) = (self.data_rc(), other.data_rc());
        let (ia, ib) = (self.id(), other.id());
        Tensor::from_op("matmul", vec![m, n], out, &[self, other], move |g, sink| {
            if let Some(ga) = sink.slot(ia) {
                gemm(m, n, k, g, false, &b, true, 1.0, ga);
            }
            if let Some(gb) = sink.slot(ib) {
                gemm(k, m, n, &a, true, g, false, 1.0, gb);
            }
        })
    }

    /// `self @ w + b` with the bias broadcast over rows.
    pub fn affine(&self, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = dims2("affine", self)?;
        let (k2, n) = dims2("affine", w)?;
        if k != k2 {
            return Err(shape_err("affine", format!("inner dims {k} vs {k2}")));
        }
        if b.shape() != [n] {
            return Err(shape_err("affine", format!("bias {:?} does not match {n} outputs", b.shape())));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(b.data());
        }
        gemm(m, k, n, self.data(), false, w.data(), false, 1.0, &mut out);
        let (xa, wa) = (self.data_rc(), w.data_rc());
        let (ix, iw, ib) = (self.id(), w.id(), b.id());
        Tensor::from_op("affine", vec![m, n], out, &[self, w, b], move |g, sink| {
            if let Some(gx) = sink.slot(ix) {
                gemm(m, n, k, g, false, &wa, true, 1.0, gx);
            }
            if let Some(gw) = sink.slot(iw) {
                gemm(k, m, n, &xa, true, g, false, 1.0, gw);
            }
            if let Some(gb) = sink.slot(ib) {
                for row in g.chunks_exact(n.max(1)) {
                    gb.iter_mut().zip(row).for_each(|(s, gi)| *s += gi);
                }
            }
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        let (ia, ib) = (self.id(), other.id());
        Tensor::from_op("add", self.shape().to_vec(), out, &[self, other], move |g, sink| {
            for id in [ia, ib] {
                if let Some(slot) = sink.slot(id) {
                    slot.iter_mut().zip(g).for_each(|(s, gi)| *s += gi);
                }
            }
        })
    }

    /// Broadcast form of `add`: adds a `[n]` vector to every row of a tensor
    /// whose last dimension is `n`.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let n = *self.shape().last().unwrap_or(&0);
        if bias.shape() != [n] {
            return Err(shape_err(
                "add_bias",
                format!("bias {:?} does not match last dim {n}", bias.shape()),
            ));
        }
        let b = bias.data();
        let mut out = self.data().to_vec();
        for row in out.chunks_exact_mut(n.max(1)) {
            row.iter_mut().zip(b).for_each(|(x, bi)| *x += bi);
        }
        let (ix, ib) = (self.id(), bias.id());
        Tensor::from_op("add_bias", self.shape().to_vec(), out, &[self, bias], move |g, sink| {
            if let Some(slot) = sink.slot(ix) {
                slot.iter_mut().zip(g).for_each(|(s, gi)| *s += gi);
            }
            if let Some(slot) = sink.slot(ib) {
                for row in g.chunks_exact(n) {
                    slot.iter_mut().zip(row).for_each(|(s, gi)| *s += gi);
                }
            }
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        let (ia, ib) = (self.id(), other.id());
        Tensor::from_op("sub", self.shape().to_vec(), out, &[self, other], move |g, sink| {
            if let Some(slot) = sink.slot(ia) {
                slot.iter_mut().zip(g).for_each(|(s, gi)| *s += gi);
            }
            if let Some(slot) = sink.slot(ib) {
                slot.iter_mut().zip(g).for_each(|(s, gi)| *s -= gi);
            }
        })
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.data_rc(), other.data_rc());
        let (ia, ib) = (self.id(), other.id());
        Tensor::from_op("mul", self.shape().to_vec(), out, &[self, other], move |g, sink| {
            if let Some(slot) = sink.slot(ia) {
                for ((s, gi), bi) in slot.iter_mut().zip(g).zip(b.iter()) {
                    *s += gi * bi;
                }
            }
            if let Some(slot) = sink.slot(ib) {
                for ((s, gi), ai) in slot.iter_mut().zip(g).zip(a.iter()) {
                    *s += gi * ai;
                }
            }
        })
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        let out = self.data().iter().map(|x| x * factor).collect();
        let id = self.id();
        Tensor::from_op("scale", self.shape().to_vec(), out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                slot.iter_mut().zip(g).for_each(|(s, gi)| *s += factor * gi);
            }
        })
    }

    pub fn sum(&self) -> Result<Tensor> {
        let total = self.data().iter().sum();
        let id = self.id();
        Tensor::from_op("sum", vec![1], vec![total], &[self], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                slot.iter_mut().for_each(|s| *s += g[0]);
            }
        })
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel();
        if n == 0 {
            return Err(shape_err("mean", "empty tensor"));
        }
        self.sum()?.scale(1.0 / n as f64)
    }

    pub fn square(&self) -> Result<Tensor> {
        let out = self.data().iter().map(|x| x * x).collect();
        let x = self.data_rc();
        let id = self.id();
        Tensor::from_op("square", self.shape().to_vec(), out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for ((s, gi), xi) in slot.iter_mut().zip(g).zip(x.iter()) {
                    *s += 2.0 * xi * gi;
                }
            }
        })
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        let out: Vec<f64> = self.data().iter().map(|x| x.sqrt()).collect();
        let y = Rc::new(out.clone());
        let id = self.id();
        Tensor::from_op("sqrt", self.shape().to_vec(), out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for ((s, gi), yi) in slot.iter_mut().zip(g).zip(y.iter()) {
                    *s += gi / (2.0 * yi);
                }
            }
        })
    }

    /// `x·sigmoid(x)`.
    pub fn swish(&self) -> Result<Tensor> {
        let mut out = self.data().to_vec();
        swish_in_place(&mut out);
        let x = self.data_rc();
        let id = self.id();
        Tensor::from_op("swish", self.shape().to_vec(), out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for ((s, gi), &xi) in slot.iter_mut().zip(g).zip(x.iter()) {
                    let sg = sigmoid(xi);
                    *s += gi * sg * (1.0 + xi * (1.0 - sg));
                }
            }
        })
    }

    pub fn relu(&self) -> Result<Tensor> {
        let out = self.data().iter().map(|&x| x.max(0.0)).collect();
        let x = self.data_rc();
        let id = self.id();
        Tensor::from_op("relu", self.shape().to_vec(), out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for ((s, gi), &xi) in slot.iter_mut().zip(g).zip(x.iter()) {
                    if xi > 0.0 {
                        *s += gi;
                    }
                }
            }
        })
    }

    /// ELU with unit scale.
    pub fn elu(&self) -> Result<Tensor> {
        let out = self
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { x.exp_m1() })
            .collect();
        let x = self.data_rc();
        let id = self.id();
        Tensor::from_op("elu", self.shape().to_vec(), out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for ((s, gi), &xi) in slot.iter_mut().zip(g).zip(x.iter()) {
                    *s += if xi > 0.0 { *gi } else { gi * xi.exp() };
                }
            }
        })
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        self.with_shape("reshape", shape)
    }

    /// Transpose of a 2-d tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let (rows, cols) = dims2("transpose", self)?;
        let x = self.data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = x[r * cols + c];
            }
        }
        let id = self.id();
        Tensor::from_op("transpose", vec![cols, rows], out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for r in 0..rows {
                    for c in 0..cols {
                        slot[r * cols + c] += g[c * rows + r];
                    }
                }
            }
        })
    }

    /// Column-wise concatenation of 2-d tensors with equal row counts.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| shape_err("concat", "no operands"))?;
        let (rows, _) = dims2("concat", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = dims2("concat", p)?;
            if r != rows {
                return Err(shape_err("concat", format!("row counts {rows} vs {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let ids: Vec<Option<usize>> = parts.iter().map(|p| p.id()).collect();
        Tensor::from_op("concat", vec![rows, total], out, parts, move |g, sink| {
            let mut offset = 0;
            for (id, &w) in ids.iter().zip(&widths) {
                if let Some(slot) = sink.slot(*id) {
                    for r in 0..rows {
                        let src = &g[r * total + offset..r * total + offset + w];
                        slot[r * w..(r + 1) * w]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(s, gi)| *s += gi);
                    }
                }
                offset += w;
            }
        })
    }

    /// Selects rows `index[e]` of a 2-d tensor into a new `[index.len(), c]` tensor.
    pub fn gather_rows(&self, index: &Rc<[usize]>) -> Result<Tensor> {
        let (rows, cols) = dims2("gather_rows", self)?;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather_rows", format!("row {bad} out of {rows}")));
        }
        let x = self.data();
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            out.extend_from_slice(&x[i * cols..(i + 1) * cols]);
        }
        let index = Rc::clone(index);
        let id = self.id();
        Tensor::from_op(
            "gather_rows",
            vec![index.len(), cols],
            out,
            &[self],
            move |g, sink| {
                if let Some(slot) = sink.slot(id) {
                    for (e, &i) in index.iter().enumerate() {
                        slot[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(&g[e * cols..(e + 1) * cols])
                            .for_each(|(s, gi)| *s += gi);
                    }
                }
            },
        )
    }

    /// Accumulates row `e` into output row `index[e]`. Rows are visited in
    /// index order, so the summation order is fixed by `index`.
    pub fn scatter_add_rows(&self, index: &Rc<[usize]>, out_rows: usize) -> Result<Tensor> {
        let (rows, cols) = dims2("scatter_add_rows", self)?;
        if index.len() != rows {
            return Err(shape_err(
                "scatter_add_rows",
                format!("{} indices for {rows} rows", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_rows) {
            return Err(shape_err(
                "scatter_add_rows",
                format!("target row {bad} out of {out_rows}"),
            ));
        }
        let x = self.data();
        let mut out = vec![0.0; out_rows * cols];
        for (e, &i) in index.iter().enumerate() {
            out[i * cols..(i + 1) * cols]
                .iter_mut()
                .zip(&x[e * cols..(e + 1) * cols])
                .for_each(|(o, xi)| *o += xi);
        }
        let index = Rc::clone(index);
        let id = self.id();
        Tensor::from_op(
            "scatter_add_rows",
            vec![out_rows, cols],
            out,
            &[self],
            move |g, sink| {
                if let Some(slot) = sink.slot(id) {
                    for (e, &i) in index.iter().enumerate() {
                        slot[e * cols..(e + 1) * cols]
                            .iter_mut()
                            .zip(&g[i * cols..(i + 1) * cols])
                            .for_each(|(s, gi)| *s += gi);
                    }
                }
            },
        )
    }

    /// Normalises each column within each of `groups` contiguous row blocks
    /// to zero mean and unit (population) variance. No affine transform.
    ///
    /// The statistics are accumulated over sorted values, so they do not
    /// depend on the row order inside a block.
    pub fn instance_norm(&self, groups: usize, eps: f64) -> Result<Tensor> {
        let (rows, cols) = dims2("instance_norm", self)?;
        if groups == 0 || rows % groups != 0 {
            return Err(shape_err(
                "instance_norm",
                format!("{rows} rows do not split into {groups} groups"),
            ));
        }
        let per = rows / groups;
        let x = self.data();
        let mut out = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; groups * cols];
        let mut buf = vec![0.0; per];
        for grp in 0..groups {
            let base = grp * per;
            for c in 0..cols {
                for (r, b) in buf.iter_mut().enumerate() {
                    *b = x[(base + r) * cols + c];
                }
                let mean = order_free_sum(&buf) / per as f64;
                for (r, b) in buf.iter_mut().enumerate() {
                    let d = x[(base + r) * cols + c] - mean;
                    *b = d * d;
                }
                let var = order_free_sum(&buf) / per as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[grp * cols + c] = is;
                for r in 0..per {
                    let at = (base + r) * cols + c;
                    out[at] = (x[at] - mean) * is;
                }
            }
        }
        let y = Rc::new(out.clone());
        let id = self.id();
        Tensor::from_op("instance_norm", vec![rows, cols], out, &[self], move |g, sink| {
            let Some(slot) = sink.slot(id) else { return };
            let n = per as f64;
            for grp in 0..groups {
                let base = grp * per;
                for c in 0..cols {
                    let (mut mg, mut mgy) = (0.0, 0.0);
                    for r in 0..per {
                        let at = (base + r) * cols + c;
                        mg += g[at];
                        mgy += g[at] * y[at];
                    }
                    mg /= n;
                    mgy /= n;
                    let is = inv_std[grp * cols + c];
                    for r in 0..per {
                        let at = (base + r) * cols + c;
                        slot[at] += is * (g[at] - mg - y[at] * mgy);
                    }
                }
            }
        })
    }

    /// 1-d convolution of `[batch, c_in, len]` with weights `[c_out, c_in, k]`
    /// and bias `[c_out]`.
    pub fn conv1d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: Padding,
    ) -> Result<Tensor> {
        let [batch, c_in, len] = *self.shape() else {
            return Err(shape_err("conv1d", format!("input {:?} is not 3-d", self.shape())));
        };
        let [c_out, c_in_w, k] = *weight.shape() else {
            return Err(shape_err("conv1d", format!("weight {:?} is not 3-d", weight.shape())));
        };
        if c_in != c_in_w || bias.shape() != [c_out] || stride == 0 || k == 0 {
            return Err(shape_err(
                "conv1d",
                format!(
                    "input {:?}, weight {:?}, bias {:?}, stride {stride}",
                    self.shape(),
                    weight.shape(),
                    bias.shape()
                ),
            ));
        }
        let (pad_left, padded) = match padding {
            Padding::Valid => (0, len),
            Padding::Circular => ((k - 1) / 2, len + k - 1),
        };
        if padded < k {
            return Err(shape_err("conv1d", format!("kernel {k} longer than input {len}")));
        }
        let out_len = (padded - k) / stride + 1;
        // Source position for output t, tap j.
        let src = move |t: usize, j: usize| -> usize {
            let p = t * stride + j;
            match padding {
                Padding::Valid => p,
                Padding::Circular => (p + len - pad_left % len) % len,
            }
        };
        let x = self.data();
        let w = weight.data();
        let bv = bias.data();
        let mut out = vec![0.0; batch * c_out * out_len];
        for b in 0..batch {
            for o in 0..c_out {
                let orow = &mut out[(b * c_out + o) * out_len..(b * c_out + o + 1) * out_len];
                orow.iter_mut().for_each(|v| *v = bv[o]);
                for ci in 0..c_in {
                    let xrow = &x[(b * c_in + ci) * len..(b * c_in + ci + 1) * len];
                    let wrow = &w[(o * c_in + ci) * k..(o * c_in + ci + 1) * k];
                    for (t, ov) in orow.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (j, wj) in wrow.iter().enumerate() {
                            acc += wj * xrow[src(t, j)];
                        }
                        *ov += acc;
                    }
                }
            }
        }
        let (xd, wd) = (self.data_rc(), weight.data_rc());
        let (ix, iw, ib) = (self.id(), weight.id(), bias.id());
        Tensor::from_op(
            "conv1d",
            vec![batch, c_out, out_len],
            out,
            &[self, weight, bias],
            move |g, sink| {
                if let Some(slot) = sink.slot(ib) {
                    for b in 0..batch {
                        for (o, s) in slot.iter_mut().enumerate() {
                            let grow = &g[(b * c_out + o) * out_len..(b * c_out + o + 1) * out_len];
                            *s += grow.iter().sum::<f64>();
                        }
                    }
                }
                if let Some(slot) = sink.slot(iw) {
                    for b in 0..batch {
                        for o in 0..c_out {
                            let grow = &g[(b * c_out + o) * out_len..(b * c_out + o + 1) * out_len];
                            for ci in 0..c_in {
                                let xrow = &xd[(b * c_in + ci) * len..(b * c_in + ci + 1) * len];
                                let wslot = &mut slot[(o * c_in + ci) * k..(o * c_in + ci + 1) * k];
                                for (j, ws) in wslot.iter_mut().enumerate() {
                                    let mut acc = 0.0;
                                    for (t, gt) in grow.iter().enumerate() {
                                        acc += gt * xrow[src(t, j)];
                                    }
                                    *ws += acc;
                                }
                            }
                        }
                    }
                }
                if let Some(slot) = sink.slot(ix) {
                    for b in 0..batch {
                        for o in 0..c_out {
                            let grow = &g[(b * c_out + o) * out_len..(b * c_out + o + 1) * out_len];
                            for ci in 0..c_in {
                                let wrow = &wd[(o * c_in + ci) * k..(o * c_in + ci + 1) * k];
                                let xslot =
                                    &mut slot[(b * c_in + ci) * len..(b * c_in + ci + 1) * len];
                                for (t, gt) in grow.iter().enumerate() {
                                    for (j, wj) in wrow.iter().enumerate() {
                                        xslot[src(t, j)] += gt * wj;
                                    }
                                }
                            }
                        }
                    }
                }
            },
        )
    }
}

/// Sum of `values` that does not depend on their order: every value is
/// truncated to a fixed-point grid 2^-100 below the largest magnitude and
/// the integers are added exactly.
fn order_free_sum(values: &[f64]) -> f64 {
    let mut top = 0.0f64;
    for &v in values {
        if !v.is_finite() {
            return values.iter().sum();
        }
        top = top.max(v.abs());
    }
    if top == 0.0 {
        return 0.0;
    }
    // top < 2^e
    let e = ((top.to_bits() >> 52) as i32 - 1022).max(-1021);
    let half = (100 - e) / 2;
    let (s1, s2) = (2f64.powi(half), 2f64.powi(100 - e - half));
    let total: i128 = values.iter().map(|&v| (v * s1 * s2) as i128).sum();
    total as f64 / s1 / s2
}

#[cfg(test)]
mod tests {
    #[test]
    fn order_free_sum_ignores_order() {
        let mut v: Vec<f64> = (0..200).map(|i| ((i * 7919 % 211) as f64 - 105.0) * 1.37e-3 + 1e-9 * i as f64).collect();
        let a = super::order_free_sum(&v);
        let plain: f64 = v.iter().sum();
        assert!((a - plain).abs() < 1e-12);
        v.reverse();
        v.rotate_left(37);
        assert_eq!(super::order_free_sum(&v).to_bits(), a.to_bits());
        assert_eq!(super::order_free_sum(&[3.0, -3.0]), 0.0);
        assert_eq!(super::order_free_sum(&[1e300, 1e300]), 2e300);
        assert_eq!(super::order_free_sum(&[1e-310, 2e-310]), 3e-310);
        assert!(super::order_free_sum(&[1.0, f64::NAN]).is_nan());
    }

    #[test]
    fn fast_exp_matches_libm() {
        let mut worst = 0.0f64;
        for i in -69_000..=69_000 {
            let x = i as f64 * 0.01013;
            worst = worst.max((super::exp(x) - x.exp()).abs() / x.exp());
        }
        assert!(worst < 1e-15, "{worst}");
        assert_eq!(super::exp(0.0), 1.0);
        assert!(super::exp(-1e4) > 0.0 && super::exp(1e4).is_finite());
        assert!(super::exp(f64::NAN).is_nan());
    }

    use super::*;
    use crate::gradcheck::gradcheck;
    use crate::{AutodiffError, Tape};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-6;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn check<F>(shapes: &[Vec<usize>], seed: u64, f: F)
    where
        F: Fn(&[Tensor]) -> Result<Tensor>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<(Vec<usize>, Vec<f64>)> = shapes
            .iter()
            .map(|s| (s.clone(), random(&mut rng, s.iter().product())))
            .collect();
        let report = gradcheck(&f, &inputs, 1e-5).unwrap();
        assert!(
            report.max_rel_err < TOL,
            "relative error {} (per input {:?})",
            report.max_rel_err,
            report.per_input
        );
    }

    #[test]
    fn gradcheck_matmul() {
        check(&[vec![4, 3], vec![3, 5]], 1, |x| x[0].matmul(&x[1])?.square()?.sum());
    }

    #[test]
    fn gradcheck_transpose() {
        check(&[vec![3, 4], vec![4, 3]], 31, |x| x[0].transpose()?.mul(&x[1])?.square()?.sum());
    }

    #[test]
    fn gradcheck_add_sub_mul() {
        check(&[vec![3, 2], vec![3, 2]], 2, |x| x[0].add(&x[1])?.square()?.sum());
        check(&[vec![3, 2], vec![3, 2]], 3, |x| x[0].sub(&x[1])?.square()?.sum());
        check(&[vec![3, 2], vec![3, 2]], 4, |x| x[0].mul(&x[1])?.square()?.sum());
    }

    #[test]
    fn gradcheck_bias_scale_mean() {
        check(&[vec![4, 3], vec![3]], 5, |x| {
            x[0].add_bias(&x[1])?.scale(0.7)?.square()?.mean()
        });
    }

    #[test]
    fn gradcheck_activations() {
        check(&[vec![3, 4]], 6, |x| x[0].swish()?.square()?.sum());
        check(&[vec![3, 4]], 7, |x| x[0].elu()?.square()?.sum());
        // keep relu inputs away from the kink
        check(&[vec![3, 4]], 8, |x| {
            x[0].square()?.add_bias(&Tensor::constant(vec![4], vec![0.1; 4])?)?.relu()?.sum()
        });
        check(&[vec![2, 3]], 9, |x| x[0].square()?.scale(2.0)?.sqrt()?.sum());
    }

    #[test]
    fn gradcheck_concat_gather_scatter() {
        let idx: Rc<[usize]> = Rc::from(vec![2, 0, 1, 2, 2]);
        check(&[vec![3, 2], vec![3, 1]], 10, |x| {
            Tensor::concat_cols(&[&x[0], &x[1]])?.gather_rows(&idx)?.square()?.sum()
        });
        let idx2: Rc<[usize]> = Rc::from(vec![1, 1, 0, 3]);
        check(&[vec![4, 2]], 11, |x| x[0].scatter_add_rows(&idx2, 4)?.square()?.sum());
    }

    #[test]
    fn gradcheck_instance_norm() {
        let w = Tensor::constant(vec![6, 3], (0..18).map(|i| (i as f64).sin()).collect()).unwrap();
        check(&[vec![6, 3]], 12, |x| x[0].instance_norm(2, 1e-5)?.mul(&w)?.sum());
    }

    #[test]
    fn gradcheck_conv1d() {
        check(&[vec![2, 2, 9], vec![3, 2, 4], vec![3]], 13, |x| {
            x[0].conv1d(&x[1], &x[2], 2, Padding::Valid)?.square()?.sum()
        });
        check(&[vec![2, 3, 7], vec![2, 3, 5], vec![2]], 14, |x| {
            x[0].conv1d(&x[1], &x[2], 1, Padding::Circular)?.square()?.sum()
        });
    }

    #[test]
    fn gradcheck_reshape() {
        check(&[vec![2, 6]], 15, |x| x[0].reshape(vec![3, 4])?.matmul(&x[0].reshape(vec![4, 3])?)?.sum());
    }

    #[test]
    fn swish_at_zero() {
        let y = Tensor::scalar(0.0).swish().unwrap();
        assert_eq!(y.item(), 0.0);
    }

    #[test]
    fn swish_saturates_to_identity() {
        let y = Tensor::scalar(50.0).swish().unwrap();
        assert_eq!(y.item(), 50.0);
    }

    #[test]
    fn scatter_add_of_two_messages_is_their_sum() {
        let src = Tensor::constant(vec![2, 2], vec![1.0, 2.0, 10.0, 20.0]).unwrap();
        let idx: Rc<[usize]> = Rc::from(vec![1, 1]);
        let out = src.scatter_add_rows(&idx, 3).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 11.0, 22.0, 0.0, 0.0]);
    }

    #[test]
    fn instance_norm_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let x = Tensor::constant(vec![12, 4], random(&mut rng, 48)).unwrap();
        let y = x.instance_norm(3, 0.0).unwrap();
        for g in 0..3 {
            for c in 0..4 {
                let col: Vec<f64> = (0..4).map(|r| y.data()[(g * 4 + r) * 4 + c]).collect();
                let mean = col.iter().sum::<f64>() / 4.0;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
                assert!(mean.abs() < 1e-10, "mean {mean}");
                assert!((var - 1.0).abs() < 1e-10, "var {var}");
            }
        }
    }

    #[test]
    fn instance_norm_is_row_permutation_invariant_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = random(&mut rng, 7 * 3);
        let perm = [3, 6, 0, 5, 1, 4, 2];
        let permuted: Vec<f64> = perm
            .iter()
            .flat_map(|&r| data[r * 3..(r + 1) * 3].to_vec())
            .collect();
        let a = Tensor::constant(vec![7, 3], data).unwrap().instance_norm(1, 1e-5).unwrap();
        let b = Tensor::constant(vec![7, 3], permuted).unwrap().instance_norm(1, 1e-5).unwrap();
        for (new_row, &old_row) in perm.iter().enumerate() {
            assert_eq!(&b.data()[new_row * 3..new_row * 3 + 3], &a.data()[old_row * 3..old_row * 3 + 3]);
        }
    }

    #[test]
    fn sum_of_matvec_gradient_is_column_sums() {
        let tape = Tape::new();
        let a = Tensor::constant(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = Tensor::leaf(&tape, vec![3, 1], vec![0.3, -0.2, 0.9]).unwrap();
        let loss = a.matmul(&x).unwrap().sum().unwrap();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn conv1d_lengths() {
        let x = Tensor::zeros(vec![3, 1, 128]);
        let w = Tensor::zeros(vec![8, 1, 8]);
        let y = x.conv1d(&w, &Tensor::zeros(vec![8]), 4, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[3, 8, 31]);
        let w2 = Tensor::zeros(vec![1, 8, 7]);
        let z = y.conv1d(&w2, &Tensor::zeros(vec![1]), 1, Padding::Valid).unwrap();
        assert_eq!(z.shape(), &[3, 1, 25]);
    }

    #[test]
    fn circular_conv_commutes_with_roll() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let len = 9;
        let x: Vec<f64> = random(&mut rng, 2 * len);
        let w = Tensor::constant(vec![1, 2, 5], random(&mut rng, 10)).unwrap();
        let b = Tensor::constant(vec![1], vec![0.3]).unwrap();
        let rolled: Vec<f64> = (0..2)
            .flat_map(|c| (0..len).map(move |i| (c, (i + len - 1) % len)))
            .map(|(c, i)| x[c * len + i])
            .collect();
        let y = Tensor::constant(vec![1, 2, len], x).unwrap().conv1d(&w, &b, 1, Padding::Circular).unwrap();
        let yr = Tensor::constant(vec![1, 2, len], rolled).unwrap().conv1d(&w, &b, 1, Padding::Circular).unwrap();
        for i in 0..len {
            assert_eq!(yr.data()[i], y.data()[(i + len - 1) % len]);
        }
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        match a.matmul(&b) {
            Err(AutodiffError::Shape { op, .. }) => assert_eq!(op, "matmul"),
            other => panic!("unexpected {other:?}"),
        }
        match a.add(&Tensor::zeros(vec![3, 2])) {
            Err(AutodiffError::Shape { op, .. }) => assert_eq!(op, "add"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
