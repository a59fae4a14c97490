//! Differentiable layers with hand-written backward passes.
//!
//! Each layer's `forward` returns the output plus whatever it needs to run
//! `backward`; `backward` accumulates parameter gradients and returns the
//! gradient with respect to the input.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::rng::{kaiming_uniform, Rng};
use super::tensor::{Module, Param, Tensor};
use crate::error::{bail, Result};
use crate::math;

/// `y = x W + b` applied to each row of an `n x in_dim` matrix.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                kaiming_uniform(&[in_dim, out_dim], in_dim, rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_dim])),
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len() % self.in_dim, 0);
        let rows = x.len() / self.in_dim;
        let w = self.weight.value.data();
        let b = self.bias.value.data();
        let mut y = vec![0.0; rows * self.out_dim];
        for r in 0..rows {
            let yr = &mut y[r * self.out_dim..(r + 1) * self.out_dim];
            yr.copy_from_slice(b);
            let xr = &x[r * self.in_dim..(r + 1) * self.in_dim];
            for (i, &xi) in xr.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wrow = &w[i * self.out_dim..(i + 1) * self.out_dim];
                for (yo, &wo) in yr.iter_mut().zip(wrow) {
                    *yo += xi * wo;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let rows = x.len() / self.in_dim;
        let (ind, outd) = (self.in_dim, self.out_dim);
        let mut dx = vec![0.0; x.len()];
        {
            let gb = self.bias.grad.data_mut();
            for r in 0..rows {
                for (g, &d) in gb.iter_mut().zip(&dy[r * outd..(r + 1) * outd]) {
                    *g += d;
                }
            }
        }
        let w = self.weight.value.data();
        let gw = self.weight.grad.data_mut();
        for r in 0..rows {
            let xr = &x[r * ind..(r + 1) * ind];
            let dyr = &dy[r * outd..(r + 1) * outd];
            let dxr = &mut dx[r * ind..(r + 1) * ind];
            for i in 0..ind {
                let wrow = &w[i * outd..(i + 1) * outd];
                let grow = &mut gw[i * outd..(i + 1) * outd];
                let xi = xr[i];
                let mut acc = 0.0;
                for o in 0..outd {
                    grow[o] += xi * dyr[o];
                    acc += wrow[o] * dyr[o];
                }
                dxr[i] = acc;
            }
        }
        dx
    }
}

impl Module for Linear {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// 2D cross-correlation with "same" zero padding, input `C_in x H x W`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    c_in: usize,
    c_out: usize,
    k: usize,
}

impl Conv2d {
    pub fn new(name: &str, c_in: usize, c_out: usize, k: usize, rng: &mut Rng) -> Result<Self> {
        if k % 2 == 0 {
            bail!(Config, "conv kernel must be odd to preserve shape, got {k}");
        }
        Ok(Self {
            weight: Param::new(
                format!("{name}.weight"),
                kaiming_uniform(&[c_out, c_in, k, k], c_in * k * k, rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[c_out])),
            c_in,
            c_out,
            k,
        })
    }

    pub fn channels(&self) -> (usize, usize) {
        (self.c_in, self.c_out)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let s = input.shape();
        if s.len() != 3 || s[0] != self.c_in {
            bail!(Shape, "conv expects {} x H x W input, got {:?}", self.c_in, s);
        }
        let (h, w) = (s[1], s[2]);
        let x = input.data();
        let k = self.k;
        let pad = (k / 2) as isize;
        let wt = self.weight.value.data();
        let mut out = vec![0.0; self.c_out * h * w];
        for co in 0..self.c_out {
            let plane = &mut out[co * h * w..(co + 1) * h * w];
            plane.iter_mut().for_each(|v| *v = self.bias.value.data()[co]);
            for ci in 0..self.c_in {
                let xin = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let wv = wt[((co * self.c_in + ci) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = valid_range(w, dx);
                        for yy in 0..h {
                            let sy = yy as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let src = &xin[sy as usize * w..(sy as usize + 1) * w];
                            let dst = &mut plane[yy * w..(yy + 1) * w];
                            for xx in x0..x1 {
                                dst[xx] += wv * src[(xx as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[self.c_out, h, w], out)
    }

    pub fn backward(&mut self, input: &Tensor, dout: &[f64]) -> Vec<f64> {
        let s = input.shape();
        let (h, w) = (s[1], s[2]);
        let x = input.data();
        let k = self.k;
        let pad = (k / 2) as isize;
        let mut dx_all = vec![0.0; x.len()];
        {
            let gb = self.bias.grad.data_mut();
            for co in 0..self.c_out {
                gb[co] += dout[co * h * w..(co + 1) * h * w].iter().sum::<f64>();
            }
        }
        let wt = self.weight.value.data();
        let gw = self.weight.grad.data_mut();
        for co in 0..self.c_out {
            let dplane = &dout[co * h * w..(co + 1) * h * w];
            for ci in 0..self.c_in {
                let xin = &x[ci * h * w..(ci + 1) * h * w];
                let dxin = &mut dx_all[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let widx = ((co * self.c_in + ci) * k + ky) * k + kx;
                        let wv = wt[widx];
                        let (x0, x1) = valid_range(w, dx);
                        let mut gacc = 0.0;
                        for yy in 0..h {
                            let sy = yy as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let sy = sy as usize;
                            let drow = &dplane[yy * w..(yy + 1) * w];
                            for xx in x0..x1 {
                                let sx = (xx as isize + dx) as usize;
                                gacc += drow[xx] * xin[sy * w + sx];
                                dxin[sy * w + sx] += wv * drow[xx];
                            }
                        }
                        gw[widx] += gacc;
                    }
                }
            }
        }
        dx_all
    }
}

/// Output columns `x` for which `x + offset` lands inside `[0, w)`.
fn valid_range(w: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (w as isize - offset).clamp(0, w as isize) as usize;
    (lo.min(hi), hi)
}

impl Module for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Backward of ReLU given the forward *input*.
pub fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
        .collect()
}

/// Row-wise layer normalization with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    dim: usize,
    eps: f64,
}

pub struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        let mut g = Tensor::zeros(&[dim]);
        g.fill(1.0);
        Self {
            gamma: Param::new(format!("{name}.gamma"), g),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[dim])),
            dim,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, LayerNormCache) {
        let d = self.dim;
        let rows = x.len() / d;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let g = self.gamma.value.data();
        let b = self.beta.value.data();
        for r in 0..rows {
            let xr = &x[r * d..(r + 1) * d];
            let mu = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / math::sqrt(var + self.eps);
            inv_std[r] = is;
            for i in 0..d {
                let h = (xr[i] - mu) * is;
                xhat[r * d + i] = h;
                y[r * d + i] = g[i] * h + b[i];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let rows = dy.len() / d;
        let mut dx = vec![0.0; dy.len()];
        let g = self.gamma.value.data();
        let gg = self.gamma.grad.data_mut();
        let gb = self.beta.grad.data_mut();
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            let mut mean_dxh = 0.0;
            let mut mean_dxh_xh = 0.0;
            for i in 0..d {
                gg[i] += dyr[i] * xh[i];
                gb[i] += dyr[i];
                let dxh = dyr[i] * g[i];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[i];
            }
            mean_dxh /= d as f64;
            mean_dxh_xh /= d as f64;
            for i in 0..d {
                let dxh = dyr[i] * g[i];
                dx[r * d + i] = cache.inv_std[r] * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
            }
        }
        dx
    }
}

impl Module for LayerNorm {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

/// Row-wise softmax, stable against large logits.
pub fn softmax_rows(x: &mut [f64], cols: usize) {
    for row in x.chunks_mut(cols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - m);
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

/// Non-causal multi-head self-attention over `S x d` tokens.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    heads: usize,
    dim: usize,
}

pub struct AttentionCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads x S x S` attention weights.
    pub weights: Vec<f64>,
    concat: Vec<f64>,
}

impl MultiHeadAttention {
    pub fn new(name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            bail!(Config, "embedding dim {dim} is not divisible by {heads} heads");
        }
        Ok(Self {
            wq: Linear::new(&format!("{name}.wq"), dim, dim, rng),
            wk: Linear::new(&format!("{name}.wk"), dim, dim, rng),
            wv: Linear::new(&format!("{name}.wv"), dim, dim, rng),
            wo: Linear::new(&format!("{name}.wo"), dim, dim, rng),
            heads,
            dim,
        })
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, AttentionCache) {
        let d = self.dim;
        let s = x.len() / d;
        let dh = d / self.heads;
        let scale = 1.0 / math::sqrt(dh as f64);
        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);
        let mut weights = vec![0.0; self.heads * s * s];
        let mut concat = vec![0.0; s * d];
        for h in 0..self.heads {
            let off = h * dh;
            let a = &mut weights[h * s * s..(h + 1) * s * s];
            for i in 0..s {
                for j in 0..s {
                    let mut dot = 0.0;
                    for c in 0..dh {
                        dot += q[i * d + off + c] * k[j * d + off + c];
                    }
                    a[i * s + j] = dot * scale;
                }
            }
            softmax_rows(a, s);
            for i in 0..s {
                for j in 0..s {
                    let aij = a[i * s + j];
                    for c in 0..dh {
                        concat[i * d + off + c] += aij * v[j * d + off + c];
                    }
                }
            }
        }
        let out = self.wo.forward(&concat);
        (
            out,
            AttentionCache {
                x: x.to_vec(),
                q,
                k,
                v,
                weights,
                concat,
            },
        )
    }

    pub fn backward(&mut self, cache: &AttentionCache, dy: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let s = cache.x.len() / d;
        let dh = d / self.heads;
        let scale = 1.0 / math::sqrt(dh as f64);
        let dconcat = self.wo.backward(&cache.concat, dy);
        let (q, k, v) = (&cache.q, &cache.k, &cache.v);
        let mut dq = vec![0.0; s * d];
        let mut dk = vec![0.0; s * d];
        let mut dv = vec![0.0; s * d];
        let mut da = vec![0.0; s * s];
        for h in 0..self.heads {
            let off = h * dh;
            let a = &cache.weights[h * s * s..(h + 1) * s * s];
            for i in 0..s {
                for j in 0..s {
                    let mut acc = 0.0;
                    for c in 0..dh {
                        acc += dconcat[i * d + off + c] * v[j * d + off + c];
                        dv[j * d + off + c] += a[i * s + j] * dconcat[i * d + off + c];
                    }
                    da[i * s + j] = acc;
                }
            }
            for i in 0..s {
                let row_dot: f64 = (0..s).map(|j| da[i * s + j] * a[i * s + j]).sum();
                for j in 0..s {
                    let ds = a[i * s + j] * (da[i * s + j] - row_dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        dq[i * d + off + c] += ds * k[j * d + off + c];
                        dk[j * d + off + c] += ds * q[i * d + off + c];
                    }
                }
            }
        }
        let mut dx = self.wq.backward(&cache.x, &dq);
        for (a, b) in dx.iter_mut().zip(self.wk.backward(&cache.x, &dk)) {
            *a += b;
        }
        for (a, b) in dx.iter_mut().zip(self.wv.backward(&cache.x, &dv)) {
            *a += b;
        }
        dx
    }
}

impl Module for MultiHeadAttention {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.wq.visit(f);
        self.wk.visit(f);
        self.wv.visit(f);
        self.wo.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.wq.visit_mut(f);
        self.wk.visit_mut(f);
        self.wv.visit_mut(f);
        self.wo.visit_mut(f);
    }
}

/// Pre-norm transformer block: `x + MHSA(LN(x))`, then `x + FFN(LN(x))`.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    dim: usize,
}

pub struct BlockCache {
    ln1: LayerNormCache,
    pub attn: AttentionCache,
    ln2: LayerNormCache,
    ln2_out: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl AttentionBlock {
    pub fn new(name: &str, dim: usize, heads: usize, ffn_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(&format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(&format!("{name}.attn"), dim, heads, rng)?,
            ln2: LayerNorm::new(&format!("{name}.ln2"), dim),
            ff1: Linear::new(&format!("{name}.ff1"), dim, ffn_dim, rng),
            ff2: Linear::new(&format!("{name}.ff2"), ffn_dim, dim, rng),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, BlockCache) {
        let (n1, ln1) = self.ln1.forward(x);
        let (a, attn) = self.attn.forward(&n1);
        let x1: Vec<f64> = x.iter().zip(&a).map(|(p, q)| p + q).collect();
        let (n2, ln2) = self.ln2.forward(&x1);
        let hidden_pre = self.ff1.forward(&n2);
        let hidden = relu(&hidden_pre);
        let f = self.ff2.forward(&hidden);
        let out = x1.iter().zip(&f).map(|(p, q)| p + q).collect();
        (
            out,
            BlockCache {
                ln1,
                attn,
                ln2,
                ln2_out: n2,
                hidden_pre,
                hidden,
            },
        )
    }

    pub fn backward(&mut self, cache: &BlockCache, dy: &[f64]) -> Vec<f64> {
        let dh = self.ff2.backward(&cache.hidden, dy);
        let dh_pre = relu_backward(&cache.hidden_pre, &dh);
        let dn2 = self.ff1.backward(&cache.ln2_out, &dh_pre);
        let mut dx1 = self.ln2.backward(&cache.ln2, &dn2);
        for (a, b) in dx1.iter_mut().zip(dy) {
            *a += b;
        }
        let dn1 = self.attn.backward(&cache.attn, &dx1);
        let mut dx = self.ln1.backward(&cache.ln1, &dn1);
        for (a, b) in dx.iter_mut().zip(&dx1) {
            *a += b;
        }
        dx
    }
}

impl Module for AttentionBlock {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.ln1.visit(f);
        self.attn.visit(f);
        self.ln2.visit(f);
        self.ff1.visit(f);
        self.ff2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.ln1.visit_mut(f);
        self.attn.visit_mut(f);
        self.ln2.visit_mut(f);
        self.ff1.visit_mut(f);
        self.ff2.visit_mut(f);
    }
}
