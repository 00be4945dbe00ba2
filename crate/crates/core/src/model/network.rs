//! Forward pass with activation caches and its reverse-mode gradient.

use alloc::vec;
use alloc::vec::Vec;

use super::{Example, Layout, OrmParams, NUM_FEATURES, OUTPUTS};
use crate::math;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

/// Test fixture that corrupts the backward pass in a known place.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GradFault {
    #[default]
    None,
    /// Multiplies every decoder parameter gradient by this factor.
    ScaleDecoder(f64),
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..n {
        s += a[j] * b[j];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y[t] = W x[t] + b` for `W` stored `[n_out][n_in]`.
fn linear(x: &[f64], w: &[f64], b: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let rows = x.len() / n_in;
    let mut y = vec![0.0; rows * n_out];
    for t in 0..rows {
        let xt = &x[t * n_in..(t + 1) * n_in];
        let yt = &mut y[t * n_out..(t + 1) * n_out];
        for o in 0..n_out {
            yt[o] = b[o] + dot(xt, &w[o * n_in..(o + 1) * n_in]);
        }
    }
    y
}

/// Accumulates weight and bias gradients and returns the input gradient.
fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    n_in: usize,
    n_out: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let rows = x.len() / n_in;
    let mut dx = vec![0.0; rows * n_in];
    for t in 0..rows {
        let xt = &x[t * n_in..(t + 1) * n_in];
        let dyt = &dy[t * n_out..(t + 1) * n_out];
        let dxt = &mut dx[t * n_in..(t + 1) * n_in];
        for o in 0..n_out {
            let g = dyt[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            axpy(g, &w[o * n_in..(o + 1) * n_in], dxt);
            axpy(g, xt, &mut dw[o * n_in..(o + 1) * n_in]);
        }
    }
    dx
}

struct Norm {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
    out: Vec<f64>,
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], d: usize) -> Norm {
    let rows = x.len() / d;
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    let mut out = vec![0.0; x.len()];
    for t in 0..rows {
        let xt = &x[t * d..(t + 1) * d];
        let mean = xt.iter().sum::<f64>() / d as f64;
        let var = xt.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / math::sqrt(var + LN_EPS);
        rstd[t] = r;
        for i in 0..d {
            let h = (xt[i] - mean) * r;
            xhat[t * d + i] = h;
            out[t * d + i] = g[i] * h + b[i];
        }
    }
    Norm { xhat, rstd, out }
}

fn layer_norm_backward(n: &Norm, g: &[f64], dy: &[f64], d: usize, dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let rows = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for t in 0..rows {
        let xh = &n.xhat[t * d..(t + 1) * d];
        let dyt = &dy[t * d..(t + 1) * d];
        for i in 0..d {
            dg[i] += dyt[i] * xh[i];
            db[i] += dyt[i];
            dxhat[i] = dyt[i] * g[i];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dot(&dxhat, xh) / d as f64;
        for i in 0..d {
            dx[t * d + i] = n.rstd[t] * (dxhat[i] - m1 - xh[i] * m2);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + math::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let th = math::tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct BlockCache {
    h_in: Vec<f64>,
    ln1: Norm,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per head, row `t` holds weights over keys `0..=t` at offset `t(t+1)/2`.
    probs: Vec<Vec<f64>>,
    ctx: Vec<f64>,
    ln2: Norm,
    f1: Vec<f64>,
    g1: Vec<f64>,
}

/// Activations of one sequence, enough to run [`backward`].
pub struct ForwardCache {
    pub len: usize,
    x0: Vec<f64>,
    blocks: Vec<BlockCache>,
    h_final: Vec<f64>,
    lnf: Norm,
    u: Vec<f64>,
    gu: Vec<f64>,
    /// Raw outputs, `len * OUTPUTS`.
    pub out: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self, t: usize) -> &[f64] {
        &self.out[t * OUTPUTS..(t + 1) * OUTPUTS]
    }

    /// Input tokens: normalized, masked features projected and position-embedded.
    pub fn tokens(&self) -> &[f64] {
        self.blocks.first().map_or(&self.h_final, |b| &b.h_in)
    }

    /// Encoder output per step.
    pub fn hidden(&self) -> &[f64] {
        &self.lnf.out
    }

    /// Attention weights of block `b`, head `h`, query `t`.
    pub fn attention(&self, b: usize, h: usize, t: usize) -> &[f64] {
        let o = t * (t + 1) / 2;
        &self.blocks[b].probs[h][o..o + t + 1]
    }
}

fn slice(v: &[f64], at: usize, n: usize) -> &[f64] {
    &v[at..at + n]
}

/// Runs the network on the first `len` tokens of raw `features`.
pub fn forward(params: &OrmParams, features: &[f64], len: usize) -> ForwardCache {
    let c = &params.config;
    let l = params.layout();
    let p = &params.values;
    let (d, f, m) = (c.embed_dim, c.ff_hidden, c.mlp_hidden);
    let heads = c.num_heads;
    let dh = d / heads;
    let scale = 1.0 / math::sqrt(dh as f64);
    assert!(len <= c.max_tokens, "sequence of {len} tokens exceeds the positional table ({})", c.max_tokens);

    let mut x0 = vec![0.0; len * NUM_FEATURES];
    for t in 0..len {
        for i in 0..NUM_FEATURES {
            if c.channel_mask.keeps(i) {
                x0[t * NUM_FEATURES + i] = (features[t * NUM_FEATURES + i] - params.norm.mean[i]) / params.norm.std[i];
            }
        }
    }
    let mut h = linear(&x0, slice(p, l.embed_w, d * NUM_FEATURES), slice(p, l.embed_b, d), NUM_FEATURES, d);
    for (hi, pi) in h.iter_mut().zip(slice(p, l.pos, len * d)) {
        *hi += pi;
    }

    let mut blocks = Vec::with_capacity(c.num_blocks);
    for b in &l.blocks {
        let ln1 = layer_norm(&h, slice(p, b.ln1_g, d), slice(p, b.ln1_b, d), d);
        let q = linear(&ln1.out, slice(p, b.wq, d * d), slice(p, b.bq, d), d, d);
        let k = linear(&ln1.out, slice(p, b.wk, d * d), slice(p, b.bk, d), d, d);
        let v = linear(&ln1.out, slice(p, b.wv, d * d), slice(p, b.bv, d), d, d);
        let mut ctx = vec![0.0; len * d];
        let mut probs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let cols = hd * dh..(hd + 1) * dh;
            let mut ph = vec![0.0; len * (len + 1) / 2];
            for t in 0..len {
                let row = &mut ph[t * (t + 1) / 2..t * (t + 1) / 2 + t + 1];
                let qt = &q[t * d..(t + 1) * d][cols.clone()];
                let mut max = f64::NEG_INFINITY;
                for (s, r) in row.iter_mut().enumerate() {
                    *r = scale * dot(qt, &k[s * d..(s + 1) * d][cols.clone()]);
                    max = max.max(*r);
                }
                let mut sum = 0.0;
                for r in row.iter_mut() {
                    *r = math::exp(*r - max);
                    sum += *r;
                }
                let ct = &mut ctx[t * d..(t + 1) * d][cols.clone()];
                for (s, r) in row.iter_mut().enumerate() {
                    *r /= sum;
                    axpy(*r, &v[s * d..(s + 1) * d][cols.clone()], ct);
                }
            }
            probs.push(ph);
        }
        let o = linear(&ctx, slice(p, b.wo, d * d), slice(p, b.bo, d), d, d);
        let h_mid: Vec<f64> = h.iter().zip(&o).map(|(a, b)| a + b).collect();
        let ln2 = layer_norm(&h_mid, slice(p, b.ln2_g, d), slice(p, b.ln2_b, d), d);
        let f1 = linear(&ln2.out, slice(p, b.w1, f * d), slice(p, b.b1, f), d, f);
        let g1: Vec<f64> = f1.iter().map(|&x| gelu(x)).collect();
        let f2 = linear(&g1, slice(p, b.w2, d * f), slice(p, b.b2, d), f, d);
        let h_out: Vec<f64> = h_mid.iter().zip(&f2).map(|(a, b)| a + b).collect();
        blocks.push(BlockCache { h_in: h, ln1, q, k, v, probs, ctx, ln2, f1, g1 });
        h = h_out;
    }

    let lnf = layer_norm(&h, slice(p, l.lnf_g, d), slice(p, l.lnf_b, d), d);
    let u = linear(&lnf.out, slice(p, l.dec_w1, m * d), slice(p, l.dec_b1, m), d, m);
    let gu: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
    let out = linear(&gu, slice(p, l.dec_w2, OUTPUTS * m), slice(p, l.dec_b2, OUTPUTS), m, OUTPUTS);
    ForwardCache { len, x0, blocks, h_final: h, lnf, u, gu, out }
}

/// Raw outputs for every token of an example.
pub fn predict(params: &OrmParams, example: &Example) -> Vec<f64> {
    forward(params, &example.features, example.len).out
}

/// Adds the gradient of `sum(d_out * out)` with respect to every parameter
/// into `grad`.
pub fn backward(params: &OrmParams, cache: &ForwardCache, d_out: &[f64], grad: &mut [f64], fault: GradFault) {
    let c = &params.config;
    let l: Layout = params.layout();
    let p = &params.values;
    let (d, f, m) = (c.embed_dim, c.ff_hidden, c.mlp_hidden);
    let heads = c.num_heads;
    let hdim = d / heads;
    let scale = 1.0 / math::sqrt(hdim as f64);
    let len = cache.len;

    // Decoder, written into scratch so the fault fixture can scale it.
    let dec_start = l.dec_w1;
    let dec_len = l.dec_b2 + OUTPUTS - dec_start;
    let mut dec = vec![0.0; dec_len];
    let (dw1, rest) = dec.split_at_mut(l.dec_b1 - dec_start);
    let (db1, rest) = rest.split_at_mut(l.dec_w2 - l.dec_b1);
    let (dw2, db2) = rest.split_at_mut(l.dec_b2 - l.dec_w2);
    let dgu = linear_backward(&cache.gu, slice(p, l.dec_w2, OUTPUTS * m), d_out, m, OUTPUTS, dw2, db2);
    let du: Vec<f64> = dgu.iter().zip(&cache.u).map(|(g, &x)| g * gelu_grad(x)).collect();
    let dz = linear_backward(&cache.lnf.out, slice(p, l.dec_w1, m * d), &du, d, m, dw1, db1);
    let k = match fault {
        GradFault::None => 1.0,
        GradFault::ScaleDecoder(k) => k,
    };
    for (g, v) in grad[dec_start..dec_start + dec_len].iter_mut().zip(&dec) {
        *g += k * v;
    }

    let (dg, db) = split_pair(grad, l.lnf_g, l.lnf_b, d);
    let mut dh = layer_norm_backward(&cache.lnf, slice(p, l.lnf_g, d), &dz, d, dg, db);

    for (b, bc) in l.blocks.iter().zip(&cache.blocks).rev() {
        // Feed-forward branch.
        let df2 = &dh;
        let dg1 = {
            let (dw, dbias) = split_pair(grad, b.w2, b.b2, 0);
            let (dw, dbias) = (&mut dw[..d * f], &mut dbias[..d]);
            linear_backward(&bc.g1, slice(p, b.w2, d * f), df2, f, d, dw, dbias)
        };
        let df1: Vec<f64> = dg1.iter().zip(&bc.f1).map(|(g, &x)| g * gelu_grad(x)).collect();
        let da2 = {
            let (dw, dbias) = split_pair(grad, b.w1, b.b1, 0);
            let (dw, dbias) = (&mut dw[..f * d], &mut dbias[..f]);
            linear_backward(&bc.ln2.out, slice(p, b.w1, f * d), &df1, d, f, dw, dbias)
        };
        let (dg, dbias) = split_pair(grad, b.ln2_g, b.ln2_b, d);
        let from_ln2 = layer_norm_backward(&bc.ln2, slice(p, b.ln2_g, d), &da2, d, dg, dbias);
        let dh_mid: Vec<f64> = dh.iter().zip(&from_ln2).map(|(a, b)| a + b).collect();

        // Attention branch.
        let dctx = {
            let (dw, dbias) = split_pair(grad, b.wo, b.bo, 0);
            let (dw, dbias) = (&mut dw[..d * d], &mut dbias[..d]);
            linear_backward(&bc.ctx, slice(p, b.wo, d * d), &dh_mid, d, d, dw, dbias)
        };
        let mut dq = vec![0.0; len * d];
        let mut dk = vec![0.0; len * d];
        let mut dv = vec![0.0; len * d];
        let mut dp = vec![0.0; len];
        for hd in 0..heads {
            let cols = hd * hdim..(hd + 1) * hdim;
            let ph = &bc.probs[hd];
            for t in 0..len {
                let row = &ph[t * (t + 1) / 2..t * (t + 1) / 2 + t + 1];
                let dct = &dctx[t * d..(t + 1) * d][cols.clone()];
                let mut weighted = 0.0;
                for s in 0..=t {
                    let vs = &bc.v[s * d..(s + 1) * d][cols.clone()];
                    dp[s] = dot(dct, vs);
                    weighted += row[s] * dp[s];
                    axpy(row[s], dct, &mut dv[s * d..(s + 1) * d][cols.clone()]);
                }
                let qt = &bc.q[t * d..(t + 1) * d][cols.clone()];
                for s in 0..=t {
                    let ds = row[s] * (dp[s] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    axpy(ds, &bc.k[s * d..(s + 1) * d][cols.clone()], &mut dq[t * d..(t + 1) * d][cols.clone()]);
                    axpy(ds, qt, &mut dk[s * d..(s + 1) * d][cols.clone()]);
                }
            }
        }
        let mut da1 = vec![0.0; len * d];
        for (w, bias, dy) in [(b.wq, b.bq, &dq), (b.wk, b.bk, &dk), (b.wv, b.bv, &dv)] {
            let (dw, dbias) = split_pair(grad, w, bias, 0);
            let (dw, dbias) = (&mut dw[..d * d], &mut dbias[..d]);
            let dx = linear_backward(&bc.ln1.out, slice(p, w, d * d), dy, d, d, dw, dbias);
            for (a, x) in da1.iter_mut().zip(&dx) {
                *a += x;
            }
        }
        let (dg, dbias) = split_pair(grad, b.ln1_g, b.ln1_b, d);
        let from_ln1 = layer_norm_backward(&bc.ln1, slice(p, b.ln1_g, d), &da1, d, dg, dbias);
        dh = dh_mid.iter().zip(&from_ln1).map(|(a, b)| a + b).collect();
    }

    for (g, v) in grad[l.pos..l.pos + len * d].iter_mut().zip(&dh) {
        *g += v;
    }
    let (dw, dbias) = split_pair(grad, l.embed_w, l.embed_b, 0);
    let (dw, dbias) = (&mut dw[..d * NUM_FEATURES], &mut dbias[..d]);
    let _ = linear_backward(&cache.x0, slice(p, l.embed_w, d * NUM_FEATURES), &dh, NUM_FEATURES, d, dw, dbias);
}

/// Two disjoint mutable views `grad[a..b]` and `grad[b..]`; with `n > 0`
/// both are cut to `n` elements.
fn split_pair(grad: &mut [f64], a: usize, b: usize, n: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a < b);
    let (lo, hi) = grad.split_at_mut(b);
    let lo = &mut lo[a..];
    if n > 0 {
        (&mut lo[..n], &mut hi[..n])
    } else {
        (lo, hi)
    }
}
