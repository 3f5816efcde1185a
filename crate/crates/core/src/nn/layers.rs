//! Layers with explicit forward and backward passes.
//!
//! Forward functions are pure in the parameters; backward functions add
//! parameter gradients into a [`Grads`] buffer and return the input
//! gradient. Per-item work runs in parallel, reductions over the batch are
//! summed in item order.

use rand::Rng;
use rayon::prelude::*;

use super::params::{kaiming_uniform, BufferId, Grads, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::num::Real;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn add_into<S: Real>(acc: &mut [S], v: &[S]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Writes the 3x3, pad-1 patch matrix `[c * 9, h * w]` of one item.
fn im2col<S: Real>(x: &[S], c: usize, h: usize, w: usize, cols: &mut [S]) {
    let p = h * w;
    for ci in 0..c {
        let src = &x[ci * p..(ci + 1) * p];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * p..(ci * 9 + ky * 3 + kx + 1) * p];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(S::zero());
                        continue;
                    }
                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                    for (x, d) in dst.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        *d = if sx < 0 || sx >= w as isize { S::zero() } else { srow[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates the patch matrix back into an item.
fn col2im<S: Real>(cols: &[S], c: usize, h: usize, w: usize, x: &mut [S]) {
    let p = h * w;
    for ci in 0..c {
        let dst = &mut x[ci * p..(ci + 1) * p];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * p..(ci * 9 + ky * 3 + kx + 1) * p];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[sy as usize * w + sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 convolution, stride 1, zero padding 1, optional bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv3x3 {
    pub cin: usize,
    pub cout: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv3x3 {
    pub fn new<S: Real, R: Rng + ?Sized>(ps: &mut ParamStore<S>, rng: &mut R, name: &str, cin: usize, cout: usize, bias: bool) -> Self {
        let weight = ps.add(format!("{name}.weight"), vec![cout, cin, 3, 3], kaiming_uniform(rng, cout * cin * 9, cin * 9));
        let bias = bias.then(|| ps.add(format!("{name}.bias"), vec![cout], vec![S::zero(); cout]));
        Conv3x3 { cin, cout, weight, bias }
    }

    pub fn forward<S: Real>(&self, ps: &ParamStore<S>, x: &Tensor<S>) -> Tensor<S> {
        let [bn, c, h, w] = x.shape;
        assert_eq!(c, self.cin, "conv input channels");
        let p = h * w;
        let (wt, bias) = (ps.get(self.weight), self.bias.map(|b| ps.get(b)));
        let mut y = Tensor::zeros([bn, self.cout, h, w]);
        y.data.par_chunks_mut(self.cout * p).enumerate().for_each(|(i, yi)| {
            let mut cols = vec![S::zero(); c * 9 * p];
            im2col(x.item(i), c, h, w, &mut cols);
            if let Some(bias) = bias {
                for (co, row) in yi.chunks_mut(p).enumerate() {
                    row.fill(bias[co]);
                }
            }
            S::gemm(self.cout, c * 9, p, S::one(), wt, (c * 9) as isize, 1, &cols, p as isize, 1, S::one(), yi, p as isize, 1);
        });
        y.debug_check("conv3x3");
        y
    }

    pub fn backward<S: Real>(&self, ps: &ParamStore<S>, grads: &mut Grads<S>, x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
        let [bn, c, h, w] = x.shape;
        let p = h * w;
        let k = c * 9;
        let wt = ps.get(self.weight);
        let mut dx = Tensor::zeros(x.shape);
        let partial: Vec<Vec<S>> = dx
            .data
            .par_chunks_mut(c * p)
            .enumerate()
            .map(|(i, dxi)| {
                let dyi = dy.item(i);
                let mut cols = vec![S::zero(); k * p];
                im2col(x.item(i), c, h, w, &mut cols);
                let mut dw = vec![S::zero(); self.cout * k];
                S::gemm(self.cout, p, k, S::one(), dyi, p as isize, 1, &cols, 1, p as isize, S::zero(), &mut dw, k as isize, 1);
                S::gemm(k, self.cout, p, S::one(), wt, 1, k as isize, dyi, p as isize, 1, S::zero(), &mut cols, p as isize, 1);
                col2im(&cols, c, h, w, dxi);
                dw
            })
            .collect();
        for dw in &partial {
            add_into(&mut grads[self.weight.0], dw);
        }
        if let Some(b) = self.bias {
            let db = &mut grads[b.0];
            for i in 0..bn {
                for (co, row) in dy.item(i).chunks(p).enumerate() {
                    db[co] += row.iter().copied().sum::<S>();
                }
            }
        }
        dx
    }
}

/// 2x2 transposed convolution with stride 2 (doubles the plane), with bias.
///
/// Weight layout is `[cin, cout, 2, 2]`.
#[derive(Clone, Copy, Debug)]
pub struct ConvTranspose2x2 {
    pub cin: usize,
    pub cout: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl ConvTranspose2x2 {
    pub fn new<S: Real, R: Rng + ?Sized>(ps: &mut ParamStore<S>, rng: &mut R, name: &str, cin: usize, cout: usize, bias: bool) -> Self {
        let weight = ps.add(format!("{name}.weight"), vec![cin, cout, 2, 2], kaiming_uniform(rng, cin * cout * 4, cin));
        let bias = bias.then(|| ps.add(format!("{name}.bias"), vec![cout], vec![S::zero(); cout]));
        ConvTranspose2x2 { cin, cout, weight, bias }
    }

    pub fn forward<S: Real>(&self, ps: &ParamStore<S>, x: &Tensor<S>) -> Tensor<S> {
        let [bn, c, h, w] = x.shape;
        assert_eq!(c, self.cin, "transposed conv input channels");
        let p = h * w;
        let m = self.cout * 4;
        let wt = ps.get(self.weight);
        let bias = self.bias.map(|b| ps.get(b));
        let mut y = Tensor::zeros([bn, self.cout, 2 * h, 2 * w]);
        y.data.par_chunks_mut(self.cout * 4 * p).enumerate().for_each(|(i, yi)| {
            let mut t = vec![S::zero(); m * p];
            S::gemm(m, c, p, S::one(), wt, 1, m as isize, x.item(i), p as isize, 1, S::zero(), &mut t, p as isize, 1);
            for co in 0..self.cout {
                let b0 = bias.map_or(S::zero(), |b| b[co]);
                for a in 0..2 {
                    for b in 0..2 {
                        let row = &t[(co * 4 + a * 2 + b) * p..(co * 4 + a * 2 + b + 1) * p];
                        for yy in 0..h {
                            for xx in 0..w {
                                yi[co * 4 * p + (2 * yy + a) * 2 * w + 2 * xx + b] = row[yy * w + xx] + b0;
                            }
                        }
                    }
                }
            }
        });
        y.debug_check("conv-transpose");
        y
    }

    pub fn backward<S: Real>(&self, ps: &ParamStore<S>, grads: &mut Grads<S>, x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
        let [_, c, h, w] = x.shape;
        let p = h * w;
        let m = self.cout * 4;
        let wt = ps.get(self.weight);
        let mut dx = Tensor::zeros(x.shape);
        let partial: Vec<(Vec<S>, Vec<S>)> = dx
            .data
            .par_chunks_mut(c * p)
            .enumerate()
            .map(|(i, dxi)| {
                let dyi = dy.item(i);
                let mut t = vec![S::zero(); m * p];
                let mut db = vec![S::zero(); self.cout];
                for co in 0..self.cout {
                    for a in 0..2 {
                        for b in 0..2 {
                            let row = &mut t[(co * 4 + a * 2 + b) * p..(co * 4 + a * 2 + b + 1) * p];
                            for yy in 0..h {
                                for xx in 0..w {
                                    let v = dyi[co * 4 * p + (2 * yy + a) * 2 * w + 2 * xx + b];
                                    row[yy * w + xx] = v;
                                    db[co] += v;
                                }
                            }
                        }
                    }
                }
                S::gemm(c, m, p, S::one(), wt, m as isize, 1, &t, p as isize, 1, S::zero(), dxi, p as isize, 1);
                let mut dw = vec![S::zero(); c * m];
                S::gemm(c, p, m, S::one(), x.item(i), p as isize, 1, &t, 1, p as isize, S::zero(), &mut dw, m as isize, 1);
                (dw, db)
            })
            .collect();
        for (dw, db) in &partial {
            add_into(&mut grads[self.weight.0], dw);
            if let Some(b) = self.bias {
                add_into(&mut grads[b.0], db);
            }
        }
        dx
    }
}

/// Fully connected layer on `[batch, features, 1, 1]` tensors.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub fin: usize,
    pub fout: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<S: Real, R: Rng + ?Sized>(ps: &mut ParamStore<S>, rng: &mut R, name: &str, fin: usize, fout: usize) -> Self {
        let weight = ps.add(format!("{name}.weight"), vec![fout, fin], kaiming_uniform(rng, fout * fin, fin));
        let bias = ps.add(format!("{name}.bias"), vec![fout], vec![S::zero(); fout]);
        Linear { fin, fout, weight, bias }
    }

    pub fn forward<S: Real>(&self, ps: &ParamStore<S>, x: &Tensor<S>) -> Tensor<S> {
        let bn = x.batch();
        assert_eq!(x.item_len(), self.fin, "linear input features");
        let bias = ps.get(self.bias);
        let mut y = Tensor::zeros([bn, self.fout, 1, 1]);
        for row in y.data.chunks_mut(self.fout) {
            row.copy_from_slice(bias);
        }
        S::gemm(bn, self.fin, self.fout, S::one(), &x.data, self.fin as isize, 1, ps.get(self.weight), 1, self.fin as isize, S::one(), &mut y.data, self.fout as isize, 1);
        y
    }

    pub fn backward<S: Real>(&self, ps: &ParamStore<S>, grads: &mut Grads<S>, x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
        let bn = x.batch();
        let (fi, fo) = (self.fin, self.fout);
        S::gemm(fo, bn, fi, S::one(), &dy.data, 1, fo as isize, &x.data, fi as isize, 1, S::one(), &mut grads[self.weight.0], fi as isize, 1);
        for row in dy.data.chunks(fo) {
            add_into(&mut grads[self.bias.0], row);
        }
        let mut dx = Tensor::zeros(x.shape);
        S::gemm(bn, fo, fi, S::one(), &dy.data, fo as isize, 1, ps.get(self.weight), fi as isize, 1, S::zero(), &mut dx.data, fi as isize, 1);
        dx
    }
}

/// Per-channel batch normalization with affine scale and shift.
#[derive(Clone, Copy, Debug)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

/// Values kept from a batch-norm forward pass.
#[derive(Clone, Debug)]
pub struct BnCache<S> {
    pub xhat: Tensor<S>,
    pub inv_std: Vec<S>,
    pub mean: Vec<S>,
    /// Unbiased batch variance, used for the running estimate.
    pub var_unbiased: Vec<S>,
    pub train: bool,
}

impl BatchNorm {
    pub fn new<S: Real>(ps: &mut ParamStore<S>, name: &str, channels: usize) -> Self {
        let gamma = ps.add(format!("{name}.gamma"), vec![channels], vec![S::one(); channels]);
        let beta = ps.add(format!("{name}.beta"), vec![channels], vec![S::zero(); channels]);
        let running_mean = ps.add_buffer(format!("{name}.running_mean"), vec![channels], vec![S::zero(); channels]);
        let running_var = ps.add_buffer(format!("{name}.running_var"), vec![channels], vec![S::one(); channels]);
        BatchNorm {
            channels,
            gamma,
            beta,
            running_mean,
            running_var,
        }
    }

    /// Train mode normalizes with batch statistics, eval mode with the
    /// stored running statistics.
    pub fn forward<S: Real>(&self, ps: &ParamStore<S>, x: &Tensor<S>, train: bool) -> (Tensor<S>, BnCache<S>) {
        let [bn, c, _, _] = x.shape;
        assert_eq!(c, self.channels, "batch norm channels");
        let p = x.plane();
        let n = bn * p;
        let eps = S::of(BN_EPS);
        let mut mean = vec![S::zero(); c];
        let mut var_b = vec![S::zero(); c];
        let mut var_u = vec![S::zero(); c];
        if train {
            for ch in 0..c {
                let mut s = 0.0f64;
                for i in 0..bn {
                    s += x.item(i)[ch * p..(ch + 1) * p].iter().map(|v| v.to_f64v()).sum::<f64>();
                }
                let m = s / n as f64;
                let mut ss = 0.0f64;
                for i in 0..bn {
                    ss += x.item(i)[ch * p..(ch + 1) * p].iter().map(|v| (v.to_f64v() - m).powi(2)).sum::<f64>();
                }
                mean[ch] = S::of(m);
                var_b[ch] = S::of(ss / n as f64);
                var_u[ch] = S::of(if n > 1 { ss / (n - 1) as f64 } else { 0.0 });
            }
        } else {
            mean.copy_from_slice(ps.buffer(self.running_mean));
            var_b.copy_from_slice(ps.buffer(self.running_var));
        }
        let inv_std: Vec<S> = var_b.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let (gamma, beta) = (ps.get(self.gamma), ps.get(self.beta));
        let mut xhat = Tensor::zeros(x.shape);
        let mut y = Tensor::zeros(x.shape);
        for i in 0..bn {
            for ch in 0..c {
                let off = i * c * p + ch * p;
                for j in off..off + p {
                    let h = (x.data[j] - mean[ch]) * inv_std[ch];
                    xhat.data[j] = h;
                    y.data[j] = gamma[ch] * h + beta[ch];
                }
            }
        }
        y.debug_check("batch norm");
        (
            y,
            BnCache {
                xhat,
                inv_std,
                mean,
                var_unbiased: var_u,
                train,
            },
        )
    }

    pub fn backward<S: Real>(&self, ps: &ParamStore<S>, grads: &mut Grads<S>, cache: &BnCache<S>, dy: &Tensor<S>) -> Tensor<S> {
        let [bn, c, _, _] = dy.shape;
        let p = dy.plane();
        let n = S::of((bn * p) as f64);
        let gamma = ps.get(self.gamma);
        let mut dx = Tensor::zeros(dy.shape);
        for ch in 0..c {
            let (mut sdy, mut sdyx) = (S::zero(), S::zero());
            for i in 0..bn {
                let off = i * c * p + ch * p;
                for j in off..off + p {
                    sdy += dy.data[j];
                    sdyx += dy.data[j] * cache.xhat.data[j];
                }
            }
            grads[self.gamma.0][ch] += sdyx;
            grads[self.beta.0][ch] += sdy;
            let k = gamma[ch] * cache.inv_std[ch];
            for i in 0..bn {
                let off = i * c * p + ch * p;
                for j in off..off + p {
                    dx.data[j] = if cache.train {
                        k * (dy.data[j] - sdy / n - cache.xhat.data[j] * sdyx / n)
                    } else {
                        k * dy.data[j]
                    };
                }
            }
        }
        dx
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates.
    pub fn update_running<S: Real>(&self, ps: &mut ParamStore<S>, cache: &BnCache<S>) {
        if !cache.train {
            return;
        }
        let m = S::of(BN_MOMENTUM);
        for (r, &v) in ps.buffers[self.running_mean.0].iter_mut().zip(&cache.mean) {
            *r = (S::one() - m) * *r + m * v;
        }
        for (r, &v) in ps.buffers[self.running_var.0].iter_mut().zip(&cache.var_unbiased) {
            *r = (S::one() - m) * *r + m * v;
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

// tanh through a single exp; the libm tanh dominates training time.
#[inline]
fn tanh_fast<S: Real>(u: S) -> S {
    let two = S::of(2.0);
    S::one() - two / (S::one() + (two * u).exp())
}

/// GELU, tanh form.
pub fn gelu<S: Real>(x: S) -> S {
    let (k, c, half) = (S::of(GELU_K), S::of(GELU_C), S::of(0.5));
    half * x * (S::one() + tanh_fast(k * (x + c * x * x * x)))
}

pub fn gelu_grad<S: Real>(x: S) -> S {
    let (k, c, half) = (S::of(GELU_K), S::of(GELU_C), S::of(0.5));
    let th = tanh_fast(k * (x + c * x * x * x));
    half * (S::one() + th) + half * x * (S::one() - th * th) * k * (S::one() + S::of(3.0) * c * x * x)
}

pub fn gelu_forward<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    x.map(gelu)
}

pub fn gelu_backward<S: Real>(x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    x.zip_map(dy, |v, d| gelu_grad(v) * d)
}

pub fn relu_forward<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| v.max(S::zero()))
}

pub fn relu_backward<S: Real>(x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    x.zip_map(dy, |v, d| if v > S::zero() { d } else { S::zero() })
}

/// 2x2 max pooling, stride 2. Returns the arg-max input index per output.
pub fn maxpool_forward<S: Real>(x: &Tensor<S>) -> (Tensor<S>, Vec<u32>) {
    let [bn, c, h, w] = x.shape;
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Tensor::zeros([bn, c, ho, wo]);
    let mut arg = vec![0u32; y.data.len()];
    for plane in 0..bn * c {
        for i in 0..ho {
            for j in 0..wo {
                let o = plane * ho * wo + i * wo + j;
                let mut best = plane * h * w + 2 * i * w + 2 * j;
                for (a, b) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = plane * h * w + (2 * i + a) * w + 2 * j + b;
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                y.data[o] = x.data[best];
                arg[o] = best as u32;
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward<S: Real>(input_shape: [usize; 4], arg: &[u32], dy: &Tensor<S>) -> Tensor<S> {
    let mut dx = Tensor::zeros(input_shape);
    for (&a, &d) in arg.iter().zip(&dy.data) {
        dx.data[a as usize] += d;
    }
    dx
}

/// 2x2 average pooling, stride 2.
pub fn avgpool_forward<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    let [bn, c, h, w] = x.shape;
    let (ho, wo) = (h / 2, w / 2);
    let q = S::of(0.25);
    let mut y = Tensor::zeros([bn, c, ho, wo]);
    for plane in 0..bn * c {
        for i in 0..ho {
            for j in 0..wo {
                let base = plane * h * w + 2 * i * w + 2 * j;
                y.data[plane * ho * wo + i * wo + j] = q * (x.data[base] + x.data[base + 1] + x.data[base + w] + x.data[base + w + 1]);
            }
        }
    }
    y
}

pub fn avgpool_backward<S: Real>(input_shape: [usize; 4], dy: &Tensor<S>) -> Tensor<S> {
    let [bn, c, h, w] = input_shape;
    let (ho, wo) = (h / 2, w / 2);
    let q = S::of(0.25);
    let mut dx = Tensor::zeros(input_shape);
    for plane in 0..bn * c {
        for i in 0..ho {
            for j in 0..wo {
                let d = q * dy.data[plane * ho * wo + i * wo + j];
                let base = plane * h * w + 2 * i * w + 2 * j;
                for o in [0, 1, w, w + 1] {
                    dx.data[base + o] += d;
                }
            }
        }
    }
    dx
}

/// Embedding fusion `scale * u + shift`, with `scale` and `shift` given per
/// item and channel as `[batch, channels, 1, 1]`.
pub fn fuse_forward<S: Real>(u: &Tensor<S>, scale: &Tensor<S>, shift: &Tensor<S>) -> Tensor<S> {
    let [bn, c, _, _] = u.shape;
    assert_eq!(scale.shape, [bn, c, 1, 1], "fusion scale shape");
    assert_eq!(shift.shape, [bn, c, 1, 1], "fusion shift shape");
    let p = u.plane();
    let mut y = Tensor::zeros(u.shape);
    for i in 0..bn {
        for ch in 0..c {
            let (s, t) = (scale.data[i * c + ch], shift.data[i * c + ch]);
            let off = (i * c + ch) * p;
            for j in off..off + p {
                y.data[j] = s * u.data[j] + t;
            }
        }
    }
    y
}

/// Returns `(d_u, d_scale, d_shift)`.
pub fn fuse_backward<S: Real>(u: &Tensor<S>, scale: &Tensor<S>, dy: &Tensor<S>) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let [bn, c, _, _] = u.shape;
    let p = u.plane();
    let mut du = Tensor::zeros(u.shape);
    let mut ds = Tensor::zeros(scale.shape);
    let mut dt = Tensor::zeros(scale.shape);
    for i in 0..bn {
        for ch in 0..c {
            let s = scale.data[i * c + ch];
            let off = (i * c + ch) * p;
            let (mut a, mut b) = (S::zero(), S::zero());
            for j in off..off + p {
                du.data[j] = s * dy.data[j];
                a += u.data[j] * dy.data[j];
                b += dy.data[j];
            }
            ds.data[i * c + ch] = a;
            dt.data[i * c + ch] = b;
        }
    }
    (du, ds, dt)
}
