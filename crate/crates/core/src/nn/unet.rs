use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::*;
use super::params::{Grads, ParamSpec, ParamStore};
use super::tensor::Tensor;
use crate::dataset::CONTEXT_LEN;
use crate::error::{Error, Result};
use crate::num::Real;

/// How encoder features reach the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipMode {
    Concat,
    Add,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetSpec {
    /// Feature width after the initial block; the down path runs at twice this.
    pub width: usize,
    pub in_channels: usize,
    pub context_dim: usize,
    pub blocks_per_stage: usize,
    pub skip: SkipMode,
}

impl UNetSpec {
    pub fn with_width(width: usize) -> Self {
        UNetSpec {
            width,
            in_channels: 3,
            context_dim: CONTEXT_LEN,
            blocks_per_stage: 2,
            skip: SkipMode::Concat,
        }
    }
}

impl Default for UNetSpec {
    fn default() -> Self {
        Self::with_width(64)
    }
}

/// Architecture plus the ordered list of stored tensors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descriptor {
    pub spec: UNetSpec,
    pub params: Vec<ParamSpec>,
    pub buffers: Vec<ParamSpec>,
}

/// conv-BN-GELU twice, with the input (equal widths) or the first
/// activation (widening blocks) added back. The convolutions carry no bias
/// since batch norm removes it.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv3x3,
    pub bn1: BatchNorm,
    pub conv2: Conv3x3,
    pub bn2: BatchNorm,
}

#[derive(Clone, Debug)]
pub struct ResCache<S> {
    x: Tensor<S>,
    bn1: BnCache<S>,
    n1: Tensor<S>,
    h1: Tensor<S>,
    bn2: BnCache<S>,
    n2: Tensor<S>,
}

impl ResBlock {
    pub fn new<S: Real>(ps: &mut ParamStore<S>, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize) -> Self {
        ResBlock {
            conv1: Conv3x3::new(ps, rng, &format!("{name}.conv1"), cin, cout, false),
            bn1: BatchNorm::new(ps, &format!("{name}.bn1"), cout),
            conv2: Conv3x3::new(ps, rng, &format!("{name}.conv2"), cout, cout, false),
            bn2: BatchNorm::new(ps, &format!("{name}.bn2"), cout),
        }
    }

    fn identity(&self) -> bool {
        self.conv1.cin == self.conv1.cout
    }

    pub fn forward<S: Real>(&self, ps: &ParamStore<S>, x: &Tensor<S>, train: bool) -> (Tensor<S>, ResCache<S>) {
        let (n1, bn1) = self.bn1.forward(ps, &self.conv1.forward(ps, x), train);
        let h1 = gelu_forward(&n1);
        let (n2, bn2) = self.bn2.forward(ps, &self.conv2.forward(ps, &h1), train);
        let h2 = gelu_forward(&n2);
        let out = if self.identity() { x.add(&h2) } else { h1.add(&h2) };
        (
            out,
            ResCache {
                x: x.clone(),
                bn1,
                n1,
                h1,
                bn2,
                n2,
            },
        )
    }

    pub fn backward<S: Real>(&self, ps: &ParamStore<S>, g: &mut Grads<S>, c: &ResCache<S>, dy: &Tensor<S>) -> Tensor<S> {
        let da2 = self.bn2.backward(ps, g, &c.bn2, &gelu_backward(&c.n2, dy));
        let mut dh1 = self.conv2.backward(ps, g, &c.h1, &da2);
        if !self.identity() {
            dh1.add_assign(dy);
        }
        let da1 = self.bn1.backward(ps, g, &c.bn1, &gelu_backward(&c.n1, &dh1));
        let mut dx = self.conv1.backward(ps, g, &c.x, &da1);
        if self.identity() {
            dx.add_assign(dy);
        }
        dx
    }

    fn update_running<S: Real>(&self, ps: &mut ParamStore<S>, c: &ResCache<S>) {
        self.bn1.update_running(ps, &c.bn1);
        self.bn2.update_running(ps, &c.bn2);
    }
}

fn chain_forward<S: Real>(blocks: &[ResBlock], ps: &ParamStore<S>, x: Tensor<S>, train: bool) -> (Tensor<S>, Vec<ResCache<S>>) {
    let mut caches = Vec::with_capacity(blocks.len());
    let mut h = x;
    for b in blocks {
        let (y, c) = b.forward(ps, &h, train);
        caches.push(c);
        h = y;
    }
    (h, caches)
}

fn chain_backward<S: Real>(blocks: &[ResBlock], ps: &ParamStore<S>, g: &mut Grads<S>, caches: &[ResCache<S>], dy: Tensor<S>) -> Tensor<S> {
    let mut d = dy;
    for (b, c) in blocks.iter().zip(caches).rev() {
        d = b.backward(ps, g, c, &d);
    }
    d
}

/// Two fully connected layers with GELU in between.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct EmbedCache<S> {
    x: Tensor<S>,
    a1: Tensor<S>,
    h1: Tensor<S>,
}

impl Embedding {
    pub fn new<S: Real>(ps: &mut ParamStore<S>, rng: &mut ChaCha8Rng, name: &str, fin: usize, fout: usize) -> Self {
        Embedding {
            fc1: Linear::new(ps, rng, &format!("{name}.fc1"), fin, fout),
            fc2: Linear::new(ps, rng, &format!("{name}.fc2"), fout, fout),
        }
    }

    pub fn forward<S: Real>(&self, ps: &ParamStore<S>, x: &Tensor<S>) -> (Tensor<S>, EmbedCache<S>) {
        let a1 = self.fc1.forward(ps, x);
        let h1 = gelu_forward(&a1);
        let y = self.fc2.forward(ps, &h1);
        (y, EmbedCache { x: x.clone(), a1, h1 })
    }

    pub fn backward<S: Real>(&self, ps: &ParamStore<S>, g: &mut Grads<S>, c: &EmbedCache<S>, dy: &Tensor<S>) {
        let dh1 = self.fc2.backward(ps, g, &c.h1, dy);
        self.fc1.backward(ps, g, &c.x, &gelu_backward(&c.a1, &dh1));
    }
}

/// Conditioned U-Net noise predictor.
#[derive(Clone, Debug)]
pub struct UNet<S> {
    spec: UNetSpec,
    store: ParamStore<S>,
    init: ResBlock,
    down1: Vec<ResBlock>,
    down2: Vec<ResBlock>,
    up0: ConvTranspose2x2,
    up0_bn: BatchNorm,
    time1: Embedding,
    ctx1: Embedding,
    up1: ConvTranspose2x2,
    up1_blocks: Vec<ResBlock>,
    time2: Embedding,
    ctx2: Embedding,
    up2: ConvTranspose2x2,
    up2_blocks: Vec<ResBlock>,
    out1: Conv3x3,
    out_bn: BatchNorm,
    out2: Conv3x3,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<S> {
    train: bool,
    init: ResCache<S>,
    down1: Vec<ResCache<S>>,
    down1_shape: [usize; 4],
    pool1: Vec<u32>,
    down2: Vec<ResCache<S>>,
    down2_shape: [usize; 4],
    pool2: Vec<u32>,
    d2_shape: [usize; 4],
    avg: Tensor<S>,
    up0_bn: BnCache<S>,
    up0_n: Tensor<S>,
    up0: Tensor<S>,
    time1: EmbedCache<S>,
    ctx1: EmbedCache<S>,
    ctx1_out: Tensor<S>,
    s1: Tensor<S>,
    up1_blocks: Vec<ResCache<S>>,
    up1: Tensor<S>,
    time2: EmbedCache<S>,
    ctx2: EmbedCache<S>,
    ctx2_out: Tensor<S>,
    s2: Tensor<S>,
    up2_blocks: Vec<ResCache<S>>,
    s3: Tensor<S>,
    out_bn: BnCache<S>,
    out_n: Tensor<S>,
    out_h: Tensor<S>,
}

impl<S: Real> UNet<S> {
    pub fn new(spec: UNetSpec, seed: u64) -> Result<Self> {
        if spec.width == 0 || spec.blocks_per_stage == 0 || spec.in_channels == 0 {
            return Err(Error::Config(format!("invalid network spec {spec:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let (w, w2) = (spec.width, 2 * spec.width);
        let n = spec.blocks_per_stage;
        let joined = |c: usize| if spec.skip == SkipMode::Concat { 2 * c } else { c };
        let rng = &mut rng;
        let init = ResBlock::new(&mut ps, rng, "init", spec.in_channels, w);
        let down1 = (0..n).map(|i| ResBlock::new(&mut ps, rng, &format!("down1.{i}"), if i == 0 { w } else { w2 }, w2)).collect();
        let down2 = (0..n).map(|i| ResBlock::new(&mut ps, rng, &format!("down2.{i}"), w2, w2)).collect();
        let up0 = ConvTranspose2x2::new(&mut ps, rng, "up0.convt", w2, w2, false);
        let up0_bn = BatchNorm::new(&mut ps, "up0.bn", w2);
        let time1 = Embedding::new(&mut ps, rng, "time_embed1", 1, w2);
        let ctx1 = Embedding::new(&mut ps, rng, "context_embed1", spec.context_dim, w2);
        let up1 = ConvTranspose2x2::new(&mut ps, rng, "up1.convt", joined(w2), w2, true);
        let up1_blocks = (0..n).map(|i| ResBlock::new(&mut ps, rng, &format!("up1.{i}"), w2, w2)).collect();
        let time2 = Embedding::new(&mut ps, rng, "time_embed2", 1, w2);
        let ctx2 = Embedding::new(&mut ps, rng, "context_embed2", spec.context_dim, w2);
        let up2 = ConvTranspose2x2::new(&mut ps, rng, "up2.convt", joined(w2), w, true);
        let up2_blocks = (0..n).map(|i| ResBlock::new(&mut ps, rng, &format!("up2.{i}"), w, w)).collect();
        let out1 = Conv3x3::new(&mut ps, rng, "out.conv1", joined(w), w, false);
        let out_bn = BatchNorm::new(&mut ps, "out.bn", w);
        let out2 = Conv3x3::new(&mut ps, rng, "out.conv2", w, spec.in_channels, true);
        Ok(UNet {
            spec,
            store: ps,
            init,
            down1,
            down2,
            up0,
            up0_bn,
            time1,
            ctx1,
            up1,
            up1_blocks,
            time2,
            ctx2,
            up2,
            up2_blocks,
            out1,
            out_bn,
            out2,
        })
    }

    /// Rebuilds a network from a descriptor and stored tensors.
    pub fn from_parts(descriptor: &Descriptor, values: Vec<Vec<S>>, buffers: Vec<Vec<S>>) -> Result<Self> {
        let mut net = UNet::new(descriptor.spec.clone(), 0)?;
        if net.store.specs != descriptor.params || net.store.buffer_specs != descriptor.buffers {
            return Err(Error::Length("descriptor does not match the architecture".into()));
        }
        let fits = |specs: &[ParamSpec], vs: &[Vec<S>]| specs.len() == vs.len() && specs.iter().zip(vs).all(|(s, v)| s.len() == v.len());
        if !fits(&descriptor.params, &values) || !fits(&descriptor.buffers, &buffers) {
            return Err(Error::Length("tensor sizes disagree with descriptor".into()));
        }
        net.store.values = values;
        net.store.buffers = buffers;
        Ok(net)
    }

    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    pub fn descriptor(&self) -> Descriptor {
        Descriptor {
            spec: self.spec.clone(),
            params: self.store.specs.clone(),
            buffers: self.store.buffer_specs.clone(),
        }
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.count()
    }

    /// `x: [B, 3, H, W]` with `H, W` multiples of 8, `t_norm: [B, 1, 1, 1]`,
    /// `context: [B, context_dim, 1, 1]`.
    pub fn forward(&self, x: &Tensor<S>, t_norm: &Tensor<S>, context: &Tensor<S>, train: bool) -> Result<(Tensor<S>, ForwardCache<S>)> {
        let [b, c, h, w] = x.shape;
        if c != self.spec.in_channels || h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("network input {:?}", x.shape)));
        }
        if t_norm.shape != [b, 1, 1, 1] || context.shape != [b, self.spec.context_dim, 1, 1] {
            return Err(Error::Shape(format!("conditioning {:?} / {:?} for batch {b}", t_norm.shape, context.shape)));
        }
        let ps = &self.store;
        let concat = self.spec.skip == SkipMode::Concat;
        let join = |a: &Tensor<S>, b: &Tensor<S>| if concat { Tensor::concat(a, b) } else { Ok(a.add(b)) };

        let (e0, init) = self.init.forward(ps, x, train);
        let (d1a, down1) = chain_forward(&self.down1, ps, e0.clone(), train);
        let (d1, pool1) = maxpool_forward(&d1a);
        let (d2a, down2) = chain_forward(&self.down2, ps, d1.clone(), train);
        let (d2, pool2) = maxpool_forward(&d2a);

        let avg = avgpool_forward(&d2);
        let (up0_n, up0_bn) = self.up0_bn.forward(ps, &self.up0.forward(ps, &avg), train);
        let up0 = relu_forward(&up0_n);
        let (t1, time1) = self.time1.forward(ps, t_norm);
        let (ctx1_out, ctx1) = self.ctx1.forward(ps, context);
        let f1 = fuse_forward(&up0, &ctx1_out, &t1);

        let s1 = join(&f1, &d2)?;
        let (up1, up1_blocks) = chain_forward(&self.up1_blocks, ps, self.up1.forward(ps, &s1), train);
        let (t2, time2) = self.time2.forward(ps, t_norm);
        let (ctx2_out, ctx2) = self.ctx2.forward(ps, context);
        let f2 = fuse_forward(&up1, &ctx2_out, &t2);

        let s2 = join(&f2, &d1)?;
        let (u2, up2_blocks) = chain_forward(&self.up2_blocks, ps, self.up2.forward(ps, &s2), train);
        let s3 = join(&u2, &e0)?;
        let (out_n, out_bn) = self.out_bn.forward(ps, &self.out1.forward(ps, &s3), train);
        let out_h = relu_forward(&out_n);
        let y = self.out2.forward(ps, &out_h);
        let cache = ForwardCache {
            train,
            init,
            down1,
            down1_shape: d1a.shape,
            pool1,
            down2,
            down2_shape: d2a.shape,
            pool2,
            d2_shape: d2.shape,
            avg,
            up0_bn,
            up0_n,
            up0,
            time1,
            ctx1,
            ctx1_out,
            s1,
            up1_blocks,
            up1,
            time2,
            ctx2,
            ctx2_out,
            s2,
            up2_blocks,
            s3,
            out_bn,
            out_n,
            out_h,
        };
        Ok((y, cache))
    }

    /// Eval-mode forward pass.
    pub fn predict(&self, x: &Tensor<S>, t_norm: &Tensor<S>, context: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.forward(x, t_norm, context, false)?.0)
    }

    /// Parameter gradients of a scalar loss given `dy = dL/d(output)`.
    pub fn backward(&self, c: &ForwardCache<S>, dy: &Tensor<S>) -> Grads<S> {
        let ps = &self.store;
        let mut g = ps.zero_grads();
        let concat = self.spec.skip == SkipMode::Concat;
        let unjoin = |d: &Tensor<S>, ca: usize| if concat { d.split(ca) } else { (d.clone(), d.clone()) };
        let (w, w2) = (self.spec.width, 2 * self.spec.width);

        let d_out_h = self.out2.backward(ps, &mut g, &c.out_h, dy);
        let d_out1 = self.out_bn.backward(ps, &mut g, &c.out_bn, &relu_backward(&c.out_n, &d_out_h));
        let ds3 = self.out1.backward(ps, &mut g, &c.s3, &d_out1);
        let (d_u2, d_e0_skip) = unjoin(&ds3, w);

        let d_up2 = chain_backward(&self.up2_blocks, ps, &mut g, &c.up2_blocks, d_u2);
        let ds2 = self.up2.backward(ps, &mut g, &c.s2, &d_up2);
        let (d_f2, d_d1_skip) = unjoin(&ds2, w2);
        let (d_up1, d_c2, d_t2) = fuse_backward(&c.up1, &c.ctx2_out, &d_f2);
        self.ctx2.backward(ps, &mut g, &c.ctx2, &d_c2);
        self.time2.backward(ps, &mut g, &c.time2, &d_t2);

        let d_up1_in = chain_backward(&self.up1_blocks, ps, &mut g, &c.up1_blocks, d_up1);
        let ds1 = self.up1.backward(ps, &mut g, &c.s1, &d_up1_in);
        let (d_f1, d_d2_skip) = unjoin(&ds1, w2);
        let (d_up0, d_c1, d_t1) = fuse_backward(&c.up0, &c.ctx1_out, &d_f1);
        self.ctx1.backward(ps, &mut g, &c.ctx1, &d_c1);
        self.time1.backward(ps, &mut g, &c.time1, &d_t1);

        let d_up0_t = self.up0_bn.backward(ps, &mut g, &c.up0_bn, &relu_backward(&c.up0_n, &d_up0));
        let d_avg = self.up0.backward(ps, &mut g, &c.avg, &d_up0_t);
        let mut d_d2 = avgpool_backward(c.d2_shape, &d_avg);
        d_d2.add_assign(&d_d2_skip);

        let d_d2a = maxpool_backward(c.down2_shape, &c.pool2, &d_d2);
        let mut d_d1 = chain_backward(&self.down2, ps, &mut g, &c.down2, d_d2a);
        d_d1.add_assign(&d_d1_skip);
        let d_d1a = maxpool_backward(c.down1_shape, &c.pool1, &d_d1);
        let mut d_e0 = chain_backward(&self.down1, ps, &mut g, &c.down1, d_d1a);
        d_e0.add_assign(&d_e0_skip);
        self.init.backward(ps, &mut g, &c.init, &d_e0);
        g
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates of every batch-norm layer.
    pub fn update_running_stats(&mut self, c: &ForwardCache<S>) {
        if !c.train {
            return;
        }
        let ps = &mut self.store;
        self.init.update_running(ps, &c.init);
        for (blocks, caches) in [
            (&self.down1, &c.down1),
            (&self.down2, &c.down2),
            (&self.up1_blocks, &c.up1_blocks),
            (&self.up2_blocks, &c.up2_blocks),
        ] {
            for (b, bc) in blocks.iter().zip(caches) {
                b.update_running(ps, bc);
            }
        }
        self.up0_bn.update_running(ps, &c.up0_bn);
        self.out_bn.update_running(ps, &c.out_bn);
    }
}

/// Masked MSE between `[B, C, H, W]` tensors: squared error summed over
/// channels, averaged over the first `live[b]` plane positions of every
/// item. Returns the loss and its gradient with respect to `pred`.
pub fn masked_mse_grad<S: Real>(pred: &Tensor<S>, target: &Tensor<S>, live: &[usize]) -> Result<(S, Tensor<S>)> {
    if pred.shape != target.shape || live.len() != pred.batch() {
        return Err(Error::Shape(format!("loss inputs {:?} / {:?} / {} masks", pred.shape, target.shape, live.len())));
    }
    let [b, c, _, _] = pred.shape;
    let p = pred.plane();
    let count: usize = live.iter().map(|&n| n.min(p)).sum();
    let mut grad = Tensor::zeros(pred.shape);
    if count == 0 {
        return Ok((S::zero(), grad));
    }
    let inv = S::one() / S::of(count as f64);
    let two = S::of(2.0);
    let mut total = S::zero();
    for i in 0..b {
        for ch in 0..c {
            let off = (i * c + ch) * p;
            for s in 0..live[i].min(p) {
                let d = pred.data[off + s] - target.data[off + s];
                total += d * d;
                grad.data[off + s] = two * d * inv;
            }
        }
    }
    Ok((total * inv, grad))
}
