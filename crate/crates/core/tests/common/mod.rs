//! Shared oracles for the integration tests.
#![allow(dead_code)]

use ddpm_polycube::nn::{Grads, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Gradients below this magnitude are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-7;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

pub fn normal_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

/// Derivative of `f` at 0 by Ridders' extrapolation of central
/// differences with step sizes shrinking from `h0`; the tableau entry with
/// the smallest error estimate wins.
pub fn ridders(f: impl Fn(f64) -> f64, h0: f64) -> f64 {
    const N: usize = 8;
    const SHRINK: f64 = 1.4;
    let mut a = [[0.0f64; N]; N];
    let mut h = h0;
    a[0][0] = (f(h) - f(-h)) / (2.0 * h);
    let mut best = a[0][0];
    let mut err = f64::INFINITY;
    for i in 1..N {
        h /= SHRINK;
        a[0][i] = (f(h) - f(-h)) / (2.0 * h);
        let mut fac = SHRINK * SHRINK;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let e = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    best
}

fn start_step(v: f64) -> f64 {
    1e-4 * v.abs().max(1.0)
}

/// Adaptive central differences of `loss` with respect to every parameter;
/// returns the worst relative error against `analytic`.
pub fn param_fd_error(ps: &ParamStore<f64>, analytic: &Grads<f64>, loss: impl Fn(&ParamStore<f64>) -> f64) -> f64 {
    let probe = std::cell::RefCell::new(ps.clone());
    let mut worst = 0.0f64;
    for (t, values) in ps.values.iter().enumerate() {
        for i in 0..values.len() {
            let v = values[i];
            let numeric = ridders(
                |d| {
                    probe.borrow_mut().values[t][i] = v + d;
                    let l = loss(&probe.borrow());
                    probe.borrow_mut().values[t][i] = v;
                    l
                },
                start_step(v),
            );
            let e = rel_err(analytic[t][i], numeric);
            if e > 1e-4 && std::env::var_os("GRAD_DEBUG").is_some() {
                eprintln!("{} [{i}]: analytic {:.6e} numeric {numeric:.6e}", ps.specs[t].name, analytic[t][i]);
            }
            worst = worst.max(e);
        }
    }
    worst
}

/// Adaptive central differences of `loss` with respect to every input
/// element.
pub fn input_fd_error(x: &Tensor<f64>, analytic: &Tensor<f64>, loss: impl Fn(&Tensor<f64>) -> f64) -> f64 {
    let probe = std::cell::RefCell::new(x.clone());
    let mut worst = 0.0f64;
    for i in 0..x.data.len() {
        let v = x.data[i];
        let numeric = ridders(
            |d| {
                probe.borrow_mut().data[i] = v + d;
                let l = loss(&probe.borrow());
                probe.borrow_mut().data[i] = v;
                l
            },
            start_step(v),
        );
        worst = worst.max(rel_err(analytic.data[i], numeric));
    }
    worst
}

/// Projection loss `sum(r * y)` used to test a single layer.
pub fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
}

/// Checks a layer `y = f(params, x)` with the projection loss; returns
/// `(worst parameter error, worst input error)`.
pub fn layer_check(
    ps: &ParamStore<f64>,
    x: &Tensor<f64>,
    seed: u64,
    forward: impl Fn(&ParamStore<f64>, &Tensor<f64>) -> Tensor<f64>,
    backward: impl Fn(&ParamStore<f64>, &mut Grads<f64>, &Tensor<f64>, &Tensor<f64>) -> Tensor<f64>,
) -> (f64, f64) {
    let y = forward(ps, x);
    let r = normal_tensor(y.shape, seed);
    let mut g = ps.zero_grads();
    let dx = backward(ps, &mut g, x, &r);
    let pe = param_fd_error(ps, &g, |p| project(&forward(p, x), &r));
    let ie = input_fd_error(x, &dx, |xi| project(&forward(ps, xi), &r));
    (pe, ie)
}

use ddpm_polycube::nn::layers::*;
use ddpm_polycube::nn::{masked_mse_grad, Embedding, ResBlock, SkipMode, UNet, UNetSpec};

fn fresh() -> (ParamStore<f64>, ChaCha8Rng) {
    (ParamStore::new(), ChaCha8Rng::seed_from_u64(17))
}

/// End-to-end masked MSE of a small U-Net against finite differences.
pub fn unet_fd_error(skip: SkipMode, train: bool) -> f64 {
    let spec = UNetSpec {
        width: 2,
        skip,
        ..UNetSpec::with_width(2)
    };
    let mut net = UNet::<f64>::new(spec, 5).unwrap();
    let bn = 3;
    if !train {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let specs = net.params().buffer_specs.clone();
        for (spec, buf) in specs.iter().zip(net.params_mut().buffers.iter_mut()) {
            let var = spec.name.ends_with("running_var");
            for v in buf.iter_mut() {
                *v = if var { rng.random_range(0.5..2.0) } else { rng.random_range(-0.5..0.5) };
            }
        }
    }
    let x = normal_tensor([bn, 3, 8, 8], 1);
    let target = normal_tensor([bn, 3, 8, 8], 2);
    let t = Tensor::from_vec([bn, 1, 1, 1], vec![0.1, 0.5, 0.9]).unwrap();
    let mut c = Tensor::zeros([bn, 29, 1, 1]);
    c.data[0] = 1.0;
    c.data[29 + 4] = 1.0;
    c.data[58] = 1.0;
    c.data[58 + 4] = 1.0;
    let live = [64, 40, 17];
    let loss = |n: &UNet<f64>| {
        let (y, _) = n.forward(&x, &t, &c, train).unwrap();
        masked_mse_grad(&y, &target, &live).unwrap().0
    };
    let (y, cache) = net.forward(&x, &t, &c, train).unwrap();
    let (_, dy) = masked_mse_grad(&y, &target, &live).unwrap();
    let g = net.backward(&cache, &dy);
    let probe = std::cell::RefCell::new(net.clone());
    param_fd_error(net.params(), &g, |p| {
        let mut n = probe.borrow_mut();
        n.params_mut().values.clone_from(&p.values);
        loss(&n)
    })
}

/// Worst finite-difference error of every layer type and of the full
/// network loss, in 64-bit arithmetic.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut both = |name: &'static str, (p, i): (f64, f64)| out.push((name, p.max(i)));

    let (mut ps, mut rng) = fresh();
    let conv = Conv3x3::new(&mut ps, &mut rng, "conv", 3, 4, true);
    let x = normal_tensor([2, 3, 5, 6], 3);
    both("conv3x3", layer_check(&ps, &x, 4, |p, x| conv.forward(p, x), |p, g, x, d| conv.backward(p, g, x, d)));

    let (mut ps, mut rng) = fresh();
    let ct = ConvTranspose2x2::new(&mut ps, &mut rng, "convt", 3, 2, true);
    let x = normal_tensor([2, 3, 3, 4], 5);
    both("conv_transpose2x2", layer_check(&ps, &x, 6, |p, x| ct.forward(p, x), |p, g, x, d| ct.backward(p, g, x, d)));

    let (ps, _) = fresh();
    let x = normal_tensor([2, 3, 4, 6], 7);
    both(
        "maxpool2x2",
        layer_check(&ps, &x, 8, |_, x| maxpool_forward(x).0, |_, _, x, d| maxpool_backward(x.shape, &maxpool_forward(x).1, d)),
    );
    both("avgpool2x2", layer_check(&ps, &x, 9, |_, x| avgpool_forward(x), |_, _, x, d| avgpool_backward(x.shape, d)));
    both("gelu", layer_check(&ps, &x, 10, |_, x| gelu_forward(x), |_, _, x, d| gelu_backward(x, d)));
    both("relu", layer_check(&ps, &x, 11, |_, x| relu_forward(x), |_, _, x, d| relu_backward(x, d)));

    let (mut ps, _) = fresh();
    let bn = BatchNorm::new(&mut ps, "bn", 3);
    let x = normal_tensor([3, 3, 2, 3], 12);
    // Non-trivial affine parameters.
    ps.values[bn.gamma.0] = vec![0.7, -1.3, 2.0];
    ps.values[bn.beta.0] = vec![0.1, 0.4, -0.2];
    both(
        "batchnorm_train",
        layer_check(&ps, &x, 13, |p, x| bn.forward(p, x, true).0, |p, g, x, d| {
            let (_, c) = bn.forward(p, x, true);
            bn.backward(p, g, &c, d)
        }),
    );
    ps.buffers[bn.running_mean.0] = vec![0.3, -0.2, 0.05];
    ps.buffers[bn.running_var.0] = vec![1.5, 0.6, 2.2];
    both(
        "batchnorm_eval",
        layer_check(&ps, &x, 14, |p, x| bn.forward(p, x, false).0, |p, g, x, d| {
            let (_, c) = bn.forward(p, x, false);
            bn.backward(p, g, &c, d)
        }),
    );

    let (mut ps, mut rng) = fresh();
    let fc = Linear::new(&mut ps, &mut rng, "fc", 5, 4);
    let x = normal_tensor([3, 5, 1, 1], 15);
    both("linear", layer_check(&ps, &x, 16, |p, x| fc.forward(p, x), |p, g, x, d| fc.backward(p, g, x, d)));

    let (mut ps, mut rng) = fresh();
    let emb = Embedding::new(&mut ps, &mut rng, "emb", 5, 4);
    let (pe, _) = layer_check(&ps, &x, 17, |p, x| emb.forward(p, x).0, |p, g, x, d| {
        let (_, c) = emb.forward(p, x);
        emb.backward(p, g, &c, d);
        Tensor::zeros(x.shape)
    });
    out.push(("embedding_mlp", pe));

    for (name, cin) in [("residual_identity", 3), ("residual_widening", 2)] {
        let (mut ps, mut rng) = fresh();
        let block = ResBlock::new(&mut ps, &mut rng, "res", cin, 3);
        let x = normal_tensor([2, cin, 4, 4], 18);
        let (p, i) = layer_check(&ps, &x, 19, |p, x| block.forward(p, x, true).0, |p, g, x, d| {
            let (_, c) = block.forward(p, x, true);
            block.backward(p, g, &c, d)
        });
        out.push((name, p.max(i)));
    }

    // Fusion: gradients with respect to features, scale and shift.
    let u = normal_tensor([2, 3, 2, 2], 20);
    let s = normal_tensor([2, 3, 1, 1], 21);
    let t = normal_tensor([2, 3, 1, 1], 22);
    let r = normal_tensor([2, 3, 2, 2], 23);
    let (du, ds, dt) = fuse_backward(&u, &s, &r);
    let e1 = input_fd_error(&u, &du, |v| project(&fuse_forward(v, &s, &t), &r));
    let e2 = input_fd_error(&s, &ds, |v| project(&fuse_forward(&u, v, &t), &r));
    let e3 = input_fd_error(&t, &dt, |v| project(&fuse_forward(&u, &s, v), &r));
    out.push(("embedding_fusion", e1.max(e2).max(e3)));

    out.push(("unet_masked_mse_train", unet_fd_error(SkipMode::Concat, true)));
    out.push(("unet_masked_mse_eval", unet_fd_error(SkipMode::Concat, false)));
    out.push(("unet_additive_skip", unet_fd_error(SkipMode::Add, true)));
    out
}
