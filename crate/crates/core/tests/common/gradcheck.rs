//! Finite-difference checks. Each function runs `instances` random cases and
//! returns the worst relative error between analytic and numeric gradients.

use rand::seq::SliceRandom;
use rand::Rng;
use smilenet::network::mean_cross_entropy;
use smilenet::nnops::{
    conv2d_backward, conv2d_valid, cross_entropy, cross_entropy_grad, dense_backward_batch,
    dense_forward_batch, dropout_backward, dropout_forward, maxpool2x2_backward,
    maxpool2x2_forward, relu, relu_backward, softmax, ConvParams, DenseParams,
};
use smilenet::rng::{stream_rng, Stream};
use smilenet::{ArchitectureConfig, Mode, Network, Tensor};

use super::{
    away_from_zero, dot, numeric_gradient, numeric_gradient_smooth, random_tensor, relative_error,
    rng,
};

fn with_data(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

pub fn conv(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let c = r.gen_range(1..=3);
        let o = r.gen_range(1..=3);
        let k = *[1usize, 3, 5].choose(&mut r).unwrap();
        let (h, w) = (r.gen_range(k..=8), r.gen_range(k..=8));
        let x = random_tensor(&mut r, &[c, h, w], -1.0, 1.0);
        let kernels = random_tensor(&mut r, &[o, c, k, k], -1.0, 1.0);
        let bias = random_tensor(&mut r, &[o], -1.0, 1.0);
        let p = ConvParams::new(kernels.clone(), bias.clone()).unwrap();
        let out_shape = [o, h - k + 1, w - k + 1];
        let weights = random_tensor(&mut r, &out_shape, -1.0, 1.0);
        let (gx, gp) = conv2d_backward(&x, &p, &weights).unwrap();

        let loss =
            |x: &Tensor, p: &ConvParams| dot(weights.data(), conv2d_valid(x, p).unwrap().data());
        let nx = numeric_gradient(x.data(), None, |d| loss(&with_data(x.shape(), d), &p));
        let nk = numeric_gradient(kernels.data(), None, |d| {
            loss(
                &x,
                &ConvParams::new(with_data(kernels.shape(), d), bias.clone()).unwrap(),
            )
        });
        let nb = numeric_gradient(bias.data(), None, |d| {
            loss(
                &x,
                &ConvParams::new(kernels.clone(), with_data(bias.shape(), d)).unwrap(),
            )
        });
        let analytic = [gx.data(), gp.kernels.data(), gp.bias.data()].concat();
        let numeric = [nx, nk, nb].concat();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Inputs are a shuffled ladder with spacing well above the step, so no
/// window's maximum changes under perturbation.
pub fn pool(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let c = r.gen_range(1..=3);
        let (h, w) = (r.gen_range(2..=9), r.gen_range(2..=9));
        let n = c * h * w;
        let mut ladder: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.3).collect();
        ladder.shuffle(&mut r);
        let x = with_data(&[c, h, w], &ladder);
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        let weights = random_tensor(&mut r, y.shape(), -1.0, 1.0);
        let gx = maxpool2x2_backward(&weights, &idx).unwrap();
        let nx = numeric_gradient(x.data(), None, |d| {
            dot(
                weights.data(),
                maxpool2x2_forward(&with_data(x.shape(), d))
                    .unwrap()
                    .0
                    .data(),
            )
        });
        worst = worst.max(relative_error(gx.data(), &nx));
    }
    worst
}

pub fn dense(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (b, n, m) = (r.gen_range(1..=4), r.gen_range(1..=8), r.gen_range(1..=8));
        let x = random_tensor(&mut r, &[b, n], -1.0, 1.0);
        let wts = random_tensor(&mut r, &[m, n], -1.0, 1.0);
        let bias = random_tensor(&mut r, &[m], -1.0, 1.0);
        let p = DenseParams::new(wts.clone(), bias.clone()).unwrap();
        let g = random_tensor(&mut r, &[b, m], -1.0, 1.0);
        let (gx, gp) = dense_backward_batch(&x, &p, &g).unwrap();

        let loss =
            |x: &Tensor, p: &DenseParams| dot(g.data(), dense_forward_batch(x, p).unwrap().data());
        let nx = numeric_gradient(x.data(), None, |d| loss(&with_data(x.shape(), d), &p));
        let nw = numeric_gradient(wts.data(), None, |d| {
            loss(
                &x,
                &DenseParams::new(with_data(wts.shape(), d), bias.clone()).unwrap(),
            )
        });
        let nb = numeric_gradient(bias.data(), None, |d| {
            loss(
                &x,
                &DenseParams::new(wts.clone(), with_data(bias.shape(), d)).unwrap(),
            )
        });
        let analytic = [gx.data(), gp.weights.data(), gp.bias.data()].concat();
        worst = worst.max(relative_error(&analytic, &[nx, nw, nb].concat()));
    }
    worst
}

pub fn relu_check(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = r.gen_range(1..=40);
        let x = away_from_zero(&mut r, &[n], 1e-3);
        let g = random_tensor(&mut r, &[n], -1.0, 1.0);
        let gx = relu_backward(&x, &g).unwrap();
        let nx = numeric_gradient(x.data(), None, |d| {
            dot(g.data(), relu(&with_data(&[n], d)).data())
        });
        worst = worst.max(relative_error(gx.data(), &nx));
    }
    worst
}

pub fn softmax_cross_entropy(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = r.gen_range(2..=6);
        let z = random_tensor(&mut r, &[n], -3.0, 3.0);
        let label = r.gen_range(0..n);
        let analytic = cross_entropy_grad(&softmax(&z).unwrap(), label).unwrap();
        let nz = numeric_gradient(z.data(), None, |d| {
            cross_entropy(&softmax(&with_data(&[n], d)).unwrap(), label).unwrap()
        });
        worst = worst.max(relative_error(analytic.data(), &nz));
    }
    worst
}

/// Rate 0 (identity) and a fixed mask at a positive rate: the mask is
/// regenerated from the same seed at every evaluation.
pub fn dropout(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let n = r.gen_range(1..=30);
        let rate = if i % 2 == 0 { 0.0 } else { 0.5 };
        let mask_seed = r.gen::<u64>();
        let x = random_tensor(&mut r, &[n], -1.0, 1.0);
        let g = random_tensor(&mut r, &[n], -1.0, 1.0);
        let (_, mask) = dropout_forward(&x, rate, &mut rng(mask_seed)).unwrap();
        let gx = dropout_backward(&g, &mask).unwrap();
        let nx = numeric_gradient(x.data(), None, |d| {
            let (y, _) = dropout_forward(&with_data(&[n], d), rate, &mut rng(mask_seed)).unwrap();
            dot(g.data(), y.data())
        });
        worst = worst.max(relative_error(gx.data(), &nx));
    }
    worst
}

pub fn tiny_config() -> ArchitectureConfig {
    ArchitectureConfig {
        num_convolutions: 1,
        num_hidden_layers: 1,
        units_per_hidden_layer: 10,
        dropout_rate: 0.0,
        input_height: 12,
        input_width: 12,
    }
}

/// Worst error over accepted instances and how many were redrawn.
#[derive(Clone, Copy, Debug)]
pub struct NetworkCheck {
    pub worst: f64,
    pub redrawn: usize,
}

/// Whole-network check on the tiny configuration. A random sample of
/// `coords_per_tensor` entries of every parameter tensor is probed; an
/// instance whose step crosses a kink is redrawn.
pub fn network(instances: usize, seed: u64, coords_per_tensor: usize) -> NetworkCheck {
    let mut r = rng(seed);
    let mut check = NetworkCheck {
        worst: 0.0,
        redrawn: 0,
    };
    let mut accepted = 0;
    while accepted < instances {
        match network_instance(&mut r, coords_per_tensor) {
            Some(err) => {
                check.worst = check.worst.max(err);
                accepted += 1;
            }
            None => check.redrawn += 1,
        }
    }
    check
}

fn network_instance(r: &mut rand_chacha::ChaCha8Rng, coords_per_tensor: usize) -> Option<f64> {
    let net = Network::build(tiny_config(), r.gen()).unwrap();
    let b = r.gen_range(1..=3);
    let batch = random_tensor(r, &[b, 1, 12, 12], 0.0, 1.0);
    let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..2)).collect();
    let (_, cache) = net
        .forward(&batch, Mode::Train, &mut stream_rng(0, Stream::Dropout, 0))
        .unwrap();
    let grads = net.backward(&cache, &labels).unwrap();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let tensor_count = net.params().tensors().len();
    for t in 0..tensor_count {
        let base = net.params().tensors()[t].data().to_vec();
        let mut coords: Vec<usize> = (0..base.len()).collect();
        coords.shuffle(r);
        coords.truncate(coords_per_tensor);
        let mut probe = net.clone();
        let n = numeric_gradient_smooth(&base, &coords, |d| {
            probe.params_mut().tensors_mut()[t]
                .data_mut()
                .copy_from_slice(d);
            let probs = probe.probabilities(&batch).unwrap();
            mean_cross_entropy(&probs, &labels).unwrap()
        })?;
        let g = grads.tensors()[t].data();
        analytic.extend(coords.iter().map(|&i| g[i]));
        numeric.extend(n);
    }
    Some(relative_error(&analytic, &numeric))
}
