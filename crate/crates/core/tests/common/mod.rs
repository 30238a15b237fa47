//! Independent oracles shared by the integration tests: central finite
//! differences, a direct O(n²) DFT, and small fixtures.

#![allow(dead_code)]

use eegmi_core::nn::layers::{self, BatchNormParams, Mode};
use eegmi_core::nn::loss::{mse_loss, softmax_cross_entropy};
use eegmi_core::nn::{init_parameters, model_backward, model_forward, LayerSpec, ModelSpec, Tensor};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Entries at least 0.05 away from zero, so ReLU kinks are out of reach of the step.
pub fn away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    random_tensor(shape, rng).map(|v| v.signum() * (0.05 + v.abs()))
}

/// Distinct values spaced 0.01 apart in random order, so max-pool windows have no near-ties.
pub fn distinct_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.005 * n as f64).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Denominator floor of [`rel_err`], well above finite-difference round-off
/// (~1e-11 here). A conv bias feeding batch norm has an exactly-zero gradient.
pub const REL_FLOOR: f64 = 1e-6;

/// `‖a − b‖ / max(‖a‖, ‖b‖, REL_FLOOR)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(REL_FLOOR)
}

/// Central differences of scalar `f` at `x`.
pub fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn with_data(t: &Tensor, data: &[f64]) -> Tensor {
    Tensor::new(t.shape().to_vec(), data.to_vec()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error of each layer check over [`SEEDS`].
pub fn layer_gradient_errors() -> Vec<(&'static str, f64)> {
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let mut note = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };
    for seed in SEEDS {
        let mut r = rng(seed);

        // dense
        let x = random_tensor(&[3, 5], &mut r);
        let w = random_tensor(&[5, 4], &mut r);
        let b = random_tensor(&[4], &mut r);
        let up = random_tensor(&[3, 4], &mut r);
        let g = layers::dense_backward(&x, &w, &up).unwrap();
        let fx = |d: &[f64]| dot(&layers::dense_forward(&with_data(&x, d), &w, &b).unwrap(), &up);
        let fw = |d: &[f64]| dot(&layers::dense_forward(&x, &with_data(&w, d), &b).unwrap(), &up);
        let fb = |d: &[f64]| dot(&layers::dense_forward(&x, &w, &with_data(&b, d)).unwrap(), &up);
        note("dense.input", rel_err(g.input.data(), &numeric_grad(x.data(), fx)));
        note("dense.weight", rel_err(g.weight.data(), &numeric_grad(w.data(), fw)));
        note("dense.bias", rel_err(g.bias.data(), &numeric_grad(b.data(), fb)));

        // conv2d, unit and non-unit stride
        for stride in [(1, 1), (2, 2)] {
            let x = random_tensor(&[2, 2, 5, 7], &mut r);
            let f = random_tensor(&[3, 2, 2, 3], &mut r);
            let b = random_tensor(&[3], &mut r);
            let y = layers::conv2d_forward(&x, &f, &b, stride).unwrap();
            let up = random_tensor(y.shape(), &mut r);
            let g = layers::conv2d_backward(&x, &f, stride, &up).unwrap();
            let fx = |d: &[f64]| dot(&layers::conv2d_forward(&with_data(&x, d), &f, &b, stride).unwrap(), &up);
            let ff = |d: &[f64]| dot(&layers::conv2d_forward(&x, &with_data(&f, d), &b, stride).unwrap(), &up);
            let fb = |d: &[f64]| dot(&layers::conv2d_forward(&x, &f, &with_data(&b, d), stride).unwrap(), &up);
            note("conv2d.input", rel_err(g.input.data(), &numeric_grad(x.data(), fx)));
            note("conv2d.filters", rel_err(g.filters.data(), &numeric_grad(f.data(), ff)));
            note("conv2d.bias", rel_err(g.bias.data(), &numeric_grad(b.data(), fb)));
        }

        // max pool
        let x = distinct_tensor(&[2, 2, 4, 6], &mut r);
        let (y, arg) = layers::maxpool_forward(&x, (2, 3)).unwrap();
        let up = random_tensor(y.shape(), &mut r);
        let g = layers::maxpool_backward(x.shape(), &arg, &up).unwrap();
        let fx = |d: &[f64]| dot(&layers::maxpool_forward(&with_data(&x, d), (2, 3)).unwrap().0, &up);
        note("maxpool", rel_err(g.data(), &numeric_grad(x.data(), fx)));

        // batch norm, dense and conv layouts, train and infer mode
        for shape in [vec![6, 3], vec![3, 2, 2, 3]] {
            let feats = shape[1];
            let x = random_tensor(&shape, &mut r);
            let gamma = random_tensor(&[feats], &mut r);
            let beta = random_tensor(&[feats], &mut r);
            let rm = random_tensor(&[feats], &mut r);
            let rv = random_tensor(&[feats], &mut r).map(|v| 0.5 + v.abs());
            for mode in [Mode::Train, Mode::Infer] {
                let run = |x: &Tensor, gamma: &Tensor, beta: &Tensor| {
                    let p = BatchNormParams { gamma, beta, running_mean: &rm, running_var: &rv, eps: 1e-5 };
                    layers::batchnorm_forward(x, &p, mode).unwrap()
                };
                let (y, cache) = run(&x, &gamma, &beta);
                let up = random_tensor(y.shape(), &mut r);
                let g = layers::batchnorm_backward(&cache, &gamma, &up).unwrap();
                let fx = |d: &[f64]| dot(&run(&with_data(&x, d), &gamma, &beta).0, &up);
                let fg = |d: &[f64]| dot(&run(&x, &with_data(&gamma, d), &beta).0, &up);
                let fb = |d: &[f64]| dot(&run(&x, &gamma, &with_data(&beta, d)).0, &up);
                note("batchnorm.input", rel_err(g.input.data(), &numeric_grad(x.data(), fx)));
                note("batchnorm.gamma", rel_err(g.gamma.data(), &numeric_grad(gamma.data(), fg)));
                note("batchnorm.beta", rel_err(g.beta.data(), &numeric_grad(beta.data(), fb)));
            }
        }

        // dropout with the mask fixed by reseeding
        let x = random_tensor(&[4, 6], &mut r);
        let up = random_tensor(&[4, 6], &mut r);
        let drop = |x: &Tensor| layers::dropout_forward(x, 0.5, Mode::Train, &mut rng(seed + 100)).unwrap();
        let (_, mask) = drop(&x);
        let g = layers::dropout_backward(mask.as_deref(), &up).unwrap();
        let fx = |d: &[f64]| dot(&drop(&with_data(&x, d)).0, &up);
        note("dropout", rel_err(g.data(), &numeric_grad(x.data(), fx)));

        // activations
        let x = away_from_zero(&[3, 7], &mut r);
        let up = random_tensor(&[3, 7], &mut r);
        let g = layers::relu_backward(&x, &up).unwrap();
        let fx = |d: &[f64]| dot(&layers::relu_forward(&with_data(&x, d)), &up);
        note("relu", rel_err(g.data(), &numeric_grad(x.data(), fx)));
        let y = layers::tanh_forward(&x);
        let g = layers::tanh_backward(&y, &up).unwrap();
        let fx = |d: &[f64]| dot(&layers::tanh_forward(&with_data(&x, d)), &up);
        note("tanh", rel_err(g.data(), &numeric_grad(x.data(), fx)));

        // losses
        let logits = random_tensor(&[5, 2], &mut r).map(|v| 3.0 * v);
        let labels: Vec<usize> = (0..5).map(|_| r.gen_range(0..2)).collect();
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        let fl = |d: &[f64]| softmax_cross_entropy(&with_data(&logits, d), &labels).unwrap().0;
        note("cross_entropy", rel_err(g.data(), &numeric_grad(logits.data(), fl)));
        let out = random_tensor(&[5, 2], &mut r);
        let target = random_tensor(&[5, 2], &mut r).map(f64::signum);
        let (_, g) = mse_loss(&out, &target).unwrap();
        let fl = |d: &[f64]| mse_loss(&with_data(&out, d), &target).unwrap().0;
        note("mse", rel_err(g.data(), &numeric_grad(out.data(), fl)));
    }
    worst
}

/// Conv → BN → ReLU → pool → dropout → dense, trained on cross-entropy.
pub fn tiny_spec() -> ModelSpec {
    ModelSpec::new(
        vec![1, 4, 12],
        vec![
            LayerSpec::Conv2d { filters: 2, kernel_h: 4, kernel_w: 3, stride_h: 1, stride_w: 1 },
            LayerSpec::BatchNorm { num_features: 2 },
            LayerSpec::Activation { kind: eegmi_core::nn::Activation::Relu },
            LayerSpec::MaxPool { pool_h: 1, pool_w: 2 },
            LayerSpec::Dropout { p: 0.25 },
            LayerSpec::Dense { inputs: 10, outputs: 2 },
        ],
        2,
    )
    .unwrap()
}

/// Worst relative error over all trainable tensors and the input, per seed.
pub fn whole_model_gradient_error(seed: u64) -> f64 {
    let spec = tiny_spec();
    let mut params = init_parameters(&spec, seed).unwrap();
    let mut r = rng(seed + 50);
    // Non-trivial running statistics and affine parameters.
    for t in params.trainable_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.3..0.3));
    }
    let x = random_tensor(&[3, 1, 4, 12], &mut r);
    let labels = [0usize, 1, 1];
    let loss = |params: &eegmi_core::nn::Parameters, x: &Tensor| {
        let pass = model_forward(&spec, params, x, Mode::Train, &mut rng(seed + 77)).unwrap();
        let (l, g) = softmax_cross_entropy(&pass.output, &labels).unwrap();
        (l, g, pass.caches)
    };
    let (_, g, caches) = loss(&params, &x);
    let (grads, input_grad) = model_backward(&spec, &params, &caches, &g).unwrap();

    let mut worst = rel_err(
        input_grad.data(),
        &numeric_grad(x.data(), |d| loss(&params, &with_data(&x, d)).0),
    );
    let count = params.trainable().len();
    for ti in 0..count {
        let base = params.trainable()[ti].1.data().to_vec();
        let num = numeric_grad(&base, |d| {
            let mut p = params.clone();
            p.trainable_mut()[ti].data_mut().copy_from_slice(d);
            loss(&p, &x).0
        });
        worst = worst.max(rel_err(grads.tensors[ti].data(), &num));
    }
    worst
}

/// Direct `Σ x[n] e^{−j2πkn/N}`.
pub fn direct_dft(x: &[f64], nfft: usize) -> Vec<Complex64> {
    (0..nfft)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(n, &v)| {
                    let ang = -2.0 * std::f64::consts::PI * ((k * n) % nfft) as f64 / nfft as f64;
                    Complex64::from_polar(v, ang)
                })
                .sum()
        })
        .collect()
}

/// `max_k |a_k − b_k| / max_k |b_k|`.
pub fn spectrum_rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max) / scale
}
