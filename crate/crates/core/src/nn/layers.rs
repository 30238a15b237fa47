//! Forward and backward passes for the individual layer types.
//!
//! Layouts: dense activations are `[batch, features]` (any trailing shape is
//! flattened), convolutional activations are `[batch, channels, height, width]`
//! with height running over electrodes and width over time.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::par;

/// Train or inference behaviour for batch norm and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient is passed only where `x > 0`; zero at `x == 0`.
pub fn relu_backward(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    x.zip_map(upstream, |xv, g| if xv > 0.0 { g } else { 0.0 })
}

pub fn tanh_forward(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Takes the forward *output* `y = tanh(x)`.
pub fn tanh_backward(y: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    y.zip_map(upstream, |yv, g| g * (1.0 - yv * yv))
}

/// `y = x·W + b` for every batch row. `x` may carry trailing dims; they are flattened.
pub fn dense_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, fan_in) = (x.batch(), x.row_len());
    let (w_in, w_out) = match weight.shape() {
        [a, b] => (*a, *b),
        s => return Err(Error::Shape(format!("dense weight must be 2-D, got {s:?}"))),
    };
    if fan_in != w_in {
        return Err(Error::Shape(format!(
            "dense input {:?} incompatible with weight {:?}",
            x.shape(),
            weight.shape()
        )));
    }
    bias.expect_shape(&[w_out])?;
    let w = weight.data();
    let mut out = Vec::with_capacity(n * w_out);
    for i in 0..n {
        let mut row = bias.data().to_vec();
        for (k, &xv) in x.row(i).iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = &w[k * w_out..(k + 1) * w_out];
            for (o, &wv) in row.iter_mut().zip(wr) {
                *o += xv * wv;
            }
        }
        out.extend(row);
    }
    Tensor::new(vec![n, w_out], out)
}

pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(x: &Tensor, weight: &Tensor, upstream: &Tensor) -> Result<DenseGrads> {
    let (n, fan_in) = (x.batch(), x.row_len());
    let w_out = weight.shape()[1];
    upstream.expect_shape(&[n, w_out])?;
    let w = weight.data();
    let mut dx = vec![0.0; n * fan_in];
    let mut dw = vec![0.0; fan_in * w_out];
    let mut db = vec![0.0; w_out];
    for i in 0..n {
        let g = upstream.row(i);
        let xr = x.row(i);
        for (b, &gv) in db.iter_mut().zip(g) {
            *b += gv;
        }
        let dxr = &mut dx[i * fan_in..(i + 1) * fan_in];
        for k in 0..fan_in {
            let wr = &w[k * w_out..(k + 1) * w_out];
            dxr[k] = wr.iter().zip(g).map(|(a, b)| a * b).sum();
            let dwr = &mut dw[k * w_out..(k + 1) * w_out];
            let xv = xr[k];
            for (d, &gv) in dwr.iter_mut().zip(g) {
                *d += xv * gv;
            }
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(x.shape().to_vec(), dx)?,
        weight: Tensor::new(weight.shape().to_vec(), dw)?,
        bias: Tensor::new(vec![w_out], db)?,
    })
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        s => Err(Error::Shape(format!("{what} must be 4-D, got {s:?}"))),
    }
}

/// Output extent of a valid (unpadded) sliding window.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    (kernel <= input && stride > 0).then(|| (input - kernel) / stride + 1)
}

/// Valid cross-correlation. `x: [N,C,H,W]`, `filters: [F,C,KH,KW]`, `bias: [F]`.
pub fn conv2d_forward(
    x: &Tensor,
    filters: &Tensor,
    bias: &Tensor,
    stride: (usize, usize),
) -> Result<Tensor> {
    let [n, c, h, w] = dims4(x, "conv input")?;
    let [f, fc, kh, kw] = dims4(filters, "conv filters")?;
    if fc != c {
        return Err(Error::Shape(format!(
            "conv filters {:?} expect {fc} input channels, input {:?} has {c}",
            filters.shape(),
            x.shape()
        )));
    }
    bias.expect_shape(&[f])?;
    let (sh, sw) = stride;
    let (oh, ow) = match (conv_out_len(h, kh, sh), conv_out_len(w, kw, sw)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} does not fit input {h}x{w}"
            )))
        }
    };
    let per_out = f * oh * ow;
    let mut out = vec![0.0; n * per_out];
    let xd = x.data();
    let wd = filters.data();
    let bd = bias.data();
    par::for_each_chunk_mut(&mut out, per_out, |s, o| {
        let xs = &xd[s * c * h * w..(s + 1) * c * h * w];
        for fi in 0..f {
            let of = &mut o[fi * oh * ow..(fi + 1) * oh * ow];
            of.iter_mut().for_each(|v| *v = bd[fi]);
            for oy in 0..oh {
                let orow = &mut of[oy * ow..(oy + 1) * ow];
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = oy * sh + ky;
                        let xrow = &xs[(ci * h + iy) * w..(ci * h + iy + 1) * w];
                        let wrow = &wd[((fi * c + ci) * kh + ky) * kw..][..kw];
                        for (kx, &wv) in wrow.iter().enumerate() {
                            if sw == 1 {
                                let src = &xrow[kx..kx + ow];
                                for (ov, &xv) in orow.iter_mut().zip(src) {
                                    *ov += wv * xv;
                                }
                            } else {
                                for (ox, ov) in orow.iter_mut().enumerate() {
                                    *ov += wv * xrow[ox * sw + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![n, f, oh, ow], out)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub filters: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    x: &Tensor,
    filters: &Tensor,
    stride: (usize, usize),
    upstream: &Tensor,
) -> Result<ConvGrads> {
    let [n, c, h, w] = dims4(x, "conv input")?;
    let [f, _, kh, kw] = dims4(filters, "conv filters")?;
    let [un, uf, oh, ow] = dims4(upstream, "conv upstream")?;
    let (sh, sw) = stride;
    if un != n
        || uf != f
        || Some(oh) != conv_out_len(h, kh, sh)
        || Some(ow) != conv_out_len(w, kw, sw)
    {
        return Err(Error::Shape(format!(
            "conv upstream {:?} inconsistent with input {:?} and filters {:?}",
            upstream.shape(),
            x.shape(),
            filters.shape()
        )));
    }
    let xd = x.data();
    let wd = filters.data();
    let gd = upstream.data();
    let in_len = c * h * w;
    let w_len = f * c * kh * kw;
    // Per-sample gradients, reduced below in sample order.
    let per_sample = par::map_indices(n, |s| {
        let xs = &xd[s * in_len..(s + 1) * in_len];
        let gs = &gd[s * f * oh * ow..(s + 1) * f * oh * ow];
        let mut dx = vec![0.0; in_len];
        let mut dw = vec![0.0; w_len];
        let mut db = vec![0.0; f];
        for fi in 0..f {
            let gf = &gs[fi * oh * ow..(fi + 1) * oh * ow];
            db[fi] = gf.iter().sum();
            for oy in 0..oh {
                let grow = &gf[oy * ow..(oy + 1) * ow];
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = oy * sh + ky;
                        let row_off = (ci * h + iy) * w;
                        let xrow = &xs[row_off..row_off + w];
                        let widx = ((fi * c + ci) * kh + ky) * kw;
                        for kx in 0..kw {
                            let wv = wd[widx + kx];
                            if sw == 1 {
                                let src = &xrow[kx..kx + ow];
                                dw[widx + kx] += grow.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                                let dst = &mut dx[row_off + kx..row_off + kx + ow];
                                for (d, &g) in dst.iter_mut().zip(grow) {
                                    *d += wv * g;
                                }
                            } else {
                                let mut acc = 0.0;
                                for (ox, &g) in grow.iter().enumerate() {
                                    acc += g * xrow[ox * sw + kx];
                                    dx[row_off + ox * sw + kx] += wv * g;
                                }
                                dw[widx + kx] += acc;
                            }
                        }
                    }
                }
            }
        }
        (dx, dw, db)
    });
    let mut dx = Vec::with_capacity(n * in_len);
    let mut dw = vec![0.0; w_len];
    let mut db = vec![0.0; f];
    for (sx, sdw, sdb) in per_sample {
        dx.extend(sx);
        dw.iter_mut().zip(&sdw).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&sdb).for_each(|(a, b)| *a += b);
    }
    Ok(ConvGrads {
        input: Tensor::new(x.shape().to_vec(), dx)?,
        filters: Tensor::new(filters.shape().to_vec(), dw)?,
        bias: Tensor::new(vec![f], db)?,
    })
}

/// Non-overlapping max pooling. Returns the output and, per output element,
/// the flat input index that won (first in row-major window order on ties).
pub fn maxpool_forward(x: &Tensor, pool: (usize, usize)) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = dims4(x, "pool input")?;
    let (ph, pw) = pool;
    if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::Shape(format!(
            "pool {ph}x{pw} does not divide input {h}x{w}"
        )));
    }
    let (oh, ow) = (h / ph, w / pw);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base + oy * ph * w + ox * pw;
                for dy in 0..ph {
                    for dx in 0..pw {
                        let idx = base + (oy * ph + dy) * w + ox * pw + dx;
                        // NaN wins so it propagates.
                        if xd[idx] > best || (xd[idx].is_nan() && !best.is_nan()) {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(xd[best_idx]);
                arg.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

pub fn maxpool_backward(input_shape: &[usize], argmax: &[usize], upstream: &Tensor) -> Result<Tensor> {
    if argmax.len() != upstream.len() {
        return Err(Error::Shape(format!(
            "pool upstream {:?} does not match {} cached positions",
            upstream.shape(),
            argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(upstream.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

/// Learned affine parameters and constants of one batch-norm layer.
#[derive(Clone, Debug)]
pub struct BatchNormParams<'a> {
    pub gamma: &'a Tensor,
    pub beta: &'a Tensor,
    pub running_mean: &'a Tensor,
    pub running_var: &'a Tensor,
    pub eps: f64,
}

pub struct BatchNormCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    /// Batch statistics, present when computed in train mode.
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// (features, elements per feature per sample) for 2-D or 4-D activations.
fn bn_layout(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [_, f] => Ok((*f, 1)),
        [_, c, h, w] => Ok((*c, h * w)),
        s => Err(Error::Shape(format!("batch norm expects 2-D or 4-D input, got {s:?}"))),
    }
}

/// Normalizes each feature (conv: each channel over batch and both spatial
/// axes) to `(x - mu) / sigma` with `sigma = sqrt(var + eps)`, then applies
/// `gamma * x_hat + beta`. Train mode uses population statistics of the batch,
/// infer mode the running statistics.
pub fn batchnorm_forward(
    x: &Tensor,
    p: &BatchNormParams<'_>,
    mode: Mode,
) -> Result<(Tensor, BatchNormCache)> {
    let (feats, spatial) = bn_layout(x.shape())?;
    let n = x.batch();
    for t in [p.gamma, p.beta, p.running_mean, p.running_var] {
        t.expect_shape(&[feats])?;
    }
    let xd = x.data();
    let idx = |s: usize, f: usize, k: usize| (s * feats + f) * spatial + k;
    let (mean, var, batch_stats) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::Contract(
                    "batch norm in train mode needs a batch of at least 2".into(),
                ));
            }
            let count = (n * spatial) as f64;
            let mut mean = vec![0.0; feats];
            let mut var = vec![0.0; feats];
            for f in 0..feats {
                let mut acc = 0.0;
                for s in 0..n {
                    for k in 0..spatial {
                        acc += xd[idx(s, f, k)];
                    }
                }
                let m = acc / count;
                let mut acc2 = 0.0;
                for s in 0..n {
                    for k in 0..spatial {
                        let d = xd[idx(s, f, k)] - m;
                        acc2 += d * d;
                    }
                }
                mean[f] = m;
                var[f] = acc2 / count;
            }
            (mean.clone(), var.clone(), Some((mean, var)))
        }
        Mode::Infer => (p.running_mean.data().to_vec(), p.running_var.data().to_vec(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + p.eps).sqrt()).collect();
    let mut x_hat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    let (g, b) = (p.gamma.data(), p.beta.data());
    for s in 0..n {
        for f in 0..feats {
            for k in 0..spatial {
                let i = idx(s, f, k);
                let h = (xd[i] - mean[f]) * inv_std[f];
                x_hat[i] = h;
                out[i] = g[f] * h + b[f];
            }
        }
    }
    let y = Tensor::new(x.shape().to_vec(), out)?;
    Ok((
        y,
        BatchNormCache {
            x_hat,
            inv_std,
            shape: x.shape().to_vec(),
            batch_stats,
        },
    ))
}

/// Exponential moving average of the running statistics with the batch
/// statistics stored in `cache` (no-op for an inference-mode cache).
pub fn batchnorm_update_running(
    cache: &BatchNormCache,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    momentum: f64,
) {
    if let Some((mean, var)) = &cache.batch_stats {
        for (r, m) in running_mean.data_mut().iter_mut().zip(mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        for (r, v) in running_var.data_mut().iter_mut().zip(var) {
            *r = (1.0 - momentum) * *r + momentum * v;
        }
    }
}

pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Train mode uses the full batch-statistics gradient
/// `dx = inv_std / m * (m*dxh - sum(dxh) - x_hat * sum(dxh * x_hat))`
/// (with `dxh = gamma * upstream`); infer mode is a per-feature affine map.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    upstream: &Tensor,
) -> Result<BatchNormGrads> {
    upstream.expect_shape(&cache.shape)?;
    let (feats, spatial) = bn_layout(&cache.shape)?;
    let n = cache.shape[0];
    let m = (n * spatial) as f64;
    let idx = |s: usize, f: usize, k: usize| (s * feats + f) * spatial + k;
    let gd = upstream.data();
    let mut dgamma = vec![0.0; feats];
    let mut dbeta = vec![0.0; feats];
    let mut dx = vec![0.0; gd.len()];
    for f in 0..feats {
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        for s in 0..n {
            for k in 0..spatial {
                let i = idx(s, f, k);
                sum_g += gd[i];
                sum_gx += gd[i] * cache.x_hat[i];
            }
        }
        dbeta[f] = sum_g;
        dgamma[f] = sum_gx;
        let gm = gamma.data()[f];
        let batch = cache.batch_stats.is_some();
        let scale = gm * cache.inv_std[f] / m;
        for s in 0..n {
            for k in 0..spatial {
                let i = idx(s, f, k);
                dx[i] = if batch {
                    scale * (m * gd[i] - sum_g - cache.x_hat[i] * sum_gx)
                } else {
                    gm * cache.inv_std[f] * gd[i]
                };
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(cache.shape.clone(), dx)?,
        gamma: Tensor::new(vec![feats], dgamma)?,
        beta: Tensor::new(vec![feats], dbeta)?,
    })
}

/// Inverted dropout. Returns the output and, in train mode with `p > 0`,
/// the scaled keep-mask needed for the backward pass.
pub fn dropout_forward<R: Rng + ?Sized>(
    x: &Tensor,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Argument(format!("dropout p = {p} outside [0, 1)")));
    }
    if mode == Mode::Infer || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    let y = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), y)?, Some(mask)))
}

pub fn dropout_backward(mask: Option<&[f64]>, upstream: &Tensor) -> Result<Tensor> {
    match mask {
        None => Ok(upstream.clone()),
        Some(m) if m.len() == upstream.len() => Ok(Tensor::new(
            upstream.shape().to_vec(),
            upstream.data().iter().zip(m).map(|(g, k)| g * k).collect(),
        )?),
        Some(m) => Err(Error::Shape(format!(
            "dropout mask of {} elements vs upstream {:?}",
            m.len(),
            upstream.shape()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn relu_values_and_subgradient() {
        let x = t(&[3], &[-3.0, 0.0, 5.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 5.0]);
        let g = relu_backward(&x, &t(&[3], &[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
        let neg = t(&[2, 2], &[-1.0, -2.0, -0.5, -9.0]);
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tanh_at_origin() {
        let x = t(&[1], &[0.0]);
        let y = tanh_forward(&x);
        assert_eq!(y.data(), &[0.0]);
        assert_eq!(tanh_backward(&y, &t(&[1], &[1.0])).unwrap().data(), &[1.0]);
    }

    #[test]
    fn dense_hand_values() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = dense_forward(&x, &eye, &t(&[2], &[0.0, 0.0])).unwrap();
        assert_eq!(y.data(), x.data());
        let y = dense_forward(&x, &eye, &t(&[2], &[1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
    }

    #[test]
    fn dense_shape_error_names_both() {
        let x = t(&[1, 3], &[1.0, 2.0, 3.0]);
        let w = Tensor::zeros(&[2, 2]);
        let err = dense_forward(&x, &w, &Tensor::zeros(&[2])).unwrap_err().to_string();
        assert!(err.contains("[1, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn conv_identity_and_hand_value() {
        let x = t(&[1, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let one = t(&[1, 1, 1, 1], &[1.0]);
        let y = conv2d_forward(&x, &one, &t(&[1], &[0.0]), (1, 1)).unwrap();
        assert_eq!(y, x);

        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let k = t(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = conv2d_forward(&x, &k, &t(&[1], &[0.0]), (1, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn conv_output_size_with_stride() {
        let x = Tensor::zeros(&[2, 3, 7, 10]);
        let k = Tensor::zeros(&[4, 3, 3, 4]);
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[4]), (2, 3)).unwrap();
        assert_eq!(y.shape(), &[2, 4, 3, 3]);
    }

    #[test]
    fn conv_kernel_too_large() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 3, 1]);
        assert!(matches!(
            conv2d_forward(&x, &k, &Tensor::zeros(&[1]), (1, 1)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn maxpool_values_and_ties() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (y, _) = maxpool_forward(&x, (2, 2)).unwrap();
        assert_eq!(y.data(), &[4.0]);

        let c = Tensor::full(&[1, 1, 2, 4], 7.0);
        let (y, arg) = maxpool_forward(&c, (2, 2)).unwrap();
        assert_eq!(y.data(), &[7.0, 7.0]);
        let g = maxpool_backward(c.shape(), &arg, &t(&[1, 1, 1, 2], &[1.0, 1.0])).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_requires_divisibility() {
        let x = Tensor::zeros(&[1, 1, 2, 5]);
        assert!(matches!(maxpool_forward(&x, (1, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn batchnorm_hand_values() {
        let x = t(&[3, 1], &[1.0, 2.0, 3.0]);
        let (g, b) = (t(&[1], &[1.0]), t(&[1], &[0.0]));
        let (mut rm, mut rv) = (Tensor::zeros(&[1]), Tensor::full(&[1], 1.0));
        let p = BatchNormParams { gamma: &g, beta: &b, running_mean: &rm, running_var: &rv, eps: 0.0 };
        let (y, cache) = batchnorm_forward(&x, &p, Mode::Train).unwrap();
        batchnorm_update_running(&cache, &mut rm, &mut rv, 0.1);
        let s = (1.5f64).sqrt();
        for (a, e) in y.data().iter().zip([-s, 0.0, s]) {
            assert!((a - e).abs() < 1e-12);
        }
        // running stats: 0.9*0 + 0.1*2, 0.9*1 + 0.1*(2/3)
        assert!((rm.data()[0] - 0.2).abs() < 1e-15);
        assert!((rv.data()[0] - (0.9 + 0.1 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_on_normalized_input_is_near_identity() {
        let x = t(&[2, 1], &[-1.0, 1.0]);
        let (g, b) = (t(&[1], &[1.0]), t(&[1], &[0.0]));
        let (rm, rv) = (Tensor::zeros(&[1]), Tensor::full(&[1], 1.0));
        let p = BatchNormParams { gamma: &g, beta: &b, running_mean: &rm, running_var: &rv, eps: 1e-5 };
        let (y, _) = batchnorm_forward(&x, &p, Mode::Train).unwrap();
        for (a, e) in y.data().iter().zip(x.data()) {
            assert!((a - e).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_rejects_single_sample_training() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let (g, b) = (Tensor::full(&[2], 1.0), Tensor::zeros(&[2]));
        let (rm, rv) = (Tensor::zeros(&[2]), Tensor::full(&[2], 1.0));
        let p = BatchNormParams { gamma: &g, beta: &b, running_mean: &rm, running_var: &rv, eps: 1e-5 };
        assert!(matches!(batchnorm_forward(&x, &p, Mode::Train), Err(Error::Contract(_))));
        assert!(batchnorm_forward(&x, &p, Mode::Infer).is_ok());
    }

    #[test]
    fn dropout_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = t(&[2, 2], &[1.0, -2.0, 3.0, 4.0]);
        assert_eq!(dropout_forward(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout_forward(&x, 0.5, Mode::Infer, &mut rng).unwrap().0, x);
        assert!(dropout_forward(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let x = Tensor::full(&[n], 1.0);
        let (y, mask) = dropout_forward(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let survivors = mask.unwrap().iter().filter(|&&m| m > 0.0).count() as f64 / n as f64;
        assert!((survivors - 0.5).abs() < 0.01, "{survivors}");
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }
}
