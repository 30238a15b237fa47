//! Layer stacks: specification, shape inference, parameters, and the
//! composed forward/backward passes.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{self, BatchNormCache, BatchNormParams, Mode};
use crate::nn::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    /// Fully connected; flattens any trailing input dimensions.
    Dense { inputs: usize, outputs: usize },
    /// `kernel_h` runs over electrodes, `kernel_w` over time. Valid padding.
    Conv2d {
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride_h: usize,
        stride_w: usize,
    },
    /// Non-overlapping (stride = pool size).
    MaxPool { pool_h: usize, pool_w: usize },
    BatchNorm { num_features: usize },
    Dropout { p: f64 },
    Activation { kind: Activation },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Activation { kind: Activation::Relu } => "relu",
            LayerSpec::Activation { kind: Activation::Tanh } => "tanh",
        }
    }
}

/// Right-side trim applied in front of a pooling layer so the pool divides.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trim {
    pub layer: usize,
    pub from: [usize; 2],
    pub to: [usize; 2],
}

/// Per-sample shapes (without the batch axis) before and after every layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeChain {
    pub shapes: Vec<Vec<usize>>,
    pub trims: Vec<Trim>,
}

impl ShapeChain {
    pub fn output(&self) -> &[usize] {
        self.shapes.last().expect("chain has the input shape")
    }

    pub fn describe(&self) -> String {
        let mut s = String::new();
        for (i, shape) in self.shapes.iter().enumerate() {
            if i > 0 {
                s.push_str(" -> ");
            }
            s.push_str(&format!("{shape:?}"));
        }
        for t in &self.trims {
            s.push_str(&format!(
                "; trim before layer {}: {:?} -> {:?}",
                t.layer, t.from, t.to
            ));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Per-sample input shape, `[features]` or `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

impl ModelSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, classes: usize) -> Result<Self> {
        let spec = ModelSpec {
            input_shape,
            layers,
            classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Infers the full shape chain, rejecting incompatible neighbours.
    pub fn validate(&self) -> Result<ShapeChain> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Shape(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        let mut shapes = vec![self.input_shape.clone()];
        let mut trims = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = shapes.last().unwrap().clone();
            let next = infer_layer(layer, &cur)
                .map_err(|e| e.in_layer(i, layer.kind()))
                .map_err(|e| Error::Shape(format!("{e}; chain so far: {}", chain_str(&shapes))))?;
            if let (LayerSpec::MaxPool { pool_h, pool_w }, [_, h, w]) = (layer, cur.as_slice()) {
                let th = h - h % pool_h;
                let tw = w - w % pool_w;
                if (th, tw) != (*h, *w) {
                    trims.push(Trim {
                        layer: i,
                        from: [*h, *w],
                        to: [th, tw],
                    });
                }
            }
            shapes.push(next);
        }
        let chain = ShapeChain { shapes, trims };
        if !self.layers.is_empty() && chain.output() != [self.classes] {
            return Err(Error::Shape(format!(
                "model output {:?} does not match {} classes; chain: {}",
                chain.output(),
                self.classes,
                chain.describe()
            )));
        }
        Ok(chain)
    }

    /// Tanh MLP with the given hidden widths and a tanh output layer.
    pub fn mlp(inputs: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = inputs;
        for &h in hidden.iter().chain(std::iter::once(&classes)) {
            layers.push(LayerSpec::Dense {
                inputs: width,
                outputs: h,
            });
            layers.push(LayerSpec::Activation {
                kind: Activation::Tanh,
            });
            width = h;
        }
        ModelSpec::new(vec![inputs], layers, classes)
    }

    /// The default EEG ConvNet: a full-electrode spatial conv followed by two
    /// temporal convs, each with BN, ReLU and 1x4 pooling, then
    /// dense(64) + ReLU + dropout(0.5) + dense(classes).
    pub fn default_convnet(channels: usize, samples: usize, classes: usize) -> Result<Self> {
        ConvNetConfig::default().build(channels, samples, classes)
    }

    pub fn parameter_count(&self) -> usize {
        let chain = match self.validate() {
            Ok(c) => c,
            Err(_) => return 0,
        };
        self.layers
            .iter()
            .zip(&chain.shapes)
            .map(|(l, s)| match l {
                LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
                LayerSpec::Conv2d {
                    filters,
                    kernel_h,
                    kernel_w,
                    ..
                } => filters * s[0] * kernel_h * kernel_w + filters,
                LayerSpec::BatchNorm { num_features } => 2 * num_features,
                _ => 0,
            })
            .sum()
    }
}

/// Knobs of the default ConvNet layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvNetConfig {
    pub spatial_filters: usize,
    pub spatial_kernel_w: usize,
    pub temporal_filters: [usize; 2],
    pub temporal_kernels: [usize; 2],
    pub pool_w: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for ConvNetConfig {
    fn default() -> Self {
        ConvNetConfig {
            spatial_filters: 8,
            spatial_kernel_w: 16,
            temporal_filters: [16, 32],
            temporal_kernels: [11, 9],
            pool_w: 4,
            hidden: 64,
            dropout: 0.5,
        }
    }
}

impl ConvNetConfig {
    pub fn build(&self, channels: usize, samples: usize, classes: usize) -> Result<ModelSpec> {
        let input_shape = vec![1, channels, samples];
        let mut layers = Vec::new();
        let convs = [
            (self.spatial_filters, channels, self.spatial_kernel_w),
            (self.temporal_filters[0], 1, self.temporal_kernels[0]),
            (self.temporal_filters[1], 1, self.temporal_kernels[1]),
        ];
        for (filters, kernel_h, kernel_w) in convs {
            layers.push(LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                stride_h: 1,
                stride_w: 1,
            });
            layers.push(LayerSpec::BatchNorm {
                num_features: filters,
            });
            layers.push(LayerSpec::Activation {
                kind: Activation::Relu,
            });
            layers.push(LayerSpec::MaxPool {
                pool_h: 1,
                pool_w: self.pool_w,
            });
        }
        // Flattened width depends on the chain; infer it.
        let partial = ModelSpec {
            input_shape: input_shape.clone(),
            layers: layers.clone(),
            classes,
        };
        let flat: usize = infer_chain(&partial)?.iter().product();
        layers.push(LayerSpec::Dense {
            inputs: flat,
            outputs: self.hidden,
        });
        layers.push(LayerSpec::Activation {
            kind: Activation::Relu,
        });
        layers.push(LayerSpec::Dropout { p: self.dropout });
        layers.push(LayerSpec::Dense {
            inputs: self.hidden,
            outputs: classes,
        });
        ModelSpec::new(input_shape, layers, classes)
    }
}

fn infer_chain(spec: &ModelSpec) -> Result<Vec<usize>> {
    let mut cur = spec.input_shape.clone();
    for (i, l) in spec.layers.iter().enumerate() {
        cur = infer_layer(l, &cur).map_err(|e| e.in_layer(i, l.kind()))?;
    }
    Ok(cur)
}

fn chain_str(shapes: &[Vec<usize>]) -> String {
    shapes
        .iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(" -> ")
}

fn infer_layer(layer: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    match *layer {
        LayerSpec::Dense { inputs, outputs } => {
            let flat: usize = input.iter().product();
            if inputs == 0 || outputs == 0 {
                return Err(Error::Shape("dense dimensions must be positive".into()));
            }
            if flat != inputs {
                return Err(Error::Shape(format!(
                    "dense expects {inputs} inputs, receives {input:?} ({flat})"
                )));
            }
            Ok(vec![outputs])
        }
        LayerSpec::Conv2d {
            filters,
            kernel_h,
            kernel_w,
            stride_h,
            stride_w,
        } => {
            let [_, h, w] = three(input, "conv2d")?;
            if filters == 0 || kernel_h == 0 || kernel_w == 0 || stride_h == 0 || stride_w == 0 {
                return Err(Error::Shape("conv2d dimensions must be positive".into()));
            }
            match (
                layers::conv_out_len(h, kernel_h, stride_h),
                layers::conv_out_len(w, kernel_w, stride_w),
            ) {
                (Some(oh), Some(ow)) => Ok(vec![filters, oh, ow]),
                _ => Err(Error::Shape(format!(
                    "kernel {kernel_h}x{kernel_w} larger than input {h}x{w}"
                ))),
            }
        }
        LayerSpec::MaxPool { pool_h, pool_w } => {
            let [c, h, w] = three(input, "max_pool")?;
            if pool_h == 0 || pool_w == 0 || pool_h > h || pool_w > w {
                return Err(Error::Shape(format!(
                    "pool {pool_h}x{pool_w} does not fit input {h}x{w}"
                )));
            }
            Ok(vec![c, h / pool_h, w / pool_w])
        }
        LayerSpec::BatchNorm { num_features } => {
            let feats = match input {
                [f] => *f,
                [c, _, _] => *c,
                s => {
                    return Err(Error::Shape(format!(
                        "batch norm needs a flat or [c,h,w] input, got {s:?}"
                    )))
                }
            };
            if feats != num_features {
                return Err(Error::Shape(format!(
                    "batch norm over {num_features} features, input {input:?} has {feats}"
                )));
            }
            Ok(input.to_vec())
        }
        LayerSpec::Dropout { p } => {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Shape(format!("dropout p = {p} outside [0, 1)")));
            }
            Ok(input.to_vec())
        }
        LayerSpec::Activation { .. } => Ok(input.to_vec()),
    }
}

fn three(input: &[usize], what: &str) -> Result<[usize; 3]> {
    match input {
        [c, h, w] => Ok([*c, *h, *w]),
        s => Err(Error::Shape(format!("{what} needs a [c,h,w] input, got {s:?}"))),
    }
}

/// Parameters owned by one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerParams {
    None,
    Dense { weight: Tensor, bias: Tensor },
    Conv2d { filters: Tensor, bias: Tensor },
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        running_mean: Tensor,
        running_var: Tensor,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub layers: Vec<LayerParams>,
}

/// Gradients of the trainable tensors, in [`Parameters::trainable`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Parameters {
    /// Trainable tensors with stable names (`layer{i}.{name}`).
    pub fn trainable(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                LayerParams::None => {}
                LayerParams::Dense { weight, bias } => {
                    out.push((format!("layer{i}.weight"), weight));
                    out.push((format!("layer{i}.bias"), bias));
                }
                LayerParams::Conv2d { filters, bias } => {
                    out.push((format!("layer{i}.filters"), filters));
                    out.push((format!("layer{i}.bias"), bias));
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.push((format!("layer{i}.gamma"), gamma));
                    out.push((format!("layer{i}.beta"), beta));
                }
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerParams::None => {}
                LayerParams::Dense { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                LayerParams::Conv2d { filters, bias } => {
                    out.push(filters);
                    out.push(bias);
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
            }
        }
        out
    }

    /// Every tensor including non-trainable buffers, named.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    out.push((format!("layer{i}.gamma"), gamma));
                    out.push((format!("layer{i}.beta"), beta));
                    out.push((format!("layer{i}.running_mean"), running_mean));
                    out.push((format!("layer{i}.running_var"), running_var));
                }
                _ => {}
            }
        }
        let mut train = self.trainable();
        train.retain(|(n, _)| !out.iter().any(|(m, _)| m == n));
        train.extend(out);
        train.sort_by_key(|(n, _)| layer_sort_key(n));
        train
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            match l {
                LayerParams::None => {}
                LayerParams::Dense { weight, bias } => {
                    out.push((format!("layer{i}.weight"), weight));
                    out.push((format!("layer{i}.bias"), bias));
                }
                LayerParams::Conv2d { filters, bias } => {
                    out.push((format!("layer{i}.filters"), filters));
                    out.push((format!("layer{i}.bias"), bias));
                }
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    out.push((format!("layer{i}.gamma"), gamma));
                    out.push((format!("layer{i}.beta"), beta));
                    out.push((format!("layer{i}.running_mean"), running_mean));
                    out.push((format!("layer{i}.running_var"), running_var));
                }
            }
        }
        out
    }

    pub fn zeros_like_trainable(&self) -> Vec<Tensor> {
        self.trainable()
            .into_iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect()
    }
}

fn layer_sort_key(name: &str) -> (usize, usize) {
    let idx = name
        .strip_prefix("layer")
        .and_then(|r| r.split('.').next())
        .and_then(|d| d.parse().ok())
        .unwrap_or(usize::MAX);
    let order = ["weight", "filters", "bias", "gamma", "beta", "running_mean", "running_var"];
    let field = name.rsplit('.').next().unwrap_or("");
    (idx, order.iter().position(|o| *o == field).unwrap_or(order.len()))
}

/// Glorot-uniform weights (`L = sqrt(6 / (fan_in + fan_out))`), zero biases,
/// unit gamma, zero beta, running variance 1.
pub fn init_parameters(spec: &ModelSpec, seed: u64) -> Result<Parameters> {
    let chain = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (layer, input) in spec.layers.iter().zip(&chain.shapes) {
        let p = match *layer {
            LayerSpec::Dense { inputs, outputs } => {
                let bound = glorot_bound(inputs, outputs);
                LayerParams::Dense {
                    weight: uniform(&mut rng, &[inputs, outputs], bound),
                    bias: Tensor::zeros(&[outputs]),
                }
            }
            LayerSpec::Conv2d {
                filters,
                kernel_h,
                kernel_w,
                ..
            } => {
                let c = input[0];
                let area = kernel_h * kernel_w;
                let bound = glorot_bound(c * area, filters * area);
                LayerParams::Conv2d {
                    filters: uniform(&mut rng, &[filters, c, kernel_h, kernel_w], bound),
                    bias: Tensor::zeros(&[filters]),
                }
            }
            LayerSpec::BatchNorm { num_features } => LayerParams::BatchNorm {
                gamma: Tensor::full(&[num_features], 1.0),
                beta: Tensor::zeros(&[num_features]),
                running_mean: Tensor::zeros(&[num_features]),
                running_var: Tensor::full(&[num_features], 1.0),
            },
            _ => LayerParams::None,
        };
        layers.push(p);
    }
    Ok(Parameters { layers })
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// What each layer keeps from the forward pass for its backward pass.
pub enum Cache {
    Input(Tensor),
    Output(Tensor),
    Pool {
        input_shape: Vec<usize>,
        cropped_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    BatchNorm(BatchNormCache),
    Dropout(Option<Vec<f64>>),
    None,
}

pub struct ForwardPass {
    pub output: Tensor,
    pub caches: Vec<Cache>,
}

fn check_params<'a>(params: &'a Parameters, spec: &ModelSpec) -> Result<&'a [LayerParams]> {
    if params.layers.len() != spec.layers.len() {
        return Err(Error::Shape(format!(
            "{} parameter groups for {} layers",
            params.layers.len(),
            spec.layers.len()
        )));
    }
    Ok(&params.layers)
}

/// Batched input: `[batch, ..input_shape]`.
pub fn model_forward(
    spec: &ModelSpec,
    params: &Parameters,
    x: &Tensor,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<ForwardPass> {
    let lp = check_params(params, spec)?;
    if &x.shape()[1.min(x.shape().len())..] != spec.input_shape.as_slice() {
        return Err(Error::Shape(format!(
            "input {:?} does not match model input [batch, {:?}]",
            x.shape(),
            spec.input_shape
        )));
    }
    let mut cur = x.clone();
    let mut caches = Vec::with_capacity(spec.layers.len());
    for (i, (layer, p)) in spec.layers.iter().zip(lp).enumerate() {
        let wrap = |e: Error| e.in_layer(i, layer.kind());
        let (next, cache) = forward_layer(layer, p, cur, mode, rng).map_err(wrap)?;
        caches.push(cache);
        cur = next;
    }
    Ok(ForwardPass {
        output: cur,
        caches,
    })
}

fn forward_layer(
    layer: &LayerSpec,
    p: &LayerParams,
    x: Tensor,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<(Tensor, Cache)> {
    match (layer, p) {
        (LayerSpec::Dense { .. }, LayerParams::Dense { weight, bias }) => {
            let y = layers::dense_forward(&x, weight, bias)?;
            Ok((y, Cache::Input(x)))
        }
        (
            LayerSpec::Conv2d {
                stride_h, stride_w, ..
            },
            LayerParams::Conv2d { filters, bias },
        ) => {
            let y = layers::conv2d_forward(&x, filters, bias, (*stride_h, *stride_w))?;
            Ok((y, Cache::Input(x)))
        }
        (LayerSpec::MaxPool { pool_h, pool_w }, _) => {
            let input_shape = x.shape().to_vec();
            let cropped = crop_for_pool(x, *pool_h, *pool_w)?;
            let cropped_shape = cropped.shape().to_vec();
            let (y, argmax) = layers::maxpool_forward(&cropped, (*pool_h, *pool_w))?;
            Ok((
                y,
                Cache::Pool {
                    input_shape,
                    cropped_shape,
                    argmax,
                },
            ))
        }
        (
            LayerSpec::BatchNorm { .. },
            LayerParams::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            },
        ) => {
            let bp = BatchNormParams {
                gamma,
                beta,
                running_mean,
                running_var,
                eps: BN_EPS,
            };
            let (y, cache) = layers::batchnorm_forward(&x, &bp, mode)?;
            Ok((y, Cache::BatchNorm(cache)))
        }
        (LayerSpec::Dropout { p }, _) => {
            let (y, mask) = layers::dropout_forward(&x, *p, mode, rng)?;
            Ok((y, Cache::Dropout(mask)))
        }
        (LayerSpec::Activation { kind: Activation::Relu }, _) => {
            Ok((layers::relu_forward(&x), Cache::Input(x)))
        }
        (LayerSpec::Activation { kind: Activation::Tanh }, _) => {
            let y = layers::tanh_forward(&x);
            Ok((y.clone(), Cache::Output(y)))
        }
        _ => Err(Error::Shape("parameters do not match layer type".into())),
    }
}

/// Drops trailing rows/columns so the pool divides the spatial extent.
fn crop_for_pool(x: Tensor, ph: usize, pw: usize) -> Result<Tensor> {
    let (n, c, h, w) = match x.shape() {
        [n, c, h, w] => (*n, *c, *h, *w),
        s => return Err(Error::Shape(format!("pool input must be 4-D, got {s:?}"))),
    };
    let (th, tw) = (h - h % ph, w - w % pw);
    if (th, tw) == (h, w) {
        return Ok(x);
    }
    if th == 0 || tw == 0 {
        return Err(Error::Shape(format!("pool {ph}x{pw} larger than {h}x{w}")));
    }
    let d = x.data();
    let mut out = Vec::with_capacity(n * c * th * tw);
    for plane in 0..n * c {
        for r in 0..th {
            let off = plane * h * w + r * w;
            out.extend_from_slice(&d[off..off + tw]);
        }
    }
    Tensor::new(vec![n, c, th, tw], out)
}

fn uncrop(g: Tensor, full: &[usize]) -> Result<Tensor> {
    if g.shape() == full {
        return Ok(g);
    }
    let (n, c, h, w) = (full[0], full[1], full[2], full[3]);
    let (th, tw) = (g.shape()[2], g.shape()[3]);
    let mut out = Tensor::zeros(full);
    let od = out.data_mut();
    let gd = g.data();
    for plane in 0..n * c {
        for r in 0..th {
            let src = &gd[(plane * th + r) * tw..][..tw];
            od[plane * h * w + r * w..][..tw].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Consumes the caches in reverse order; returns gradients for every
/// trainable tensor (in [`Parameters::trainable`] order) and the input gradient.
pub fn model_backward(
    spec: &ModelSpec,
    params: &Parameters,
    caches: &[Cache],
    loss_grad: &Tensor,
) -> Result<(Gradients, Tensor)> {
    let lp = check_params(params, spec)?;
    let mut per_layer: Vec<Vec<Tensor>> = vec![Vec::new(); spec.layers.len()];
    let mut g = loss_grad.clone();
    for i in (0..spec.layers.len()).rev() {
        let layer = &spec.layers[i];
        let wrap = |e: Error| e.in_layer(i, layer.kind());
        g = match (layer, &lp[i], &caches[i]) {
            (LayerSpec::Dense { .. }, LayerParams::Dense { weight, .. }, Cache::Input(x)) => {
                let gr = layers::dense_backward(x, weight, &g).map_err(wrap)?;
                per_layer[i] = vec![gr.weight, gr.bias];
                gr.input
            }
            (
                LayerSpec::Conv2d {
                    stride_h, stride_w, ..
                },
                LayerParams::Conv2d { filters, .. },
                Cache::Input(x),
            ) => {
                let gr = layers::conv2d_backward(x, filters, (*stride_h, *stride_w), &g)
                    .map_err(wrap)?;
                per_layer[i] = vec![gr.filters, gr.bias];
                gr.input
            }
            (
                LayerSpec::MaxPool { .. },
                _,
                Cache::Pool {
                    input_shape,
                    cropped_shape,
                    argmax,
                },
            ) => {
                let gc = layers::maxpool_backward(cropped_shape, argmax, &g).map_err(wrap)?;
                uncrop(gc, input_shape).map_err(wrap)?
            }
            (LayerSpec::BatchNorm { .. }, LayerParams::BatchNorm { gamma, .. }, Cache::BatchNorm(c)) => {
                let gr = layers::batchnorm_backward(c, gamma, &g).map_err(wrap)?;
                per_layer[i] = vec![gr.gamma, gr.beta];
                gr.input
            }
            (LayerSpec::Dropout { .. }, _, Cache::Dropout(mask)) => {
                layers::dropout_backward(mask.as_deref(), &g).map_err(wrap)?
            }
            (LayerSpec::Activation { kind: Activation::Relu }, _, Cache::Input(x)) => {
                layers::relu_backward(x, &g).map_err(wrap)?
            }
            (LayerSpec::Activation { kind: Activation::Tanh }, _, Cache::Output(y)) => {
                layers::tanh_backward(y, &g).map_err(wrap)?
            }
            _ => {
                return Err(wrap(Error::Shape(
                    "cache does not match layer type".into(),
                )))
            }
        };
    }
    Ok((
        Gradients {
            tensors: per_layer.into_iter().flatten().collect(),
        },
        g,
    ))
}

/// Folds the batch statistics of a train-mode pass into the running averages.
pub fn commit_running_stats(params: &mut Parameters, caches: &[Cache]) {
    for (p, c) in params.layers.iter_mut().zip(caches) {
        if let (
            LayerParams::BatchNorm {
                running_mean,
                running_var,
                ..
            },
            Cache::BatchNorm(cache),
        ) = (p, c)
        {
            layers::batchnorm_update_running(cache, running_mean, running_var, BN_MOMENTUM);
        }
    }
}

/// Inference-mode forward pass (no dropout, running batch-norm statistics).
pub fn model_infer(spec: &ModelSpec, params: &Parameters, x: &Tensor) -> Result<Tensor> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    Ok(model_forward(spec, params, x, Mode::Infer, &mut rng)?.output)
}
