//! First-order optimizers and the learning-rate schedule.
//!
//! All state transitions are pure functions over slices; [`Optimizer`] bundles
//! a config with its per-tensor slots for the training loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Sgdm,
    Adam,
    RmsProp,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Sgdm => "sgdm",
            OptimizerKind::Adam => "adam",
            OptimizerKind::RmsProp => "rmsprop",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// `lr = base * factor^floor(epoch / every)`.
    StepDecay { factor: f64, every: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule: Schedule,
    /// L2 penalty folded into the gradient; 0 disables it.
    #[serde(default)]
    pub weight_decay: f64,
}

impl OptimizerConfig {
    /// Plain steepest descent, lr 0.01, constant.
    pub fn gd() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 0.01,
            schedule: Schedule::Constant,
            ..Self::convnet(OptimizerKind::Sgd)
        }
    }

    /// ConvNet settings: lr 0.001 decayed by 0.1 every 10 epochs,
    /// momentum 0.9, beta1 0.9, beta2 0.99, eps 1e-8.
    pub fn convnet(kind: OptimizerKind) -> Self {
        OptimizerConfig {
            kind,
            learning_rate: 0.001,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            schedule: Schedule::StepDecay {
                factor: 0.1,
                every: 10,
            },
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(unit(self.momentum) && unit(self.beta1) && unit(self.beta2)) {
            return Err(Error::Argument("decay factors must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Argument("epsilon must be > 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Argument("weight decay must be >= 0".into()));
        }
        if let Schedule::StepDecay { factor, every } = self.schedule {
            if !(factor > 0.0 && factor <= 1.0) || every == 0 {
                return Err(Error::Argument(
                    "step decay needs 0 < factor <= 1 and every >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Effective learning rate at 0-based `epoch`.
pub fn schedule_lr(base_lr: f64, epoch: usize, schedule: Schedule) -> f64 {
    match schedule {
        Schedule::Constant => base_lr,
        Schedule::StepDecay { factor, every } => base_lr * factor.powi((epoch / every) as i32),
    }
}

fn check_len(params: &[f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameters vs {} gradients",
            params.len(),
            grads.len()
        )));
    }
    Ok(())
}

/// `θ ← θ − lr·g`
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    check_len(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Heavy-ball momentum: `v ← μ·v + g; θ ← θ − lr·v`.
pub fn sgdm_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    check_len(params, grads)?;
    check_len(velocity, grads)?;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Bias-corrected Adam. `t` is the step count *after* this update (≥ 1).
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    check_len(params, grads)?;
    check_len(m, grads)?;
    check_len(v, grads)?;
    if t == 0 {
        return Err(Error::Argument("adam timestep starts at 1".into()));
    }
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// `s ← ρ·s + (1−ρ)·g²; θ ← θ − lr·g/(√s + ε)`, no bias correction.
pub fn rmsprop_step(
    params: &mut [f64],
    grads: &[f64],
    mean_sq: &mut [f64],
    lr: f64,
    decay: f64,
    eps: f64,
) -> Result<()> {
    check_len(params, grads)?;
    check_len(mean_sq, grads)?;
    for ((p, g), s) in params.iter_mut().zip(grads).zip(mean_sq.iter_mut()) {
        *s = decay * *s + (1.0 - decay) * g * g;
        *p -= lr * g / (s.sqrt() + eps);
    }
    Ok(())
}

/// Per-tensor optimizer slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    /// Velocity (SGDM), first moment (Adam) or mean square (RMSProp).
    pub slot_a: Vec<Tensor>,
    /// Second moment (Adam only).
    pub slot_b: Vec<Tensor>,
    pub t: u64,
    pub lr: f64,
}

impl OptimizerState {
    pub fn slot_names(kind: OptimizerKind) -> (&'static str, &'static str) {
        match kind {
            OptimizerKind::Sgd => ("", ""),
            OptimizerKind::Sgdm => ("velocity", ""),
            OptimizerKind::Adam => ("m", "v"),
            OptimizerKind::RmsProp => ("mean_sq", ""),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub state: OptimizerState,
}

impl Optimizer {
    /// Zero-initialized slots shaped like `params`.
    pub fn new(config: OptimizerConfig, params: &[&Tensor]) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let (slot_a, slot_b) = match config.kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Sgdm | OptimizerKind::RmsProp => (zeros(), Vec::new()),
            OptimizerKind::Adam => (zeros(), zeros()),
        };
        let lr = config.learning_rate;
        Ok(Optimizer {
            config,
            state: OptimizerState {
                slot_a,
                slot_b,
                t: 0,
                lr,
            },
        })
    }

    /// Sets the effective rate for 0-based `epoch` and returns it.
    pub fn start_epoch(&mut self, epoch: usize) -> f64 {
        self.state.lr = schedule_lr(self.config.learning_rate, epoch, self.config.schedule);
        self.state.lr
    }

    /// One update of every tensor with the current effective rate.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameter tensors vs {} gradient tensors",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        let c = &self.config;
        let lr = self.state.lr;
        self.state.t += 1;
        let t = self.state.t;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let decayed;
            let grad: &[f64] = if c.weight_decay > 0.0 {
                decayed = g
                    .data()
                    .iter()
                    .zip(p.data())
                    .map(|(g, w)| g + c.weight_decay * w)
                    .collect::<Vec<_>>();
                &decayed
            } else {
                g.data()
            };
            let pd = p.data_mut();
            match c.kind {
                OptimizerKind::Sgd => sgd_step(pd, grad, lr)?,
                OptimizerKind::Sgdm => {
                    sgdm_step(pd, grad, self.state.slot_a[i].data_mut(), lr, c.momentum)?
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.state.slot_a[i], &mut self.state.slot_b[i]);
                    adam_step(pd, grad, m.data_mut(), v.data_mut(), t, lr, c.beta1, c.beta2, c.epsilon)?
                }
                OptimizerKind::RmsProp => {
                    rmsprop_step(pd, grad, self.state.slot_a[i].data_mut(), lr, c.beta2, c.epsilon)?
                }
            }
        }
        Ok(())
    }
}
