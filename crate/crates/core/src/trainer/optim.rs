use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MOMENTUM: f64 = 0.9;
pub const WEIGHT_DECAY: f64 = 1e-4;

/// SGD with momentum; one buffer per parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub buffers: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        Self::with_coefficients(store, lr, MOMENTUM, WEIGHT_DECAY)
    }

    pub fn with_coefficients(store: &ParamStore<T>, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            lr,
            buffers: store.params().map(|(_, p)| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// `g ← g + λw`, `buf ← μ·buf + g`, `w ← w − lr·buf`.
pub fn sgd_step<T: Scalar>(store: &mut ParamStore<T>, grads: &[Tensor<T>], state: &mut OptimizerState<T>) -> Result<()> {
    let count = store.param_count();
    if grads.len() != count || state.buffers.len() != count {
        return Err(Error::dim("sgd_step", &[count], &[grads.len(), state.buffers.len()]));
    }
    for (k, g) in grads.iter().enumerate() {
        let id = crate::nn::ParamId(k);
        let w = store.param(id);
        if g.shape() != w.shape() || state.buffers[k].shape() != w.shape() {
            return Err(Error::dim("sgd_step", w.shape(), g.shape()));
        }
    }
    let (mu, lambda, lr) = (T::of(state.momentum), T::of(state.weight_decay), T::of(state.lr));
    for (k, g) in grads.iter().enumerate() {
        let w = store.param_mut(crate::nn::ParamId(k)).data_mut();
        let buf = state.buffers[k].data_mut();
        for ((wi, bi), &gi) in w.iter_mut().zip(buf.iter_mut()).zip(g.data()) {
            let gi = gi + lambda * *wi;
            *bi = mu * *bi + gi;
            *wi -= lr * *bi;
        }
    }
    Ok(())
}

/// Step schedule with an optional linear warmup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    /// Epoch from which the rate is divided by `drop_factor`.
    pub drop_epoch: Option<usize>,
    pub drop_factor: f64,
    pub warmup_epochs: usize,
    pub warmup_start: f64,
}

impl LrSchedule {
    pub fn step(initial: f64, drop_epoch: Option<usize>) -> Self {
        Self {
            initial,
            drop_epoch,
            drop_factor: 10.0,
            warmup_epochs: 0,
            warmup_start: 0.0,
        }
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            let f = epoch as f64 / self.warmup_epochs as f64;
            return self.warmup_start + (self.initial - self.warmup_start) * f;
        }
        match self.drop_epoch {
            Some(e) if epoch >= e => self.initial / self.drop_factor,
            _ => self.initial,
        }
    }
}
