use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::params::{BufferId, ParamId, ParamStore};
use super::pass::{Mode, Pass, StatsUpdate};

/// Added to the variance before taking the square root.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Stand-alone batch-normalization state for one layer of width `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: vec![T::one(); d],
            beta: vec![T::zero(); d],
            running_mean: vec![T::zero(); d],
            running_var: vec![T::one(); d],
        }
    }
}

/// Blends batch statistics into running ones; variance is stored unbiased.
pub(crate) fn blend_running<T: Scalar>(mean: &mut [T], var: &mut [T], update: &crate::autodiff::BatchStats<T>) {
    let m = T::of(BN_MOMENTUM);
    let keep = T::one() - m;
    let n = T::of_usize(update.rows);
    let unbias = n / (n - T::one());
    for j in 0..mean.len() {
        mean[j] = keep * mean[j] + m * update.mean[j];
        var[j] = keep * var[j] + m * update.var[j] * unbias;
    }
}

/// Normalizes each column of a `B×d` matrix.
///
/// Train mode uses the batch statistics and folds them into the running
/// ones; eval mode uses the stored running statistics.
pub fn batchnorm<T: Scalar>(x: &Tensor<T>, state: &mut BatchNormState<T>, mode: Mode) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let d = state.gamma.len();
    let gamma = tape.constant(Tensor::new(vec![d], state.gamma.clone())?);
    let beta = tape.constant(Tensor::new(vec![d], state.beta.clone())?);
    let eps = T::of(BN_EPS);
    match mode {
        Mode::Train => {
            let (y, stats) = xv.batchnorm_train(gamma, beta, eps)?;
            blend_running(&mut state.running_mean, &mut state.running_var, &stats);
            Ok(y.value())
        }
        Mode::Eval => Ok(xv
            .batchnorm_eval(gamma, beta, &state.running_mean, &state.running_var, eps)?
            .value()),
    }
}

/// Batch normalization bound to a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub width: usize,
}

impl BatchNormLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, width: usize) -> Self {
        Self {
            gamma: store.add_param(format!("{prefix}.gamma"), Tensor::ones(&[width])),
            beta: store.add_param(format!("{prefix}.beta"), Tensor::zeros(&[width])),
            running_mean: store.add_buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[width])),
            running_var: store.add_buffer(format!("{prefix}.running_var"), Tensor::ones(&[width])),
            width,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, pass: &mut Pass<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (gamma, beta) = (pass.param(self.gamma), pass.param(self.beta));
        let eps = T::of(BN_EPS);
        match pass.mode() {
            Mode::Train => {
                let (y, stats) = x.batchnorm_train(gamma, beta, eps)?;
                pass.record_stats(self.running_mean, self.running_var, stats);
                Ok(y)
            }
            Mode::Eval => {
                let mean = pass.buffer(self.running_mean).data().to_vec();
                let var = pass.buffer(self.running_var).data().to_vec();
                x.batchnorm_eval(gamma, beta, &mean, &var, eps)
            }
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    /// Applies running-statistics updates collected during a train pass.
    pub fn apply_stats(&mut self, updates: &[StatsUpdate<T>]) {
        for u in updates {
            let mut mean = self.buffer(u.mean).data().to_vec();
            let mut var = self.buffer(u.var).data().to_vec();
            blend_running(&mut mean, &mut var, &u.stats);
            self.buffer_mut(u.mean).data_mut().copy_from_slice(&mean);
            self.buffer_mut(u.var).data_mut().copy_from_slice(&var);
        }
    }

    /// Fills running statistics with random values (tests of eval-mode paths).
    pub fn randomize_buffers(&mut self, rng: &mut RngState) -> Result<()> {
        for i in 0..self.buffers().count() {
            let id = BufferId(i);
            let is_var = self.buffers().nth(i).map(|(n, _)| n.ends_with("running_var")).unwrap_or(false);
            let (lo, hi) = if is_var { (0.5, 1.5) } else { (-0.5, 0.5) };
            let shape = self.buffer(id).shape().to_vec();
            *self.buffer_mut(id) = Tensor::uniform(&shape, lo, hi, rng);
        }
        if self.buffers().any(|(_, t)| !t.all_finite()) {
            return Err(Error::Precondition("non-finite buffer".into()));
        }
        Ok(())
    }
}
