use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Tape, Var};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::params::{BufferId, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Running-statistics update produced by a train-mode batch normalization.
#[derive(Clone, Debug)]
pub struct StatsUpdate<T> {
    pub mean: BufferId,
    pub var: BufferId,
    pub stats: BatchStats<T>,
}

/// State of one forward evaluation: the tape, parameters bound to it, the
/// mode, the dropout stream, and side effects collected along the way.
pub struct Pass<'t, 's, T> {
    tape: &'t Tape<T>,
    store: &'s ParamStore<T>,
    params: Vec<Var<'t, T>>,
    mode: Mode,
    dropout_rng: Option<RngState>,
    updates: Vec<StatsUpdate<T>>,
    warnings: Vec<String>,
}

/// Side effects of a finished [`Pass`].
#[derive(Debug, Default)]
pub struct PassOutcome<T> {
    pub updates: Vec<StatsUpdate<T>>,
    pub warnings: Vec<String>,
}

impl<'t, 's, T: Scalar> Pass<'t, 's, T> {
    /// Binds every parameter of `store` to `tape`, tracked for gradients when `track_grads`.
    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>, mode: Mode, track_grads: bool) -> Self {
        let params = store
            .params()
            .map(|(_, t)| {
                if track_grads {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Self {
            tape,
            store,
            params,
            mode,
            dropout_rng: None,
            updates: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Dropout is only applied in train mode and only when a stream is supplied.
    pub fn with_dropout_rng(mut self, rng: RngState) -> Self {
        self.dropout_rng = Some(rng);
        self
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        self.params[id.0]
    }

    pub fn params(&self) -> &[Var<'t, T>] {
        &self.params
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        self.store.buffer(id)
    }

    pub fn input(&self, x: Tensor<T>) -> Var<'t, T> {
        self.tape.constant(x)
    }

    pub(crate) fn record_stats(&mut self, mean: BufferId, var: BufferId, stats: BatchStats<T>) {
        self.updates.push(StatsUpdate { mean, var, stats });
    }

    /// Inverted-dropout mask (`0` or `1/(1−ratio)`), or `None` when dropout is inactive.
    pub(crate) fn dropout_mask(&mut self, shape: &[usize], ratio: f64) -> Option<Tensor<T>> {
        if self.mode != Mode::Train || ratio <= 0.0 {
            return None;
        }
        let rng = self.dropout_rng.as_mut()?;
        let keep = T::of(1.0 / (1.0 - ratio));
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| if rng.bernoulli(ratio) { T::zero() } else { keep })
            .collect();
        Some(Tensor::new(shape.to_vec(), data).expect("mask shape"))
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        if !self.warnings.contains(&msg) {
            self.warnings.push(msg);
        }
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn finish(self) -> PassOutcome<T> {
        PassOutcome {
            updates: self.updates,
            warnings: self.warnings,
        }
    }
}
