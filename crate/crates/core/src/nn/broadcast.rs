use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::params::{ParamId, ParamStore};
use super::pass::{Mode, Pass};

/// Combines per-element features with a set-level vector:
/// row `i` becomes `W_x·x_i + W_y·y + b`. The bilinear term is fixed at zero.
#[derive(Clone, Debug)]
pub struct BroadcastBlock {
    pub w_x: ParamId,
    pub w_y: ParamId,
    pub bias: ParamId,
    pub d_x: usize,
    pub d_y: usize,
    pub d_z: usize,
}

impl BroadcastBlock {
    /// Entries uniform in `±1/√(d_x + d_y)`.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, d_x: usize, d_y: usize, d_z: usize, rng: &mut RngState) -> Result<Self> {
        if d_x == 0 || d_y == 0 || d_z == 0 {
            return Err(Error::Config {
                key: format!("{prefix}.widths"),
                reason: format!("widths must be positive, got ({d_x}, {d_y}, {d_z})"),
            });
        }
        let bound = 1.0 / ((d_x + d_y) as f64).sqrt();
        Ok(Self {
            w_x: store.add_param(format!("{prefix}.w_x"), Tensor::uniform(&[d_z, d_x], -bound, bound, rng)),
            w_y: store.add_param(format!("{prefix}.w_y"), Tensor::uniform(&[d_z, d_y], -bound, bound, rng)),
            bias: store.add_param(format!("{prefix}.bias"), Tensor::uniform(&[d_z], -bound, bound, rng)),
            d_x,
            d_y,
            d_z,
        })
    }

    pub fn param_total(&self) -> usize {
        self.d_z * (self.d_x + self.d_y + 1)
    }

    /// `x` is `(B·N)×d_x`, `y` is `B×d_y`; returns `(B·N)×d_z`.
    pub fn forward<'t, T: Scalar>(&self, pass: &Pass<'t, '_, T>, x: Var<'t, T>, y: Var<'t, T>, set_size: usize) -> Result<Var<'t, T>> {
        let (xs, ys) = (x.shape(), y.shape());
        if xs.len() != 2 || xs[1] != self.d_x {
            return Err(Error::dim("broadcast", &xs, &[self.d_z, self.d_x]));
        }
        if ys.len() != 2 || ys[1] != self.d_y || ys[0] * set_size != xs[0] {
            return Err(Error::dim("broadcast", &ys, &[xs[0] / set_size.max(1), self.d_y]));
        }
        let local = x.matmul(pass.param(self.w_x).transpose()?)?;
        let global = y.matmul(pass.param(self.w_y).transpose()?)?.repeat_rows(set_size)?;
        local.add(global)?.add_row(pass.param(self.bias))
    }

    /// Single set: `x` is `N×d_x`, `y` has length `d_y`.
    pub fn broadcast<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let pass = Pass::new(&tape, store, Mode::Eval, false);
        let xv = pass.input(x.clone());
        let yv = pass.input(y.reshape(&[1, y.numel()])?);
        Ok(self.forward(&pass, xv, yv, x.rows())?.value())
    }
}
