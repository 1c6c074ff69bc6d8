use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{set_softmax_blocks, squashing_rows, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Activation applied after a layer. All kinds are permutation-equivariant on
/// `N×d` inputs: `relu` and `squashing` act per element (row), `softmax_set`
/// normalizes each feature column across the set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    SoftmaxSet,
    Squashing,
    None,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Relu,
        Activation::SoftmaxSet,
        Activation::Squashing,
        Activation::None,
    ];

    /// True when the output row of element `i` depends on row `i` only.
    pub fn is_elementwise(self) -> bool {
        !matches!(self, Activation::SoftmaxSet)
    }

    pub fn apply<'t, T: Scalar>(self, x: Var<'t, T>, set_size: usize) -> Result<Var<'t, T>> {
        match self {
            Activation::Relu => x.relu(),
            Activation::SoftmaxSet => x.set_softmax(set_size),
            Activation::Squashing => x.squashing(),
            Activation::None => Ok(x),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::SoftmaxSet => "softmax_set",
            Activation::Squashing => "squashing",
            Activation::None => "none",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "softmax_set" | "softmax" => Ok(Activation::SoftmaxSet),
            "squashing" => Ok(Activation::Squashing),
            "none" | "identity" => Ok(Activation::None),
            other => Err(Error::Config {
                key: "activation".into(),
                reason: format!("unknown activation `{other}`"),
            }),
        }
    }
}

/// Softmax over the set axis of one `N×d` set: every column sums to one.
pub fn set_softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, _) = x.expect_matrix("set_softmax")?;
    if n == 0 {
        return Err(Error::Precondition("set_softmax of an empty set".into()));
    }
    set_softmax_blocks(x, n)
}

/// Row-wise `v ↦ v‖v‖ / (1 + ‖v‖²)`; zero rows stay zero, output norms are below one.
pub fn squashing<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.expect_matrix("squashing")?;
    Ok(squashing_rows(x))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}
