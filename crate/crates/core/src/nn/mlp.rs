use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::activation::Activation;
use super::batchnorm::BatchNormLayer;
use super::params::{ParamId, ParamStore};
use super::pass::{Mode, Pass};

/// `MLP[d_1, …, d_n]`: input width `d_1`, output width `d_n`.
///
/// Each layer is linear → batch normalization (when enabled) → activation.
/// The last layer uses `final_activation` and only normalizes when
/// `final_batchnorm` is set; with `classifier_tail` it is a plain linear map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub final_activation: Activation,
    pub use_batchnorm: bool,
    pub final_batchnorm: bool,
    pub classifier_tail: bool,
}

impl MlpSpec {
    /// ReLU hiddens, no final activation, batch normalization on hidden layers.
    pub fn new(layer_dims: &[usize]) -> Self {
        Self {
            layer_dims: layer_dims.to_vec(),
            hidden_activation: Activation::Relu,
            final_activation: Activation::None,
            use_batchnorm: true,
            final_batchnorm: false,
            classifier_tail: false,
        }
    }

    pub fn with_final(mut self, act: Activation) -> Self {
        self.final_activation = act;
        self
    }

    pub fn with_hidden(mut self, act: Activation) -> Self {
        self.hidden_activation = act;
        self
    }

    pub fn with_batchnorm(mut self, on: bool) -> Self {
        self.use_batchnorm = on;
        self
    }

    pub fn with_final_batchnorm(mut self, on: bool) -> Self {
        self.final_batchnorm = on;
        self
    }

    /// Last layer becomes a plain linear map producing logits.
    pub fn classifier(mut self) -> Self {
        self.classifier_tail = true;
        self.final_activation = Activation::None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return Err(Error::Config {
                key: "mlp.layer_dims".into(),
                reason: format!("need at least two positive widths, got {:?}", self.layer_dims),
            });
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }

    pub fn depth(&self) -> usize {
        self.layer_dims.len() - 1
    }

    fn layer_has_bn(&self, k: usize) -> bool {
        let last = k + 1 == self.depth();
        self.use_batchnorm && (!last || (self.final_batchnorm && !self.classifier_tail))
    }

    fn layer_activation(&self, k: usize) -> Activation {
        if k + 1 < self.depth() {
            self.hidden_activation
        } else if self.classifier_tail {
            Activation::None
        } else {
            self.final_activation
        }
    }

    /// Trainable scalars per layer: `d_in·d_out + d_out`, plus `2·d_out` when normalized.
    pub fn layer_param_counts(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for k in 0..self.depth() {
            let (i, o) = (self.layer_dims[k], self.layer_dims[k + 1]);
            out.push((format!("{k}.linear"), i * o + o));
            if self.layer_has_bn(k) {
                out.push((format!("{k}.bn"), 2 * o));
            }
        }
        out
    }

    pub fn param_total(&self) -> usize {
        self.layer_param_counts().iter().map(|(_, c)| c).sum()
    }

    pub fn uses_set_activation(&self) -> bool {
        (0..self.depth()).any(|k| !self.layer_activation(k).is_elementwise())
    }
}

/// Affine map `x W + b` with `W` stored `d_in×d_out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Weights and bias drawn uniformly from `[−1/√d_in, 1/√d_in]`.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, d_in: usize, d_out: usize, rng: &mut RngState) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = store.add_param(format!("{prefix}.weight"), Tensor::uniform(&[d_in, d_out], -bound, bound, rng));
        let bias = store.add_param(format!("{prefix}.bias"), Tensor::uniform(&[d_out], -bound, bound, rng));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, pass: &Pass<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(pass.param(self.weight))?.add_row(pass.param(self.bias))
    }
}

#[derive(Clone, Debug)]
struct Layer {
    linear: Linear,
    bn: Option<BatchNormLayer>,
    activation: Activation,
}

/// Permutation-equivariant MLP applied row by row (set-wise only through `softmax_set`).
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new<T: Scalar>(spec: MlpSpec, store: &mut ParamStore<T>, prefix: &str, rng: &mut RngState) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.depth());
        for k in 0..spec.depth() {
            let (i, o) = (spec.layer_dims[k], spec.layer_dims[k + 1]);
            let linear = Linear::new(store, &format!("{prefix}.{k}"), i, o, rng);
            let bn = spec
                .layer_has_bn(k)
                .then(|| BatchNormLayer::new(store, &format!("{prefix}.{k}.bn"), o));
            layers.push(Layer {
                linear,
                bn,
                activation: spec.layer_activation(k),
            });
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width()
    }

    /// Forward over a `(B·set_size)×d_1` batch.
    pub fn forward<'t, T: Scalar>(&self, pass: &mut Pass<'t, '_, T>, x: Var<'t, T>, set_size: usize) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.spec.input_width() {
            return Err(Error::dim("mlp_forward", &shape, &[shape[0], self.spec.input_width()]));
        }
        let mut h = x;
        for layer in &self.layers {
            h = layer.linear.forward(pass, h)?;
            if let Some(bn) = &layer.bn {
                h = bn.forward(pass, h)?;
            }
            h = layer.activation.apply(h, set_size)?;
        }
        Ok(h)
    }

    /// Evaluates one `N×d_1` set without recording gradients or updating statistics.
    pub fn apply<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let mut pass = Pass::new(&tape, store, mode, false);
        let xv = pass.input(x.clone());
        Ok(self.forward(&mut pass, xv, x.rows())?.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = Tensor<f64>;

    #[test]
    fn single_identity_layer() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = RngState::new(0);
        let mlp = Mlp::new(MlpSpec::new(&[3, 3]), &mut store, "m", &mut rng).unwrap();
        *store.param_mut(ParamId(0)) = T::eye(3);
        *store.param_mut(ParamId(1)) = T::zeros(&[3]);
        let x = T::uniform(&[5, 3], -1.0, 1.0, &mut rng);
        assert_eq!(mlp.apply(&store, &x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn ablation_sizing_output_shape() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = RngState::new(0);
        let mlp = Mlp::new(MlpSpec::new(&[3, 32, 128, 32]), &mut store, "m", &mut rng).unwrap();
        let x = T::uniform(&[10, 3], -1.0, 1.0, &mut rng);
        assert_eq!(mlp.apply(&store, &x, Mode::Train).unwrap().shape(), &[10, 32]);
    }

    #[test]
    fn width_mismatch() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = RngState::new(0);
        let mlp = Mlp::new(MlpSpec::new(&[3, 4]), &mut store, "m", &mut rng).unwrap();
        assert!(matches!(
            mlp.apply(&store, &T::zeros(&[5, 2]), Mode::Eval),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn counts_follow_the_layer_formula() {
        let spec = MlpSpec::new(&[6, 32, 128, 32]);
        assert_eq!(spec.param_total(), 224 + 64 + 4224 + 256 + 4128);
        assert_eq!(spec.clone().with_final_batchnorm(true).param_total(), spec.param_total() + 64);
        assert_eq!(MlpSpec::new(&[3, 10]).classifier().param_total(), 40);
        let mut store = ParamStore::<f64>::new();
        Mlp::new(spec.clone(), &mut store, "m", &mut RngState::new(1)).unwrap();
        assert_eq!(store.scalar_count(), spec.param_total());
    }

    #[test]
    fn rejects_short_specs() {
        assert!(MlpSpec::new(&[3]).validate().is_err());
        assert!(MlpSpec::new(&[3, 0]).validate().is_err());
    }

    #[test]
    fn equivariant_under_permutation() {
        let mut rng = RngState::new(21);
        for act in Activation::ALL {
            let mut store = ParamStore::<f64>::new();
            let spec = MlpSpec::new(&[3, 8, 5]).with_final(act);
            let mlp = Mlp::new(spec, &mut store, "m", &mut rng).unwrap();
            store.randomize_buffers(&mut rng).unwrap();
            for _ in 0..50 {
                let x = T::uniform(&[9, 3], -1.0, 1.0, &mut rng);
                let p = rng.permutation(9);
                let lhs = mlp.apply(&store, &x.permute_rows(&p).unwrap(), Mode::Eval).unwrap();
                let rhs = mlp.apply(&store, &x, Mode::Eval).unwrap().permute_rows(&p).unwrap();
                assert!(lhs.max_abs_diff(&rhs) < 1e-12, "{act}");
            }
        }
    }
}
