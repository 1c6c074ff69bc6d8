use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::activation::Activation;
use super::mlp::{Mlp, MlpSpec};
use super::params::ParamStore;
use super::pass::{Mode, Pass};

fn check_dropout(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config {
            key: "dropout".into(),
            reason: format!("ratio must lie in [0, 1), got {ratio}"),
        });
    }
    Ok(())
}

fn apply_dropout<'t, T: Scalar>(pass: &mut Pass<'t, '_, T>, out: Var<'t, T>, ratio: f64) -> Result<Var<'t, T>> {
    match pass.dropout_mask(&out.shape(), ratio) {
        Some(mask) => out.mul_const(mask),
        None => Ok(out),
    }
}

/// Dual-MLP aggregation: `Flatten[MLP_1(X)ᵀ MLP_2(X)]`, flattened row-major over `(s, t)`.
#[derive(Clone, Debug)]
pub struct AggregationBlock {
    pub mlp1: Mlp,
    pub mlp2: Mlp,
    pub dropout: f64,
}

impl AggregationBlock {
    pub fn new<T: Scalar>(
        spec1: MlpSpec,
        spec2: MlpSpec,
        dropout: f64,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut RngState,
    ) -> Result<Self> {
        check_dropout(dropout)?;
        if spec1.layer_dims.first() != spec2.layer_dims.first() {
            return Err(Error::dim("aggregate", &spec1.layer_dims, &spec2.layer_dims));
        }
        let mlp1 = Mlp::new(spec1, store, &format!("{prefix}.mlp1"), rng)?;
        let mlp2 = Mlp::new(spec2, store, &format!("{prefix}.mlp2"), rng)?;
        Ok(Self { mlp1, mlp2, dropout })
    }

    pub fn input_width(&self) -> usize {
        self.mlp1.spec().input_width()
    }

    /// `(s, t)`.
    pub fn feature_shape(&self) -> (usize, usize) {
        (self.mlp1.output_width(), self.mlp2.output_width())
    }

    pub fn output_width(&self) -> usize {
        let (s, t) = self.feature_shape();
        s * t
    }

    /// Maps a `(B·N)×p` batch to `B×(s·t)`.
    pub fn forward<'t, T: Scalar>(&self, pass: &mut Pass<'t, '_, T>, x: Var<'t, T>, set_size: usize) -> Result<Var<'t, T>> {
        let (s, t) = self.feature_shape();
        if set_size < s.min(t) {
            pass.warn(format!(
                "set size {set_size} is below min(s, t) = {}; the block cannot express every invariant function",
                s.min(t)
            ));
        }
        let g1 = self.mlp1.forward(pass, x, set_size)?;
        let g2 = self.mlp2.forward(pass, x, set_size)?;
        let out = Var::sum_product(&[g1, g2], set_size)?;
        apply_dropout(pass, out, self.dropout)
    }

    /// Aggregates one `N×p` set into a vector of length `s·t` (no dropout).
    pub fn aggregate<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let mut pass = Pass::new(&tape, store, mode, false);
        let xv = pass.input(x.clone());
        let out = self.forward(&mut pass, xv, x.rows())?.value();
        out.reshape(&[self.output_width()])
    }

    /// `g1(x_i)ᵀ g2(x_i)` for a single element, evaluated in eval mode.
    ///
    /// Only defined when neither MLP mixes set elements.
    pub fn per_element_contribution<T: Scalar>(&self, store: &ParamStore<T>, x_i: &[T]) -> Result<Tensor<T>> {
        if self.mlp1.spec().uses_set_activation() || self.mlp2.spec().uses_set_activation() {
            return Err(Error::Contract(
                "per-element contributions need element-wise activations; softmax_set couples the set".into(),
            ));
        }
        let row = Tensor::new(vec![1, x_i.len()], x_i.to_vec())?;
        let g1 = self.mlp1.apply(store, &row, Mode::Eval)?;
        let g2 = self.mlp2.apply(store, &row, Mode::Eval)?;
        g1.transpose()?.matmul(&g2)
    }
}

/// Order-`n` generalization: `f(X)[a_1,…,a_n] = Σ_i Π_j g_j(X)[i, a_j]`.
#[derive(Clone, Debug)]
pub struct OrderNAggregation {
    pub mlps: Vec<Mlp>,
    pub dropout: f64,
}

impl OrderNAggregation {
    pub fn new<T: Scalar>(
        specs: Vec<MlpSpec>,
        dropout: f64,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut RngState,
    ) -> Result<Self> {
        check_dropout(dropout)?;
        if specs.is_empty() {
            return Err(Error::Config {
                key: "aggregation.order".into(),
                reason: "need at least one MLP".into(),
            });
        }
        let width = specs[0].layer_dims.first().copied();
        if let Some(bad) = specs.iter().find(|s| s.layer_dims.first().copied() != width) {
            return Err(Error::dim("aggregate_order_n", &specs[0].layer_dims, &bad.layer_dims));
        }
        let softmaxes = specs
            .iter()
            .filter(|s| !s.classifier_tail && s.final_activation == Activation::SoftmaxSet)
            .count();
        if specs.len() > 2 && softmaxes > 1 {
            return Err(Error::Config {
                key: "aggregation.final_activation".into(),
                reason: format!("order {} allows at most one softmax_set final activation, got {softmaxes}", specs.len()),
            });
        }
        let mut mlps = Vec::with_capacity(specs.len());
        for (j, spec) in specs.into_iter().enumerate() {
            mlps.push(Mlp::new(spec, store, &format!("{prefix}.mlp{}", j + 1), rng)?);
        }
        Ok(Self { mlps, dropout })
    }

    /// Shares the parameters of an order-2 block.
    pub fn from_pair(block: &AggregationBlock) -> Self {
        Self {
            mlps: vec![block.mlp1.clone(), block.mlp2.clone()],
            dropout: block.dropout,
        }
    }

    pub fn order(&self) -> usize {
        self.mlps.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.mlps.iter().map(Mlp::output_width).collect()
    }

    pub fn output_width(&self) -> usize {
        self.dims().iter().product()
    }

    /// Maps a `(B·N)×p` batch to `B×(c_1⋯c_n)`.
    pub fn forward<'t, T: Scalar>(&self, pass: &mut Pass<'t, '_, T>, x: Var<'t, T>, set_size: usize) -> Result<Var<'t, T>> {
        let mut gs = Vec::with_capacity(self.mlps.len());
        for mlp in &self.mlps {
            gs.push(mlp.forward(pass, x, set_size)?);
        }
        let out = Var::sum_product(&gs, set_size)?;
        apply_dropout(pass, out, self.dropout)
    }

    /// Aggregates one `N×p` set into a `c_1×…×c_n` tensor (no dropout).
    pub fn aggregate<T: Scalar>(&self, store: &ParamStore<T>, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let mut pass = Pass::new(&tape, store, mode, false);
        let xv = pass.input(x.clone());
        let out = self.forward(&mut pass, xv, x.rows())?.value();
        out.reshape(&self.dims())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::numeric_rank;

    type T = Tensor<f64>;

    fn block(
        store: &mut ParamStore<f64>,
        rng: &mut RngState,
        dims: &[usize],
        a1: Activation,
        a2: Activation,
    ) -> AggregationBlock {
        let s1 = MlpSpec::new(dims).with_final(a1);
        let s2 = MlpSpec::new(dims).with_final(a2);
        AggregationBlock::new(s1, s2, 0.1, store, "agg", rng).unwrap()
    }

    #[test]
    fn single_element_is_rank_one() {
        let mut rng = RngState::new(3);
        let mut store = ParamStore::new();
        let b = block(&mut store, &mut rng, &[3, 8, 4], Activation::Relu, Activation::None);
        store.randomize_buffers(&mut rng).unwrap();
        let x = T::uniform(&[1, 3], -1.0, 1.0, &mut rng);
        let out = b.aggregate(&store, &x, Mode::Eval).unwrap().reshape(&[4, 4]).unwrap();
        assert!(numeric_rank(&out, 1e-10).unwrap() <= 1);
    }

    #[test]
    fn permutation_invariance_over_activation_pairs() {
        let mut rng = RngState::new(11);
        for a1 in Activation::ALL {
            for a2 in Activation::ALL {
                let mut store = ParamStore::new();
                let b = block(&mut store, &mut rng, &[3, 6, 5], a1, a2);
                store.randomize_buffers(&mut rng).unwrap();
                for _ in 0..100 {
                    let x = T::uniform(&[12, 3], -1.0, 1.0, &mut rng);
                    let p = rng.permutation(12);
                    let lhs = b.aggregate(&store, &x.permute_rows(&p).unwrap(), Mode::Eval).unwrap();
                    let rhs = b.aggregate(&store, &x, Mode::Eval).unwrap();
                    assert!(lhs.max_abs_diff(&rhs) < 1e-12, "{a1}/{a2}");
                }
            }
        }
    }

    #[test]
    fn width_mismatch_is_reported() {
        let mut rng = RngState::new(0);
        let mut store = ParamStore::new();
        let b = block(&mut store, &mut rng, &[3, 4], Activation::None, Activation::None);
        assert!(matches!(
            b.aggregate(&store, &T::zeros(&[5, 2]), Mode::Eval),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn small_sets_warn_without_failing() {
        let mut rng = RngState::new(0);
        let mut store = ParamStore::new();
        let b = block(&mut store, &mut rng, &[3, 4], Activation::None, Activation::None);
        let tape = Tape::new();
        let mut pass = Pass::new(&tape, &store, Mode::Eval, false);
        let x = pass.input(T::uniform(&[2, 3], -1.0, 1.0, &mut rng));
        b.forward(&mut pass, x, 2).unwrap();
        assert_eq!(pass.warnings().len(), 1);
    }

    #[test]
    fn dropout_only_in_train_mode_with_stream() {
        let mut rng = RngState::new(5);
        let mut store = ParamStore::new();
        let b = block(&mut store, &mut rng, &[3, 4], Activation::None, Activation::None);
        let x = T::uniform(&[6, 3], -1.0, 1.0, &mut rng);
        let plain = b.aggregate(&store, &x, Mode::Train).unwrap();
        let tape = Tape::new();
        let mut pass = Pass::new(&tape, &store, Mode::Train, false).with_dropout_rng(RngState::new(9));
        let xv = pass.input(x.clone());
        let dropped = b.forward(&mut pass, xv, 6).unwrap().value();
        let mut zeroed = 0;
        for (d, p) in dropped.data().iter().zip(plain.data()) {
            if *d == 0.0 {
                zeroed += 1;
            } else {
                assert!((d - p / 0.9).abs() < 1e-12);
            }
        }
        assert!(zeroed < 16);
    }

    #[test]
    fn order_one_is_sum_pooling() {
        let mut rng = RngState::new(2);
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(&[3, 3]);
        let agg = OrderNAggregation::new(vec![spec], 0.0, &mut store, "o", &mut rng).unwrap();
        *store.param_mut(crate::nn::ParamId(0)) = T::eye(3);
        *store.param_mut(crate::nn::ParamId(1)) = T::zeros(&[3]);
        let x = T::uniform(&[7, 3], -1.0, 1.0, &mut rng);
        let out = agg.aggregate(&store, &x, Mode::Eval).unwrap();
        for j in 0..3 {
            let col: f64 = x.column(j).iter().sum();
            assert!((out.data()[j] - col).abs() < 1e-14);
        }
    }

    #[test]
    fn order_two_matches_pair_block_exactly() {
        let mut rng = RngState::new(8);
        let mut store = ParamStore::new();
        let b = block(&mut store, &mut rng, &[3, 5, 4], Activation::SoftmaxSet, Activation::Squashing);
        let on = OrderNAggregation::from_pair(&b);
        let x = T::uniform(&[9, 3], -1.0, 1.0, &mut rng);
        let lhs = on.aggregate(&store, &x, Mode::Train).unwrap();
        let rhs = b.aggregate(&store, &x, Mode::Train).unwrap();
        assert_eq!(lhs.data(), rhs.data());
        assert_eq!(lhs.shape(), &[4, 4]);
    }

    #[test]
    fn order_three_matches_nested_loops() {
        let mut rng = RngState::new(13);
        let mut store = ParamStore::new();
        let specs = vec![
            MlpSpec::new(&[3, 4, 2]).with_final(Activation::SoftmaxSet),
            MlpSpec::new(&[3, 4, 2]).with_final(Activation::Relu),
            MlpSpec::new(&[3, 4, 2]),
        ];
        let agg = OrderNAggregation::new(specs, 0.0, &mut store, "o", &mut rng).unwrap();
        store.randomize_buffers(&mut rng).unwrap();
        let x = T::uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let out = agg.aggregate(&store, &x, Mode::Eval).unwrap();
        let g: Vec<T> = agg.mlps.iter().map(|m| m.apply(&store, &x, Mode::Eval).unwrap()).collect();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let mut want = 0.0;
                    for i in 0..4 {
                        want += g[0].at(i, a) * g[1].at(i, b) * g[2].at(i, c);
                    }
                    assert!((out.data()[a * 4 + b * 2 + c] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_several_softmaxes_beyond_order_two() {
        let mut store = ParamStore::<f64>::new();
        let s = MlpSpec::new(&[3, 2]).with_final(Activation::SoftmaxSet);
        let r = OrderNAggregation::new(vec![s.clone(), s.clone(), s], 0.0, &mut store, "o", &mut RngState::new(0));
        assert!(matches!(r, Err(Error::Config { .. })));
    }

    #[test]
    fn contributions_refuse_set_activations() {
        let mut rng = RngState::new(0);
        let mut store = ParamStore::new();
        let b = block(&mut store, &mut rng, &[3, 4], Activation::SoftmaxSet, Activation::None);
        assert!(matches!(
            b.per_element_contribution(&store, &[0.1, 0.2, 0.3]),
            Err(Error::Contract(_))
        ));
    }
}
