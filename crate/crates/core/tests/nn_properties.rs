use nalgebra::DMatrix;
use pinset_core::linalg::numeric_rank;
use pinset_core::nn::{Activation, AggregationBlock, Mode, MlpSpec, ParamStore};
use pinset_core::{RngState, Tensor};

fn random_orthogonal(n: usize, rng: &mut RngState) -> Tensor {
    let m = DMatrix::from_fn(n, n, |_, _| rng.normal::<f64>());
    let q = m.qr().q();
    Tensor::matrix(n, n, (0..n * n).map(|k| q[(k / n, k % n)]).collect()).unwrap()
}

fn zero_biases(store: &mut ParamStore<f64>) {
    let ids: Vec<_> = store
        .params()
        .enumerate()
        .filter(|(_, (name, _))| name.ends_with(".bias"))
        .map(|(i, _)| pinset_core::nn::ParamId(i))
        .collect();
    for id in ids {
        let shape = store.param(id).shape().to_vec();
        *store.param_mut(id) = Tensor::zeros(&shape);
    }
}

fn linear_block(final_act: Activation, rng: &mut RngState) -> (ParamStore<f64>, AggregationBlock) {
    let mut store = ParamStore::new();
    let spec = MlpSpec::new(&[3, 6]).with_final(final_act);
    let block = AggregationBlock::new(spec.clone(), spec, 0.0, &mut store, "agg", rng).unwrap();
    zero_biases(&mut store);
    (store, block)
}

#[test]
fn linear_block_sees_only_the_gram_matrix() {
    let mut rng = RngState::new(100);
    let (store, block) = linear_block(Activation::None, &mut rng);
    for _ in 0..100 {
        let x1 = Tensor::uniform(&[10, 3], -1.0, 1.0, &mut rng);
        let x2 = random_orthogonal(10, &mut rng).matmul(&x1).unwrap();
        let a = block.aggregate(&store, &x1, Mode::Eval).unwrap();
        let b = block.aggregate(&store, &x2, Mode::Eval).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-10);
    }
}

#[test]
fn set_softmax_breaks_the_collapse() {
    let mut rng = RngState::new(101);
    let (store, block) = linear_block(Activation::SoftmaxSet, &mut rng);
    let mut separated = 0;
    for _ in 0..100 {
        let x1 = Tensor::uniform(&[10, 3], -1.0, 1.0, &mut rng);
        let x2 = random_orthogonal(10, &mut rng).matmul(&x1).unwrap();
        let a = block.aggregate(&store, &x1, Mode::Eval).unwrap();
        let b = block.aggregate(&store, &x2, Mode::Eval).unwrap();
        if a.max_abs_diff(&b) > 1e-3 {
            separated += 1;
        }
    }
    assert!(separated >= 90, "only {separated}/100 pairs separated");
}

#[test]
fn elementwise_blocks_are_constrained_deep_sets() {
    let mut rng = RngState::new(102);
    for a1 in [Activation::Relu, Activation::Squashing, Activation::None] {
        for a2 in [Activation::Relu, Activation::Squashing, Activation::None] {
            let mut store = ParamStore::new();
            let s1 = MlpSpec::new(&[3, 8, 5]).with_final(a1);
            let s2 = MlpSpec::new(&[3, 8, 4]).with_final(a2);
            let block = AggregationBlock::new(s1, s2, 0.1, &mut store, "agg", &mut rng).unwrap();
            store.randomize_buffers(&mut rng).unwrap();
            let x = Tensor::uniform(&[16, 3], -1.0, 1.0, &mut rng);
            let mut total = Tensor::zeros(&[5, 4]);
            for i in 0..16 {
                let h = block.per_element_contribution(&store, x.row(i)).unwrap();
                assert!(numeric_rank(&h, 1e-10).unwrap() <= 1);
                total = total.add(&h).unwrap();
            }
            let agg = block.aggregate(&store, &x, Mode::Eval).unwrap().reshape(&[5, 4]).unwrap();
            assert!(agg.max_abs_diff(&total) < 1e-10, "{a1}/{a2}");
        }
    }
}
