//! Seeded property suites shared by the `verify` command and the acceptance
//! target. Every trial draws from its own stream derived from the master seed,
//! so results do not depend on the thread count.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::decomp::cp::{relative_error, sufficiency_bound};
use crate::decomp::stability::smallest_singular_value;
use crate::decomp::{cp_decompose, mdd_solve, perturb_to_full_rank, rank_stability_trial, reconstruct_cp, MddSolution};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_difference_gradient, max_relative_error};
use crate::linalg::{numeric_rank, DEFAULT_RANK_TOL};
use crate::models::{build_model, Model, ModelConfig};
use crate::nn::{set_softmax, squashing, Activation, AggregationBlock, BroadcastBlock, Mlp, MlpSpec, Mode, ParamId, ParamStore, Pass};
use crate::rng::RngState;
use crate::trainer::batch_gradients;
use crate::{Tape, Tensor};

pub const SUITES: [&str; 7] = ["invariance", "mdd", "cp", "rankstab", "gradcheck", "collapse", "deepsets"];

pub const INVARIANCE_TOL: f64 = 1e-12;
pub const MDD_TOL: f64 = 1e-8;
pub const CP_TOL: f64 = 1e-6;
pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Denominator floor of the relative gradient error. Central differences of
/// a loss near 2.3 carry about `ε·L/h ≈ 1e-10` of roundoff, which is all that
/// remains for exactly-zero gradients (biases feeding batch normalization);
/// the floor keeps that noise an order of magnitude below the tolerance.
pub const GRADCHECK_FLOOR: f64 = 1e-5;
pub const COLLAPSE_TOL: f64 = 1e-10;
pub const COLLAPSE_SEPARATION: f64 = 1e-3;
pub const DEEPSETS_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Negative control: shifts the kernel basis before sampling MDD solutions.
    pub corrupt_kernel: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub trials: usize,
    pub passed: usize,
    pub min_trials: usize,
    /// Largest observed error (or smallest margin, see `detail`).
    pub worst: f64,
    pub tolerance: f64,
    pub ok: bool,
    pub detail: String,
}

impl PropertyResult {
    fn new(name: &str, outcomes: &[(bool, f64)], min_trials: usize, tolerance: f64, detail: impl Into<String>) -> Self {
        let passed = outcomes.iter().filter(|(ok, _)| *ok).count();
        let worst = outcomes.iter().map(|(_, w)| *w).fold(0.0, f64::max);
        Self {
            name: name.to_string(),
            trials: outcomes.len(),
            passed,
            min_trials,
            worst,
            tolerance,
            ok: passed == outcomes.len() && outcomes.len() >= min_trials,
            detail: detail.into(),
        }
    }

    /// Passes when at least `required` of the trials pass.
    fn at_least(mut self, required: usize) -> Self {
        self.ok = self.passed >= required && self.trials >= self.min_trials;
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub ok: bool,
    pub seconds: f64,
    pub properties: Vec<PropertyResult>,
}

impl SuiteReport {
    pub fn lines(&self) -> Vec<String> {
        self.properties
            .iter()
            .map(|p| {
                format!(
                    "[{}] {}/{}: {} passed {}/{} (worst {:.3e}, tol {:.0e}){}",
                    if p.ok { "PASS" } else { "FAIL" },
                    self.suite,
                    p.name,
                    p.name,
                    p.passed,
                    p.trials,
                    p.worst,
                    p.tolerance,
                    if p.detail.is_empty() { String::new() } else { format!(" {}", p.detail) }
                )
            })
            .collect()
    }
}

fn trial_rng(seed: u64, suite: u64, k: usize) -> RngState {
    RngState::new(seed).derive(suite).derive(k as u64)
}

/// Expands `all` and rejects unknown names.
pub fn suite_names(name: &str) -> Result<Vec<&'static str>> {
    if name == "all" {
        return Ok(SUITES.to_vec());
    }
    SUITES
        .iter()
        .find(|s| **s == name)
        .map(|s| vec![*s])
        .ok_or_else(|| Error::Config {
            key: "suite".into(),
            reason: format!("unknown suite `{name}`; expected all or one of {}", SUITES.join(", ")),
        })
}

pub fn run_suite(name: &str, opts: &VerifyOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let properties = match name {
        "invariance" => invariance(opts.seed)?,
        "mdd" => mdd(opts.seed, opts.corrupt_kernel)?,
        "cp" => cp(opts.seed)?,
        "rankstab" => rankstab(opts.seed)?,
        "gradcheck" => gradcheck(opts.seed)?,
        "collapse" => collapse(opts.seed)?,
        "deepsets" => deepsets(opts.seed)?,
        other => return Err(suite_names(other).unwrap_err()),
    };
    Ok(SuiteReport {
        suite: name.to_string(),
        seed: opts.seed,
        ok: properties.iter().all(|p| p.ok),
        seconds: start.elapsed().as_secs_f64(),
        properties,
    })
}

/// Runs `name` (or every suite for `all`) on a pool of `threads` workers.
pub fn run(name: &str, opts: &VerifyOptions, threads: Option<usize>) -> Result<Vec<SuiteReport>> {
    let names = suite_names(name)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
    pool.install(|| names.iter().map(|n| run_suite(n, opts)).collect())
}

fn random_block(a1: Activation, a2: Activation, rng: &mut RngState) -> Result<(ParamStore<f64>, AggregationBlock)> {
    let mut store = ParamStore::new();
    let block = AggregationBlock::new(
        MlpSpec::new(&[3, 8, 6]).with_final(a1),
        MlpSpec::new(&[3, 8, 5]).with_final(a2),
        0.1,
        &mut store,
        "agg",
        rng,
    )?;
    store.randomize_buffers(rng)?;
    Ok((store, block))
}

fn invariance(seed: u64) -> Result<Vec<PropertyResult>> {
    const PAIRS: usize = 100;
    let mut out = Vec::new();
    for (k, a1) in Activation::ALL.into_iter().enumerate() {
        for (j, a2) in Activation::ALL.into_iter().enumerate() {
            let (store, block) = random_block(a1, a2, &mut trial_rng(seed, 1, k * 4 + j))?;
            let outcomes = (0..PAIRS)
                .into_par_iter()
                .map(|t| -> Result<(bool, f64)> {
                    let mut rng = trial_rng(seed, 2 + (k * 4 + j) as u64, t);
                    let x = Tensor::uniform(&[16, 3], -1.0, 1.0, &mut rng);
                    let p = rng.permutation(16);
                    let a = block.aggregate(&store, &x, Mode::Eval)?;
                    let b = block.aggregate(&store, &x.permute_rows(&p)?, Mode::Eval)?;
                    let d = a.max_abs_diff(&b);
                    Ok((d <= INVARIANCE_TOL, d))
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(PropertyResult::new(&format!("aggregate[{a1},{a2}]"), &outcomes, PAIRS, INVARIANCE_TOL, ""));
        }
    }
    for (k, cfg) in [ModelConfig::tiny(), ModelConfig::dumlp_pin_l()].into_iter().enumerate() {
        let mut rng = trial_rng(seed, 20, k);
        let mut model: Model<f64> = build_model(&cfg, &mut rng)?;
        model.store_mut().randomize_buffers(&mut rng)?;
        let outcomes = (0..PAIRS)
            .into_par_iter()
            .map(|t| -> Result<(bool, f64)> {
                let mut rng = trial_rng(seed, 21 + k as u64, t);
                let x = Tensor::uniform(&[32, 3], -1.0, 1.0, &mut rng);
                let p = rng.permutation(32);
                let a = model.logits(&x, 32, Mode::Eval)?;
                let b = model.logits(&x.permute_rows(&p)?, 32, Mode::Eval)?;
                let d = a.max_abs_diff(&b);
                Ok((d <= INVARIANCE_TOL, d))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(PropertyResult::new(&format!("logits[{}]", cfg.name), &outcomes, PAIRS, INVARIANCE_TOL, ""));
    }

    let mut rng = trial_rng(seed, 30, 0);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(MlpSpec::new(&[3, 8, 5]).with_final(Activation::SoftmaxSet), &mut store, "mlp", &mut rng)?;
    let bc = BroadcastBlock::new(&mut store, "bc", 3, 4, 5, &mut rng)?;
    store.randomize_buffers(&mut rng)?;
    type Op<'a> = Box<dyn Fn(&Tensor, &mut RngState) -> Result<Tensor> + Sync + 'a>;
    let ops: Vec<(&str, Op)> = vec![
        ("mlp_forward", Box::new(|x, _| mlp.apply(&store, x, Mode::Eval))),
        ("set_softmax", Box::new(|x, _| set_softmax(x))),
        ("squashing", Box::new(|x, _| squashing(x))),
        (
            "broadcast",
            Box::new(|x, rng| {
                let y = Tensor::uniform(&[4], -1.0, 1.0, rng);
                bc.broadcast(&store, x, &y)
            }),
        ),
    ];
    for (k, (name, op)) in ops.iter().enumerate() {
        let outcomes = (0..PAIRS)
            .into_par_iter()
            .map(|t| -> Result<(bool, f64)> {
                let mut rng = trial_rng(seed, 31 + k as u64, t);
                let x = Tensor::uniform(&[12, 3], -2.0, 2.0, &mut rng);
                let p = rng.permutation(12);
                let mut r1 = rng.derive(1);
                let mut r2 = rng.derive(1);
                let lhs = op(&x.permute_rows(&p)?, &mut r1)?;
                let rhs = op(&x, &mut r2)?.permute_rows(&p)?;
                let d = lhs.max_abs_diff(&rhs);
                Ok((d <= INVARIANCE_TOL, d))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(PropertyResult::new(&format!("equivariance[{name}]"), &outcomes, PAIRS, INVARIANCE_TOL, ""));
    }
    Ok(out)
}

fn mdd(seed: u64, corrupt: bool) -> Result<Vec<PropertyResult>> {
    const INSTANCES: usize = 200;
    let results = (0..INSTANCES)
        .into_par_iter()
        .map(|k| -> Result<((bool, f64), (bool, f64))> {
            let mut rng = trial_rng(seed, 40, k);
            let m = 1 + rng.index(12);
            let n = m + rng.index(13 - m);
            let l = m + rng.index(13 - m);
            let b = Tensor::uniform(&[m, l], -1.0, 1.0, &mut rng);
            let a = Tensor::uniform(&[m, n], -1.0, 1.0, &mut rng);
            let mut sol = mdd_solve(&b, &a)?;
            let kernel_ok = sol.kernel_basis.cols() == l - m;
            if corrupt && sol.kernel_basis.numel() > 0 {
                sol.kernel_basis = sol.kernel_basis.map(|v| v + 1e-3);
            }
            let mut worst = 0.0f64;
            for _ in 0..10 {
                let lambda = Tensor::uniform(&sol.lambda_shape(), -1.0, 1.0, &mut rng);
                let c = sol.sample(&lambda)?;
                worst = worst.max(MddSolution::residual(&b, &c, &a)?);
            }
            let dim_gap = (sol.kernel_basis.cols() as f64 - (l - m) as f64).abs();
            Ok(((worst < MDD_TOL, worst), (kernel_ok, dim_gap)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (residuals, kernels): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let worst = residuals.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(vec![
        PropertyResult::new(
            "residual",
            &residuals,
            INSTANCES,
            MDD_TOL,
            format!("max residual {worst:.3e} over 10 Λ per instance"),
        ),
        PropertyResult::new("kernel_dimension", &kernels, INSTANCES, 0.5, "columns equal l − m"),
    ])
}

/// Every dims tuple with product ≤ `max_product`, extents ≥ 1 and at most one unit extent.
pub fn cp_dims_tuples(max_product: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, prod: usize, units: usize, max: usize, out: &mut Vec<Vec<usize>>) {
        if !prefix.is_empty() {
            out.push(prefix.clone());
        }
        for c in 1..=max / prod {
            if c == 1 && units == 1 {
                continue;
            }
            prefix.push(c);
            go(prefix, prod * c, units + usize::from(c == 1), max, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), 1, 0, max_product, &mut out);
    out
}

fn cp(seed: u64) -> Result<Vec<PropertyResult>> {
    let tuples = cp_dims_tuples(64);
    let results = tuples
        .par_iter()
        .enumerate()
        .map(|(k, dims)| -> Result<((bool, f64), Option<(bool, f64)>)> {
            let mut rng = trial_rng(seed, 50, k);
            let t = Tensor::uniform(dims, -1.0, 1.0, &mut rng);
            let n = sufficiency_bound(dims);
            let f = cp_decompose(&t, n)?;
            let err = relative_error(&reconstruct_cp(&f)?, &t)?;
            let reject = (n > 1).then(|| {
                let ok = matches!(cp_decompose(&t, n - 1), Err(Error::Cardinality { .. }));
                (ok, if ok { 0.0 } else { 1.0 })
            });
            Ok(((err < CP_TOL, err), reject))
        })
        .collect::<Result<Vec<_>>>()?;
    let round_trip: Vec<_> = results.iter().map(|r| r.0).collect();
    let rejections: Vec<_> = results.iter().filter_map(|r| r.1).collect();
    Ok(vec![
        PropertyResult::new(
            "round_trip_at_bound",
            &round_trip,
            tuples.len(),
            CP_TOL,
            format!("{} dims tuples with product ≤ 64", tuples.len()),
        ),
        PropertyResult::new("rejected_below_bound", &rejections, rejections.len(), 0.5, "cardinality error at N = bound − 1"),
    ])
}

/// `N×s` matrix of rank `< s` (`N, s ≤ 16`, `s ≥ 1`).
pub fn rank_deficient(rng: &mut RngState) -> Tensor {
    let s = 1 + rng.index(16);
    let n = s + rng.index(17 - s);
    let r = rng.index(s);
    let u = Tensor::uniform(&[n, r], -1.0, 1.0, rng);
    let v = Tensor::uniform(&[r, s], -1.0, 1.0, rng);
    u.matmul(&v).expect("inner widths agree")
}

fn rankstab(seed: u64) -> Result<Vec<PropertyResult>> {
    const TRIALS: usize = 100;
    const EPS: f64 = 1e-3;
    let probes = (0..TRIALS)
        .into_par_iter()
        .map(|k| -> Result<(bool, f64)> {
            let mut rng = trial_rng(seed, 60, k);
            let y = rank_deficient(&mut rng);
            let s = y.cols();
            let deficient = numeric_rank(&y, DEFAULT_RANK_TOL)? < s;
            match perturb_to_full_rank(&y, EPS) {
                Ok(p) => {
                    let norm = p.delta.frobenius_norm();
                    Ok((deficient && p.achieved_rank == s && norm < EPS, norm))
                }
                Err(_) => Ok((false, f64::INFINITY)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let stable = (0..TRIALS)
        .into_par_iter()
        .map(|k| -> Result<(bool, f64)> {
            let mut rng = trial_rng(seed, 61, k);
            let s = 1 + rng.index(8);
            let n = s + rng.index(9);
            let y = Tensor::uniform(&[n, s], -1.0, 1.0, &mut rng);
            let smin = smallest_singular_value(&y)?;
            let eps = 0.99 * smin / 2.0;
            let frac = rank_stability_trial(&y, eps, 20, &mut rng)?;
            Ok((frac == 1.0, 1.0 - frac))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(vec![
        PropertyResult::new("perturb_to_full_rank", &probes, TRIALS, EPS, "worst = largest ‖Δ‖_F"),
        PropertyResult::new("stable_below_half_sigma_min", &stable, TRIALS, 0.0, "worst = 1 − kept fraction"),
    ])
}

fn train_loss(model: &Model<f64>, x: &Tensor, labels: &[usize], set_size: usize) -> f64 {
    let tape = Tape::new();
    let mut pass = Pass::new(&tape, model.store(), Mode::Train, false);
    let xv = pass.input(x.clone());
    model
        .forward(&mut pass, xv, set_size)
        .and_then(|l| l.cross_entropy(labels))
        .map(|l| l.value().data()[0])
        .unwrap_or(f64::NAN)
}

/// Checks every parameter of the `tiny` configuration against central
/// differences on `batches` seeded batches.
pub fn gradcheck_model(seed: u64, batches: usize) -> Result<Vec<(bool, f64)>> {
    let cfg = ModelConfig::tiny();
    (0..batches)
        .into_par_iter()
        .map(|k| -> Result<(bool, f64)> {
            let mut rng = trial_rng(seed, 70, k);
            let model: Model<f64> = build_model(&cfg, &mut rng)?;
            let (b, n) = (4, 6);
            let sets: Vec<Tensor> = (0..b).map(|_| Tensor::uniform(&[n, 3], -1.0, 1.0, &mut rng)).collect();
            let labels: Vec<usize> = (0..b).map(|_| rng.index(cfg.class_count)).collect();
            let batch = crate::data::SetBatch::new(&sets, labels.clone())?;
            let x = batch.stacked();
            let analytic = batch_gradients(&model, &batch, None)?;
            let mut worst = 0.0f64;
            for (id, grad) in analytic.grads.iter().enumerate() {
                let value = model.store().param(ParamId(id)).clone();
                let numeric = finite_difference_gradient(
                    |p| {
                        let mut m = model.clone();
                        *m.store_mut().param_mut(ParamId(id)) = p.clone();
                        train_loss(&m, &x, &labels, n)
                    },
                    &value,
                    GRADCHECK_STEP,
                );
                worst = worst.max(max_relative_error(grad, &numeric, GRADCHECK_FLOOR));
            }
            Ok((worst < GRADCHECK_TOL, worst))
        })
        .collect()
}

fn gradcheck(seed: u64) -> Result<Vec<PropertyResult>> {
    let outcomes = gradcheck_model(seed, 10)?;
    let params = crate::models::param_count(&ModelConfig::tiny())?.total;
    Ok(vec![PropertyResult::new(
        "model_parameters",
        &outcomes,
        10,
        GRADCHECK_TOL,
        format!("{params} parameters, h = {GRADCHECK_STEP:e}"),
    )])
}

fn random_orthogonal(n: usize, rng: &mut RngState) -> Tensor {
    // Modified Gram-Schmidt on a Gaussian matrix.
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for c in &cols {
            let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    Tensor::matrix(n, n, (0..n * n).map(|k| cols[k % n][k / n]).collect()).expect("square")
}

fn zero_biases(store: &mut ParamStore<f64>) {
    let ids: Vec<usize> = store
        .params()
        .enumerate()
        .filter(|(_, (name, _))| name.ends_with(".bias"))
        .map(|(i, _)| i)
        .collect();
    for i in ids {
        let shape = store.param(ParamId(i)).shape().to_vec();
        *store.param_mut(ParamId(i)) = Tensor::zeros(&shape);
    }
}

fn collapse(seed: u64) -> Result<Vec<PropertyResult>> {
    const PAIRS: usize = 50;
    let build = |act: Activation| -> Result<(ParamStore<f64>, AggregationBlock)> {
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(&[3, 6]).with_final(act);
        let block = AggregationBlock::new(spec.clone(), spec, 0.0, &mut store, "agg", &mut trial_rng(seed, 80, 0))?;
        zero_biases(&mut store);
        Ok((store, block))
    };
    let (plain_store, plain) = build(Activation::None)?;
    let (soft_store, soft) = build(Activation::SoftmaxSet)?;
    let diffs = (0..PAIRS)
        .into_par_iter()
        .map(|k| -> Result<(f64, f64)> {
            let mut rng = trial_rng(seed, 81, k);
            let x1 = Tensor::uniform(&[10, 3], -1.0, 1.0, &mut rng);
            let x2 = random_orthogonal(10, &mut rng).matmul(&x1)?;
            let d_plain = plain
                .aggregate(&plain_store, &x1, Mode::Eval)?
                .max_abs_diff(&plain.aggregate(&plain_store, &x2, Mode::Eval)?);
            let d_soft = soft
                .aggregate(&soft_store, &x1, Mode::Eval)?
                .max_abs_diff(&soft.aggregate(&soft_store, &x2, Mode::Eval)?);
            Ok((d_plain, d_soft))
        })
        .collect::<Result<Vec<_>>>()?;
    let agree: Vec<_> = diffs.iter().map(|&(d, _)| (d <= COLLAPSE_TOL, d)).collect();
    let separated: Vec<_> = diffs.iter().map(|&(_, d)| (d > COLLAPSE_SEPARATION, d)).collect();
    let smallest = diffs.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
    let required = (PAIRS * 9).div_ceil(10);
    Ok(vec![
        PropertyResult::new("no_activation_agrees", &agree, PAIRS, COLLAPSE_TOL, "pairs (X, QX), QᵀQ = I"),
        PropertyResult::new(
            "softmax_set_separates",
            &separated,
            PAIRS,
            COLLAPSE_SEPARATION,
            format!("needs ≥ {required} pairs above tolerance; smallest difference {smallest:.3e}"),
        )
        .at_least(required),
    ])
}

fn deepsets(seed: u64) -> Result<Vec<PropertyResult>> {
    const SETS: usize = 100;
    let acts = [Activation::Relu, Activation::Squashing, Activation::None];
    let outcomes = (0..SETS)
        .into_par_iter()
        .map(|k| -> Result<((bool, f64), (bool, f64))> {
            let mut rng = trial_rng(seed, 90, k);
            let (store, block) = {
                let mut store = ParamStore::new();
                let block = AggregationBlock::new(
                    MlpSpec::new(&[3, 8, 5]).with_final(acts[k % 3]),
                    MlpSpec::new(&[3, 8, 4]).with_final(acts[(k / 3) % 3]),
                    0.1,
                    &mut store,
                    "agg",
                    &mut rng,
                )?;
                store.randomize_buffers(&mut rng)?;
                (store, block)
            };
            let x = Tensor::uniform(&[16, 3], -1.0, 1.0, &mut rng);
            let mut total = Tensor::zeros(&[5, 4]);
            let mut max_rank = 0;
            for i in 0..16 {
                let h = block.per_element_contribution(&store, x.row(i))?;
                max_rank = max_rank.max(numeric_rank(&h, DEFAULT_RANK_TOL)?);
                total = total.add(&h)?;
            }
            let agg = block.aggregate(&store, &x, Mode::Eval)?.reshape(&[5, 4])?;
            let d = agg.max_abs_diff(&total);
            Ok(((d <= DEEPSETS_TOL, d), (max_rank <= 1, max_rank as f64)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (sums, ranks): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    Ok(vec![
        PropertyResult::new("sum_of_contributions", &sums, SETS, DEEPSETS_TOL, ""),
        PropertyResult::new("contribution_rank_le_1", &ranks, SETS, 1.0, "worst = largest rank"),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite() {
        assert!(matches!(suite_names("speed"), Err(Error::Config { .. })));
        assert_eq!(suite_names("all").unwrap().len(), SUITES.len());
    }

    #[test]
    fn tuples_cover_the_range() {
        let t = cp_dims_tuples(64);
        assert!(t.contains(&vec![2, 2, 2, 2, 2, 2]));
        assert!(t.contains(&vec![64]));
        assert!(t.contains(&vec![1, 4, 16]));
        assert!(!t.contains(&vec![1, 1, 2]));
        assert!(t.iter().all(|d| d.iter().product::<usize>() <= 64));
    }

    #[test]
    fn corrupted_kernel_is_caught() {
        let opts = VerifyOptions {
            seed: 1,
            corrupt_kernel: true,
        };
        let r = run_suite("mdd", &opts).unwrap();
        assert!(!r.ok);
        assert!(r.properties[0].worst > MDD_TOL);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let opts = VerifyOptions::default();
        let a = run("rankstab", &opts, Some(1)).unwrap();
        let b = run("rankstab", &opts, Some(3)).unwrap();
        assert_eq!(a[0].properties[0].worst, b[0].properties[0].worst);
        assert_eq!(a[0].properties[1].passed, b[0].properties[1].passed);
    }
}
