use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::Tensor;

use super::SetBatch;

/// Coordinate augmentations; each draws its randomness per set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    /// Drops each element with probability `q`, then refills to `N` by
    /// duplicating uniformly chosen survivors.
    RandomDrop { q: f64 },
    /// Multiplies coordinates by one factor drawn from `[lo, hi]`.
    RandomScale { lo: f64, hi: f64 },
    /// Adds a per-axis offset drawn from `[−range, range]`.
    RandomShift { range: f64 },
    GaussianNoise { sigma: f64 },
    /// Rotates `(x, y, z)` about the vertical `y` axis; `angle: None` draws it from `[0, 2π)`.
    RandomRotation { angle: Option<f64> },
}

impl AugmentOp {
    pub fn random_drop(q: f64) -> Self {
        AugmentOp::RandomDrop { q }
    }

    pub fn random_scale() -> Self {
        AugmentOp::RandomScale { lo: 0.8, hi: 1.25 }
    }

    pub fn random_shift() -> Self {
        AugmentOp::RandomShift { range: 0.1 }
    }

    pub fn gaussian_noise() -> Self {
        AugmentOp::GaussianNoise { sigma: 0.01 }
    }

    pub fn random_rotation() -> Self {
        AugmentOp::RandomRotation { angle: None }
    }

    fn validate(&self, coords: usize) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::Config {
                key: "augment".into(),
                reason,
            })
        };
        match *self {
            AugmentOp::RandomDrop { q } if !(0.0..1.0).contains(&q) => bad(format!("drop probability {q} outside [0, 1)")),
            AugmentOp::RandomScale { lo, hi } if !(lo > 0.0 && lo <= hi) => bad(format!("scale range [{lo}, {hi}] invalid")),
            AugmentOp::RandomShift { range } if range < 0.0 => bad(format!("shift range {range} negative")),
            AugmentOp::GaussianNoise { sigma } if sigma < 0.0 => bad(format!("noise sigma {sigma} negative")),
            AugmentOp::RandomRotation { .. } if coords != 3 => Err(Error::Precondition(format!(
                "rotation needs 3-D coordinates, got {coords}"
            ))),
            _ => Ok(()),
        }
    }
}

fn draw(rng: &mut RngState, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.uniform(lo, hi)
    }
}

fn apply(op: &AugmentOp, set: &mut Tensor, coords: usize, rng: &mut RngState) {
    let (n, p) = (set.rows(), set.cols());
    match *op {
        AugmentOp::RandomDrop { q } => {
            if q == 0.0 {
                return;
            }
            let mut keep: Vec<usize> = (0..n).filter(|_| !rng.bernoulli(q)).collect();
            if keep.is_empty() {
                keep.push(rng.index(n));
            }
            let survivors = keep.len();
            while keep.len() < n {
                keep.push(keep[rng.index(survivors)]);
            }
            *set = set.permute_rows(&keep).expect("indices in range");
        }
        AugmentOp::RandomScale { lo, hi } => {
            let u = draw(rng, lo, hi);
            for i in 0..n {
                for c in 0..coords {
                    set.data_mut()[i * p + c] *= u;
                }
            }
        }
        AugmentOp::RandomShift { range } => {
            let offsets: Vec<f64> = (0..coords).map(|_| draw(rng, -range, range)).collect();
            for i in 0..n {
                for (c, o) in offsets.iter().enumerate() {
                    set.data_mut()[i * p + c] += o;
                }
            }
        }
        AugmentOp::GaussianNoise { sigma } => {
            for i in 0..n {
                for c in 0..coords {
                    let e: f64 = rng.normal();
                    set.data_mut()[i * p + c] += sigma * e;
                }
            }
        }
        AugmentOp::RandomRotation { angle } => {
            let a = angle.unwrap_or_else(|| rng.uniform(0.0, std::f64::consts::TAU));
            let (s, c) = a.sin_cos();
            for i in 0..n {
                let r = &mut set.data_mut()[i * p..i * p + 3];
                let (x, z) = (r[0], r[2]);
                r[0] = x * c + z * s;
                r[2] = -x * s + z * c;
            }
        }
    }
}

/// Applies `ops` in order to the first `coords` channels of every set.
pub fn augment(batch: &SetBatch, ops: &[AugmentOp], coords: usize, rng: &mut RngState) -> Result<SetBatch> {
    if coords > batch.width() {
        return Err(Error::Precondition(format!(
            "{coords} coordinate channels requested but sets have width {}",
            batch.width()
        )));
    }
    for op in ops {
        op.validate(coords)?;
    }
    let mut sets = batch.unstack();
    for set in &mut sets {
        for op in ops {
            apply(op, set, coords, rng);
        }
    }
    SetBatch::new(&sets, batch.labels.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{make_synthetic_task, quadrant_majority_label, SyntheticTaskSpec};

    fn batch(rng: &mut RngState) -> SetBatch {
        let sets: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(&[10, 4], -1.0, 1.0, rng)).collect();
        SetBatch::new(&sets, vec![0, 1, 2, 3]).unwrap()
    }

    #[test]
    fn neutral_settings_leave_the_batch_alone() {
        let mut rng = RngState::new(0);
        let b = batch(&mut rng);
        let ops = [
            AugmentOp::random_drop(0.0),
            AugmentOp::RandomScale { lo: 1.0, hi: 1.0 },
            AugmentOp::RandomShift { range: 0.0 },
            AugmentOp::GaussianNoise { sigma: 0.0 },
        ];
        assert_eq!(augment(&b, &ops, 3, &mut rng).unwrap(), b);
    }

    #[test]
    fn quarter_turn() {
        let set = Tensor::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 1.0]]);
        let b = SetBatch::new(&[set], vec![0]).unwrap();
        let op = AugmentOp::RandomRotation {
            angle: Some(std::f64::consts::FRAC_PI_2),
        };
        let out = augment(&b, &[op], 3, &mut RngState::new(0)).unwrap().set(0);
        let want = Tensor::from_rows(&[&[0.0, 0.0, -1.0], &[1.0, 2.0, 0.0]]);
        assert!(out.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn rotation_needs_three_axes() {
        let mut rng = RngState::new(0);
        let b = batch(&mut rng);
        assert!(augment(&b, &[AugmentOp::random_rotation()], 2, &mut rng).is_err());
    }

    #[test]
    fn drop_keeps_the_set_size_with_original_rows() {
        let mut rng = RngState::new(2);
        let b = batch(&mut rng);
        let out = augment(&b, &[AugmentOp::random_drop(0.5)], 3, &mut rng).unwrap();
        assert_eq!(out.sets.shape(), b.sets.shape());
        for k in 0..4 {
            let (orig, new) = (b.set(k), out.set(k));
            for i in 0..10 {
                assert!((0..10).any(|j| orig.row(j) == new.row(i)));
            }
        }
    }

    #[test]
    fn coordinate_transforms_preserve_synthetic_labels() {
        let spec = SyntheticTaskSpec {
            train_count: 100,
            test_count: 1,
            ..Default::default()
        };
        let (train, _) = make_synthetic_task(&spec).unwrap();
        let b = train.all().unwrap();
        let ops = [AugmentOp::random_scale(), AugmentOp::random_shift(), AugmentOp::gaussian_noise()];
        let out = augment(&b, &ops, 2, &mut RngState::new(8)).unwrap();
        for (k, &l) in out.labels.iter().enumerate() {
            assert_eq!(quadrant_majority_label(&out.set(k)), l);
        }
    }
}
