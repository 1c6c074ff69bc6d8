use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::Tensor;

use super::SetDataset;

pub const QUADRANT_MAJORITY: &str = "quadrant-majority";

/// Parameters of a generated set-classification task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub generator: String,
    pub set_size: usize,
    pub width: usize,
    pub class_count: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
    /// Minimum distance of every coordinate from the axes.
    pub margin: f64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            generator: QUADRANT_MAJORITY.into(),
            set_size: 32,
            width: 2,
            class_count: 4,
            train_count: 2000,
            test_count: 500,
            seed: 0,
            margin: 0.15,
        }
    }
}

/// Quadrant of a point: 0 = (+,+), 1 = (−,+), 2 = (−,−), 3 = (+,−).
pub fn quadrant(x: f64, y: f64) -> usize {
    match (x >= 0.0, y >= 0.0) {
        (true, true) => 0,
        (false, true) => 1,
        (false, false) => 2,
        (true, false) => 3,
    }
}

/// Quadrant holding the most points (lowest index on ties).
pub fn quadrant_majority_label(set: &Tensor) -> usize {
    let mut counts = [0usize; 4];
    for i in 0..set.rows() {
        let r = set.row(i);
        counts[quadrant(r[0], r[1])] += 1;
    }
    let mut best = 0;
    for q in 1..4 {
        if counts[q] > counts[best] {
            best = q;
        }
    }
    best
}

fn quadrant_set(spec: &SyntheticTaskSpec, label: usize, rng: &mut RngState) -> Tensor {
    let n = spec.set_size;
    let majority = n / 4 + 1 + n / 8;
    let mut counts;
    loop {
        counts = [0usize; 4];
        counts[label] = majority;
        for _ in majority..n {
            let mut q = rng.index(3);
            if q >= label {
                q += 1;
            }
            counts[q] += 1;
        }
        if (0..4).all(|q| q == label || counts[q] < majority) {
            break;
        }
    }
    let signs = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
    let mut data = Vec::with_capacity(n * spec.width);
    for (q, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            let mx: f64 = rng.uniform(spec.margin, 1.0);
            let my: f64 = rng.uniform(spec.margin, 1.0);
            data.push(signs[q].0 * mx);
            data.push(signs[q].1 * my);
            for _ in 2..spec.width {
                data.push(rng.uniform(-1.0, 1.0));
            }
        }
    }
    let set = Tensor::matrix(n, spec.width, data).expect("sized");
    set.permute_rows(&rng.permutation(n)).expect("perm")
}

/// Generates `(train, test)` from independent streams derived from `spec.seed`.
///
/// `quadrant-majority`: each point lies at least `margin` away from both axes
/// and the label is the quadrant holding a strict majority of points.
pub fn make_synthetic_task(spec: &SyntheticTaskSpec) -> Result<(SetDataset, SetDataset)> {
    if spec.generator != QUADRANT_MAJORITY {
        return Err(Error::Config {
            key: "data.generator".into(),
            reason: format!("unknown generator `{}`", spec.generator),
        });
    }
    if spec.width < 2 || spec.class_count != 4 || spec.set_size < 4 {
        return Err(Error::Config {
            key: "data".into(),
            reason: format!(
                "{QUADRANT_MAJORITY} needs width ≥ 2, 4 classes and set_size ≥ 4 (got {}, {}, {})",
                spec.width, spec.class_count, spec.set_size
            ),
        });
    }
    if !(0.0..1.0).contains(&spec.margin) {
        return Err(Error::Config {
            key: "data.margin".into(),
            reason: format!("margin must lie in [0, 1), got {}", spec.margin),
        });
    }
    let root = RngState::new(spec.seed);
    let make = |stream: u64, count: usize| -> Result<SetDataset> {
        let mut rng = root.derive(stream);
        let mut sets = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let label = rng.index(4);
            sets.push(quadrant_set(spec, label, &mut rng));
            labels.push(label);
        }
        let mut ds = SetDataset::new(sets, labels, 4)?;
        ds.note("generator", spec.generator.clone());
        Ok(ds)
    };
    Ok((make(1, spec.train_count)?, make(2, spec.test_count)?))
}
