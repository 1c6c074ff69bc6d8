//! Assembled classifiers and exact parameter accounting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, AggregationBlock, BatchNormLayer, BroadcastBlock, Mlp, MlpSpec, Mode, ParamStore, Pass};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PixelClassification,
    PointClassification,
    Synthetic,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::PixelClassification => "pixel_classification",
            Task::PointClassification => "point_classification",
            Task::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel_classification" | "pixel" => Ok(Task::PixelClassification),
            "point_classification" | "point" => Ok(Task::PointClassification),
            "synthetic" => Ok(Task::Synthetic),
            other => Err(Error::Config {
                key: "model.task".into(),
                reason: format!("unknown task `{other}`"),
            }),
        }
    }
}

/// Two MLPs whose outputs are combined as `g1ᵀ g2`; the factorization is `s×t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationSpec {
    pub mlp1: MlpSpec,
    pub mlp2: MlpSpec,
    pub dropout: f64,
}

impl AggregationSpec {
    /// Both MLPs share `hidden` and end in widths `s` and `t`.
    pub fn symmetric(input: usize, hidden: &[usize], s: usize, t: usize, final_act: Activation, dropout: f64) -> Self {
        let dims = |out: usize| {
            let mut d = vec![input];
            d.extend_from_slice(hidden);
            d.push(out);
            d
        };
        Self {
            mlp1: MlpSpec::new(&dims(s)).with_final(final_act),
            mlp2: MlpSpec::new(&dims(t)).with_final(final_act),
            dropout,
        }
    }

    pub fn factorization(&self) -> (usize, usize) {
        (self.mlp1.output_width(), self.mlp2.output_width())
    }

    pub fn output_width(&self) -> usize {
        let (s, t) = self.factorization();
        s * t
    }

    fn input_width(&self) -> usize {
        self.mlp1.input_width()
    }
}

/// Full architecture description; serialized into checkpoints.
///
/// Without broadcast blocks the model is aggregation → head. With them, the
/// first aggregation output is broadcast back to the elements through each
/// block (followed by batch normalization and ReLU), and a second aggregation
/// feeds the head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub task: Task,
    pub input_width: usize,
    pub class_count: usize,
    pub aggregation: AggregationSpec,
    pub broadcast_widths: Vec<usize>,
    pub second_aggregation: Option<AggregationSpec>,
    /// `None` leaves a feature extractor whose output is the aggregated feature.
    pub head: Option<MlpSpec>,
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

impl ModelConfig {
    /// Pixel-set classifier: one aggregation block and a classifier head.
    pub fn dumlp_pin_s() -> Self {
        Self {
            name: "dumlp-pin-s".into(),
            task: Task::PixelClassification,
            input_width: 3,
            class_count: 10,
            aggregation: AggregationSpec::symmetric(3, &[64, 128], 32, 32, Activation::SoftmaxSet, 0.1),
            broadcast_widths: Vec::new(),
            second_aggregation: None,
            head: Some(MlpSpec::new(&[1024, 256, 10]).classifier()),
        }
    }

    /// Pixel-set classifier with two broadcast blocks and a second aggregation.
    pub fn dumlp_pin_l() -> Self {
        Self {
            name: "dumlp-pin-l".into(),
            task: Task::PixelClassification,
            input_width: 3,
            class_count: 10,
            aggregation: AggregationSpec::symmetric(3, &[64, 128], 32, 32, Activation::SoftmaxSet, 0.1),
            broadcast_widths: vec![64, 128],
            second_aggregation: Some(AggregationSpec::symmetric(128, &[128], 32, 32, Activation::SoftmaxSet, 0.1)),
            head: Some(MlpSpec::new(&[1024, 672, 256, 10]).classifier()),
        }
    }

    /// Point-set aggregation with two `MLP[6, 32, 128, ·]` factors and no head.
    ///
    /// `final_batchnorm` also normalizes the last layer of each MLP.
    pub fn point_ablation(s: usize, t: usize, final_batchnorm: bool) -> Self {
        let mut aggregation = AggregationSpec::symmetric(6, &[32, 128], s, t, Activation::SoftmaxSet, 0.1);
        aggregation.mlp1.final_batchnorm = final_batchnorm;
        aggregation.mlp2.final_batchnorm = final_batchnorm;
        Self {
            name: format!("point-ablation-{s}x{t}"),
            task: Task::PointClassification,
            input_width: 6,
            class_count: 40,
            aggregation,
            broadcast_widths: Vec::new(),
            second_aggregation: None,
            head: None,
        }
    }

    /// Small classifier for the synthetic set tasks.
    pub fn synthetic(input_width: usize, class_count: usize) -> Self {
        Self {
            name: "synthetic".into(),
            task: Task::Synthetic,
            input_width,
            class_count,
            aggregation: AggregationSpec::symmetric(input_width, &[16], 8, 8, Activation::Squashing, 0.1),
            broadcast_widths: Vec::new(),
            second_aggregation: None,
            head: Some(MlpSpec::new(&[64, 32, class_count]).classifier()),
        }
    }

    /// Under 1k parameters; used for exhaustive gradient checks.
    pub fn tiny() -> Self {
        Self {
            name: "tiny".into(),
            task: Task::PixelClassification,
            input_width: 3,
            class_count: 10,
            aggregation: AggregationSpec::symmetric(3, &[8, 8], 4, 4, Activation::SoftmaxSet, 0.1),
            broadcast_widths: Vec::new(),
            second_aggregation: None,
            head: Some(MlpSpec::new(&[16, 16, 10]).classifier()),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "dumlp-pin-s" => Ok(Self::dumlp_pin_s()),
            "dumlp-pin-l" => Ok(Self::dumlp_pin_l()),
            "synthetic" => Ok(Self::synthetic(2, 4)),
            "tiny" => Ok(Self::tiny()),
            "point-ablation" => Ok(Self::point_ablation(32, 32, false)),
            other => Err(config_err("model.preset", format!("unknown preset `{other}`"))),
        }
    }

    /// Width of the vector handed to the head.
    pub fn feature_width(&self) -> usize {
        match &self.second_aggregation {
            Some(a) => a.output_width(),
            None => self.aggregation.output_width(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.aggregation.mlp1.validate()?;
        self.aggregation.mlp2.validate()?;
        if self.aggregation.input_width() != self.input_width || self.aggregation.mlp2.input_width() != self.input_width {
            return Err(config_err(
                "model.aggregation",
                format!("MLP input widths must equal the element width {}", self.input_width),
            ));
        }
        match (&self.second_aggregation, self.broadcast_widths.last()) {
            (Some(a2), Some(&w)) => {
                a2.mlp1.validate()?;
                a2.mlp2.validate()?;
                if a2.input_width() != w || a2.mlp2.input_width() != w {
                    return Err(config_err(
                        "model.second_aggregation",
                        format!("input width must equal the last broadcast width {w}"),
                    ));
                }
            }
            (None, None) => {}
            _ => {
                return Err(config_err(
                    "model.broadcast_widths",
                    "broadcast blocks and a second aggregation must be configured together",
                ))
            }
        }
        if self.broadcast_widths.contains(&0) {
            return Err(config_err("model.broadcast_widths", "widths must be positive"));
        }
        if let Some(head) = &self.head {
            head.validate()?;
            if head.input_width() != self.feature_width() {
                return Err(config_err(
                    "model.head",
                    format!(
                        "head input {} differs from the aggregated feature length {}",
                        head.input_width(),
                        self.feature_width()
                    ),
                ));
            }
            if head.output_width() != self.class_count {
                return Err(config_err(
                    "model.head",
                    format!("head output {} differs from class_count {}", head.output_width(), self.class_count),
                ));
            }
            if head.uses_set_activation() {
                return Err(config_err("model.head", "the head acts on one vector per set; softmax_set is undefined there"));
            }
        }
        for (key, a) in [("model.aggregation", Some(&self.aggregation)), ("model.second_aggregation", self.second_aggregation.as_ref())] {
            if let Some(a) = a {
                if !(0.0..1.0).contains(&a.dropout) {
                    return Err(config_err(key, format!("dropout {} outside [0, 1)", a.dropout)));
                }
            }
        }
        Ok(())
    }
}

/// Trainable-scalar counts per layer and per block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    pub layers: Vec<(String, usize)>,
    pub blocks: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamReport {
    pub fn block(&self, name: &str) -> Option<usize> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, c)| *c)
    }
}

/// Counts trainable scalars: `d_in·d_out + d_out` per linear layer, `2·d` per normalized layer.
pub fn param_count(cfg: &ModelConfig) -> Result<ParamReport> {
    cfg.validate()?;
    let mut layers = Vec::new();
    let mut blocks = Vec::new();
    let push_mlp = |layers: &mut Vec<(String, usize)>, prefix: &str, spec: &MlpSpec| -> usize {
        let counts = spec.layer_param_counts();
        let sum = counts.iter().map(|(_, c)| c).sum();
        layers.extend(counts.into_iter().map(|(n, c)| (format!("{prefix}.{n}"), c)));
        sum
    };
    let agg = push_mlp(&mut layers, "aggregation.mlp1", &cfg.aggregation.mlp1)
        + push_mlp(&mut layers, "aggregation.mlp2", &cfg.aggregation.mlp2);
    blocks.push(("aggregation".to_string(), agg));
    let y_width = cfg.aggregation.output_width();
    let mut d_x = cfg.input_width;
    for (k, &d_z) in cfg.broadcast_widths.iter().enumerate() {
        let name = format!("broadcast{}", k + 1);
        let lin = d_z * (d_x + y_width + 1);
        layers.push((format!("{name}.linear"), lin));
        layers.push((format!("{name}.bn"), 2 * d_z));
        blocks.push((name, lin + 2 * d_z));
        d_x = d_z;
    }
    if let Some(a2) = &cfg.second_aggregation {
        let c = push_mlp(&mut layers, "aggregation2.mlp1", &a2.mlp1) + push_mlp(&mut layers, "aggregation2.mlp2", &a2.mlp2);
        blocks.push(("aggregation2".to_string(), c));
    }
    if let Some(head) = &cfg.head {
        let c = push_mlp(&mut layers, "head", head);
        blocks.push(("head".to_string(), c));
    }
    let total = layers.iter().map(|(_, c)| c).sum();
    Ok(ParamReport { layers, blocks, total })
}

#[derive(Clone, Debug)]
struct BroadcastStage {
    block: BroadcastBlock,
    bn: BatchNormLayer,
}

/// An initialized model: architecture plus its parameter store.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    aggregation: AggregationBlock,
    broadcasts: Vec<BroadcastStage>,
    second_aggregation: Option<AggregationBlock>,
    head: Option<Mlp>,
}

/// Builds and initializes a model; identical seeds give identical parameters.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, rng: &mut RngState) -> Result<Model<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let a = &cfg.aggregation;
    let aggregation = AggregationBlock::new(a.mlp1.clone(), a.mlp2.clone(), a.dropout, &mut store, "aggregation", rng)?;
    let mut broadcasts = Vec::new();
    let mut d_x = cfg.input_width;
    for (k, &d_z) in cfg.broadcast_widths.iter().enumerate() {
        let prefix = format!("broadcast{}", k + 1);
        let block = BroadcastBlock::new(&mut store, &prefix, d_x, a.output_width(), d_z, rng)?;
        let bn = BatchNormLayer::new(&mut store, &format!("{prefix}.bn"), d_z);
        broadcasts.push(BroadcastStage { block, bn });
        d_x = d_z;
    }
    let second_aggregation = match &cfg.second_aggregation {
        Some(a2) => Some(AggregationBlock::new(
            a2.mlp1.clone(),
            a2.mlp2.clone(),
            a2.dropout,
            &mut store,
            "aggregation2",
            rng,
        )?),
        None => None,
    };
    let head = match &cfg.head {
        Some(h) => Some(Mlp::new(h.clone(), &mut store, "head", rng)?),
        None => None,
    };
    Ok(Model {
        config: cfg.clone(),
        store,
        aggregation,
        broadcasts,
        second_aggregation,
        head,
    })
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn is_classifier(&self) -> bool {
        self.head.is_some()
    }

    /// Aggregated set features, `B×feature_width`, from a `(B·N)×p` batch.
    pub fn features<'t>(&self, pass: &mut Pass<'t, '_, T>, x: Var<'t, T>, set_size: usize) -> Result<Var<'t, T>> {
        let y = self.aggregation.forward(pass, x, set_size)?;
        let Some(second) = &self.second_aggregation else {
            return Ok(y);
        };
        let mut z = x;
        for stage in &self.broadcasts {
            let b = stage.block.forward(pass, z, y, set_size)?;
            z = stage.bn.forward(pass, b)?.relu()?;
        }
        second.forward(pass, z, set_size)
    }

    /// Class logits `B×class_count` (features when the model has no head).
    pub fn forward<'t>(&self, pass: &mut Pass<'t, '_, T>, x: Var<'t, T>, set_size: usize) -> Result<Var<'t, T>> {
        let feat = self.features(pass, x, set_size)?;
        match &self.head {
            Some(head) => head.forward(pass, feat, 1),
            None => Ok(feat),
        }
    }

    /// Forward over a stacked batch without gradients, dropout or statistic updates.
    pub fn logits(&self, x: &Tensor<T>, set_size: usize, mode: Mode) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let mut pass = Pass::new(&tape, &self.store, mode, false);
        let xv = pass.input(x.clone());
        Ok(self.forward(&mut pass, xv, set_size)?.value())
    }

    /// Predicted class per set (first maximum on ties).
    pub fn predict(&self, x: &Tensor<T>, set_size: usize) -> Result<Vec<usize>> {
        let logits = self.logits(x, set_size, Mode::Eval)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}
