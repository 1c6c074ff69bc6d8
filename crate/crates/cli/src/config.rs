//! Flat `key = value` run configuration with dotted section keys.
//!
//! Every key is declared in [`SCHEMA`]; unknown keys and malformed values
//! are rejected before any work starts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use pinset_core::nn::Activation;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Text,
    Int,
    Float,
    Bool,
    Activation,
    /// `s×t` written as `32x32`.
    Factorization,
    /// Comma-separated integers, possibly empty.
    IntList,
    FactorizationList,
    Choice(&'static [&'static str]),
}

pub const SCHEMA: &[(&str, Kind, &str)] = &[
    ("model.preset", Kind::Choice(&["dumlp-pin-s", "dumlp-pin-l", "synthetic", "tiny", "point-ablation"]), "base architecture"),
    ("model.factorization", Kind::Factorization, "output widths s×t of the aggregation MLPs"),
    ("model.hidden", Kind::IntList, "hidden widths of both aggregation MLPs"),
    ("model.hidden_activation", Kind::Activation, "activation of hidden layers"),
    ("model.final_activation", Kind::Activation, "final activation of both aggregation MLPs"),
    ("model.final_batchnorm", Kind::Bool, "batch-normalize the last aggregation layer too"),
    ("model.dropout", Kind::Float, "dropout ratio on the aggregation output"),
    ("model.head", Kind::Text, "hidden widths of the classifier head, or `none`"),
    ("model.input_width", Kind::Int, "element width p (params command only)"),
    ("model.class_count", Kind::Int, "number of classes (params command only)"),
    ("data.source", Kind::Choice(&["synthetic", "mnist"]), "dataset"),
    ("data.generator", Kind::Text, "synthetic generator id"),
    ("data.set_size", Kind::Int, "synthetic set size N"),
    ("data.width", Kind::Int, "synthetic element width p"),
    ("data.classes", Kind::Int, "synthetic class count"),
    ("data.margin", Kind::Float, "synthetic distance from the axes"),
    ("data.seed", Kind::Int, "synthetic data seed (defaults to --seed)"),
    ("data.train_count", Kind::Int, "training sets to use"),
    ("data.test_count", Kind::Int, "test sets to use"),
    ("data.mnist_dir", Kind::Text, "directory holding the four IDX files"),
    ("data.downsample", Kind::Bool, "2×2 mean downsampling of MNIST images"),
    ("data.shuffle_elements", Kind::Bool, "shuffle pixel order inside each set"),
    ("train.epochs", Kind::Int, "number of epochs"),
    ("train.batch_size", Kind::Int, "sets per batch"),
    ("train.checkpoint_every", Kind::Int, "extra checkpoint interval in epochs (0 = off)"),
    ("train.record_wall_clock", Kind::Bool, "write elapsed seconds to the metrics CSV"),
    ("optimizer.lr", Kind::Float, "initial learning rate"),
    ("optimizer.momentum", Kind::Float, "SGD momentum"),
    ("optimizer.weight_decay", Kind::Float, "L2 coefficient added to gradients"),
    ("schedule.drop_epoch", Kind::Int, "epoch of the ×1/factor drop (0 = never)"),
    ("schedule.drop_factor", Kind::Float, "learning-rate divisor"),
    ("schedule.warmup_epochs", Kind::Int, "linear warmup length"),
    ("schedule.warmup_start", Kind::Float, "learning rate at epoch 0 of the warmup"),
    ("augment.ops", Kind::Text, "comma list of drop, scale, shift, noise, rotation"),
    ("augment.drop_q", Kind::Float, "random_drop probability"),
    ("augment.coord_channels", Kind::Int, "leading channels treated as coordinates"),
    ("eval.checkpoint", Kind::Text, "checkpoint to evaluate (defaults to <out>/checkpoint-final.dmpp)"),
    ("verify.suite", Kind::Choice(&["all", "invariance", "mdd", "cp", "rankstab", "gradcheck", "collapse", "deepsets"]), "property suite"),
    ("verify.corrupt_kernel", Kind::Bool, "negative control for the mdd suite"),
    ("decompose.input", Kind::Text, "text tensor to decompose"),
    ("decompose.components", Kind::Int, "number of components N"),
    ("params.sweep", Kind::FactorizationList, "factorizations to report, e.g. 1x1024,32x32"),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error at `{}`: {}", self.key, self.reason)
    }
}

fn err(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_string(),
        reason: reason.into(),
    }
}

pub fn parse_factorization(s: &str) -> Option<(usize, usize)> {
    let (a, b) = s.trim().split_once(['x', 'X', '×'])?;
    let (a, b) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
    (a > 0 && b > 0).then_some((a, b))
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    if s.trim().is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|p| item(p.trim())).collect()
}

fn check(kind: Kind, value: &str) -> Result<(), String> {
    let ok = match kind {
        Kind::Text => true,
        Kind::Int => value.parse::<u64>().is_ok(),
        Kind::Float => value.parse::<f64>().map(f64::is_finite).unwrap_or(false),
        Kind::Bool => matches!(value, "true" | "false"),
        Kind::Activation => Activation::from_str(value).is_ok(),
        Kind::Factorization => parse_factorization(value).is_some(),
        Kind::IntList => parse_list(value, |p| p.parse::<usize>().ok()).is_some(),
        Kind::FactorizationList => parse_list(value, parse_factorization).is_some_and(|l| !l.is_empty()),
        Kind::Choice(options) => options.contains(&value),
    };
    if ok {
        return Ok(());
    }
    Err(match kind {
        Kind::Int => format!("`{value}` is not a non-negative integer"),
        Kind::Float => format!("`{value}` is not a finite number"),
        Kind::Bool => format!("`{value}` is not true or false"),
        Kind::Activation => format!("`{value}` is not one of relu, softmax_set, squashing, none"),
        Kind::Factorization => format!("`{value}` is not a factorization like 32x32"),
        Kind::IntList => format!("`{value}` is not a comma-separated list of integers"),
        Kind::FactorizationList => format!("`{value}` is not a comma-separated list of factorizations"),
        Kind::Choice(options) => format!("`{value}` is not one of {}", options.join(", ")),
        Kind::Text => unreachable!(),
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(&format!("line {}", n + 1), format!("expected `key = value`, found `{line}`")))?;
            let k = k.trim();
            if cfg.values.contains_key(k) {
                return Err(err(k, format!("duplicate key on line {}", n + 1)));
            }
            cfg.set(k, v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| err("--config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Validates and stores one entry (later values replace earlier ones).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let kind = SCHEMA
            .iter()
            .find(|(k, _, _)| *k == key)
            .map(|(_, kind, _)| *kind)
            .ok_or_else(|| err(key, "unknown key"))?;
        check(kind, value).map_err(|reason| err(key, reason))?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| err(spec, "override must look like key=value"))?;
        self.set(k.trim(), v.trim())
    }

    pub fn has_section(&self, prefix: &str) -> bool {
        self.values.keys().any(|k| k.starts_with(prefix))
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn usize(&self, key: &str) -> Option<usize> {
        self.text(key).map(|v| v.parse().expect("validated"))
    }

    pub fn u64(&self, key: &str) -> Option<u64> {
        self.text(key).map(|v| v.parse().expect("validated"))
    }

    pub fn f64(&self, key: &str) -> Option<f64> {
        self.text(key).map(|v| v.parse().expect("validated"))
    }

    pub fn bool(&self, key: &str) -> Option<bool> {
        self.text(key).map(|v| v == "true")
    }

    pub fn activation(&self, key: &str) -> Option<Activation> {
        self.text(key).map(|v| v.parse().expect("validated"))
    }

    pub fn factorization(&self, key: &str) -> Option<(usize, usize)> {
        self.text(key).and_then(parse_factorization)
    }

    pub fn int_list(&self, key: &str) -> Option<Vec<usize>> {
        self.text(key).and_then(|v| parse_list(v, |p| p.parse().ok()))
    }

    pub fn factorization_list(&self, key: &str) -> Option<Vec<(usize, usize)>> {
        self.text(key).and_then(|v| parse_list(v, parse_factorization))
    }

    pub fn require_text(&self, key: &str) -> Result<&str, ConfigError> {
        self.text(key).ok_or_else(|| err(key, "required key is missing"))
    }
}
