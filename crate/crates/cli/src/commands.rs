use std::fs;
use std::path::{Path, PathBuf};

use pinset_core::data::{load_mnist_idx, make_synthetic_task, pixel_dataset, AugmentOp, SetDataset, SyntheticTaskSpec};
use pinset_core::decomp::cp::{relative_error, sufficiency_bound};
use pinset_core::decomp::{cp_decompose, reconstruct_cp};
use pinset_core::models::{build_model, param_count, Model, ModelConfig, ParamReport};
use pinset_core::nn::MlpSpec;
use pinset_core::textfmt::{read_tensor, write_tensor};
use pinset_core::trainer::{evaluate, train, Checkpoint, LrSchedule, TrainConfig};
use pinset_core::verify::{self, VerifyOptions};
use pinset_core::{Error, RngState};
use serde_json::json;

use crate::config::{Config, ConfigError};
use crate::Command;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_VERIFY: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn config(key: &str, reason: impl Into<String>) -> Self {
        ConfigError {
            key: key.into(),
            reason: reason.into(),
        }
        .into()
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::Format(_) | Error::Truncated(_) | Error::Consistency(_) => EXIT_DATA,
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

pub struct Run {
    pub config: Config,
    pub seed: u64,
    pub out: PathBuf,
}

// Independent streams drawn from --seed.
const MODEL_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const PIXEL_STREAM: u64 = 4;

pub fn dispatch(cmd: Command, run: &Run) -> Result<(), Failure> {
    match cmd {
        Command::Train => cmd_train(run),
        Command::Eval => cmd_eval(run),
        Command::Verify => cmd_verify(run),
        Command::Decompose => cmd_decompose(run),
        Command::Params => cmd_params(run),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("json value");
    text.push('\n');
    write_file(path, text)
}

fn out_dir(run: &Run) -> Result<&Path, Failure> {
    fs::create_dir_all(&run.out).map_err(|e| Failure::from(Error::io(&run.out, e)))?;
    Ok(&run.out)
}

fn source(cfg: &Config) -> &str {
    cfg.text("data.source").unwrap_or("synthetic")
}

fn synthetic_spec(run: &Run) -> SyntheticTaskSpec {
    let cfg = &run.config;
    let d = SyntheticTaskSpec::default();
    SyntheticTaskSpec {
        generator: cfg.text("data.generator").map(str::to_string).unwrap_or(d.generator),
        set_size: cfg.usize("data.set_size").unwrap_or(d.set_size),
        width: cfg.usize("data.width").unwrap_or(d.width),
        class_count: cfg.usize("data.classes").unwrap_or(d.class_count),
        train_count: cfg.usize("data.train_count").unwrap_or(d.train_count),
        test_count: cfg.usize("data.test_count").unwrap_or(d.test_count),
        seed: cfg.u64("data.seed").unwrap_or(run.seed),
        margin: cfg.f64("data.margin").unwrap_or(d.margin),
    }
}

/// Returns `(train, test)` as configured by the `data.*` keys.
fn load_data(run: &Run) -> Result<(SetDataset, SetDataset), Failure> {
    let cfg = &run.config;
    match source(cfg) {
        "synthetic" => Ok(make_synthetic_task(&synthetic_spec(run))?),
        _ => {
            let dir = PathBuf::from(cfg.require_text("data.mnist_dir")?);
            let train = load_mnist_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
            let test = load_mnist_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))
                .or_else(|_| load_mnist_idx(dir.join("test-images-idx3-ubyte"), dir.join("test-labels-idx1-ubyte")))?;
            let downsample = cfg.bool("data.downsample").unwrap_or(true);
            let mut rng = RngState::new(run.seed).derive(PIXEL_STREAM);
            let shuffle = cfg.bool("data.shuffle_elements").unwrap_or(true);
            let n_train = cfg.usize("data.train_count").unwrap_or(train.len());
            let n_test = cfg.usize("data.test_count").unwrap_or(test.len());
            let train_set = pixel_dataset(&train, 0..n_train, downsample, shuffle.then_some(&mut rng))?;
            let test_set = pixel_dataset(&test, 0..n_test, downsample, shuffle.then_some(&mut rng))?;
            Ok((train_set, test_set))
        }
    }
}

fn set_hidden(spec: &mut MlpSpec, hidden: &[usize]) {
    let (first, last) = (spec.input_width(), spec.output_width());
    spec.layer_dims = std::iter::once(first).chain(hidden.iter().copied()).chain([last]).collect();
}

/// Builds the model configuration from the preset plus `model.*` overrides.
fn model_config(cfg: &Config, default_preset: &str, data: Option<(usize, usize)>) -> Result<ModelConfig, Failure> {
    let preset = cfg.text("model.preset").unwrap_or(default_preset);
    let (width, classes) = data.unwrap_or((
        cfg.usize("model.input_width").unwrap_or(2),
        cfg.usize("model.class_count").unwrap_or(4),
    ));
    let mut m = match preset {
        "synthetic" => ModelConfig::synthetic(width, classes),
        other => ModelConfig::preset(other)?,
    };
    if let Some(p) = cfg.usize("model.input_width") {
        m.input_width = p;
        m.aggregation.mlp1.layer_dims[0] = p;
        m.aggregation.mlp2.layer_dims[0] = p;
    }
    if let Some(c) = cfg.usize("model.class_count") {
        m.class_count = c;
        if let Some(h) = m.head.as_mut() {
            *h.layer_dims.last_mut().expect("validated head") = c;
        }
    }
    let agg = &mut m.aggregation;
    if let Some((s, t)) = cfg.factorization("model.factorization") {
        *agg.mlp1.layer_dims.last_mut().expect("non-empty") = s;
        *agg.mlp2.layer_dims.last_mut().expect("non-empty") = t;
    }
    for mlp in [&mut agg.mlp1, &mut agg.mlp2] {
        if let Some(h) = cfg.int_list("model.hidden") {
            set_hidden(mlp, &h);
        }
        if let Some(a) = cfg.activation("model.hidden_activation") {
            mlp.hidden_activation = a;
        }
        if let Some(a) = cfg.activation("model.final_activation") {
            mlp.final_activation = a;
        }
        if let Some(b) = cfg.bool("model.final_batchnorm") {
            mlp.final_batchnorm = b;
        }
    }
    if let Some(d) = cfg.f64("model.dropout") {
        agg.dropout = d;
    }
    if let Some(head) = cfg.text("model.head") {
        m.head = if head == "none" {
            None
        } else {
            let hidden: Vec<usize> = head
                .split(',')
                .map(|p| p.trim().parse().map_err(|_| Failure::config("model.head", format!("`{head}` is not `none` or a list of widths"))))
                .collect::<Result<_, _>>()?;
            let dims: Vec<usize> = [m.feature_width()].into_iter().chain(hidden).chain([m.class_count]).collect();
            Some(MlpSpec::new(&dims).classifier())
        };
    }
    let fw = m.feature_width();
    if let Some(h) = m.head.as_mut() {
        h.layer_dims[0] = fw;
    }
    m.validate()?;
    Ok(m)
}

fn default_preset(cfg: &Config) -> &'static str {
    if source(cfg) == "mnist" {
        "dumlp-pin-s"
    } else {
        "synthetic"
    }
}

fn check_width(model: &ModelConfig, data: &SetDataset) -> Result<(), Failure> {
    if model.input_width != data.width {
        return Err(Failure::config(
            "model.input_width",
            format!("model expects elements of width {}, data has width {}", model.input_width, data.width),
        ));
    }
    Ok(())
}

fn augment_ops(cfg: &Config) -> Result<Vec<AugmentOp>, Failure> {
    let Some(list) = cfg.text("augment.ops") else {
        return Ok(Vec::new());
    };
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty() && *s != "none")
        .map(|name| match name {
            "drop" => Ok(AugmentOp::random_drop(cfg.f64("augment.drop_q").unwrap_or(0.1))),
            "scale" => Ok(AugmentOp::random_scale()),
            "shift" => Ok(AugmentOp::random_shift()),
            "noise" => Ok(AugmentOp::gaussian_noise()),
            "rotation" => Ok(AugmentOp::random_rotation()),
            other => Err(Failure::config("augment.ops", format!("unknown augmentation `{other}`"))),
        })
        .collect()
}

fn train_config(run: &Run) -> Result<TrainConfig, Failure> {
    let cfg = &run.config;
    let d = TrainConfig::default();
    let mut schedule = LrSchedule::step(
        cfg.f64("optimizer.lr").unwrap_or(d.schedule.initial),
        match cfg.usize("schedule.drop_epoch") {
            Some(0) => None,
            Some(e) => Some(e),
            None => d.schedule.drop_epoch,
        },
    );
    schedule.drop_factor = cfg.f64("schedule.drop_factor").unwrap_or(schedule.drop_factor);
    schedule.warmup_epochs = cfg.usize("schedule.warmup_epochs").unwrap_or(0);
    schedule.warmup_start = cfg.f64("schedule.warmup_start").unwrap_or(0.0);
    if schedule.drop_factor <= 0.0 {
        return Err(Failure::config("schedule.drop_factor", "must be positive"));
    }
    Ok(TrainConfig {
        epochs: cfg.usize("train.epochs").unwrap_or(d.epochs),
        batch_size: cfg.usize("train.batch_size").unwrap_or(d.batch_size),
        schedule,
        momentum: cfg.f64("optimizer.momentum").unwrap_or(d.momentum),
        weight_decay: cfg.f64("optimizer.weight_decay").unwrap_or(d.weight_decay),
        augment: augment_ops(cfg)?,
        coord_channels: cfg.usize("augment.coord_channels").unwrap_or(d.coord_channels),
        checkpoint_every: cfg.usize("train.checkpoint_every").filter(|&k| k > 0),
        out_dir: Some(run.out.clone()),
        record_wall_clock: cfg.bool("train.record_wall_clock").unwrap_or(false),
        ..d
    })
}

fn cmd_train(run: &Run) -> Result<(), Failure> {
    let cfg = &run.config;
    // Everything that can be checked without data is checked first.
    let tcfg = train_config(run)?;
    if source(cfg) == "synthetic" {
        let s = synthetic_spec(run);
        model_config(cfg, default_preset(cfg), Some((s.width, s.class_count)))?;
    }
    let (train_set, test_set) = load_data(run)?;
    let mcfg = model_config(cfg, default_preset(cfg), Some((train_set.width, train_set.class_count)))?;
    check_width(&mcfg, &train_set)?;
    let mut model: Model<f64> = build_model(&mcfg, &mut RngState::new(run.seed).derive(MODEL_STREAM))?;
    let out = out_dir(run)?.to_path_buf();
    let mut rng = RngState::new(run.seed).derive(TRAIN_STREAM);
    let outcome = train(&mut model, &train_set, Some(&test_set), &tcfg, &mut rng)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let last = |split| outcome.history.iter().rev().find(|r| r.split == split);
    let final_train = last(pinset_core::trainer::Split::Train);
    let final_test = last(pinset_core::trainer::Split::Test);
    if let Some(r) = final_test {
        println!("epoch {} test accuracy {:.4} loss {:.4}", r.epoch, r.accuracy, r.loss);
    }
    let summary = json!({
        "model": mcfg,
        "params": param_count(&mcfg)?.total,
        "seed": run.seed,
        "train_config": tcfg,
        "train_digest": train_set.digest(),
        "test_digest": test_set.digest(),
        "data": train_set.metadata,
        "final_train": final_train,
        "final_test": final_test,
        "warnings": outcome.warnings,
    });
    write_json(&out.join("train-summary.json"), &summary)
}

fn cmd_eval(run: &Run) -> Result<(), Failure> {
    let cfg = &run.config;
    let path = cfg
        .text("eval.checkpoint")
        .map(PathBuf::from)
        .unwrap_or_else(|| run.out.join("checkpoint-final.dmpp"));
    let ckpt = Checkpoint::load(&path)?;
    let model: Model<f64> = ckpt.restore_model()?;
    let (_, test_set) = load_data(run)?;
    check_width(model.config(), &test_set)?;
    let report = evaluate(&model, &test_set, 128)?;
    println!("accuracy {:.4} ({}/{})", report.accuracy, report.correct, report.total);
    let out = out_dir(run)?;
    write_json(
        &out.join("eval.json"),
        &json!({
            "checkpoint": path.display().to_string(),
            "model": ckpt.meta.model.name,
            "epoch": ckpt.meta.epoch,
            "test_digest": test_set.digest(),
            "report": report,
        }),
    )
}

fn threads_from_env() -> Result<Option<usize>, Failure> {
    match std::env::var("PINSET_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::config("PINSET_THREADS", format!("`{v}` is not a positive integer"))),
        },
    }
}

fn cmd_verify(run: &Run) -> Result<(), Failure> {
    let cfg = &run.config;
    let suite = cfg.text("verify.suite").unwrap_or("all");
    let threads = threads_from_env()?;
    let opts = VerifyOptions {
        seed: run.seed,
        corrupt_kernel: cfg.bool("verify.corrupt_kernel").unwrap_or(false),
    };
    let reports = verify::run(suite, &opts, threads)?;
    for r in &reports {
        for line in r.lines() {
            println!("{line}");
        }
    }
    let ok = reports.iter().all(|r| r.ok);
    let out = out_dir(run)?;
    write_json(
        &out.join("verify-report.json"),
        &json!({ "suite": suite, "seed": run.seed, "ok": ok, "suites": reports }),
    )?;
    if ok {
        Ok(())
    } else {
        let failed: Vec<&str> = reports.iter().filter(|r| !r.ok).map(|r| r.suite.as_str()).collect();
        Err(Failure {
            code: EXIT_VERIFY,
            message: format!("verification failed in {}", failed.join(", ")),
        })
    }
}

fn cmd_decompose(run: &Run) -> Result<(), Failure> {
    let cfg = &run.config;
    let input = PathBuf::from(cfg.require_text("decompose.input")?);
    let t = read_tensor(&input)?;
    let required = sufficiency_bound(t.shape());
    let n = cfg.usize("decompose.components").unwrap_or(required);
    let f = cp_decompose(&t, n)?;
    let err = relative_error(&reconstruct_cp(&f)?, &t)?;
    let out = out_dir(run)?;
    let mut files = Vec::new();
    for (j, g) in f.factors.iter().enumerate() {
        let path = out.join(format!("factor-{}.txt", j + 1));
        write_tensor(&path, g)?;
        files.push(path.display().to_string());
    }
    for w in &f.warnings {
        eprintln!("warning: {w}");
    }
    println!("{} factors, N = {n}, relative error {err:.3e}", f.factors.len());
    write_json(
        &out.join("report.json"),
        &json!({
            "input": input.display().to_string(),
            "dims": t.shape(),
            "components": n,
            "required_components": required,
            "relative_error": err,
            "factors": files,
            "warnings": f.warnings,
        }),
    )
}

fn report_table(rows: &[(String, usize)], total: usize) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    for (name, count) in rows {
        s.push_str(&format!("{name:<width$}  {count:>10}\n"));
    }
    s.push_str(&format!("{:<width$}  {total:>10}\n", "total"));
    s
}

fn report_json(r: &ParamReport) -> serde_json::Value {
    json!({ "layers": r.layers, "blocks": r.blocks, "total": r.total })
}

fn cmd_params(run: &Run) -> Result<(), Failure> {
    let cfg = &run.config;
    if !cfg.has_section("model.") {
        return Err(Failure::config("model.preset", "no model configured"));
    }
    let report = match cfg.factorization_list("params.sweep") {
        None => {
            let m = model_config(cfg, "synthetic", None)?;
            let r = param_count(&m)?;
            print!("{}", report_table(&r.blocks, r.total));
            json!({ "model": m.name, "report": report_json(&r) })
        }
        Some(sweep) => {
            let mut rows = Vec::new();
            println!("{:<10}  {:>12}  {:>10}", "s×t", "aggregation", "total");
            for (s, t) in sweep {
                let mut c = cfg.clone();
                c.set("model.factorization", &format!("{s}x{t}"))?;
                let m = model_config(&c, "synthetic", None)?;
                let r = param_count(&m)?;
                let agg = r.block("aggregation").unwrap_or(0);
                println!("{:<10}  {agg:>12}  {:>10}", format!("{s}×{t}"), r.total);
                rows.push(json!({ "s": s, "t": t, "aggregation": agg, "total": r.total, "report": report_json(&r) }));
            }
            json!({ "sweep": rows })
        }
    };
    println!("{}", serde_json::to_string(&report).expect("json value"));
    write_json(&out_dir(run)?.join("params.json"), &report)
}
