use std::path::{Path, PathBuf};

use qvec_core::trainer::{
    evaluate_top1, lambda_sweep, make_task, ptq_accuracy, train, Split, SweepResult, ToyTask,
    TrainConfig, REGISTERED_TASKS,
};
use qvec_core::{
    extract_qv_with, fake_quantize_checkpoint, load_checkpoint, patch, qv_norm, save_checkpoint,
    Checkpoint, Error, ExtractOptions, NameFilter, QuantSpec, QuantizationVector,
};

use crate::args::*;
use crate::report::{RunReport, Status};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cmd: &Command) -> Result<RunReport> {
    match cmd {
        Command::Quantize(a) => quantize(a),
        Command::ExtractQv(a) => extract(a),
        Command::Patch(a) => patch_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Eval(a) => eval(a),
        Command::TrainToy(a) => train_toy(a),
        Command::VerifyGeometry(a) => verify_geometry(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn load(path: &Path) -> Result<Checkpoint> {
    Ok(load_checkpoint(path)?)
}

fn load_qv(path: &Path) -> Result<QuantizationVector> {
    Ok(QuantizationVector::from_checkpoint(&load(path)?)?)
}

/// Refuses to overwrite any input of the same command.
fn ensure_distinct(out: &Path, inputs: &[&Path]) -> Result<()> {
    let canon = |p: &Path| std::fs::canonicalize(p).ok();
    for input in inputs {
        let same =
            out == *input || matches!((canon(out), canon(input)), (Some(a), Some(b)) if a == b);
        if same {
            return Err(CliError::Invalid(format!(
                "output {} would overwrite an input",
                out.display()
            )));
        }
    }
    Ok(())
}

fn filter(patterns: &[String]) -> Result<NameFilter> {
    if patterns.is_empty() {
        Ok(NameFilter::default_heads())
    } else {
        Ok(NameFilter::new(patterns)?)
    }
}

fn exclude_input(f: &NameFilter) -> String {
    f.patterns().join(",")
}

fn task(name: &str, seed: u64) -> Result<ToyTask> {
    if !REGISTERED_TASKS.contains(&name) {
        return Err(Error::UnknownTask(name.to_string()).into());
    }
    Ok(make_task(name, seed)?)
}

/// Data seed: the flag, else the checkpoint's recorded data seed.
fn data_seed(flag: Option<u64>, ckpt: &Checkpoint) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    ["data_seed", "seed"]
        .iter()
        .find_map(|k| ckpt.meta_value(k).and_then(|v| v.parse().ok()))
        .ok_or_else(|| CliError::Invalid("checkpoint records no data seed; pass --seed".into()))
}

fn train_config(
    path: Option<&Path>,
    seed: Option<u64>,
    bits: Option<u32>,
    report: &mut RunReport,
) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            report.input_file("config", p)?;
            TrainConfig::from_json(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(b) = bits {
        cfg.quant = QuantSpec::new(b)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    Ok(save_checkpoint(ckpt, path)?)
}

fn quantize(a: &QuantizeArgs) -> Result<RunReport> {
    ensure_distinct(&a.out, &[&a.input])?;
    let mut r = RunReport::new("quantize");
    let spec = QuantSpec::new(a.quant.bits)?;
    let f = filter(&a.quant.exclude)?;
    let ckpt = load(&a.input)?;
    let q = fake_quantize_checkpoint(&ckpt, &spec, &f)?;
    save(&q, &a.out)?;

    let mut quantized = 0usize;
    let mut max_err = 0f64;
    for (name, t) in ckpt.iter() {
        if t.rank() == 2 && !f.is_excluded(name) {
            quantized += 1;
        }
        let qt = q.get(name).expect("same names");
        for (x, y) in t.data().iter().zip(qt.data()) {
            max_err = max_err.max((*x as f64 - *y as f64).abs());
        }
    }
    r.input_file("in", &a.input)?
        .input("bits", spec.bits())
        .input("exclude", exclude_input(&f))
        .output_file("out", &a.out, &a.out.display().to_string())?
        .metric("tensors.quantized", quantized as f64)
        .metric("tensors.copied", (ckpt.len() - quantized) as f64)
        .metric("max_abs_error", max_err);
    Ok(r)
}

fn extract(a: &ExtractArgs) -> Result<RunReport> {
    ensure_distinct(&a.out, &[&a.qat, &a.ft])?;
    let mut r = RunReport::new("extract-qv");
    let f = filter(&a.exclude)?;
    let qat = load(&a.qat)?;
    let ft = load(&a.ft)?;
    let qv = extract_qv_with(
        &qat,
        &ft,
        &f,
        ExtractOptions {
            allow_config_mismatch: a.allow_config_mismatch,
        },
    )?;
    save(&qv.to_checkpoint(), &a.out)?;
    r.input_file("qat", &a.qat)?
        .input_file("ft", &a.ft)?
        .input("exclude", exclude_input(&f))
        .output_file("out", &a.out, &a.out.display().to_string())?
        .flag("allow_config_mismatch", a.allow_config_mismatch)
        .flag("receiver_val_touched", false)
        .metric("qv_norm", qv_norm(&qv))
        .metric("tensors", qv.deltas().len() as f64);
    Ok(r)
}

fn patch_cmd(a: &PatchArgs) -> Result<RunReport> {
    ensure_distinct(&a.out, &[&a.receiver, &a.qv])?;
    let mut r = RunReport::new("patch");
    let receiver = load(&a.receiver)?;
    let qv = load_qv(&a.qv)?;
    let patched = patch(&receiver, &qv, a.lambda)?;
    save(&patched, &a.out)?;
    r.input_file("receiver", &a.receiver)?
        .input_file("qv", &a.qv)?
        .input("lambda", a.lambda)
        .output_file("out", &a.out, &a.out.display().to_string())?
        .flag("receiver_val_touched", false)
        .metric("lambda", f32_metric(a.lambda))
        .metric("qv_norm", qv_norm(&qv));
    Ok(r)
}

/// Flat `sweep.*` keys shared by `sweep` and `pipeline`.
/// Shortest decimal of an `f32`, widened without binary noise.
fn f32_metric(x: f32) -> f64 {
    x.to_string()
        .parse()
        .expect("finite f32 prints as a number")
}

fn sweep_metrics(r: &mut RunReport, s: &SweepResult) {
    for (l, acc) in s.grid.iter().zip(&s.val_acc) {
        r.metric(&format!("sweep.val_acc.lambda_{l:.2}"), *acc);
    }
    let chosen = s
        .grid
        .iter()
        .position(|&l| l == s.chosen_lambda)
        .expect("chosen from grid");
    r.metric("sweep.chosen_lambda", f32_metric(s.chosen_lambda))
        .metric("sweep.val_acc_baseline", s.val_acc_baseline)
        .metric(
            "sweep.val_delta_chosen",
            s.val_acc[chosen] - s.val_acc_baseline,
        )
        .metric("sweep.test_acc_baseline", s.test_acc_baseline)
        .metric("sweep.test_acc_patched", s.test_acc_patched)
        .metric("sweep.test_delta", s.test_delta);
}

/// Validation gain at `λ = 1`, for comparison with the selected scale.
fn val_delta_at_one(
    receiver: &Checkpoint,
    qv: &QuantizationVector,
    t: &ToyTask,
    spec: &QuantSpec,
    f: &NameFilter,
    s: &SweepResult,
) -> Result<f64> {
    let val = t.split(Split::Val);
    Ok(ptq_accuracy(&patch(receiver, qv, 1.0)?, val, spec, f)? - s.val_acc_baseline)
}

fn sweep(a: &SweepArgs) -> Result<RunReport> {
    let mut r = RunReport::new("sweep");
    let spec = QuantSpec::new(a.quant.bits)?;
    let f = filter(&a.quant.exclude)?;
    let receiver = load(&a.receiver)?;
    let qv = load_qv(&a.qv)?;
    let seed = data_seed(a.seed, &receiver)?;
    let t = task(&a.task, seed)?;
    let s = lambda_sweep(&receiver, &qv, &t, &spec, &f)?;
    let at_one = val_delta_at_one(&receiver, &qv, &t, &spec, &f, &s)?;
    r.input_file("receiver", &a.receiver)?
        .input_file("qv", &a.qv)?
        .input("task", &a.task)
        .input("seed", seed)
        .input("bits", spec.bits())
        .input("exclude", exclude_input(&f))
        .flag("receiver_val_touched", true)
        .metric("val_delta_lambda1", at_one);
    sweep_metrics(&mut r, &s);
    Ok(r)
}

fn eval(a: &EvalArgs) -> Result<RunReport> {
    let mut r = RunReport::new("eval");
    let split: Split = a.split.parse()?;
    let spec = QuantSpec::new(a.quant.bits)?;
    let f = filter(&a.quant.exclude)?;
    let ckpt = load(&a.ckpt)?;
    let seed = data_seed(a.seed, &ckpt)?;
    let t = task(&a.task, seed)?;
    let top1 = if a.ptq {
        ptq_accuracy(&ckpt, t.split(split), &spec, &f)?
    } else {
        evaluate_top1(&ckpt, &t, split)?
    };
    r.input_file("ckpt", &a.ckpt)?
        .input("task", &a.task)
        .input("split", &a.split)
        .input("seed", seed)
        .flag("ptq", a.ptq)
        .metric("top1", top1);
    if a.ptq {
        r.input("bits", spec.bits())
            .input("exclude", exclude_input(&f));
    }
    Ok(r)
}

fn train_toy(a: &TrainArgs) -> Result<RunReport> {
    if let Some(c) = &a.config {
        ensure_distinct(&a.out, &[c])?;
    }
    let mut r = RunReport::new("train-toy");
    let cfg = train_config(a.config.as_deref(), a.seed, a.bits, &mut r)?.with_qat(a.qat);
    let t = task(&a.task, cfg.seed)?;
    let ckpt = train(&t, &cfg)?;
    save(&ckpt, &a.out)?;
    r.input("task", &a.task)
        .input("seed", cfg.seed)
        .input("config_hash", cfg.config_hash())
        .output_file("out", &a.out, &a.out.display().to_string())?
        .flag("qat", a.qat)
        .metric("train_top1", evaluate_top1(&ckpt, &t, Split::Train)?)
        .metric("val_top1", evaluate_top1(&ckpt, &t, Split::Val)?);
    Ok(r)
}

fn verify_geometry(a: &VerifyArgs) -> Result<RunReport> {
    let mut r = RunReport::new("verify-geometry");
    let v = qvec_core::geometry::verify(a.instances, &a.dims, a.seed)?;
    let dims: Vec<String> = a.dims.iter().map(ToString::to_string).collect();
    r.input("instances", a.instances)
        .input("dims", dims.join(","))
        .input("seed", a.seed)
        .metric("passed", v.passed as f64)
        .metric("failed", v.failed as f64);
    for rec in &v.instances {
        let k = |f: &str| format!("instance.{:04}.{f}", rec.index);
        r.metric(&k("dim"), rec.dim as f64)
            .metric(&k("lipschitz"), rec.lipschitz)
            .metric(&k("lambda_star"), rec.lambda_star)
            .metric(&k("lambda_search"), rec.lambda_search)
            .metric(&k("cos_sq"), rec.cos_sq)
            .metric(&k("fraction"), rec.fraction)
            .metric(&k("epsilon"), rec.epsilon)
            .metric(&k("bound"), rec.bound)
            .metric(&k("pass"), if rec.pass { 1.0 } else { 0.0 });
    }
    if v.failed > 0 {
        r.status = Status::Error;
        r.error = Some(format!("{} of {} instances failed", v.failed, a.instances));
    }
    Ok(r)
}

pub const PIPELINE_ARTIFACTS: [&str; 5] = [
    "donor_ft.qvc",
    "donor_qat.qvc",
    "qv.qvc",
    "receiver_ft.qvc",
    "patched.qvc",
];

fn pipeline(a: &PipelineArgs) -> Result<RunReport> {
    let mut r = RunReport::new("pipeline");
    let cfg = train_config(a.config.as_deref(), a.seed, a.bits, &mut r)
        .map_err(CliError::stage("config"))?;
    let f = filter(&a.exclude)?;
    let donor = task(&a.donor, cfg.seed).map_err(CliError::stage("donor task"))?;
    let receiver = task(&a.receiver, cfg.seed).map_err(CliError::stage("receiver task"))?;
    let spec = cfg.quant;

    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::io(&a.out_dir, e))?;
    let path = |name: &str| -> PathBuf { a.out_dir.join(name) };
    let emit = |r: &mut RunReport, key: &str, name: &str, ckpt: &Checkpoint| -> Result<()> {
        save(ckpt, &path(name))?;
        r.output_file(key, &path(name), name)?;
        Ok(())
    };

    let ft_cfg = cfg.clone().with_qat(false);
    let qat_cfg = cfg.clone().with_qat(true);
    let donor_ft = train(&donor, &ft_cfg).map_err(|e| CliError::stage("donor FT")(e.into()))?;
    emit(&mut r, "donor_ft", "donor_ft.qvc", &donor_ft)?;
    let donor_qat = train(&donor, &qat_cfg).map_err(|e| CliError::stage("donor QAT")(e.into()))?;
    emit(&mut r, "donor_qat", "donor_qat.qvc", &donor_qat)?;

    let qv = extract_qv_with(&donor_qat, &donor_ft, &f, ExtractOptions::default())
        .map_err(|e| CliError::stage("extract-qv")(e.into()))?;
    emit(&mut r, "qv", "qv.qvc", &qv.to_checkpoint())?;

    let receiver_ft =
        train(&receiver, &ft_cfg).map_err(|e| CliError::stage("receiver FT")(e.into()))?;
    emit(&mut r, "receiver_ft", "receiver_ft.qvc", &receiver_ft)?;

    let eval_stage = |e: Error| CliError::stage("evaluation")(e.into());
    let dtest = donor.split(Split::Test);
    r.metric(
        "donor.ft.test_top1",
        evaluate_top1(&donor_ft, &donor, Split::Test).map_err(eval_stage)?,
    )
    .metric(
        "donor.qat.test_top1",
        evaluate_top1(&donor_qat, &donor, Split::Test).map_err(eval_stage)?,
    )
    .metric(
        "donor.ft.ptq_test_top1",
        ptq_accuracy(&donor_ft, dtest, &spec, &f).map_err(eval_stage)?,
    )
    .metric(
        "donor.qat.ptq_test_top1",
        ptq_accuracy(&donor_qat, dtest, &spec, &f).map_err(eval_stage)?,
    )
    .metric(
        "receiver.ft.test_top1",
        evaluate_top1(&receiver_ft, &receiver, Split::Test).map_err(eval_stage)?,
    )
    .metric("qv_norm", qv_norm(&qv));

    let sweep_stage = CliError::stage("sweep");
    let s = lambda_sweep(&receiver_ft, &qv, &receiver, &spec, &f)
        .map_err(|e| CliError::stage("sweep")(e.into()))?;
    let at_one =
        val_delta_at_one(&receiver_ft, &qv, &receiver, &spec, &f, &s).map_err(sweep_stage)?;
    r.metric("val_delta_lambda1", at_one)
        .metric("receiver.ft.ptq_test_top1", s.test_acc_baseline);
    sweep_metrics(&mut r, &s);

    let patched = patch(&receiver_ft, &qv, s.chosen_lambda)
        .map_err(|e| CliError::stage("patch")(e.into()))?;
    emit(&mut r, "patched", "patched.qvc", &patched)?;

    r.input("donor", &a.donor)
        .input("receiver", &a.receiver)
        .input("seed", cfg.seed)
        .input("bits", spec.bits())
        .input("exclude", exclude_input(&f))
        .input("config_hash", cfg.config_hash())
        .flag("receiver_val_touched.extract_qv", false)
        .flag("receiver_val_touched.patch", false)
        .flag("receiver_val_touched.sweep", true);
    Ok(r)
}
