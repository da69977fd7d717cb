//! Top-1 evaluation, transfer gain under post-training quantization, and the
//! validation sweep over the patch scale.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quantizer::{fake_quantize_checkpoint, QuantSpec};
use crate::qv::{patch, QuantizationVector};
use crate::tensor::{Checkpoint, NameFilter};
use crate::trainer::mlp::Mlp;
use crate::trainer::tasks::{Dataset, Split, ToyTask};

/// Candidate patch scales: 0.15, 0.30, …, 1.50.
pub fn lambda_grid() -> Vec<f32> {
    (1..=10).map(|k| (15 * k) as f32 / 100.0).collect()
}

pub fn accuracy(ckpt: &Checkpoint, data: &Dataset) -> Result<f64> {
    let model = Mlp::from_checkpoint(ckpt)?;
    accuracy_of(&model, data)
}

fn accuracy_of(model: &Mlp, data: &Dataset) -> Result<f64> {
    if model.d_in() != data.dim {
        return Err(Error::DimensionMismatch {
            expected: data.dim,
            got: model.d_in(),
        });
    }
    if let Some(&y) = data.labels.iter().find(|&&y| y >= model.n_classes()) {
        return Err(Error::Architecture(format!(
            "label {y} exceeds the head's {} classes",
            model.n_classes()
        )));
    }
    if data.is_empty() {
        return Ok(0.0);
    }
    let correct = (0..data.len())
        .filter(|&i| model.predict(data.row(i)) == data.labels[i])
        .count();
    Ok(correct as f64 / data.len() as f64)
}

pub fn evaluate_top1(ckpt: &Checkpoint, task: &ToyTask, split: Split) -> Result<f64> {
    accuracy(ckpt, task.split(split))
}

/// Top-1 after fake quantization.
pub fn ptq_accuracy(
    ckpt: &Checkpoint,
    data: &Dataset,
    spec: &QuantSpec,
    filter: &NameFilter,
) -> Result<f64> {
    accuracy(&fake_quantize_checkpoint(ckpt, spec, filter)?, data)
}

/// `Acc(FQ(θ_R + λρ)) − Acc(FQ(θ_R))` on the test split.
pub fn transfer_gain(
    theta_r: &Checkpoint,
    qv: &QuantizationVector,
    lambda: f32,
    task: &ToyTask,
    spec: &QuantSpec,
    filter: &NameFilter,
) -> Result<f64> {
    let patched = patch(theta_r, qv, lambda)?;
    let test = task.split(Split::Test);
    Ok(ptq_accuracy(&patched, test, spec, filter)? - ptq_accuracy(theta_r, test, spec, filter)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub grid: Vec<f32>,
    pub val_acc: Vec<f64>,
    /// Validation accuracy of the unpatched receiver after quantization.
    pub val_acc_baseline: f64,
    pub chosen_lambda: f32,
    pub test_acc_baseline: f64,
    pub test_acc_patched: f64,
    pub test_delta: f64,
}

/// Picks the grid scale with the best post-quantization validation accuracy
/// (ties go to the smallest scale), then reads the test split once to report
/// the gain at that scale.
pub fn lambda_sweep(
    theta_r: &Checkpoint,
    qv: &QuantizationVector,
    task: &ToyTask,
    spec: &QuantSpec,
    filter: &NameFilter,
) -> Result<SweepResult> {
    sweep_grid(theta_r, qv, task, spec, filter, &lambda_grid())
}

pub fn sweep_grid(
    theta_r: &Checkpoint,
    qv: &QuantizationVector,
    task: &ToyTask,
    spec: &QuantSpec,
    filter: &NameFilter,
    grid: &[f32],
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty lambda grid".into()));
    }
    let val = task.split(Split::Val);
    let val_acc_baseline = ptq_accuracy(theta_r, val, spec, filter)?;
    let mut val_acc = Vec::with_capacity(grid.len());
    for &l in grid {
        val_acc.push(ptq_accuracy(&patch(theta_r, qv, l)?, val, spec, filter)?);
    }
    let best = select_lambda(&val_acc);
    let chosen_lambda = grid[best];

    let test = task.split(Split::Test);
    let test_acc_baseline = ptq_accuracy(theta_r, test, spec, filter)?;
    let test_acc_patched = ptq_accuracy(&patch(theta_r, qv, chosen_lambda)?, test, spec, filter)?;
    Ok(SweepResult {
        grid: grid.to_vec(),
        val_acc,
        val_acc_baseline,
        chosen_lambda,
        test_acc_baseline,
        test_acc_patched,
        test_delta: test_acc_patched - test_acc_baseline,
    })
}

/// Index of the first maximum.
pub fn select_lambda(val_acc: &[f64]) -> usize {
    let mut best = 0;
    for (i, &a) in val_acc.iter().enumerate() {
        if a > val_acc[best] {
            best = i;
        }
    }
    best
}
