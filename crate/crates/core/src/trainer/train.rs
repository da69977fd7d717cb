use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quantizer::{ste_apply, QuantSpec};
use crate::qv::meta_keys;
use crate::tensor::{Checkpoint, Tensor};
use crate::trainer::adamw::{adamw_step, AdamWConfig, AdamWState};
use crate::trainer::mlp::Mlp;
use crate::trainer::tasks::{make_task, stream, Split, ToyTask, PRETEXT_TASK};

/// Hyperparameters of one fine-tuning run. A matched FT/QAT pair differs
/// only in `qat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps_adam: f32,
    pub seed: u64,
    pub qat: bool,
    pub quant: QuantSpec,
    pub hidden_dims: Vec<usize>,
    /// Epochs on the shared pretext task before fine-tuning; 0 starts
    /// fine-tuning from the seeded initialization.
    pub pretrain_epochs: usize,
    pub pretrain_lr: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 2e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            seed: 7,
            qat: false,
            quant: QuantSpec::default(),
            hidden_dims: vec![64, 64],
            pretrain_epochs: 20,
            pretrain_lr: 3e-3,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_qat(mut self, qat: bool) -> Self {
        self.qat = qat;
        self
    }

    pub fn validate(&self) -> Result<()> {
        QuantSpec::new(self.quant.bits())?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return bad("hidden_dims must be nonempty and positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite())
            || !(self.pretrain_lr > 0.0 && self.pretrain_lr.is_finite())
        {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.eps_adam.is_nan()
            || self.eps_adam <= 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return bad("eps_adam must be positive and weight_decay non-negative");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }

    /// Sorted-key, whitespace-free JSON.
    pub fn canonical_json(&self) -> String {
        serde_json::to_value(self)
            .expect("config serializes")
            .to_string()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    /// Hash over every field except `qat`; equal for a matched FT/QAT pair.
    pub fn pair_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("qat");
        sha256_hex(v.to_string().as_bytes())
    }
}

fn pretrain_key(cfg: &TrainConfig) -> String {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    let obj = v.as_object_mut().expect("object");
    for k in ["epochs", "lr", "qat", "quant"] {
        obj.remove(k);
    }
    v.to_string()
}

/// Backbone parameters after pretext training, shared by every task and
/// regime with the same seed and pretraining settings.
fn pretrained_backbone(cfg: &TrainConfig) -> Result<Arc<Vec<f32>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<Vec<f32>>>>> = OnceLock::new();
    let key = pretrain_key(cfg);
    let cache = CACHE.get_or_init(Default::default);
    if let Some(p) = cache.lock().expect("cache lock").get(&key) {
        return Ok(p.clone());
    }
    let pretext = make_task(PRETEXT_TASK, cfg.seed)?;
    let mut model = Mlp::init(
        pretext.d_in(),
        &cfg.hidden_dims,
        pretext.n_classes(),
        cfg.seed,
    )?;
    let opt = AdamWConfig {
        lr: cfg.pretrain_lr,
        ..cfg.adamw()
    };
    fit(&mut model, &pretext, cfg, &opt, cfg.pretrain_epochs, false)?;
    let head_start = model
        .layers()
        .iter()
        .find(|l| l.is_head())
        .expect("head")
        .weight_offset;
    let backbone = Arc::new(model.params()[..head_start].to_vec());
    cache
        .lock()
        .expect("cache lock")
        .insert(key, backbone.clone());
    Ok(backbone)
}

/// Parameters a run with `cfg` starts from: the pretrained backbone (or the
/// seeded initialization when pretraining is off) and a seeded head.
pub fn initial_model(task: &ToyTask, cfg: &TrainConfig) -> Result<Mlp> {
    cfg.validate()?;
    let mut model = Mlp::init(task.d_in(), &cfg.hidden_dims, task.n_classes(), cfg.seed)?;
    if cfg.pretrain_epochs > 0 {
        let backbone = pretrained_backbone(cfg)?;
        model.params_mut()[..backbone.len()].copy_from_slice(&backbone);
    }
    Ok(model)
}

/// Backbone weights as seen by the forward pass: fake-quantized through the
/// straight-through estimator when training with QAT.
fn effective_params(model: &Mlp, spec: &QuantSpec) -> Result<Vec<f32>> {
    let mut p = model.params().to_vec();
    for l in model.layers().iter().filter(|l| !l.is_head()) {
        let range = l.weight_range();
        let w = Tensor::new(vec![l.out_dim, l.in_dim], p[range.clone()].to_vec())?;
        let applied = ste_apply(&w, spec)?;
        p[range].copy_from_slice(applied.value().data());
    }
    Ok(p)
}

fn fit(
    model: &mut Mlp,
    task: &ToyTask,
    cfg: &TrainConfig,
    opt: &AdamWConfig,
    epochs: usize,
    qat: bool,
) -> Result<()> {
    let data = task.split(Split::Train);
    let mut state = AdamWState::new(model.params().len());
    let mut shuffle = stream(cfg.seed, &format!("shuffle/{}", task.name()));
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut shuffle);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grad) = if qat {
                let eff = effective_params(model, &cfg.quant)?;
                // Identity backward: the gradient taken at FQ(W) is applied to W.
                model.loss_and_grad(&eff, data, batch)
            } else {
                model.loss_and_grad(model.params(), data, batch)
            };
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: state.t + 1,
                });
            }
            adamw_step(&mut state, model.params_mut(), &grad, opt)?;
        }
    }
    Ok(())
}

/// Mini-batch cross-entropy training with AdamW. Sequential and fully
/// determined by `(task, cfg)`.
pub fn train(task: &ToyTask, cfg: &TrainConfig) -> Result<Checkpoint> {
    let mut model = initial_model(task, cfg)?;
    fit(&mut model, task, cfg, &cfg.adamw(), cfg.epochs, cfg.qat)?;
    let ckpt = model
        .to_checkpoint()?
        .with_meta(meta_keys::TASK, task.name())
        .with_meta(meta_keys::SEED, cfg.seed.to_string())
        .with_meta("data_seed", task.seed().to_string())
        .with_meta(meta_keys::REGIME, if cfg.qat { "QAT" } else { "FT" })
        .with_meta(meta_keys::BITS, cfg.quant.bits().to_string())
        .with_meta("config_hash", cfg.config_hash())
        .with_meta(meta_keys::PAIR_HASH, cfg.pair_hash());
    Ok(ckpt)
}
