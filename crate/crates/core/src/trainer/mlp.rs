//! Rectifier MLP over a flat parameter vector.
//!
//! Layers are named `backbone.{i}.weight` / `backbone.{i}.bias` for hidden
//! layers and `head.weight` / `head.bias` for the classifier. Weights are
//! `[out, in]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Checkpoint, Tensor};
use crate::trainer::tasks::{stream, Dataset};

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlot {
    pub prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerSlot {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.in_dim * self.out_dim
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.out_dim
    }

    pub fn is_head(&self) -> bool {
        self.prefix == "head"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerSlot>,
    params: Vec<f32>,
}

fn build_layout(d_in: usize, hidden: &[usize], n_classes: usize) -> (Vec<LayerSlot>, usize) {
    let mut layers = Vec::new();
    let mut offset = 0;
    let mut prev = d_in;
    let dims = hidden.iter().copied().chain(std::iter::once(n_classes));
    for (i, out) in dims.enumerate() {
        let prefix = if i == hidden.len() {
            "head".to_string()
        } else {
            format!("backbone.{i}")
        };
        let weight_offset = offset;
        offset += prev * out;
        let bias_offset = offset;
        offset += out;
        layers.push(LayerSlot {
            prefix,
            in_dim: prev,
            out_dim: out,
            weight_offset,
            bias_offset,
        });
        prev = out;
    }
    (layers, offset)
}

impl Mlp {
    /// Weights uniform in `±1/√fan_in`, biases zero. Each layer draws from
    /// its own stream, so backbone initialization does not depend on the
    /// head width and vice versa.
    pub fn init(d_in: usize, hidden: &[usize], n_classes: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || n_classes == 0 || hidden.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        let (layers, total) = build_layout(d_in, hidden, n_classes);
        let mut params = vec![0.0f32; total];
        for l in &layers {
            let mut rng = stream(seed, &format!("init/{}", l.prefix));
            let k = 1.0 / (l.in_dim as f32).sqrt();
            for w in &mut params[l.weight_range()] {
                *w = rng.random_range(-k..k);
            }
        }
        Ok(Self { layers, params })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let arch = |msg: String| Error::Architecture(msg);
        let mut mats = Vec::new();
        let mut i = 0;
        while let Some(w) = ckpt.get(&format!("backbone.{i}.weight")) {
            mats.push((format!("backbone.{i}"), w));
            i += 1;
        }
        let head = ckpt
            .get(HEAD_WEIGHT)
            .ok_or_else(|| arch(format!("missing {HEAD_WEIGHT:?}")))?;
        mats.push(("head".to_string(), head));
        let expected_names = 2 * mats.len();
        if ckpt.len() != expected_names {
            return Err(arch(format!(
                "expected {expected_names} tensors for {} layers, found {}",
                mats.len(),
                ckpt.len()
            )));
        }
        let mut dims = Vec::new();
        for (prefix, w) in &mats {
            let (out, inp) = w
                .matrix_dims()
                .ok_or_else(|| arch(format!("{prefix}.weight is not rank 2")))?;
            if let Some(&(_, prev_out)) = dims.last() {
                if prev_out != inp {
                    return Err(arch(format!(
                        "{prefix}.weight expects {inp} inputs, previous layer has {prev_out}"
                    )));
                }
            }
            let b = ckpt
                .get(&format!("{prefix}.bias"))
                .ok_or_else(|| arch(format!("missing {prefix}.bias")))?;
            if b.shape() != [out] {
                return Err(arch(format!("{prefix}.bias has shape {:?}", b.shape())));
            }
            dims.push((inp, out));
        }
        let hidden: Vec<usize> = dims[..dims.len() - 1].iter().map(|&(_, o)| o).collect();
        let (layers, total) = build_layout(dims[0].0, &hidden, dims[dims.len() - 1].1);
        let mut params = vec![0.0; total];
        for l in &layers {
            params[l.weight_range()]
                .copy_from_slice(ckpt.get(&format!("{}.weight", l.prefix)).unwrap().data());
            params[l.bias_range()]
                .copy_from_slice(ckpt.get(&format!("{}.bias", l.prefix)).unwrap().data());
        }
        Ok(Self { layers, params })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        for l in &self.layers {
            let w = &self.params[l.weight_range()];
            let b = &self.params[l.bias_range()];
            let wn = format!("{}.weight", l.prefix);
            let bn = format!("{}.bias", l.prefix);
            c.insert(
                wn.clone(),
                Tensor::named(&wn, vec![l.out_dim, l.in_dim], w.to_vec())?,
            )?;
            c.insert(bn.clone(), Tensor::named(&bn, vec![l.out_dim], b.to_vec())?)?;
        }
        Ok(c)
    }

    pub fn layers(&self) -> &[LayerSlot] {
        &self.layers
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn n_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Logits for one input, using `params` in place of the stored ones.
    pub fn logits_with(&self, params: &[f32], x: &[f32]) -> Vec<f32> {
        let mut a = x.to_vec();
        for l in &self.layers {
            let w = &params[l.weight_range()];
            let b = &params[l.bias_range()];
            let mut z: Vec<f32> = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * l.in_dim..(o + 1) * l.in_dim];
                *zo += dot(row, &a);
            }
            if !l.is_head() {
                relu(&mut z);
            }
            a = z;
        }
        a
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f32> {
        self.logits_with(&self.params, x)
    }

    /// Argmax of the logits; ties go to the lowest class index.
    pub fn predict(&self, x: &[f32]) -> usize {
        argmax(&self.logits(x))
    }

    /// Mean cross-entropy over `batch` and its gradient with respect to
    /// `params`.
    pub fn loss_and_grad(
        &self,
        params: &[f32],
        data: &Dataset,
        batch: &[usize],
    ) -> (f32, Vec<f32>) {
        let bsz = batch.len();
        let mut grad = vec![0.0f32; params.len()];
        // acts[l] holds the input to layer l for the whole batch.
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(
            batch
                .iter()
                .flat_map(|&i| data.row(i).iter().copied())
                .collect(),
        );
        for l in &self.layers {
            let input = acts.last().unwrap();
            let w = &params[l.weight_range()];
            let b = &params[l.bias_range()];
            let mut out = vec![0.0f32; bsz * l.out_dim];
            for s in 0..bsz {
                let x = &input[s * l.in_dim..(s + 1) * l.in_dim];
                for o in 0..l.out_dim {
                    out[s * l.out_dim + o] = b[o] + dot(&w[o * l.in_dim..(o + 1) * l.in_dim], x);
                }
            }
            if !l.is_head() {
                relu(&mut out);
            }
            acts.push(out);
        }

        let classes = self.n_classes();
        let logits = acts.last().unwrap();
        let mut dz = vec![0.0f32; bsz * classes];
        let mut loss = 0.0f32;
        let inv_b = 1.0 / bsz as f32;
        for (s, &idx) in batch.iter().enumerate() {
            let z = &logits[s * classes..(s + 1) * classes];
            let m = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = z.iter().map(|v| (v - m).exp()).collect();
            let sum: f32 = exps.iter().sum();
            let y = data.labels[idx];
            loss += (sum.ln() + m - z[y]) * inv_b;
            for c in 0..classes {
                let p = exps[c] / sum;
                dz[s * classes + c] = (p - if c == y { 1.0 } else { 0.0 }) * inv_b;
            }
        }

        for (li, l) in self.layers.iter().enumerate().rev() {
            let input = &acts[li];
            let w = &params[l.weight_range()];
            {
                let gw = &mut grad[l.weight_range()];
                for s in 0..bsz {
                    let x = &input[s * l.in_dim..(s + 1) * l.in_dim];
                    for o in 0..l.out_dim {
                        let d = dz[s * l.out_dim + o];
                        if d != 0.0 {
                            for (g, xi) in gw[o * l.in_dim..(o + 1) * l.in_dim].iter_mut().zip(x) {
                                *g += d * xi;
                            }
                        }
                    }
                }
            }
            {
                let gb = &mut grad[l.bias_range()];
                for s in 0..bsz {
                    for o in 0..l.out_dim {
                        gb[o] += dz[s * l.out_dim + o];
                    }
                }
            }
            if li == 0 {
                break;
            }
            let mut da = vec![0.0f32; bsz * l.in_dim];
            for s in 0..bsz {
                for o in 0..l.out_dim {
                    let d = dz[s * l.out_dim + o];
                    if d != 0.0 {
                        let row = &w[o * l.in_dim..(o + 1) * l.in_dim];
                        for (a, wi) in da[s * l.in_dim..(s + 1) * l.in_dim].iter_mut().zip(row) {
                            *a += d * wi;
                        }
                    }
                }
            }
            // Previous layer is hidden: rectifier mask from its output.
            for (a, &act) in da.iter_mut().zip(input.iter()) {
                if act <= 0.0 {
                    *a = 0.0;
                }
            }
            dz = da;
        }
        (loss, grad)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu(v: &mut [f32]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
