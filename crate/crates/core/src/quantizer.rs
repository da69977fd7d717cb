//! Symmetric per-channel weight fake quantization.
//!
//! For a rank-2 weight `W` (rows are output channels) and bit-width `b`:
//!
//! ```text
//! q_min = -2^(b-1),  q_max = 2^(b-1) - 1
//! s_i   = max_j |W_ij| / q_max
//! Ŵ_ij  = clip(round_half_even(W_ij / s_i), q_min, q_max)
//! FQ(W)_ij = s_i · Ŵ_ij
//! ```
//!
//! All-zero rows have `s_i = 0` and map to zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Checkpoint, NameFilter, Tensor};

/// Bit-width of the symmetric integer grid. Granularity is always per output
/// channel and ties round half to even.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    bits: u32,
}

impl QuantSpec {
    pub const DEFAULT_BITS: u32 = 3;

    pub fn new(bits: u32) -> Result<Self> {
        // Codes must stay exactly representable as f32.
        if !(2..=16).contains(&bits) {
            return Err(Error::InvalidQuantSpec(format!(
                "bits must be in [2, 16], got {bits}"
            )));
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn q_min(&self) -> i32 {
        -(1 << (self.bits - 1))
    }

    pub fn q_max(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }
}

impl Default for QuantSpec {
    fn default() -> Self {
        Self {
            bits: Self::DEFAULT_BITS,
        }
    }
}

/// Integer codes plus per-row scales.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedView {
    pub rows: usize,
    pub cols: usize,
    pub codes: Vec<i32>,
    pub scales: Vec<f32>,
}

impl QuantizedView {
    pub fn dequantize(&self) -> Tensor {
        let data = self
            .codes
            .chunks_exact(self.cols)
            .zip(&self.scales)
            .flat_map(|(row, &s)| row.iter().map(move |&c| s * c as f32))
            .collect();
        Tensor::new(vec![self.rows, self.cols], data).expect("finite by construction")
    }

    pub fn row_codes(&self, row: usize) -> &[i32] {
        &self.codes[row * self.cols..(row + 1) * self.cols]
    }
}

fn require_matrix(w: &Tensor) -> Result<(usize, usize)> {
    w.matrix_dims().ok_or_else(|| Error::RankMismatch {
        name: "<weight>".into(),
        expected: 2,
        shape: w.shape().to_vec(),
    })
}

/// `s_i = max_j |W_ij| / q_max` for each row.
pub fn channel_scales(w: &Tensor, spec: &QuantSpec) -> Result<Vec<f32>> {
    let (_, cols) = require_matrix(w)?;
    let q_max = spec.q_max() as f32;
    Ok(w.data()
        .chunks_exact(cols)
        .map(|row| row.iter().fold(0.0f32, |m, x| m.max(x.abs())) / q_max)
        .collect())
}

pub fn quantize_tensor(w: &Tensor, spec: &QuantSpec) -> Result<QuantizedView> {
    let (rows, cols) = require_matrix(w)?;
    let scales = channel_scales(w, spec)?;
    let (lo, hi) = (spec.q_min() as f32, spec.q_max() as f32);
    let codes = w
        .data()
        .chunks_exact(cols)
        .zip(&scales)
        .flat_map(|(row, &s)| {
            row.iter().map(move |&x| {
                if s == 0.0 {
                    0
                } else {
                    (x / s).round_ties_even().clamp(lo, hi) as i32
                }
            })
        })
        .collect();
    Ok(QuantizedView {
        rows,
        cols,
        codes,
        scales,
    })
}

/// Quantize-then-dequantize round trip `FQ(W)`.
pub fn fake_quantize_tensor(w: &Tensor, spec: &QuantSpec) -> Result<Tensor> {
    Ok(quantize_tensor(w, spec)?.dequantize())
}

/// Applies [`fake_quantize_tensor`] to every rank-2 tensor the filter does
/// not exclude. Everything else is copied bitwise.
pub fn fake_quantize_checkpoint(
    ckpt: &Checkpoint,
    spec: &QuantSpec,
    filter: &NameFilter,
) -> Result<Checkpoint> {
    let mut entries = ckpt.entries().clone();
    for (name, t) in entries.iter_mut() {
        if t.rank() == 2 && !filter.is_excluded(name) {
            *t = fake_quantize_tensor(t, spec)?;
        }
    }
    Checkpoint::from_parts(entries, ckpt.meta().clone())
}

/// Straight-through estimator wrapper `W + stopgrad(FQ(W) − W)`.
///
/// The forward value is exactly `FQ(W)`; the backward pass is the identity.
#[derive(Debug, Clone)]
pub struct SteApplied {
    value: Tensor,
}

impl SteApplied {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn into_value(self) -> Tensor {
        self.value
    }

    /// Gradient with respect to the latent weight: the upstream gradient,
    /// unchanged.
    pub fn backward(&self, upstream: &Tensor) -> Tensor {
        upstream.clone()
    }
}

pub fn ste_apply(w: &Tensor, spec: &QuantSpec) -> Result<SteApplied> {
    Ok(SteApplied {
        value: fake_quantize_tensor(w, spec)?,
    })
}
