//! Quantization vectors: `ρ = θ_QAT − θ_FT` on backbone tensors, and
//! zero-shot patching `θ_R + λ·ρ`.

use std::collections::BTreeMap;

use log::warn;

use crate::error::{Error, Result};
use crate::quantizer::QuantSpec;
use crate::tensor::{checkpoint_axpy, compare_maps, Checkpoint, NameFilter, Tensor, TensorMap};

/// Checkpoint metadata keys shared by the trainer and the QV container.
pub mod meta_keys {
    pub const KIND: &str = "kind";
    pub const TASK: &str = "task";
    pub const DONOR_TASK: &str = "donor_task";
    pub const SEED: &str = "seed";
    pub const BITS: &str = "bits";
    pub const REGIME: &str = "regime";
    pub const PAIR_HASH: &str = "pair_hash";
    pub const PATCH_LAMBDA: &str = "patch_lambda";
    pub const PATCH_DONOR: &str = "patch_donor_task";
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub donor_task: String,
    pub seed: String,
    pub bits: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationVector {
    deltas: TensorMap,
    provenance: Provenance,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractOptions {
    /// Accept checkpoints whose training configurations differ in more than
    /// the QAT flag.
    pub allow_config_mismatch: bool,
}

impl QuantizationVector {
    pub fn new(deltas: TensorMap, provenance: Provenance) -> Self {
        Self { deltas, provenance }
    }

    pub fn deltas(&self) -> &TensorMap {
        &self.deltas
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.deltas.keys().map(String::as_str)
    }

    pub fn scaled(&self, c: f32) -> Result<Self> {
        let deltas = self
            .deltas
            .iter()
            .map(|(n, t)| t.scaled(c).map(|t| (n.clone(), t)))
            .collect::<Result<_>>()?;
        Ok(Self {
            deltas,
            provenance: self.provenance.clone(),
        })
    }

    /// Storage form: a checkpoint tagged `kind = qv`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = BTreeMap::from([
            (meta_keys::KIND.to_string(), "qv".to_string()),
            (
                meta_keys::DONOR_TASK.to_string(),
                self.provenance.donor_task.clone(),
            ),
            (meta_keys::SEED.to_string(), self.provenance.seed.clone()),
            (
                meta_keys::BITS.to_string(),
                self.provenance.bits.to_string(),
            ),
        ]);
        Checkpoint::from_parts(self.deltas.clone(), meta).expect("names validated on construction")
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta_value(meta_keys::KIND) != Some("qv") {
            return Err(Error::BadHeader(
                "checkpoint is not a quantization vector (meta kind != \"qv\")".into(),
            ));
        }
        let bits = ckpt
            .meta_value(meta_keys::BITS)
            .and_then(|b| b.parse().ok())
            .ok_or_else(|| Error::BadHeader("quantization vector lacks a valid bits tag".into()))?;
        Ok(Self {
            deltas: ckpt.entries().clone(),
            provenance: Provenance {
                donor_task: ckpt
                    .meta_value(meta_keys::DONOR_TASK)
                    .unwrap_or("")
                    .to_string(),
                seed: ckpt.meta_value(meta_keys::SEED).unwrap_or("").to_string(),
                bits,
            },
        })
    }
}

/// `θ_QAT − θ_FT` on every name the filter keeps, with default options.
pub fn extract_qv(
    theta_qat: &Checkpoint,
    theta_ft: &Checkpoint,
    filter: &NameFilter,
) -> Result<QuantizationVector> {
    extract_qv_with(theta_qat, theta_ft, filter, ExtractOptions::default())
}

pub fn extract_qv_with(
    theta_qat: &Checkpoint,
    theta_ft: &Checkpoint,
    filter: &NameFilter,
    opts: ExtractOptions,
) -> Result<QuantizationVector> {
    let inc = compare_maps(theta_qat.entries(), theta_ft.entries());
    if !inc.is_empty() {
        return Err(Error::IncompatibleCheckpoints(inc));
    }
    for key in [meta_keys::TASK, meta_keys::SEED] {
        let (a, b) = (theta_qat.meta_value(key), theta_ft.meta_value(key));
        if a != b {
            warn!("extract_qv: metadata {key:?} differs between QAT ({a:?}) and FT ({b:?})");
        }
    }
    if let (Some(a), Some(b)) = (
        theta_qat.meta_value(meta_keys::PAIR_HASH),
        theta_ft.meta_value(meta_keys::PAIR_HASH),
    ) {
        if a != b {
            if !opts.allow_config_mismatch {
                return Err(Error::ConfigMismatch {
                    left: a.to_string(),
                    right: b.to_string(),
                });
            }
            warn!("extract_qv: configuration mismatch overridden ({a} vs {b})");
        }
    }

    let mut deltas = TensorMap::new();
    for (name, q) in theta_qat.iter() {
        if filter.is_excluded(name) {
            continue;
        }
        let f = theta_ft.get(name).expect("compatibility checked");
        let data = q.data().iter().zip(f.data()).map(|(a, b)| a - b).collect();
        deltas.insert(
            name.to_string(),
            Tensor::named(name, q.shape().to_vec(), data)?,
        );
    }

    let bits = match theta_qat.meta_value(meta_keys::BITS).map(str::parse::<u32>) {
        Some(Ok(b)) => b,
        _ => {
            warn!(
                "extract_qv: QAT checkpoint has no bits tag, assuming {}",
                QuantSpec::DEFAULT_BITS
            );
            QuantSpec::DEFAULT_BITS
        }
    };
    Ok(QuantizationVector {
        deltas,
        provenance: Provenance {
            donor_task: theta_qat
                .meta_value(meta_keys::TASK)
                .unwrap_or("")
                .to_string(),
            seed: theta_qat
                .meta_value(meta_keys::SEED)
                .unwrap_or("")
                .to_string(),
            bits,
        },
    })
}

/// `θ_R + λ·ρ` on the vector's names; all other tensors and, for `λ = 0`,
/// the metadata are copied unchanged.
pub fn patch(theta_r: &Checkpoint, qv: &QuantizationVector, lambda: f32) -> Result<Checkpoint> {
    let mut out =
        checkpoint_axpy(theta_r, lambda, &qv.deltas, &NameFilter::none()).map_err(|e| match e {
            Error::IncompatibleCheckpoints(inc) => Error::GaugeMismatch(inc),
            other => other,
        })?;
    if lambda != 0.0 {
        out.set_meta(meta_keys::PATCH_LAMBDA, format!("{lambda}"));
        out.set_meta(meta_keys::PATCH_DONOR, qv.provenance.donor_task.clone());
    }
    Ok(out)
}

/// Euclidean norm of the flattened vector, accumulated in f64.
pub fn qv_norm(a: &QuantizationVector) -> f64 {
    a.deltas.values().map(Tensor::sum_sq).sum::<f64>().sqrt()
}

/// Euclidean cosine of the flattened vectors (lexicographic name order).
pub fn qv_cosine(a: &QuantizationVector, b: &QuantizationVector) -> Result<f64> {
    let inc = compare_maps(&a.deltas, &b.deltas);
    if !inc.is_empty() {
        return Err(Error::IncompatibleCheckpoints(inc));
    }
    let (na, nb) = (qv_norm(a), qv_norm(b));
    if na == 0.0 {
        return Err(Error::ZeroVector("first quantization vector"));
    }
    if nb == 0.0 {
        return Err(Error::ZeroVector("second quantization vector"));
    }
    let dot: f64 = a
        .deltas
        .iter()
        .flat_map(|(n, t)| t.data().iter().zip(b.deltas[n].data()))
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt(items: &[(&str, Vec<f32>)]) -> Checkpoint {
        let mut c = Checkpoint::new();
        for (n, d) in items {
            c.insert(*n, Tensor::new(vec![d.len()], d.clone()).unwrap())
                .unwrap();
        }
        c
    }

    fn qv(items: &[(&str, Vec<f32>)]) -> QuantizationVector {
        QuantizationVector::new(
            ckpt(items).into_entries(),
            Provenance {
                donor_task: "t".into(),
                seed: "1".into(),
                bits: 3,
            },
        )
    }

    fn pair() -> (Checkpoint, Checkpoint) {
        let ft = ckpt(&[
            ("backbone.0.weight", vec![0.1, -0.2, 0.3]),
            ("head.weight", vec![1.0, 2.0]),
        ])
        .with_meta("task", "blobs-B")
        .with_meta("seed", "7");
        let qat = ckpt(&[
            ("backbone.0.weight", vec![0.15, -0.25, 0.3]),
            ("head.weight", vec![1.5, 2.5]),
        ])
        .with_meta("task", "blobs-B")
        .with_meta("seed", "7")
        .with_meta("bits", "3");
        (qat, ft)
    }

    #[test]
    fn self_difference_is_zero() {
        let (qat, _) = pair();
        let v = extract_qv(&qat, &qat, &NameFilter::none()).unwrap();
        assert_eq!(qv_norm(&v), 0.0);
    }

    #[test]
    fn head_is_filtered_and_provenance_recorded() {
        let (qat, ft) = pair();
        let v = extract_qv(&qat, &ft, &NameFilter::new(&["head.*"]).unwrap()).unwrap();
        assert_eq!(v.names().collect::<Vec<_>>(), vec!["backbone.0.weight"]);
        assert_eq!(v.provenance().donor_task, "blobs-B");
        assert_eq!(v.provenance().seed, "7");
        assert_eq!(v.provenance().bits, 3);
    }

    #[test]
    fn patch_inverts_extraction() {
        let (qat, ft) = pair();
        let v = extract_qv(&qat, &ft, &NameFilter::default()).unwrap();
        let patched = patch(&ft, &v, 1.0).unwrap();
        for (a, b) in patched
            .get("backbone.0.weight")
            .unwrap()
            .data()
            .iter()
            .zip(qat.get("backbone.0.weight").unwrap().data())
        {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12));
        }
        assert!(patched
            .get("head.weight")
            .unwrap()
            .bitwise_eq(ft.get("head.weight").unwrap()));
    }

    #[test]
    fn lambda_zero_is_bitwise_identity() {
        let (qat, ft) = pair();
        let v = extract_qv(&qat, &ft, &NameFilter::default()).unwrap();
        assert!(patch(&ft, &v, 0.0).unwrap().bitwise_eq(&ft));
    }

    #[test]
    fn split_patch_matches_single_patch() {
        let (qat, ft) = pair();
        let v = extract_qv(&qat, &ft, &NameFilter::default()).unwrap();
        let twice = patch(&patch(&ft, &v, 0.4).unwrap(), &v, 0.6).unwrap();
        let once = patch(&ft, &v, 1.0).unwrap();
        for (n, t) in once.iter() {
            for (a, b) in t.data().iter().zip(twice.get(n).unwrap().data()) {
                assert!((a - b).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn patch_mismatch_is_gauge_error() {
        let v = qv(&[("backbone.9.weight", vec![1.0])]);
        let (_, ft) = pair();
        assert!(matches!(patch(&ft, &v, 1.0), Err(Error::GaugeMismatch(_))));
        let v = qv(&[("backbone.0.weight", vec![1.0])]);
        assert!(matches!(patch(&ft, &v, 1.0), Err(Error::GaugeMismatch(_))));
    }

    #[test]
    fn config_mismatch_refused_unless_overridden() {
        let (qat, ft) = pair();
        let qat = qat.with_meta("pair_hash", "aaa");
        let ft = ft.with_meta("pair_hash", "bbb");
        assert!(matches!(
            extract_qv(&qat, &ft, &NameFilter::default()),
            Err(Error::ConfigMismatch { .. })
        ));
        let opts = ExtractOptions {
            allow_config_mismatch: true,
        };
        assert!(extract_qv_with(&qat, &ft, &NameFilter::default(), opts).is_ok());
    }

    #[test]
    fn incompatible_pair() {
        let (qat, _) = pair();
        let other = ckpt(&[("backbone.0.weight", vec![0.0, 0.0, 0.0])]);
        assert!(matches!(
            extract_qv(&qat, &other, &NameFilter::none()),
            Err(Error::IncompatibleCheckpoints(_))
        ));
    }

    #[test]
    fn norms() {
        assert_eq!(qv_norm(&qv(&[("w", vec![0.0, 0.0])])), 0.0);
        assert_eq!(qv_norm(&qv(&[("w", vec![3.0, 4.0])])), 5.0);
        let a = qv(&[("w", vec![0.3, -1.7, 2.9]), ("v", vec![0.01])]);
        let half = a.scaled(0.5).unwrap();
        assert!((qv_norm(&half) - 0.5 * qv_norm(&a)).abs() <= 1e-7 * qv_norm(&a));
    }

    #[test]
    fn cosines() {
        let a = qv(&[("w", vec![0.3, -1.7, 2.9]), ("v", vec![0.01, 4.0])]);
        assert!((qv_cosine(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
        let neg = a.scaled(-1.0).unwrap();
        assert!((qv_cosine(&a, &neg).unwrap() + 1.0).abs() <= 1e-12);
        let x = qv(&[("w", vec![1.0, 2.0, 3.0]), ("v", vec![0.0, 0.0])]);
        let y = qv(&[("w", vec![0.0, 0.0, 0.0]), ("v", vec![5.0, -1.0])]);
        assert!(qv_cosine(&x, &y).unwrap().abs() <= 1e-12);
        let z = qv(&[("w", vec![0.0, 0.0, 0.0]), ("v", vec![0.0, 0.0])]);
        assert!(matches!(qv_cosine(&x, &z), Err(Error::ZeroVector(_))));
    }

    #[test]
    fn storage_round_trip() {
        let (qat, ft) = pair();
        let v = extract_qv(&qat, &ft, &NameFilter::default()).unwrap();
        let c = v.to_checkpoint();
        assert_eq!(c.meta_value("kind"), Some("qv"));
        assert_eq!(QuantizationVector::from_checkpoint(&c).unwrap(), v);
        assert!(QuantizationVector::from_checkpoint(&ft).is_err());
    }
}
