//! Synthetic classification tasks.
//!
//! Every generator emits points in the same [`TASK_DIM`]-dimensional input
//! space so that backbones trained on different tasks share shapes and can
//! exchange quantization vectors. A low-dimensional signal is padded with
//! isotropic nuisance noise and rotated, so first-layer weights must cancel
//! the nuisance directions precisely.
//!
//! blobs-A and blobs-B label one shared pool of anisotropic Gaussian
//! clusters; blobs-B is blobs-A with two classes merged. Layouts (means,
//! rotations, assignments) are fixed; the seed drives sampling noise and
//! the split shuffle.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TASK_DIM: usize = 8;
pub const DEFAULT_SAMPLES: usize = 5000;
pub const REGISTERED_TASKS: [&str; 4] = ["blobs-A", "blobs-B", "moons", "xor-grid"];

/// Deterministic, platform-independent sub-seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub(crate) fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

/// Row-major features with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug)]
pub struct ToyTask {
    name: String,
    seed: u64,
    n_classes: usize,
    train: Dataset,
    val: Dataset,
    test: Dataset,
    test_reads: AtomicUsize,
}

impl Clone for ToyTask {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            seed: self.seed,
            n_classes: self.n_classes,
            train: self.train.clone(),
            val: self.val.clone(),
            test: self.test.clone(),
            test_reads: AtomicUsize::new(0),
        }
    }
}

impl ToyTask {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn d_in(&self) -> usize {
        TASK_DIM
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Access to a split. Reads of the test split are counted.
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => {
                self.test_reads.fetch_add(1, Ordering::Relaxed);
                &self.test
            }
        }
    }

    pub fn test_reads(&self) -> usize {
        self.test_reads.load(Ordering::Relaxed)
    }

    /// Copy with labels remapped through `perm` (class `c` becomes
    /// `perm[c]`) on every split.
    pub fn with_permuted_labels(&self, perm: &[usize]) -> Result<ToyTask> {
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.n_classes).collect::<Vec<_>>() {
            return Err(Error::InvalidConfig(format!(
                "{perm:?} is not a permutation of 0..{}",
                self.n_classes
            )));
        }
        let remap = |d: &Dataset| Dataset {
            dim: d.dim,
            features: d.features.clone(),
            labels: d.labels.iter().map(|&y| perm[y]).collect(),
        };
        Ok(ToyTask {
            name: format!("{}+permuted", self.name),
            seed: self.seed,
            n_classes: self.n_classes,
            train: remap(&self.train),
            val: remap(&self.val),
            test: remap(&self.test),
            test_reads: AtomicUsize::new(0),
        })
    }
}

pub fn make_task(name: &str, seed: u64) -> Result<ToyTask> {
    make_task_sized(name, seed, DEFAULT_SAMPLES)
}

/// Generates `n` samples and splits them 60/20/20.
pub fn make_task_sized(name: &str, seed: u64, n: usize) -> Result<ToyTask> {
    if n < 5 {
        return Err(Error::InvalidConfig(format!(
            "need at least 5 samples, got {n}"
        )));
    }
    let mut rng = stream(seed, &format!("task/{name}/samples"));
    let (n_classes, samples) = match name {
        "blobs-A" | "blobs-B" => {
            let (classes, assign) = blob_assignment(name);
            let s = blobs(n, &mut rng)
                .into_iter()
                .map(|(x, c)| (x, assign[c]))
                .collect();
            (classes, s)
        }
        "moons" => (2, moons(n, &mut rng)),
        "xor-grid" => {
            let s = xor_grid(n, &mut rng)
                .into_iter()
                .map(|(x, c)| (x, c % 2))
                .collect();
            (2, s)
        }
        PRETEXT_TASK => (PRETEXT_CLASSES, pretext(n, &mut rng)),
        other => return Err(Error::UnknownTask(other.to_string())),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &format!("task/{name}/split")));
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let take = |idx: &[usize]| Dataset {
        dim: TASK_DIM,
        features: idx
            .iter()
            .flat_map(|&i| samples[i].0.iter().copied())
            .collect(),
        labels: idx.iter().map(|&i| samples[i].1).collect(),
    };
    Ok(ToyTask {
        name: name.to_string(),
        seed,
        n_classes,
        train: take(&order[..n_train]),
        val: take(&order[n_train..n_train + n_val]),
        test: take(&order[n_train + n_val..]),
        test_reads: AtomicUsize::new(0),
    })
}

type Sample = ([f32; TASK_DIM], usize);

const BLOB_CLUSTERS: usize = 12;
const BLOB_SIGNAL_DIM: usize = 4;
const BLOB_GROUP_OFFSET: f64 = 2.5;
const BLOB_JITTER: f64 = 1.2;
const BLOB_SIGMA: (f64, f64) = (0.3, 0.9);
const BLOB_NUISANCE: f64 = 8.0;
const MOON_NOISE: f64 = 0.08;
const MOON_NUISANCE: f64 = 4.0;
const GRID_NOISE: f64 = 0.2;
const GRID_NUISANCE: f64 = 1.3;
const GRID_CELLS: usize = 9;

/// Auxiliary task shared by every run with pretraining enabled.
pub const PRETEXT_TASK: &str = "pretext";
pub const PRETEXT_CLASSES: usize = BLOB_CLUSTERS + 2 + GRID_CELLS;

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Fixed orthogonal matrix for a layout family.
fn rotation(label: &str) -> DMatrix<f64> {
    let mut rng = stream(0, &format!("layout/{label}/rotation"));
    let a = DMatrix::from_fn(TASK_DIM, TASK_DIM, |_, _| normal(&mut rng));
    a.qr().q()
}

/// Places `signal` in the leading coordinates, fills the rest with
/// isotropic nuisance noise, and rotates.
fn embed(
    rot: &DMatrix<f64>,
    signal: &[f64],
    nuisance_sd: f64,
    rng: &mut impl Rng,
    label: usize,
) -> Sample {
    let v = DVector::from_fn(TASK_DIM, |j, _| {
        if j < signal.len() {
            signal[j]
        } else {
            nuisance_sd * normal(rng)
        }
    });
    let v = rot * v;
    let mut x = [0f32; TASK_DIM];
    for (dst, src) in x.iter_mut().zip(v.iter()) {
        *dst = *src as f32;
    }
    (x, label)
}

/// Cluster-to-class map of blobs-A; blobs-B merges its classes 2 and 3.
fn blob_assignment(name: &str) -> (usize, Vec<usize>) {
    let fine: Vec<usize> = (0..BLOB_CLUSTERS).map(|c| c % 4).collect();
    if name == "blobs-A" {
        (4, fine)
    } else {
        (3, fine.into_iter().map(|c| c.min(2)).collect())
    }
}

/// Pool of anisotropic Gaussian clusters shared by the blob tasks, labelled
/// by cluster index. Cluster `c` sits near the vertex `c mod 4` of a
/// simplex, so blobs-A classes are linearly separable while the pretext
/// task must split each group. Per-axis deviations are log-uniform in
/// `BLOB_SIGMA`.
fn blobs(n: usize, rng: &mut impl Rng) -> Vec<Sample> {
    let mut layout = stream(0, "layout/blobs/clusters");
    let rot = rotation("blobs");
    let (lo, hi) = (BLOB_SIGMA.0.ln(), BLOB_SIGMA.1.ln());
    let params: Vec<(Vec<f64>, Vec<f64>)> = (0..BLOB_CLUSTERS)
        .map(|c| {
            let mean = (0..BLOB_SIGNAL_DIM)
                .map(|j| {
                    let group = if j == c % 4 { BLOB_GROUP_OFFSET } else { 0.0 };
                    group + BLOB_JITTER * layout.random_range(-1.0..1.0)
                })
                .collect();
            let sig = (0..BLOB_SIGNAL_DIM)
                .map(|_| layout.random_range(lo..hi).exp())
                .collect();
            (mean, sig)
        })
        .collect();
    (0..n)
        .map(|i| {
            let c = i % BLOB_CLUSTERS;
            let (mean, sig) = &params[c];
            let s: Vec<f64> = (0..BLOB_SIGNAL_DIM)
                .map(|j| mean[j] + normal(rng) * sig[j])
                .collect();
            embed(&rot, &s, BLOB_NUISANCE, rng, c)
        })
        .collect()
}

/// Two interleaved half circles.
fn moons(n: usize, rng: &mut impl Rng) -> Vec<Sample> {
    let rot = rotation("moons");
    (0..n)
        .map(|i| {
            let k = i % 2;
            let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (px, py) = if k == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let s = [
                1.6 * (px - 0.5) + MOON_NOISE * normal(rng),
                1.6 * (py - 0.25) + MOON_NOISE * normal(rng),
            ];
            embed(&rot, &s, MOON_NUISANCE, rng, k)
        })
        .collect()
}

/// 3×3 grid of clusters labelled by cell.
fn xor_grid(n: usize, rng: &mut impl Rng) -> Vec<Sample> {
    let rot = rotation("xor-grid");
    (0..n)
        .map(|i| {
            let cell = i % GRID_CELLS;
            let (gx, gy) = ((cell % 3) as f64 - 1.0, (cell / 3) as f64 - 1.0);
            let s = [
                1.2 * gx + GRID_NOISE * normal(rng),
                1.2 * gy + GRID_NOISE * normal(rng),
            ];
            embed(&rot, &s, GRID_NUISANCE, rng, cell)
        })
        .collect()
}

/// Mixture of every family, labelled by blob cluster, moon, or grid cell.
fn pretext(n: usize, rng: &mut impl Rng) -> Vec<Sample> {
    let nb = n / 2;
    let nm = n / 4;
    let mut out = blobs(nb, rng);
    out.extend(
        moons(nm, rng)
            .into_iter()
            .map(|(x, k)| (x, BLOB_CLUSTERS + k)),
    );
    out.extend(
        xor_grid(n - nb - nm, rng)
            .into_iter()
            .map(|(x, c)| (x, BLOB_CLUSTERS + 2 + c)),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regeneration_is_bit_identical() {
        for name in REGISTERED_TASKS {
            let a = make_task(name, 7).unwrap();
            let b = make_task(name, 7).unwrap();
            for s in [Split::Train, Split::Val, Split::Test] {
                let (x, y) = (a.split(s), b.split(s));
                assert_eq!(x.labels, y.labels);
                assert!(x
                    .features
                    .iter()
                    .zip(&y.features)
                    .all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }

    #[test]
    fn split_sizes() {
        let t = make_task_sized("blobs-A", 1, 1000).unwrap();
        assert_eq!(t.split(Split::Train).len(), 600);
        assert_eq!(t.split(Split::Val).len(), 200);
        assert_eq!(t.split(Split::Test).len(), 200);
    }

    #[test]
    fn unknown_generator() {
        assert!(matches!(
            make_task("spirals", 1),
            Err(Error::UnknownTask(_))
        ));
    }

    #[test]
    fn seed_changes_data() {
        let a = make_task("moons", 1).unwrap();
        let b = make_task("moons", 2).unwrap();
        assert_ne!(
            a.split(Split::Train).features,
            b.split(Split::Train).features
        );
    }

    #[test]
    fn test_reads_are_counted() {
        let t = make_task("xor-grid", 3).unwrap();
        let _ = t.split(Split::Train);
        let _ = t.split(Split::Val);
        assert_eq!(t.test_reads(), 0);
        let _ = t.split(Split::Test);
        assert_eq!(t.test_reads(), 1);
    }

    #[test]
    fn every_class_present() {
        for name in REGISTERED_TASKS {
            let t = make_task(name, 5).unwrap();
            for s in [Split::Train, Split::Val, Split::Test] {
                let d = t.split(s);
                for c in 0..t.n_classes() {
                    assert!(d.labels.contains(&c), "{name} {s:?} lacks class {c}");
                }
            }
        }
    }

    #[test]
    fn label_permutation() {
        let t = make_task("blobs-B", 1).unwrap();
        let p = t.with_permuted_labels(&[2, 0, 1]).unwrap();
        assert_eq!(
            p.split(Split::Val).labels[0],
            [2, 0, 1][t.split(Split::Val).labels[0]]
        );
        assert!(t.with_permuted_labels(&[0, 0, 1]).is_err());
    }

    #[test]
    fn blobs_b_merges_two_blobs_a_classes() {
        let (ka, a) = blob_assignment("blobs-A");
        let (kb, b) = blob_assignment("blobs-B");
        assert_eq!((ka, kb), (4, 3));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*y, (*x).min(2));
        }
    }

    #[test]
    fn pretext_covers_every_family() {
        let t = make_task_sized(PRETEXT_TASK, 3, 4000).unwrap();
        assert_eq!(t.n_classes(), PRETEXT_CLASSES);
        let d = t.split(Split::Train);
        for c in 0..PRETEXT_CLASSES {
            assert!(d.labels.contains(&c), "pretext lacks class {c}");
        }
        assert!(!REGISTERED_TASKS.contains(&PRETEXT_TASK));
    }

    #[test]
    fn inputs_share_one_dimension() {
        for name in REGISTERED_TASKS {
            let t = make_task_sized(name, 2, 50).unwrap();
            assert_eq!(t.d_in(), TASK_DIM);
            let d = t.split(Split::Train);
            assert_eq!(d.features.len(), d.len() * TASK_DIM);
            assert!(d.features.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn split_names_parse() {
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
        assert!("dev".parse::<Split>().is_err());
    }
}
