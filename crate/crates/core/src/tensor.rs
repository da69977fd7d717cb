//! Dense f32 tensors, named checkpoints and the weight-space arithmetic
//! (difference, scaled addition) everything else is built on.
//!
//! Checkpoints iterate in lexicographic name order, so any flattened view of
//! a checkpoint is reproducible.

use std::collections::BTreeMap;

use globset::{Glob, GlobSet, GlobSetBuilder};

use crate::error::{Error, Incompatibility, Result};

/// Name → tensor map, the shape of a checkpoint delta.
pub type TensorMap = BTreeMap<String, Tensor>;

/// Row-major f32 array. Every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::named("<anonymous>", shape, data)
    }

    /// Like [`Tensor::new`], but errors carry `name`.
    pub fn named(name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidShape {
                name: name.to_string(),
                shape,
            });
        }
        let expected = element_count(&shape).ok_or_else(|| Error::InvalidShape {
            name: name.to_string(),
            shape: shape.clone(),
        })?;
        if expected != data.len() {
            return Err(Error::SizeMismatch {
                name: name.to_string(),
                detail: format!(
                    "shape {shape:?} needs {expected} elements, got {}",
                    data.len()
                ),
            });
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                name: name.to_string(),
                index,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = element_count(&shape).unwrap_or(0);
        Self::new(shape, vec![0.0; n])
    }

    /// 2-D convenience constructor.
    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let data: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn matrix_dims(&self) -> Option<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Some((r, c)),
            _ => None,
        }
    }

    /// Exact elementwise negation.
    pub fn neg(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| -x).collect(),
        }
    }

    /// Elementwise `self * scale`, rejecting overflow.
    pub fn scaled(&self, scale: f32) -> Result<Tensor> {
        Tensor::new(
            self.shape.clone(),
            self.data.iter().map(|x| x * scale).collect(),
        )
    }

    /// Sum of squares accumulated in f64.
    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Ordered collection of named tensors plus free-form string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: BTreeMap<String, Tensor>,
    meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(entries: TensorMap, meta: BTreeMap<String, String>) -> Result<Self> {
        if let Some(bad) = entries.keys().find(|n| n.is_empty()) {
            return Err(Error::InvalidName(bad.clone()));
        }
        Ok(Self { entries, meta })
    }

    /// Adds a tensor; names must be nonempty and unused.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidName(name));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn entries(&self) -> &TensorMap {
        &self.entries
    }

    pub fn into_entries(self) -> TensorMap {
        self.entries
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_compatible(&self, other: &Checkpoint) -> bool {
        compare_maps(&self.entries, &other.entries).is_empty()
    }

    /// Tensor data and metadata are bitwise equal.
    pub fn bitwise_eq(&self, other: &Checkpoint) -> bool {
        self.meta == other.meta && tensors_bitwise_eq(&self.entries, &other.entries)
    }
}

pub(crate) fn tensors_bitwise_eq(a: &TensorMap, b: &TensorMap) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|((na, ta), (nb, tb))| na == nb && ta.bitwise_eq(tb))
}

pub(crate) fn compare_maps(left: &TensorMap, right: &TensorMap) -> Incompatibility {
    let mut out = Incompatibility::default();
    for (name, t) in left {
        match right.get(name) {
            None => out.missing_in_right.push(name.clone()),
            Some(u) if u.shape() != t.shape() => {
                out.shape_conflicts
                    .push((name.clone(), t.shape().to_vec(), u.shape().to_vec()))
            }
            Some(_) => {}
        }
    }
    out.missing_in_left = right
        .keys()
        .filter(|n| !left.contains_key(*n))
        .cloned()
        .collect();
    out
}

/// Glob patterns selecting tensor names to leave untouched.
#[derive(Debug, Clone)]
pub struct NameFilter {
    patterns: Vec<String>,
    set: GlobSet,
}

impl NameFilter {
    /// Patterns excluded when none are given explicitly: classification heads.
    pub const DEFAULT_HEAD_PATTERNS: [&'static str; 2] = ["head.*", "classifier.*"];

    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self> {
        let mut builder = GlobSetBuilder::new();
        let mut kept = Vec::with_capacity(patterns.len());
        for p in patterns {
            let p = p.as_ref();
            let glob = Glob::new(p).map_err(|e| Error::InvalidPattern {
                pattern: p.to_string(),
                reason: e.kind().to_string(),
            })?;
            builder.add(glob);
            kept.push(p.to_string());
        }
        let set = builder.build().map_err(|e| Error::InvalidPattern {
            pattern: kept.join(","),
            reason: e.to_string(),
        })?;
        Ok(Self {
            patterns: kept,
            set,
        })
    }

    /// Excludes nothing.
    pub fn none() -> Self {
        Self::new::<&str>(&[]).expect("empty glob set")
    }

    pub fn default_heads() -> Self {
        Self::new(&Self::DEFAULT_HEAD_PATTERNS).expect("static patterns are valid")
    }

    pub fn is_excluded(&self, name: &str) -> bool {
        !self.patterns.is_empty() && self.set.is_match(name)
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }
}

impl Default for NameFilter {
    fn default() -> Self {
        Self::default_heads()
    }
}

/// Elementwise `a − b` for every name.
pub fn checkpoint_diff(a: &Checkpoint, b: &Checkpoint) -> Result<TensorMap> {
    let inc = compare_maps(&a.entries, &b.entries);
    if !inc.is_empty() {
        return Err(Error::IncompatibleCheckpoints(inc));
    }
    a.entries
        .iter()
        .map(|(name, ta)| {
            let tb = &b.entries[name];
            let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
            Tensor::named(name, ta.shape.clone(), data).map(|t| (name.clone(), t))
        })
        .collect()
}

/// `base + scale·delta` on the delta's names that the filter does not
/// exclude; everything else is copied bitwise. `scale == 0` returns `base`
/// unchanged (including signed zeros).
pub fn checkpoint_axpy(
    base: &Checkpoint,
    scale: f32,
    delta: &TensorMap,
    filter: &NameFilter,
) -> Result<Checkpoint> {
    let mut inc = Incompatibility::default();
    for (name, d) in delta {
        match base.entries.get(name) {
            None => inc.missing_in_left.push(name.clone()),
            Some(t) if t.shape != d.shape => {
                inc.shape_conflicts
                    .push((name.clone(), t.shape.clone(), d.shape.clone()))
            }
            Some(_) => {}
        }
    }
    if !inc.is_empty() {
        return Err(Error::IncompatibleCheckpoints(inc));
    }
    if !scale.is_finite() {
        return Err(Error::InvalidConfig(format!("non-finite scale {scale}")));
    }
    let mut out = base.clone();
    if scale == 0.0 {
        return Ok(out);
    }
    for (name, d) in delta {
        if filter.is_excluded(name) {
            continue;
        }
        let t = out.entries.get_mut(name).expect("checked above");
        for (x, dx) in t.data.iter_mut().zip(&d.data) {
            *x += scale * dx;
        }
        if let Some(index) = t.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                name: name.clone(),
                index,
            });
        }
    }
    Ok(out)
}
