use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Name-set and shape disagreement between two checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Incompatibility {
    /// Present in the right operand only.
    pub missing_in_left: Vec<String>,
    /// Present in the left operand only.
    pub missing_in_right: Vec<String>,
    /// `(name, left shape, right shape)`.
    pub shape_conflicts: Vec<(String, Vec<usize>, Vec<usize>)>,
}

impl Incompatibility {
    pub fn is_empty(&self) -> bool {
        self.missing_in_left.is_empty()
            && self.missing_in_right.is_empty()
            && self.shape_conflicts.is_empty()
    }

    /// Every tensor name involved in the disagreement.
    pub fn names(&self) -> Vec<&str> {
        self.missing_in_left
            .iter()
            .chain(&self.missing_in_right)
            .map(String::as_str)
            .chain(self.shape_conflicts.iter().map(|(n, _, _)| n.as_str()))
            .collect()
    }
}

impl fmt::Display for Incompatibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if !self.missing_in_left.is_empty() {
            parts.push(format!("missing in left: {:?}", self.missing_in_left));
        }
        if !self.missing_in_right.is_empty() {
            parts.push(format!("missing in right: {:?}", self.missing_in_right));
        }
        for (name, a, b) in &self.shape_conflicts {
            parts.push(format!("shape conflict on {name:?}: {a:?} vs {b:?}"));
        }
        write!(f, "{}", parts.join("; "))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic {found:?}, expected \"QVC1\"")]
    BadMagic { found: Vec<u8> },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("malformed header: {0}")]
    BadHeader(String),

    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),

    #[error("tensor {name:?}: size mismatch ({detail})")]
    SizeMismatch { name: String, detail: String },

    #[error("tensor {name:?}: invalid shape {shape:?}")]
    InvalidShape { name: String, shape: Vec<usize> },

    #[error("tensor {name:?}: non-finite value at flat index {index}")]
    NonFinite { name: String, index: usize },

    #[error("invalid tensor name {0:?}")]
    InvalidName(String),

    #[error("incompatible checkpoints: {0}")]
    IncompatibleCheckpoints(Incompatibility),

    #[error("gauge mismatch between quantization vector and receiver: {0}")]
    GaugeMismatch(Incompatibility),

    #[error("tensor {name:?}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        name: String,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("invalid quantization spec: {0}")]
    InvalidQuantSpec(String),

    #[error("invalid glob pattern {pattern:?}: {reason}")]
    InvalidPattern { pattern: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero vector: {0}")]
    ZeroVector(&'static str),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("degenerate objective: {0}")]
    Degenerate(String),

    #[error("unknown task generator {0:?}")]
    UnknownTask(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint pair was trained with different configurations ({left} vs {right})")]
    ConfigMismatch { left: String, right: String },

    #[error("non-finite gradient at optimizer step {step}")]
    NonFiniteGradient { step: u64 },

    #[error("training diverged at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: u64 },

    #[error("architecture mismatch: {0}")]
    Architecture(String),
}

impl Error {
    /// Failures caused by numerics rather than by invalid input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient { .. } | Error::Divergence { .. } | Error::NonFinite { .. }
        )
    }
}
