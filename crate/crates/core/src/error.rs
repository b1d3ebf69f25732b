//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up for an operation.
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// An operation received an empty input it cannot handle.
    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    /// A probed or supplied value was NaN or infinite.
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: usize },

    /// Embedding file does not start with the expected magic bytes.
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    /// Unsupported container version.
    #[error("unsupported version {found} (expected {expected})")]
    BadVersion { expected: u32, found: u32 },

    /// Unsupported element type tag in an embedding file.
    #[error("unsupported dtype tag {0} (expected 0 = f32 little-endian)")]
    BadDtype(u8),

    /// A binary payload ended before its declared size.
    #[error("truncated {what}: needed {needed} bytes, had {available}")]
    Truncated {
        what: &'static str,
        needed: usize,
        available: usize,
    },

    /// A header declared a zero extent.
    #[error("invalid extent in {what}: L={l}, T={t}, D={d} (all must be >= 1)")]
    BadExtent {
        what: &'static str,
        l: u32,
        t: u32,
        d: u32,
    },

    /// Checkpoint contains two tensors with the same name.
    #[error("duplicate tensor name {0:?} in checkpoint")]
    DuplicateTensor(String),

    /// Checkpoint tensor names not recognized by the model loader.
    #[error("unknown tensor names in checkpoint: {0:?}")]
    UnknownTensors(Vec<String>),

    /// Checkpoint is missing a tensor the model needs.
    #[error("checkpoint missing tensor {0:?}")]
    MissingTensor(String),

    /// Manifest line failed to parse.
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    /// Score file line failed to parse.
    #[error("score file line {line}: {reason}")]
    ScoreParse { line: usize, reason: String },

    /// WAV file is malformed or uses an unsupported format.
    #[error("wav: {0}")]
    Wav(String),

    /// A key=value config line failed to parse.
    #[error("config: {0}")]
    Config(String),

    /// Backward pass invoked on a summary whose cache was dropped.
    #[error("missing forward cache for {0}")]
    MissingCache(&'static str),

    /// Metric computation needs both classes present.
    #[error("score set contains only one class ({0} records)")]
    SingleClass(usize),

    /// Tandem cost coefficients are not both positive.
    #[error("degenerate cost model: C1={c1}, C2={c2} (both must be > 0)")]
    DegenerateCostModel { c1: f64, c2: f64 },

    /// Dataset cannot be trained on (e.g. only one class).
    #[error("dataset: {0}")]
    Dataset(String),

    /// Underlying I/O failure.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
