use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Container errors carry the name of the tensor they concern so batch
/// drivers can point at the exact offending payload.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("bad magic: input is not a trace container")]
    BadMagic,
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("shape mismatch in `{tensor}`: {detail}")]
    ShapeMismatch { tensor: String, detail: String },
    #[error("non-finite value in `{tensor}` at element {index}")]
    NonFiniteValue { tensor: String, index: usize },
    #[error("invariant violated in `{tensor}`: {detail}")]
    InvariantViolation { tensor: String, detail: String },
    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("trace has no text embedding")]
    MissingTextEmbedding,
    #[error("tile {0} has no joint-space image embedding")]
    MissingClipEmbedding(usize),
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("retention ratio {0} outside (0, 1]")]
    RatioOutOfRange(f64),
    #[error("tile scores are not on the simplex (sum {0})")]
    ScoresNotNormalized(f64),
    #[error("layer {layer} outside [1, {num_layers}]")]
    LayerOutOfRange { layer: usize, num_layers: usize },
    #[error("invalid layer set: {0}")]
    InvalidLayerSet(String),
    #[error("quota {quota} exceeds region size {n}")]
    QuotaExceedsN { quota: usize, n: usize },
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("oracle input too large: {0} elements (max 16)")]
    TooLarge(usize),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
