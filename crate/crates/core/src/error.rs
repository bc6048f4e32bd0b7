use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("malformed row {row}: {detail}")]
    MalformedRow { row: usize, detail: String },
    #[error("row {row}: expected dimension {expected}, found {found}")]
    RowDimension { row: usize, expected: usize, found: usize },
    #[error("row {row}: duplicate id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: zero-norm vector")]
    ZeroNormRow { row: usize },
    #[error("row {row}, column {col}: non-finite entry")]
    NonFinite { row: usize, col: usize },
    #[error("id `{id}`: zero-norm output vector")]
    ZeroNormOutput { id: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector has zero norm")]
    ZeroNorm,

    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("image `{image}` paired to more than one text (`{first}`, `{second}`)")]
    DuplicateImagePairing { image: String, first: String, second: String },
    #[error("image `{0}` has no paired text")]
    UnpairedImage(String),

    #[error("search set is empty")]
    EmptySearchSet,
    #[error("none of the nearest training texts has a paired image")]
    NoPairedNeighbours,
    #[error("training corpus has no images")]
    EmptyTrainingImages,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("train-mode batch statistics need at least 2 rows, got {rows}")]
    BatchTooSmall { rows: usize },
    #[error("no valid negative for anchor {anchor}: every batch row shares its text")]
    NoValidNegative { anchor: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no label reaches the frequency threshold {threshold}")]
    EmptyLabelSet { threshold: usize },
    #[error("all tokens are out of vocabulary")]
    AllTokensOov,
    #[error("out-of-vocabulary token `{0}`")]
    OovToken(String),
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("TF-IDF model is not fitted")]
    NotFitted,
    #[error("document `{id}`")]
    Document {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("pool of {requested} requested but only {available} items available")]
    PoolTooLarge { requested: usize, available: usize },
    #[error("{count} test ids also appear in the ranker's training data")]
    TrainTestOverlap { count: usize },
    #[error("encoders share no common ids")]
    EmptyIntersection,
}
