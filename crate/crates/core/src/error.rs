use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate episode name `{0}`")]
    DuplicateEpisode(String),
    #[error("subject {subject} out of range (dataset has {subjects})")]
    SubjectOutOfRange { subject: usize, subjects: usize },
    #[error("subject {subject} is absent from episode `{episode}`")]
    MissingSubject { subject: usize, episode: String },
    #[error("movie `{0}` not present in dataset")]
    UnknownMovie(String),
    #[error("backbone `{0}` not present in dataset")]
    UnknownBackbone(String),
    #[error("empty batch: {0}")]
    EmptyBatch(String),
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("series length: {0}")]
    Length(String),
    #[error("non-finite gradient in block `{block}` at index {index}")]
    NonFiniteGradient { block: String, index: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("no models available: {0}")]
    NoModels(String),
}
