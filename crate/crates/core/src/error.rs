use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Variants are grouped loosely by the module that raises them; the names are
/// part of the JSON error surface of the CLI and the HTTP service, so they are
/// stable.
#[derive(Debug, Error)]
pub enum Error {
    // Documents.
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("duplicate attribute `{0}`")]
    DuplicateAttribute(String),
    #[error("duplicate value `{value}` in domain of `{attribute}`")]
    DuplicateValue { attribute: String, value: String },
    #[error("domain of `{0}` needs at least two values")]
    DomainTooSmall(String),
    #[error("invalid hierarchy for `{attribute}`: {reason}")]
    InvalidHierarchy { attribute: String, reason: String },
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("value `{value}` is not in the domain of `{attribute}`")]
    UnknownValue { attribute: String, value: String },
    #[error("attribute `{0}` is listed as both public and sensitive")]
    OverlappingPartition(String),
    #[error("attribute `{0}` is neither public nor sensitive")]
    IncompletePartition(String),
    #[error("no true value declared for `{0}`")]
    MissingTrueValue(String),
    #[error("k={k} for `{attribute}` must be at least 2")]
    KTooSmall { attribute: String, k: usize },
    #[error("k={k} for `{attribute}` exceeds its domain size {domain}")]
    KExceedsDomain { attribute: String, k: usize, domain: usize },
    #[error("cover set for `{attribute}` has {got} values, expected k={k}")]
    CoverSizeMismatch { attribute: String, k: usize, got: usize },
    #[error("true value of `{0}` is missing from its cover set")]
    TrueValueNotInCover(String),
    #[error("fraction out of range (0,1]: {0}")]
    FractionOutOfRange(String),
    #[error("invalid identifier `{0}`")]
    InvalidIdentifier(String),

    // Corpus and repository.
    #[error("post `{0}` mentions no topic")]
    EmptyTopics(String),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("repository file is corrupt: {0}")]
    CorruptFile(String),
    #[error("unsupported repository format version {0}")]
    UnsupportedVersion(u8),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    // Inference.
    #[error("topic `{topic}` has {observed} observed personas, fewer than k={k}")]
    InsufficientPersonas { topic: String, k: usize, observed: usize },
    #[error("topic list is empty")]
    EmptyTopicList,

    // Taxonomy.
    #[error("level mismatch: {0}")]
    LevelMismatch(String),

    // Suggestion.
    #[error("no obfuscation candidates available")]
    NoCandidates,
    #[error("group already satisfies every sensitive attribute")]
    AlreadySatisfied,
    #[error("suggestion is stale: {0}")]
    StaleSuggestion(String),
    #[error("topic `{0}` is already part of the group")]
    DuplicateTopic(String),
    #[error("cover set for `{0}` has not been chosen")]
    MissingCoverSet(String),
    #[error("suggestion budget of {0} is used up")]
    BudgetExhausted(usize),

    // Queue.
    #[error("group is not satisfied and cannot be queued")]
    NotSatisfied,
    #[error("invalid interval bounds [{min}, {max}]")]
    InvalidInterval { min: u64, max: u64 },

    // Generator.
    #[error("infeasible generator spec: {0}")]
    InfeasibleSpec(String),
}

/// The JSON error object shared by the CLI and the HTTP service.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl ErrorBody {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        ErrorBody {
            error: kind.into(),
            message: message.into(),
        }
    }
}

impl Error {
    pub fn body(&self) -> ErrorBody {
        ErrorBody::new(self.kind(), self.to_string())
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedDocument(_) => "MalformedDocument",
            Error::DuplicateAttribute(_) => "DuplicateAttribute",
            Error::DuplicateValue { .. } => "DuplicateValue",
            Error::DomainTooSmall(_) => "DomainTooSmall",
            Error::InvalidHierarchy { .. } => "InvalidHierarchy",
            Error::UnknownAttribute(_) => "UnknownAttribute",
            Error::UnknownValue { .. } => "UnknownValue",
            Error::OverlappingPartition(_) => "OverlappingPartition",
            Error::IncompletePartition(_) => "IncompletePartition",
            Error::MissingTrueValue(_) => "MissingTrueValue",
            Error::KTooSmall { .. } => "KTooSmall",
            Error::KExceedsDomain { .. } => "KExceedsDomain",
            Error::CoverSizeMismatch { .. } => "CoverSizeMismatch",
            Error::TrueValueNotInCover(_) => "TrueValueNotInCover",
            Error::FractionOutOfRange(_) => "FractionOutOfRange",
            Error::InvalidIdentifier(_) => "InvalidIdentifier",
            Error::EmptyTopics(_) => "EmptyTopics",
            Error::UnknownTopic(_) => "UnknownTopic",
            Error::CorruptFile(_) => "CorruptFile",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::Io(_) => "IoError",
            Error::InsufficientPersonas { .. } => "InsufficientPersonas",
            Error::EmptyTopicList => "EmptyTopicList",
            Error::LevelMismatch(_) => "LevelMismatch",
            Error::NoCandidates => "NoCandidates",
            Error::AlreadySatisfied => "AlreadySatisfied",
            Error::StaleSuggestion(_) => "StaleSuggestion",
            Error::DuplicateTopic(_) => "DuplicateTopic",
            Error::MissingCoverSet(_) => "MissingCoverSet",
            Error::BudgetExhausted(_) => "BudgetExhausted",
            Error::NotSatisfied => "NotSatisfied",
            Error::InvalidInterval { .. } => "InvalidInterval",
            Error::InfeasibleSpec(_) => "InfeasibleSpec",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::MalformedDocument(err.to_string())
    }
}
