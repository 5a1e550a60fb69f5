use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variant names double as the stable error identifiers printed by the CLI.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    // dataset construction and access
    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("observable name `{0}` must start with user_, item_, session_, itemsession_ (or price_)")]
    BadPrefix(String),
    #[error("record {record}: chosen item {item} is unavailable in session {session}")]
    ChosenItemUnavailable {
        record: usize,
        item: usize,
        session: usize,
    },
    #[error("session {0} has no available items")]
    EmptySession(usize),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("batch size must be -1 or >= 1, got {0}")]
    BadBatchSize(i64),
    #[error("dataset lengths differ: {0}")]
    LengthMismatch(String),
    #[error("bad category partition: {0}")]
    BadCategories(String),

    // long-format ingestion
    #[error("record group `{0}` has more than one chosen row")]
    MultipleChosen(String),
    #[error("record group `{0}` has no chosen row")]
    NoneChosen(String),
    #[error("record group `{0}`: {1} differs between rows")]
    InconsistentUserOrSession(String, &'static str),
    #[error("observable column `{column}` is not constant for {entity} `{key}`")]
    InconsistentObservable {
        column: String,
        entity: &'static str,
        key: String,
    },
    #[error("table `{table}` lacks key column `{column}`")]
    MissingKeyColumn { table: String, column: String },
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("table `{table}` repeats key `{key}`")]
    DuplicateKey { table: String, key: String },
    #[error("table `{table}` has no row for {entity} `{key}`")]
    MissingEntity {
        table: String,
        entity: &'static str,
        key: String,
    },
    #[error("cannot parse `{value}` in column `{column}` as a number")]
    BadNumber { column: String, value: String },
    #[error("choice column value `{0}` is not 0 or 1")]
    BadChoiceValue(String),

    // formula language
    #[error("syntax error at position {position}: {message}")]
    SyntaxError { position: usize, message: String },
    #[error("unknown coefficient variation `{0}`")]
    UnknownVariation(String),
    #[error("duplicate term `{0}`")]
    DuplicateTerm(String),
    #[error("unknown observable `{0}`")]
    UnknownObservable(String),
    #[error("coefficient `{0}` varies by user but the dataset has no user index")]
    MissingUserIndex(String),
    #[error("configuration maps disagree on key `{0}`")]
    KeyMismatch(String),

    // models
    #[error("record {0} has an empty choice set")]
    EmptyChoiceSet(usize),
    #[error("bad regularization: {0}")]
    BadRegularization(String),
    #[error("unknown coefficient `{0}`")]
    UnknownCoefficient(String),
    #[error("coefficient `{0}` needs a level (nest or item)")]
    MissingLevel(String),
    #[error("the item-level model of a nested logit must not be empty")]
    EmptyItemModel,
    #[error("bad nest structure: {0}")]
    BadNests(String),
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamLength { got: usize, expected: usize },

    // estimation
    #[error("bad fit options: {0}")]
    BadOptions(String),
    #[error("objective diverged (non-finite) at epoch {0}")]
    Diverged(usize),
    #[error("line search failed: {0}")]
    LineSearchFailed(String),
    #[error("Hessian is singular or not positive definite")]
    SingularHessian,
    #[error("standard errors are undefined for a regularized objective")]
    RegularizedModel,

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("CSV error: {0}")]
    Csv(String),
}

impl Error {
    /// Stable identifier for the error kind (the variant name).
    pub fn name(&self) -> &'static str {
        match self {
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::BadPrefix(_) => "BadPrefix",
            Error::ChosenItemUnavailable { .. } => "ChosenItemUnavailable",
            Error::EmptySession(_) => "EmptySession",
            Error::EmptyInput(_) => "EmptyInput",
            Error::NonFinite(_) => "NonFinite",
            Error::BadBatchSize(_) => "BadBatchSize",
            Error::LengthMismatch(_) => "LengthMismatch",
            Error::BadCategories(_) => "BadCategories",
            Error::MultipleChosen(_) => "MultipleChosen",
            Error::NoneChosen(_) => "NoneChosen",
            Error::InconsistentUserOrSession(..) => "InconsistentUserOrSession",
            Error::InconsistentObservable { .. } => "InconsistentObservable",
            Error::MissingKeyColumn { .. } => "MissingKeyColumn",
            Error::MissingColumn(_) => "MissingColumn",
            Error::DuplicateKey { .. } => "DuplicateKey",
            Error::MissingEntity { .. } => "MissingEntity",
            Error::BadNumber { .. } => "BadNumber",
            Error::BadChoiceValue(_) => "BadChoiceValue",
            Error::SyntaxError { .. } => "SyntaxError",
            Error::UnknownVariation(_) => "UnknownVariation",
            Error::DuplicateTerm(_) => "DuplicateTerm",
            Error::UnknownObservable(_) => "UnknownObservable",
            Error::MissingUserIndex(_) => "MissingUserIndex",
            Error::KeyMismatch(_) => "KeyMismatch",
            Error::EmptyChoiceSet(_) => "EmptyChoiceSet",
            Error::BadRegularization(_) => "BadRegularization",
            Error::UnknownCoefficient(_) => "UnknownCoefficient",
            Error::MissingLevel(_) => "MissingLevel",
            Error::EmptyItemModel => "EmptyItemModel",
            Error::BadNests(_) => "BadNests",
            Error::ParamLength { .. } => "ParamLength",
            Error::BadOptions(_) => "BadOptions",
            Error::Diverged(_) => "Diverged",
            Error::LineSearchFailed(_) => "LineSearchFailed",
            Error::SingularHessian => "SingularHessian",
            Error::RegularizedModel => "RegularizedModel",
            Error::Io { .. } => "Io",
            Error::Csv(_) => "Csv",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
