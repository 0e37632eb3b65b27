use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report. `code()` gives the stable
/// machine-readable identifier used in CLI error records.
#[derive(Debug, Error)]
pub enum Error {
    #[error("training set is empty")]
    EmptyTrain,
    #[error("validation set is empty")]
    EmptyValid,
    #[error("label {label} out of range for label count {label_count}")]
    LabelOutOfRange { label: usize, label_count: usize },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("pair budget {budget} exceeds the {available} available pairs")]
    BudgetTooLarge { budget: usize, available: usize },
    #[error("pair ({i}, {j}): {source}")]
    Pair {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("column {column} has {observed} observed entries, need at least 2")]
    DegenerateColumn { column: usize, observed: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("solver diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("requested {k} clusters for {n} items")]
    TooManyClusters { k: usize, n: usize },
    #[error("number of clusters must be at least 1")]
    BadK,
    #[error("affinity matrix is not symmetric (max deviation {deviation:e})")]
    AsymmetricInput { deviation: f64 },
    #[error("affinity matrix has a negative entry at ({i}, {j})")]
    NegativeAffinity { i: usize, j: usize },
    #[error("k-means left cluster {cluster} empty")]
    EmptyCluster { cluster: usize },
    #[error("cluster sizes {sizes:?} do not describe {n} items in {k} clusters")]
    BadSizes {
        n: usize,
        k: usize,
        sizes: Vec<usize>,
    },
    #[error("observation budget cannot be met: {0}")]
    InfeasibleBudget(String),
    #[error("tasks in the cluster do not share one label space")]
    LabelSpaceMismatch,
    #[error("support set is empty")]
    NoSupport,
    #[error("label {label} has no support example")]
    MissingSupportLabel { label: usize },
    #[error("no cluster model covers the task's label space")]
    NoCompatibleCluster,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyTrain => "empty-train",
            Error::EmptyValid => "empty-valid",
            Error::LabelOutOfRange { .. } => "label-out-of-range",
            Error::DimMismatch { .. } => "dim-mismatch",
            Error::BudgetTooLarge { .. } => "budget-too-large",
            Error::Pair { source, .. } => source.code(),
            Error::DegenerateColumn { .. } => "degenerate-column",
            Error::NonFinite => "non-finite",
            Error::Diverged { .. } => "diverged",
            Error::TooManyClusters { .. } => "too-many-clusters",
            Error::BadK => "bad-K",
            Error::AsymmetricInput { .. } => "asymmetric-input",
            Error::NegativeAffinity { .. } => "negative-affinity",
            Error::EmptyCluster { .. } => "empty-cluster",
            Error::BadSizes { .. } => "bad-sizes",
            Error::InfeasibleBudget(_) => "infeasible-budget",
            Error::LabelSpaceMismatch => "label-space-mismatch",
            Error::NoSupport => "no-support",
            Error::MissingSupportLabel { .. } => "missing-support-label",
            Error::NoCompatibleCluster => "no-compatible-cluster",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::MissingInput(_) => "missing-input",
            Error::Parse { .. } => "parse-error",
            Error::Io(_) => "io-error",
            Error::Json(_) => "parse-error",
        }
    }

    /// True for failures of the numerics rather than of the inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Pair { source, .. } => source.is_numerical(),
            Error::NonFinite
            | Error::Diverged { .. }
            | Error::DegenerateColumn { .. }
            | Error::EmptyCluster { .. } => true,
            _ => false,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
