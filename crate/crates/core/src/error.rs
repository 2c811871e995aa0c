use std::fmt;

/// Constraint of the multi-assignment problem that an assignment can violate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// Every client is served by exactly one AP pair or one relay triple.
    ClientCoverage,
    /// A relay assists at most one client.
    RelayCapacity,
    /// Pairs and triples must be drawn from the eligible set.
    Eligibility,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::ClientCoverage => f.write_str("client-coverage"),
            Constraint::RelayCapacity => f.write_str("relay-capacity"),
            Constraint::Eligibility => f.write_str("eligibility"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("infeasible assignment ({constraint}): {detail}")]
    Infeasible { constraint: Constraint, detail: String },
    #[error("invalid instance: {0}")]
    Instance(String),
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("iteration cap of {0} exceeded")]
    IterationCap(usize),
    #[error("iteration bound violated: {accepted} accepted bids > bound {bound}")]
    BoundViolated { accepted: u64, bound: u64 },
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("experiment spec error: {0}")]
    Spec(String),
    #[error("plot data unavailable: {0}")]
    MissingDimension(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Infeasible { .. } => "infeasible",
            Error::Instance(_) => "instance",
            Error::TooLarge(_) => "too_large",
            Error::IterationCap(_) => "iteration_cap",
            Error::BoundViolated { .. } => "bound_violated",
            Error::Scenario(_) => "scenario",
            Error::Spec(_) => "spec",
            Error::MissingDimension(_) => "missing_dimension",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn infeasible(constraint: Constraint, detail: impl Into<String>) -> Self {
        Error::Infeasible {
            constraint,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
