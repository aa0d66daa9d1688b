use std::fmt;

/// Machine-readable reason a [`crate::FrameConfig`] was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Violation {
    /// A dimension is zero.
    ZeroDimension,
    /// `U ∤ T`, `V ∤ N` or `U ∤ T_P`.
    Partition,
    /// Fewer pilot observations per sub-block than the `3K` unknowns.
    Solvability,
    /// Pilot list length differs from `T_P`, or a time sub-block holds the wrong count.
    PilotCount,
    /// Pilot symbol indices not strictly increasing.
    PilotOrder,
    /// Pilot symbol index outside `[1, T]`.
    PilotRange,
    /// Non-positive or non-finite subcarrier spacing.
    Spacing,
}

impl Violation {
    pub fn code(self) -> &'static str {
        match self {
            Violation::ZeroDimension => "ZERO_DIMENSION",
            Violation::Partition => "PARTITION",
            Violation::Solvability => "SOLVABILITY",
            Violation::PilotCount => "PILOT_COUNT",
            Violation::PilotOrder => "PILOT_ORDER",
            Violation::PilotRange => "PILOT_RANGE",
            Violation::Spacing => "SPACING",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Every invariant a frame configuration failed, in check order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub violations: Vec<(Violation, String)>,
}

impl ConfigError {
    pub fn has(&self, v: Violation) -> bool {
        self.violations.iter().any(|(x, _)| *x == v)
    }

    pub fn codes(&self) -> Vec<&'static str> {
        self.violations.iter().map(|(v, _)| v.code()).collect()
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|(v, msg)| format!("{v} ({msg})"))
            .collect();
        write!(f, "{}", parts.join("; "))
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("profile has no taps")]
    EmptyProfile,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("regressor matrix has column rank below {users}")]
    RankDeficient { users: usize },
    #[error("sub-block (u={u}, v={v}) missing")]
    MissingBlock { u: usize, v: usize },
    #[error("need at least {needed} training realizations, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("need at least 2 pilot symbols for interpolation, got {0}")]
    TooFewPilots(usize),
    #[error("tensor `{name}`: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("weight bundle mismatch: {0}")]
    WeightMismatch(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("estimator `{0}` needs network weights")]
    MissingWeights(String),
    #[error("unknown estimator `{0}`")]
    UnknownEstimator(String),
    #[error("truth tensor has zero energy")]
    ZeroTruth,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable identifier for scripts; config errors report the first violation code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(c) => c.violations.first().map_or("CONFIG", |(v, _)| v.code()),
            Error::EmptyProfile => "EmptyProfile",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NumericalFailure(_) => "NumericalFailure",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::MissingBlock { .. } => "MissingBlock",
            Error::InsufficientData { .. } => "InsufficientData",
            Error::TooFewPilots(_) => "TooFewPilots",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::WeightMismatch(_) => "WeightMismatch",
            Error::Format(_) => "FormatError",
            Error::TruncatedFile(_) => "TruncatedFile",
            Error::MissingWeights(_) => "MissingWeights",
            Error::UnknownEstimator(_) => "UnknownEstimator",
            Error::ZeroTruth => "ZeroTruth",
            Error::Parse { .. } => "ParseError",
            Error::Io(_) => "IoError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
