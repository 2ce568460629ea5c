use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: missing value in column `{column}`")]
    MissingValue { row: usize, column: String },

    #[error("row {row}: column `{column}` must be 0 or 1, got `{value}`")]
    NonBinary {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: column `{column}` is not a valid number: `{value}`")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },

    #[error("instrument has a single arm")]
    SingleArm,

    #[error("empty table")]
    EmptyTable,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("cell count {cells} exceeds the enumeration cap of {cap}")]
    CellCap { cells: usize, cap: usize },

    #[error("outcome is degenerate (all values equal) but {k_n} outcome intervals were requested")]
    DegenerateOutcome { k_n: usize },

    #[error("instrument irrelevant for measured treatment (zero denominator)")]
    IrrelevantInstrument,

    #[error("parameter space required: total variation distance is zero")]
    ParameterSpaceRequired,

    #[error("regime `{regime}` is incompatible with the inputs: {reason}")]
    RegimeMismatch { regime: String, reason: String },

    #[error("assumptions jointly rejected by the data: {0}")]
    JointlyRejected(String),

    #[error("design matrix is rank deficient and the ridge fallback is disabled")]
    RankDeficient,

    #[error("all moments are degenerate")]
    AllMomentsDegenerate,

    #[error("construction produced a negative probability {value:e} at atom {atom}")]
    NegativeMass { atom: usize, value: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Short machine-readable tag, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Schema(_) => "schema",
            Error::MissingColumn(_) => "missing_column",
            Error::MissingValue { .. } => "missing_value",
            Error::NonBinary { .. } => "non_binary",
            Error::BadNumber { .. } => "bad_number",
            Error::SingleArm => "single_arm",
            Error::EmptyTable => "empty_table",
            Error::Invalid(_) => "invalid",
            Error::CellCap { .. } => "cell_cap",
            Error::DegenerateOutcome { .. } => "degenerate_outcome",
            Error::IrrelevantInstrument => "irrelevant_instrument",
            Error::ParameterSpaceRequired => "parameter_space_required",
            Error::RegimeMismatch { .. } => "regime_mismatch",
            Error::JointlyRejected(_) => "jointly_rejected",
            Error::RankDeficient => "rank_deficient",
            Error::AllMomentsDegenerate => "all_moments_degenerate",
            Error::NegativeMass { .. } => "negative_mass",
        }
    }
}
