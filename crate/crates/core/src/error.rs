use crate::tensor::SpaceLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("label {0} appears in both operands")]
    DuplicateLabel(SpaceLabel),
    #[error("label {0} is not carried by the operator")]
    UnknownLabel(SpaceLabel),
    #[error("new ordering is not a permutation of the operator labels")]
    NotAPermutation,
    #[error("operator is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },
    #[error("operator is not unitary (deviation {deviation:e})")]
    NotUnitary { deviation: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("Kraus operators exceed trace preservation by {excess:e}")]
    TraceExceedsOne { excess: f64 },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("shared label {label} has dimension {left} on one side and {right} on the other")]
    DimMismatchOnSharedLabel {
        label: SpaceLabel,
        left: usize,
        right: usize,
    },
    #[error("invalid process spec: {0}")]
    InvalidSpec(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("negative probability {0:e}")]
    NegativeProbability(f64),
    #[error("setting {setting_id} outcome probabilities sum to {total}")]
    NotNormalizedSetting { setting_id: u64, total: f64 },
    #[error("block K00 has singular value {0} > 1")]
    SingularValueExceedsOne(f64),
    #[error("invalid probe setting: {0}")]
    InvalidSetting(String),
    #[error("state vector is not normalized (norm {0})")]
    NotNormalized(f64),
    #[error("phase filter is missing the sample at theta = {0}")]
    MissingSample(&'static str),
    #[error("family of {requested} elements exceeds the cap of {cap}")]
    OutOfBudget { requested: u128, cap: u128 },
    #[error("bad bipartition: {0}")]
    BadCut(String),
    #[error("operator family is empty")]
    EmptyFamily,
    #[error("probe family is not informationally complete (rank {rank} of {dim})")]
    NotIc { rank: usize, dim: usize },
    #[error("no data for setting {setting_id} outcome {outcome}")]
    MissingData { setting_id: u64, outcome: u32 },
    #[error("operator lies outside the family span (relative residual {residual:e})")]
    OutsideSpan { residual: f64 },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
