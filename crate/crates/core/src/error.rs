use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::model::ModelStructure;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("timestamps must be strictly increasing (index {0})")]
    UnorderedTimestamps(usize),
    #[error("degenerate covariate: historical range is constant")]
    DegenerateCovariate,
    #[error("covariate does not cover year {0}")]
    CovariateCoverage(i32),
    #[error("coverage gap at splice seam: year {0} missing")]
    SpliceGap(i32),
    #[error("outside support")]
    OutsideSupport,
    #[error("missing prior for active parameter {0}")]
    MissingPrior(&'static str),
    #[error("degenerate prior: zero sample variance")]
    DegeneratePrior,
    #[error("gamma prior requires strictly positive samples")]
    GammaSupport,
    #[error("no feasible start")]
    NoFeasibleStart,
    #[error("degenerate chains: zero within-chain variance for parameter {0}")]
    DegenerateChains(usize),
    #[error("convergence gate violated (PSRF > {gate}) for parameters {params:?}")]
    ConvergenceGate { gate: f64, params: Vec<&'static str> },
    #[error("non-finite proposal covariance")]
    ProposalCovariance,
    #[error("non-finite evidence for structure {0}")]
    NonFiniteEvidence(ModelStructure),
    #[error("return period below threshold regime")]
    BelowThresholdRegime,
    #[error("all ensemble draws flagged")]
    AllDrawsFlagged,
    #[error("weights and ensembles cover different structures")]
    StructureMismatch,
    #[error("expected the full set of 13 structures")]
    IncompleteStructureSet,
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("too few simulated exceedances")]
    TooFewExceedances,
}
