//! Measurement battery: latent/signal correlations, block smoothing, linear
//! CKA, metric MDS, bottleneck decoding and plotting.

mod corr;
mod decode;
mod mds;
pub mod plot;
mod similarity;

pub use corr::{
    correlation_matrix, max_corr, max_corr_protocol, pearson, permutation_null, permutation_null_familywise, smooth_blocks,
    smoothing_kernel, CorrEntry, CorrSign, CorrelationReport, MaxCorr, NullBand,
};
pub use decode::{decode_bottleneck, DecodeConfig, DecodeLoss, DecodeResult, DecodeSample};
pub use mds::{classical_mds, mds, EmbeddingResult, MdsConfig};
pub use similarity::{cka, cosine_dissimilarity, last_encounter, symmetric_eigen};

/// Variance below which a column counts as constant.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {found}")]
    TooShort { needed: usize, found: usize },
    #[error("no latent has non-zero variance")]
    NoValidLatents,
    #[error("signal has no column with non-zero variance")]
    NoValidSignal,
    #[error("matrix is zero after centering")]
    ZeroMatrix,
    #[error("row {0} has zero norm")]
    ZeroRow(usize),
    #[error("invalid dissimilarity matrix: {0}")]
    InvalidDissimilarity(String),
    #[error("stress increased at iteration {iteration}: {previous} -> {current}")]
    StressIncrease {
        iteration: usize,
        previous: f64,
        current: f64,
    },
    #[error("fold holding out run {run} has a single class in training data")]
    SingleClassFold { run: usize },
    #[error("decoding needs at least two runs, got {0}")]
    TooFewRuns(usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;
