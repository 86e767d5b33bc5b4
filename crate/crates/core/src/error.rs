use thiserror::Error;

/// Errors raised by models, particle estimators and exact oracles.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("inadmissible parameter: {0}")]
    InadmissibleParameter(String),

    #[error("density vanishes at the evaluation point ({0})")]
    ZeroDensity(&'static str),

    #[error("all importance weights vanished at time {t}")]
    Collapsed { t: usize },

    #[error("categorical sampler needs at least one positive finite weight")]
    AllZeroWeights,

    #[error("backward weights sum to zero for child {child} at time {t}")]
    AllZeroBackwardWeights { t: usize, child: usize },

    #[error("predictive likelihood estimate vanished at time {t}")]
    DegenerateLikelihood { t: usize },

    #[error("exact likelihood vanished at time {t}")]
    ZeroLikelihood { t: usize },

    #[error("mismatched dimensions: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
