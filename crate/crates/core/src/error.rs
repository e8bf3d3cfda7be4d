use thiserror::Error;

/// Errors raised by the polymer toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolymerError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown environment preset `{0}`")]
    UnknownPreset(String),

    #[error("site {site:?} is outside the lattice box of radius {radius}")]
    OutsideBox { site: Vec<i32>, radius: u32 },

    #[error("time {0} is not on the recorded grid")]
    TimeNotRecorded(f64),

    #[error("all mass was killed by hard obstacles (Z = 0)")]
    Extinct,

    #[error("non-finite value in solver field at t = {time}; consider a smaller step or larger rescaling window")]
    NonFinite { time: f64 },

    #[error("sampled path left the environment window of radius {radius} at t = {time}; enlarge the site set")]
    PathEscaped { radius: u32, time: f64 },

    #[error("variance-infeasible parameters: {0}")]
    VarianceInfeasible(String),

    #[error("box too large: {sites} sites exceeds the limit of {limit}")]
    BoxTooLarge { sites: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, PolymerError>;
