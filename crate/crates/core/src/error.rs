use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid of {requested} samples exceeds the cap of {cap}")]
    GridTooLarge { requested: usize, cap: usize },

    #[error("invalid interval: {0}")]
    InvalidInterval(String),

    #[error("shift {shift} is not a multiple of the grid step {dt}")]
    OffGridShift { shift: f64, dt: f64 },

    #[error("time {t} lies outside the sampled window [{t_min}, {t_max}]")]
    WindowExhausted { t: f64, t_min: f64, t_max: f64 },

    #[error("path history reaches back to {available}, but {required} is needed")]
    InsufficientLeftWindow { required: f64, available: f64 },

    #[error("trajectory left the bound {bound} at t = {t}")]
    Diverged { t: f64, bound: f64 },

    #[error("invalid step: {0}")]
    InvalidStep(String),

    #[error("spectral gap {gap:.3e} is below the threshold {threshold:.1e}")]
    NoGap { gap: f64, threshold: f64 },

    #[error("exponential fit failed: {0}")]
    FitFailure(String),

    #[error("fixed-point iteration did not contract after {iterations} iterations (last update {last_update:.3e})")]
    NoContraction { iterations: usize, last_update: f64 },

    #[error("window too short: value at the anchor moved by {shift:.3e} when the window grew")]
    WindowTooShort { shift: f64 },

    #[error("smallness conditions cannot be met: {0}")]
    SmallnessViolated(String),

    #[error("trajectory left the tube of radius {radius} at t = {t}")]
    TubeEscape { t: f64, radius: f64 },

    #[error("grids do not match: {0}")]
    GridMismatch(String),

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("bounding box is not absorbing: {0}")]
    NotAbsorbing(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
