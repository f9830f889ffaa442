use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("suffix starts at {found:?} but prefix ends at {expected:?}")]
    MismatchedJunction { expected: Vec<i32>, found: Vec<i32> },
    #[error("invalid dimensions: {0}")]
    Dimensions(String),
    #[error("invalid direction {0:?}")]
    Direction(String),
    #[error("environment support has {count} atoms, cap is {cap}")]
    SupportTooLarge { count: usize, cap: usize },
    #[error("history has zero probability under the annealed law")]
    ZeroProbabilityHistory,
    #[error("box radius {radius} loses mass {deficit:e} at k={k}")]
    BoxTooSmall { radius: usize, k: usize, deficit: f64 },
    #[error("box with radius {radius} in {dim} dimensions is too large")]
    BoxTooLarge { radius: usize, dim: usize },
    #[error("G^*{i} does not converge (tail ratio {tail_ratio:.6})")]
    NotConverging { i: usize, tail_ratio: f64 },
    #[error("m_max={m_max} exceeds the enumeration cap {cap}")]
    CapExceeded { m_max: usize, cap: usize },
    #[error("trajectory has {have} q-steps, need at least {need}")]
    TooShort { have: usize, need: usize },
    #[error("no cut times detected")]
    NoCutsDetected,
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
