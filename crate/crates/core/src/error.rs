use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("collision in flock {flock} between agents {i} and {j}")]
    Collision { flock: usize, i: usize, j: usize },

    #[error("blow-up detected at t = {time} (last finite state at t = {last_good})")]
    Blowup { time: f64, last_good: f64 },

    #[error("particle ordering lost in flock {flock} at t = {time}")]
    Ordering { flock: usize, time: f64 },

    #[error("quadrature did not converge (achieved error {achieved:e})")]
    Quadrature { achieved: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
