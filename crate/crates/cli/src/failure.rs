use std::fmt;
use std::process::ExitCode;

use uavloc_core::config::ConfigError;
use uavloc_core::detector::DetectorError;

/// A command failure tagged with the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// 1: I/O and anything unclassified.
    Other(anyhow::Error),
    /// 2: bad flags or config files.
    Config(anyhow::Error),
    /// 3: unreadable or inconsistent input data.
    Data(anyhow::Error),
    /// 4: training produced a non-finite loss or gradient.
    Diverged(anyhow::Error),
    /// 5: an acceptance gate was not met.
    Gate(String),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Diverged(_) => 4,
            Failure::Gate(_) => 5,
        })
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Other(e) => write!(f, "{e:#}"),
            Failure::Config(e) => write!(f, "config error: {e:#}"),
            Failure::Data(e) => write!(f, "data error: {e:#}"),
            Failure::Diverged(e) => write!(f, "{e:#}"),
            Failure::Gate(m) => write!(f, "gate failed: {m}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.into())
    }
}

impl From<DetectorError> for Failure {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::Diverged { .. } => Failure::Diverged(e.into()),
            DetectorError::Config(_) => Failure::Config(e.into()),
            DetectorError::Io(_) => Failure::Other(e.into()),
            _ => Failure::Data(e.into()),
        }
    }
}

pub type Result<T, E = Failure> = std::result::Result<T, E>;

/// Tags any error with an exit category.
pub trait Tag<T> {
    fn config(self) -> Result<T>;
    fn data(self) -> Result<T>;
    fn other(self) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for std::result::Result<T, E> {
    fn config(self) -> Result<T> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn data(self) -> Result<T> {
        self.map_err(|e| Failure::Data(e.into()))
    }

    fn other(self) -> Result<T> {
        self.map_err(|e| Failure::Other(e.into()))
    }
}
