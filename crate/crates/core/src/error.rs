use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("self-reference: distance to own id has no bucket")]
    SelfReference,

    #[error("self-connection: node {0} cannot connect to itself")]
    SelfConnection(String),

    #[error("population is empty")]
    EmptyPopulation,

    #[error("node {0} is not part of the population")]
    UnknownNode(String),

    #[error("cannot schedule an event at {at_us}us, clock is already at {now_us}us")]
    ScheduleInPast { at_us: u64, now_us: u64 },

    #[error("cdf of an empty sample")]
    EmptySample,

    #[error("invalid config `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
