use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain where the quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// An argument is malformed or inconsistent with the others.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// The requested size exceeds what the chosen backend can hold.
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    /// A structural configuration problem (e.g. odd chain with periodic pairing).
    #[error("configuration error: {0}")]
    Config(String),
    /// The running Kubo integral never settled onto a plateau.
    #[error("no plateau detected in running integral (last value {last:.6e})")]
    NoPlateau { running: Vec<f64>, last: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn argument<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
