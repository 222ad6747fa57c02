//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("molecule: {0}")]
    Molecule(String),

    #[error("molecule database: {0}")]
    Database(String),

    #[error("basis: {0}")]
    Basis(String),

    #[error("field program: {0}")]
    Program(String),

    #[error("thermal tail: truncation at N_max = {given} leaves a relative tail of {tail:.3e}; N_max >= {required} is needed")]
    ThermalTail { given: u32, required: u32, tail: f64 },

    #[error("truncation guard: population {population:.3e} in the top two shells of N_max = {n_max} exceeds {limit:.1e}")]
    TruncationGuard { population: f64, n_max: u32, limit: f64 },

    #[error("step size: {0}")]
    StepSize(String),

    #[error("observable: {0}")]
    Observable(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code: 2 for schema/config problems, 3 for numerical guards,
    /// 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Database(_) | Error::Molecule(_) => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
