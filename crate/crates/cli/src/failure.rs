use std::fmt::Display;
use std::path::Path;

use deltagraph::Error;

pub const INPUT: u8 = 1;
pub const SINGULAR: u8 = 2;
pub const NON_CONVERGENCE: u8 = 3;
pub const VERIFY: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(INPUT, message)
    }

    pub fn io(path: &Path, err: impl Display) -> Self {
        Self::input(format!("{}: {err}", path.display()))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::SpectralSingularity { .. }
            | Error::SingularMatrix { .. }
            | Error::SingularFactor { .. }
            | Error::SingularSystem { .. } => SINGULAR,
            Error::NonConvergence(_) => NON_CONVERGENCE,
            _ => INPUT,
        };
        Self::new(code, e.to_string())
    }
}

pub type Outcome = Result<(), Failure>;
