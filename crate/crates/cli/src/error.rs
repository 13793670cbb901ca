use std::fmt;

use gqda::data::DataError;
use gqda::estimators::EstimateError;
use gqda::gqda::GqdaError;
use gqda::simulate::SimulateError;

/// Failure category; decides the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl fmt::Display) -> Self {
        CliError {
            kind: Kind::Usage,
            message: message.to_string(),
        }
    }

    pub fn data(message: impl fmt::Display) -> Self {
        CliError {
            kind: Kind::Data,
            message: message.to_string(),
        }
    }

    pub fn code(&self) -> u8 {
        match self.kind {
            Kind::Usage => 2,
            Kind::Data => 3,
            Kind::Numerical => 4,
        }
    }
}

/// One line: `error[<kind>]: <message>`, with the message on a single line.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            Kind::Usage => "usage",
            Kind::Data => "data",
            Kind::Numerical => "numerical",
        };
        write!(f, "error[{kind}]: {}", self.message.replace('\n', " "))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::data(e)
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        match e {
            SimulateError::Config { .. } | SimulateError::UnsupportedDesign(_) => CliError::usage(e),
            SimulateError::Pool(_) | SimulateError::Output { .. } => CliError::data(e),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::InvalidSpec(_) => CliError::usage(e),
            _ => CliError {
                kind: Kind::Numerical,
                message: e.to_string(),
            },
        }
    }
}

impl From<GqdaError> for CliError {
    fn from(e: GqdaError) -> Self {
        let kind = match &e {
            GqdaError::Fit { source, .. } => match source {
                EstimateError::InvalidSpec(_) => Kind::Usage,
                EstimateError::TooFewObservations { .. } => Kind::Data,
                _ => Kind::Numerical,
            },
            GqdaError::Numerics(_) | GqdaError::InvalidThreshold(_) => Kind::Numerical,
            _ => Kind::Data,
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}
