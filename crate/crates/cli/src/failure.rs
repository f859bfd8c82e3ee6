//! Exit codes and the stderr class printed with each failure.

use std::fmt;
use std::process::ExitCode;

use cqlqg::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    /// A check ran to completion and did not pass.
    CheckFailed,
    Usage,
    Io,
    Parse,
    Dimension,
    NotStabilizing,
    NoStabilizingStart,
    FlowEscaped,
    Numerical,
}

impl Class {
    pub fn code(self) -> u8 {
        match self {
            Class::CheckFailed => 1,
            Class::Usage => 2,
            Class::Io => 3,
            Class::Parse => 4,
            Class::Dimension => 5,
            Class::NotStabilizing => 6,
            Class::NoStabilizingStart => 7,
            Class::FlowEscaped => 8,
            Class::Numerical => 9,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::CheckFailed => "check",
            Class::Usage => "usage",
            Class::Io => "io",
            Class::Parse => "parse",
            Class::Dimension => "dimension",
            Class::NotStabilizing => "unstable",
            Class::NoStabilizingStart => "no-start",
            Class::FlowEscaped => "flow-escaped",
            Class::Numerical => "numerical",
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub class: Class,
    pub message: String,
}

impl Failure {
    pub fn new(class: Class, message: impl Into<String>) -> Self {
        Self { class, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(Class::Io, message)
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Self::new(Class::Parse, message)
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.class.code())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.class.name(), self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let class = match &e {
            Error::Parse(_) => Class::Parse,
            Error::Dimension(_) => Class::Dimension,
            Error::Unstable { .. } => Class::NotStabilizing,
            Error::Precondition(msg) if msg.contains("not stabilizing") => Class::NotStabilizing,
            Error::Precondition(_) => Class::Usage,
            Error::StabilizationNotFound { .. } | Error::AllStartsFailed { .. } => Class::NoStabilizingStart,
            Error::FlowEscaped { .. } => Class::FlowEscaped,
            Error::Numerical(_) | Error::ArmijoExhausted { .. } => Class::Numerical,
        };
        Failure::new(class, e.to_string())
    }
}
