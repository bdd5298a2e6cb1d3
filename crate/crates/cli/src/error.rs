use std::fmt;
use std::process::ExitCode;

/// Failure classes, each with a fixed exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Validation,
    Verification,
    Transport,
}

impl Kind {
    pub fn code(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Validation => "validation",
            Kind::Verification => "verification",
            Kind::Transport => "transport",
        }
    }

    pub fn exit_status(self) -> u8 {
        match self {
            Kind::Usage => 1,
            Kind::Validation => 2,
            Kind::Verification => 3,
            Kind::Transport => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Usage,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Validation,
            message: message.into(),
        }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Verification,
            message: message.into(),
        }
    }

    pub fn transport(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Transport,
            message: message.into(),
        }
    }

    pub fn report(&self) -> ExitCode {
        eprintln!("error[{}]: {}", self.kind.code(), self.message);
        ExitCode::from(self.kind.exit_status())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.code(), self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::usage(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
