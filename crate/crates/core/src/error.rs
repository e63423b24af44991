use std::fmt;

/// Toolkit-wide error. The variant determines the process exit code:
/// usage errors exit 1, data errors exit 2, numeric failures exit 3.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Bad invocation or configuration (unknown model name, missing flag, ...).
    Usage(String),
    /// Bad or missing input data (malformed CSV, shape mismatch, absent cache, ...).
    Data(String),
    /// Numeric failure: NaN/Inf encountered, or a statistic's precondition violated.
    Numeric(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) => 2,
            Error::Numeric(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Data(format!("io: {e}"))
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(format!("csv: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_variant() {
        assert_eq!(Error::usage("x").exit_code(), 1);
        assert_eq!(Error::data("x").exit_code(), 2);
        assert_eq!(Error::numeric("x").exit_code(), 3);
    }

    #[test]
    fn display_prefixes_kind() {
        let s = Error::data("bad row").to_string();
        assert!(s.contains("data error"), "{s}");
        assert!(s.contains("bad row"), "{s}");
    }
}
