use alloc::string::String;

/// Errors raised by the kernels, builders and checks in this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("type error: expected {expected}, found {found}")]
    Type {
        expected: &'static str,
        found: &'static str,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    #[error("non-finite value at {location}")]
    NonFinite { location: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::Error::Dimension(alloc::format!($($arg)*))
    };
}

macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::Error::Config(alloc::format!($($arg)*))
    };
}

pub(crate) use {config_err, dim_err};
