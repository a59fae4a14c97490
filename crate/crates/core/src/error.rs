use alloc::string::String;

/// Errors raised by the core pipeline.
///
/// Every variant maps onto one coarse category (see [`Error::category`]) so
/// front ends can translate failures into stable exit codes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical error: {0}")]
    Numeric(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("reasoner error: {0}")]
    Reasoner(String),
}

/// Coarse failure category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Data,
    Network,
    Validation,
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) => Category::Config,
            Error::Data(_) | Error::Parse(_) => Category::Data,
            Error::Reasoner(_) => Category::Network,
            Error::Shape(_) | Error::Validation(_) | Error::Numeric(_) => Category::Validation,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
