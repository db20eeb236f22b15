use std::fmt;

/// Errors produced by tensor ops, geometry, data generation and file I/O.
#[derive(Debug)]
pub enum Error {
    /// Two tensor shapes that were required to agree did not.
    ShapeMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A parameter or input failed validation before any work started.
    InvalidArgument(String),
    /// An ROI with non-positive width or height.
    DegenerateRoi { width: f64, height: f64 },
    /// A mask binarization produced no foreground pixels.
    NoInstance,
    /// A value that must be finite was NaN or infinite.
    NonFinite(&'static str),
    /// A text or binary file did not match its expected format.
    Format(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { context, left, right } => {
                write!(f, "shape mismatch in {context}: {left:?} vs {right:?}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::DegenerateRoi { width, height } => {
                write!(f, "degenerate roi: width={width}, height={height}")
            }
            Error::NoInstance => write!(f, "no instance: mask has no foreground pixels"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for `Error::InvalidArgument` construction in validation code.
macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}
pub(crate) use invalid;
