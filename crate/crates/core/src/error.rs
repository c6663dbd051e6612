use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the core kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two rasters that must share a lattice do not.
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// A vector length does not match the expected dimension.
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    InvalidLabelMap(String),
    InvalidParameter(String),
    /// A window does not overlap the image.
    EmptyWindow,
    LevelMismatch { proposal: usize, bundle: usize },
    DegenerateTrainingSet,
    /// Exhaustive search requested on more superpixels than allowed.
    InstanceTooLarge { candidates: usize, limit: usize },
    EmptyInput(&'static str),
    /// Failures of a batch operation, keyed by input index.
    Batch(Vec<(usize, Error)>),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { what, expected, found } => write!(
                f,
                "dimension mismatch for {what}: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::LengthMismatch { what, expected, found } => {
                write!(f, "length mismatch for {what}: expected {expected}, found {found}")
            }
            Error::InvalidLabelMap(msg) => write!(f, "invalid label map: {msg}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::EmptyWindow => f.write_str("window does not intersect the image"),
            Error::LevelMismatch { proposal, bundle } => {
                write!(f, "level mismatch: proposal level {proposal}, bundle level {bundle}")
            }
            Error::DegenerateTrainingSet => f.write_str("degenerate training set"),
            Error::InstanceTooLarge { candidates, limit } => write!(
                f,
                "instance too large: {candidates} intersecting superpixels, limit {limit}"
            ),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::Batch(failures) => {
                write!(f, "{} item(s) failed", failures.len())?;
                for (i, e) in failures {
                    write!(f, "; [{i}] {e}")?;
                }
                Ok(())
            }
        }
    }
}

impl core::error::Error for Error {}
