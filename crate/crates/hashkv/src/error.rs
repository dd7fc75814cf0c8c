use std::fmt;

/// Error type used across the store.
#[derive(Debug)]
pub enum Error {
    /// Caller passed a key or value outside the supported bounds.
    InvalidArgument(String),
    /// A record failed to decode (truncated, bad length field, torn write).
    CorruptRecord(String),
    /// A value location points outside the area it names.
    InvalidLocation(String),
    /// No free space left and garbage collection cannot reclaim more.
    OutOfSpace,
    /// An append could not be placed; the caller must run GC and retry.
    /// Internal control flow between the value store and the store front end.
    NeedsGc,
    /// GC was requested but no group holds any reclaimable data.
    NothingToCollect,
    /// GC aborted; the store was left untouched.
    GcAbort(String),
    /// Journal replay hit a record it could not apply.
    RecoveryFailed(String),
    /// On-disk format header does not match this build or configuration.
    IncompatibleStore(String),
    Io(std::io::Error),
    /// Fault-injection hook fired (testing only).
    Injected,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::CorruptRecord(msg) => write!(f, "corrupt record: {msg}"),
            Error::InvalidLocation(msg) => write!(f, "invalid location: {msg}"),
            Error::OutOfSpace => write!(f, "out of space"),
            Error::NeedsGc => write!(f, "allocation failed, GC required"),
            Error::NothingToCollect => write!(f, "nothing to collect"),
            Error::GcAbort(msg) => write!(f, "gc aborted: {msg}"),
            Error::RecoveryFailed(msg) => write!(f, "recovery failed: {msg}"),
            Error::IncompatibleStore(msg) => write!(f, "incompatible store: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Injected => write!(f, "injected fault"),
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

impl Error {
    pub fn is_needs_gc(&self) -> bool {
        matches!(self, Error::NeedsGc)
    }
}
