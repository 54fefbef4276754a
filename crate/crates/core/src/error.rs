use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),

    #[error("image decode failed for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("no frames found in {0}")]
    NoFrames(PathBuf),

    #[error("inconsistent frame dimensions: expected {expected:?}, {path} is {found:?}")]
    InconsistentDimensions {
        path: PathBuf,
        expected: (u32, u32),
        found: (u32, u32),
    },

    #[error("frame rate unavailable: no fps.txt next to {0} and no override given")]
    MissingFps(PathBuf),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("landmark record {line}: expected 68 points, found {found}")]
    PointCount { line: usize, found: usize },

    #[error("landmark record {line}: frame index {frame} outside 0..{frames}")]
    FrameOutOfRange {
        line: usize,
        frame: usize,
        frames: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("video of {width}x{height} is too small for {levels} pyramid levels")]
    TooSmall {
        width: usize,
        height: usize,
        levels: usize,
    },

    #[error("degenerate face hull: {0}")]
    DegenerateHull(String),

    #[error("empty region of interest {region} in frame {frame}")]
    EmptyRoi { frame: usize, region: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Like [`Error::io`], but a missing file becomes [`Error::MissingPath`].
    pub(crate) fn open(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        match source.kind() {
            std::io::ErrorKind::NotFound => Error::MissingPath(path),
            _ => Error::io(path, source),
        }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }

    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MissingPath(_) => "missing_path",
            Error::Image { .. } => "image",
            Error::NoFrames(_) => "no_frames",
            Error::InconsistentDimensions { .. } => "inconsistent_dimensions",
            Error::MissingFps(_) => "missing_fps",
            Error::Format { .. } => "format",
            Error::PointCount { .. } => "point_count",
            Error::FrameOutOfRange { .. } => "frame_out_of_range",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::TooSmall { .. } => "too_small",
            Error::DegenerateHull(_) => "degenerate_hull",
            Error::EmptyRoi { .. } => "empty_roi",
            Error::Shape(_) => "shape",
            Error::ConfigMismatch(_) => "config_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::Empty(_) => "empty",
        }
    }
}
