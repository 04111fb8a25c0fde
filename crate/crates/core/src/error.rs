use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can surface.
///
/// Variants map onto process exit codes through [`Error::exit_code`], so the
/// CLI can report NoTissueFound, backend failures and I/O problems distinctly.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported slide format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt pyramid: {0}")]
    CorruptPyramid(String),
    #[error("invalid pyramid level {level} (slide has {count})")]
    InvalidLevel { level: usize, count: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("no tissue found in slide")]
    NoTissueFound,
    #[error("region of interest has zero area")]
    ZeroAreaRoi,

    #[error("mask missing for tile {tile_id}: expected {}", path.display())]
    MaskMissing { tile_id: u64, path: PathBuf },
    #[error("mask shape mismatch: {0}")]
    MaskShapeMismatch(String),
    #[error("sidecar failure: {0}")]
    SidecarFailure(String),
    #[error("cleaning backend failure: {0}")]
    CleaningBackendFailure(String),
    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("tile set has no members")]
    EmptySet,
    #[error("zero denominator: {0}")]
    ZeroDenominator(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("insufficient sets: requested {requested}, available {available}")]
    InsufficientSets { requested: usize, available: usize },
    #[error("malformed CSV: {0}")]
    MalformedCsv(String),
    #[error("synthetic spec out of bounds: {0}")]
    SpecOutOfBounds(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{stage} failed{}: {source}", set_index.map(|s| format!(" at set {s}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        set_index: Option<u32>,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {}: {source}", path.display())]
    FileIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str, set_index: Option<u32>) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                set_index,
                source: Box::new(e),
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::FileIo {
            path: path.into(),
            source,
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code for scripting. Documented in the README.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::InvalidArgument(_) | Error::InvalidConfig(_) => 2,
            Error::NoTissueFound | Error::ZeroAreaRoi => 3,
            Error::MaskMissing { .. }
            | Error::MaskShapeMismatch(_)
            | Error::SidecarFailure(_)
            | Error::CleaningBackendFailure(_)
            | Error::Protocol(_) => 4,
            Error::Io(_) | Error::FileIo { .. } | Error::Image(_) | Error::Json(_) => 5,
            Error::UnsupportedFormat(_) | Error::CorruptPyramid(_) | Error::InvalidLevel { .. } => 6,
            Error::MalformedCsv(_) | Error::Csv(_) | Error::InsufficientSets { .. } => 7,
            _ => 1,
        }
    }
}
