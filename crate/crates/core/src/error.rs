use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Every fallible operation in the pipeline funnels
/// into this enum so the CLI can map failures onto exit codes in one place.
#[derive(Debug, Error)]
pub enum Error {
    #[error("text does not fit in the image: {0}")]
    TextTooLarge(String),

    #[error("no glyph for character {0:?}")]
    UnsupportedChar(char),

    #[error("manifest corrupt: {0}")]
    ManifestCorrupt(String),

    #[error("malformed artifact: {0}")]
    ArtifactCorrupt(String),

    #[error("meme {0} lacks rendering metadata (no text boxes)")]
    MissingMetadata(u64),

    #[error("no text box admits a trigger placement")]
    NoValidPlacement,

    #[error("tile is {got_w}x{got_h} but the placement wants {want_w}x{want_h}")]
    TileShapeMismatch {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },

    #[error("only {placeable} of the {needed} requested samples admit a trigger placement")]
    InsufficientPlaceable { placeable: usize, needed: usize },

    #[error("non-finite training loss at epoch {0}")]
    NonFiniteLoss(usize),

    #[error("empty evaluation set: {0}")]
    EmptySet(&'static str),

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),

    #[error("image too small: both sides must be at least {0} px")]
    TooSmall(u32),

    #[error("poisoned sample {0} has no counterpart in the clean corpus")]
    PairingMismatch(u64),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// A pipeline stage failed; wraps the underlying error with the stage name.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach a pipeline stage name to an error (used by the harness).
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// CLI exit code: 1 for usage-class problems (bad config, missing
    /// inputs), 2 for pipeline failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::MissingInput(_) => 1,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
