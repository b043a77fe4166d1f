use crate::rig::BoneId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("pose does not cover bone {0}")]
    PoseCoverage(BoneId),
    #[error("pose has an entry for unknown bone {0}")]
    PoseExtraBone(BoneId),
    #[error("unknown bone id {0}")]
    UnknownBone(BoneId),
    #[error("rig would be left without any leaf bone")]
    EmptyRig,
    #[error("cycle in parent links through bone {0}")]
    Cycle(BoneId),
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("unsupported rig file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("not enough points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("optimization diverged: {0}")]
    Diverged(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged(_) | Error::Degenerate(_))
    }
}
