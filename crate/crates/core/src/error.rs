use std::fmt;

/// Pipeline stage reported when `calibrate` fails part-way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Homography,
    Conic,
    Intrinsics,
    Extrinsics,
    Distortion,
    Refinement,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Homography => "homography estimation",
            Stage::Conic => "conic estimation",
            Stage::Intrinsics => "intrinsic extraction",
            Stage::Extrinsics => "extrinsic estimation",
            Stage::Distortion => "distortion estimation",
            Stage::Refinement => "nonlinear refinement",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point projects with camera-frame depth {0:e}")]
    DegenerateDepth(f64),
    #[error("intrinsic matrix is singular")]
    SingularIntrinsics,
    #[error("rotation is at the ZYZ gimbal singularity (sin b = 0)")]
    GimbalDegenerate,
    #[error("malformed PGM: {0}")]
    MalformedPgm(String),
    #[error("region boundary is not a simple closed curve")]
    NotSimpleBoundary,
    #[error("need at least 3 contour points, got {0}")]
    TooFewPoints(usize),
    #[error("all points coincide")]
    DegeneratePoints,
    #[error("lines are parallel")]
    ParallelLines,
    #[error("found {found} boxes, expected {expected}")]
    WrongBoxCount { found: usize, expected: usize },
    #[error("found {found} response regions, expected at least {expected}")]
    TooFewResponses { found: usize, expected: usize },
    #[error("homography system is rank deficient (sigma8/sigma1 = {0:e})")]
    RankDeficient(f64),
    #[error("objective is not finite")]
    NonFinite,
    #[error("views are degenerate (sigma5/sigma1 = {0:e})")]
    DegenerateViews(f64),
    #[error("conic yields a non-positive radicand")]
    NegativeDiscriminant,
    #[error("homography column maps to a null vector")]
    DegenerateHomography,
    #[error("distortion normal equations are ill-conditioned (cond = {0:e})")]
    IllConditioned(f64),
    #[error("undistortion cubic has no admissible real root")]
    NoRealRoot,
    #[error("undistortion iteration did not converge")]
    NoConvergence,
    #[error("view {view} places target corners outside the image or behind the camera")]
    PoseOutOfFrame { view: usize },
    #[error("viewing ray is parallel to the ground plane")]
    RayParallelToPlane,
    #[error("line endpoints back-project to the same ground point")]
    DegenerateLine,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Strips any stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn at(stage: Stage) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
