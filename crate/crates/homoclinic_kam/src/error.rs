use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point left the domain box: {0}")]
    DomainEscape(String),
    #[error("jacobian not symplectic: residual {residual:e} exceeds {tol:e}")]
    NonSymplecticJacobian { residual: f64, tol: f64 },
    #[error("inverse iteration failed to converge: {0}")]
    InverseDivergence(String),
    #[error("map has no inverse")]
    NotInvertible,
    #[error("strong resonance: alpha = {alpha} within {tol:e} of {resonance}")]
    StrongResonance { alpha: f64, resonance: f64, tol: f64 },
    #[error("twist coefficient is zero")]
    ZeroTwist,
    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),
    #[error("global matrix not symplectic: residual {0:e}")]
    NonSymplecticM(f64),
    #[error("transversality failure: {0}")]
    TransversalityFailure(String),
    #[error("gluing ball overlaps the exit anchor")]
    GluingOverlap,
    #[error("newton iteration diverged: {0}")]
    NewtonDivergence(String),
    #[error("spectrum is not 1-elliptic: {0}")]
    NotOneElliptic(String),
    #[error("bad curve data: {0}")]
    BadCurveData(String),
    #[error("ill-conditioned homological equation: divisor {0:e}")]
    IllConditionedHomological(f64),
    #[error("orbit never settles inside the neighbourhood")]
    NeverSettles,
    #[error("decay fit failed: {0}")]
    DecayFitFailure(String),
    #[error("no contraction: lipschitz estimate {0}")]
    NoContraction(f64),
    #[error("orbit escaped the annulus")]
    EscapedAnnulus,
    #[error("center plane not invariant: deviation {0:e}")]
    CenterNotInvariant(f64),
    #[error("chart too large: {0}")]
    ChartTooLarge(String),
    #[error("section miss: {0}")]
    SectionMiss(String),
    #[error("polygon self-intersects")]
    SelfIntersecting,
    #[error("tangency suspected: crossing angle {0:e}")]
    TangencySuspected(f64),
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError { line: usize, column: usize, message: String },
    #[error("validation error: {0}")]
    ValidationError(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("stage {stage}: {source}")]
    Stage { stage: String, source: Box<Error> },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub fn at_stage(self, stage: &str) -> Error {
        Error::Stage { stage: stage.to_string(), source: Box::new(self) }
    }

    /// True when a mathematical certificate failed, as opposed to bad input
    /// or an I/O problem.
    pub fn is_certificate_failure(&self) -> bool {
        !matches!(
            self.root(),
            Error::ParseError { .. } | Error::ValidationError(_) | Error::Io(_) | Error::InvalidParameters(_)
        )
    }

    /// Innermost error, with stage tags stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
