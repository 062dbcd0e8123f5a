use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty measure")]
    EmptyMeasure,
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid flow: {0}")]
    InvalidFlow(String),
    #[error("time {t} outside [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },
    #[error("invalid interval ({a}, {b})")]
    InvalidInterval { a: f64, b: f64 },
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("factor {0} outside (0, 1]")]
    InvalidFactor(f64),
    #[error("mass mismatch: {0} vs {1}")]
    MassMismatch(f64, f64),
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("point {0:?} coincides with an atom (infinite potential)")]
    SingularPoint([f64; 2]),
    #[error("self-interaction requested in pure-Dirac mode")]
    PureSelfEnergy,
    #[error("disk mode requires positive radii")]
    MissingRadius,
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("degenerate fit window: {0}")]
    DegenerateWindow(String),
    #[error("empty subsystem at node {0}")]
    EmptySubsystem(usize),
    #[error("flow is not rooted: {0}")]
    NotRooted(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
