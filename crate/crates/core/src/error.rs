use thiserror::Error;

pub type Result<T> = std::result::Result<T, TorusError>;

#[derive(Debug, Error)]
pub enum TorusError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// The right-hand side has a component the operator cannot reach
    /// (nonzero average, or a k = 0 block outside the image).
    #[error("unsolvable cohomological equation: defect {defect:e} exceeds tolerance {tolerance:e} ({detail})")]
    Unsolvable {
        defect: f64,
        tolerance: f64,
        detail: String,
    },

    #[error("small divisor {divisor:e} at mode {mode:?} ({detail})")]
    SmallDivisor {
        mode: Vec<i64>,
        divisor: f64,
        detail: String,
    },

    #[error("invalid frequencies: {0}")]
    InvalidFrequencies(String),

    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),

    #[error("domain escape at grid point {index}: {detail}")]
    DomainEscape { index: usize, detail: String },

    #[error("degenerate frame at grid point {index}: {detail}")]
    DegenerateFrame { index: usize, detail: String },

    #[error("degenerate torsion: condition number {condition:e} above cap {cap:e}")]
    DegenerateTorsion { condition: f64, cap: f64 },

    #[error("transversality condition fails: condition number {condition:e} above cap {cap:e}")]
    Transversality { condition: f64, cap: f64 },

    #[error("normal pair {pair} has non-positive symplectic area {area:e}")]
    NormalOrientation { pair: usize, area: f64 },

    #[error("Newton iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("continuation increment underflow at {value} (increment {increment:e})")]
    StepUnderflow { value: f64, increment: f64 },

    #[error("invalid continuation schedule: {0}")]
    InvalidSchedule(String),

    #[error("integration failure: {0}")]
    Integration(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
