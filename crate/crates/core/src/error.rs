use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("graph construction failed at node {node}: {detail}")]
    Graph { node: usize, detail: String },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("non-finite numeric input: {0}")]
    NumericInput(String),

    #[error("solution blew up at t={t} (stage {stage})")]
    BlowUp { t: f64, stage: usize },

    #[error("step size underflow at t={t} (dt={dt:e}); problem is too stiff")]
    Stiffness { t: f64, dt: f64 },

    #[error("argument out of range: {0}")]
    Range(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stencil not contained in graph neighbourhood: {0}")]
    Containment(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at step {step}: {detail}")]
    Training { step: u64, detail: String },

    #[error("normalisation failed at step {step}: reference is identically zero")]
    Normalization { step: usize },

    #[error("generation failed for seed {seed} ({params}): {source}")]
    Generation {
        seed: u64,
        params: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the numerics diverging rather than bad input.
    pub fn is_blow_up(&self) -> bool {
        match self {
            Error::BlowUp { .. } | Error::Stiffness { .. } | Error::Training { .. } => true,
            Error::Autodiff(autodiff::AutodiffError::NonFiniteGradient(_)) => true,
            Error::Generation { source, .. } => source.is_blow_up(),
            _ => false,
        }
    }

    /// True for malformed or missing datasets and checkpoints.
    pub fn is_data(&self) -> bool {
        match self {
            Error::Data(_) | Error::Io(_) | Error::Json(_) | Error::Resolution(_) => true,
            Error::Autodiff(autodiff::AutodiffError::Checkpoint(_)) => true,
            Error::Autodiff(autodiff::AutodiffError::Io(_)) => true,
            _ => false,
        }
    }
}
