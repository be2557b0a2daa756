use thiserror::Error;

/// Errors produced by the design engine.
///
/// Variants split into two families that the CLI maps to different exit
/// codes: input/validation problems (exit 1) and numerical or sampler
/// diagnostics (exit 2).
#[derive(Debug, Error)]
pub enum PedError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config validation failed: {0}")]
    Validation(String),

    #[error("no pediatric intercept reaches max deviation {delta} at slope {slope} without crossing the adult curve")]
    Infeasible { slope: f64, delta: f64 },

    #[error("only {found} feasible family members at delta = {delta} (need at least {required}); widen or densify the slope grid")]
    InsufficientFamily {
        delta: f64,
        found: usize,
        required: usize,
    },

    #[error("no family member within {tolerance} of eta = {target} (closest gap {gap}) at delta = {delta}")]
    EtaResolution {
        delta: f64,
        target: f64,
        gap: f64,
        tolerance: f64,
    },

    #[error("elicited quantiles are inconsistent: fitted sd {sigma} is not positive")]
    ElicitationInconsistency { sigma: f64 },

    #[error("sampler diagnostic: acceptance rate {rate:.3} outside [{lo}, {hi}]")]
    SamplerDiagnostic { rate: f64, lo: f64, hi: f64 },

    #[error("sampler initialization failed: {0}")]
    Initialization(String),

    #[error("mixture fit failed: {0}")]
    MixtureFit(String),

    #[error("replicate {replicate} ({hypothesis}) failed twice: {source}")]
    ReplicateAborted {
        replicate: usize,
        hypothesis: &'static str,
        #[source]
        source: Box<PedError>,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PedError {
    /// True for errors caused by bad inputs rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PedError::InvalidArgument(_)
                | PedError::Validation(_)
                | PedError::Parse { .. }
                | PedError::Csv(_)
                | PedError::Json(_)
                | PedError::Io(_)
                | PedError::ElicitationInconsistency { .. }
        )
    }
}

pub type Result<T, E = PedError> = std::result::Result<T, E>;
