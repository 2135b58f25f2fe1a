use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Diagnostics attached to a failed ζ-drop verification in the segment
/// perturbation. Carried whole so replay scripts can inspect the run.
#[derive(Debug, Clone)]
pub struct DropDiagnostics {
    /// ζ of the unperturbed product, per step.
    pub zeta_before_rate: f64,
    /// ζ of the perturbed product, per step.
    pub zeta_after_rate: f64,
    /// The a_d·Z_est + ε target rate the plan had to beat.
    pub target_rate: f64,
    /// Half-gap profile γ_1..γ_{d-1} of the unperturbed product.
    pub gamma_profile: Vec<f64>,
    /// Index i_0 that was attacked.
    pub attacked_index: usize,
    /// Chosen break point k and window length m_0.
    pub window_start: usize,
    pub window_len: usize,
    pub segment_len: usize,
}

impl std::fmt::Display for DropDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "zeta/n {:.6} -> {:.6}, target {:.6}, i0={}, k={}, m0={}, n={}, gammas {:?}",
            self.zeta_before_rate,
            self.zeta_after_rate,
            self.target_rate,
            self.attacked_index,
            self.window_start,
            self.window_len,
            self.segment_len,
            self.gamma_profile
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("budget rejected: {0}")]
    Budget(String),

    /// Window search exhausted: the singular-gap ratio stayed below the
    /// admission threshold for every scanned length, which certifies a
    /// dominated splitting at this index.
    #[error("domination detected at index {index}: {detail}")]
    DominationDetected { index: usize, detail: String },

    /// The growth-ratio hypothesis of the vector chain failed, or the chain
    /// could not land within the angle budget.
    #[error("chain hypothesis violated: {0}")]
    HypothesisViolation(String),

    /// A window point certified by the grid did not admit any ratio
    /// sub-window; the caller should retry another point.
    #[error("internal contradiction: {0}")]
    InternalContradiction(String),

    #[error("continuation failed: {0}")]
    ContinuationFailure(String),

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("splitting recovery did not converge: {0}")]
    NonConvergence(String),

    #[error("zeta drop failed: {0}")]
    DropFailure(Box<DropDiagnostics>),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// Stable machine-readable reason code, used in CLI exits and reports.
    pub fn reason_code(&self) -> &'static str {
        match self {
            Error::InvalidMatrix(_) => "invalid_matrix",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Unsupported(_) => "unsupported",
            Error::Budget(_) => "budget",
            Error::DominationDetected { .. } => "domination_detected",
            Error::HypothesisViolation(_) => "hypothesis_violation",
            Error::InternalContradiction(_) => "internal_contradiction",
            Error::ContinuationFailure(_) => "continuation_failure",
            Error::InvalidFrame(_) => "invalid_frame",
            Error::NonConvergence(_) => "non_convergence",
            Error::DropFailure(_) => "drop_failure",
            Error::Numerical(_) => "numerical",
        }
    }
}
