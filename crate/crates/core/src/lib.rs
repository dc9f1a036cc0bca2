//! Numerical toolkit for Penrose-type energy inequalities on spherically
//! symmetric, asymptotically flat initial data.
//!
//! The pipeline takes radial profiles (a, rho, kappa_r, kappa_t) describing a
//! metric g = a^2 dr^2 + rho^2 dOmega^2 together with the mixed components of
//! the extrinsic curvature, locates the outermost apparent horizon, deforms
//! the data by the blow-up solution of the graph equation whose level sets
//! cylinder over the horizon, conformally flattens the deformed slice to zero
//! scalar curvature outside a cap, and accounts for the ADM energy lost in
//! each step.  The end product is a lower bound on the ADM energy in terms of
//! the horizon area, reported together with every intermediate diagnostic
//! needed to audit it.
//!
//! Modules mirror the stages:
//! * [`grid`], [`profile`], [`data`]: radial meshes and sampled profiles,
//! * [`curvature`], [`horizon`], [`adm`]: pointwise geometry of the slice,
//! * [`jang`]: the blow-up graph deformation,
//! * [`conformal`]: zero-scalar-curvature conformal solve and the energy
//!   functionals built on it,
//! * [`scenario`], [`pipeline`], [`report`]: canned data families, the run
//!   driver and structured emission,
//! * [`fd_oracle`]: independent 3-D finite-difference evaluations used to
//!   validate every closed-form radial formula,
//! * [`numerics`]: shared kernels (adaptive RK, quadrature, extrapolation,
//!   tridiagonal solves).

pub mod adm;
pub mod conformal;
pub mod curvature;
pub mod data;
pub mod fd_oracle;
pub mod grid;
pub mod horizon;
pub mod jang;
pub mod numerics;
pub mod pipeline;
pub mod profile;
pub mod report;
pub mod scenario;

use thiserror::Error;

/// Pinned tolerances.  Every acceptance threshold in the test suite refers to
/// these constants; they are part of the public contract and are never
/// loosened at call sites.
pub mod tol {
    /// Root finding on expansions: absolute tolerance is `ROOT_REL * r_max`.
    pub const ROOT_REL: f64 = 1e-10;
    /// Dominant-energy margin below which the condition counts as violated.
    pub const DEC: f64 = 1e-10;
    /// Graph-equation residual allowed on the interior of a blow-up solution.
    pub const JANG: f64 = 1e-6;
    /// Relative tolerance for identities tied to discretization consistency.
    pub const CONSISTENCY: f64 = 1e-3;
    /// ADM estimator cross-check tolerance; truncation dominated.
    pub fn adm(r_max: f64) -> f64 {
        (50.0 / r_max).max(1e-4)
    }
    /// Energy bookkeeping tolerance.
    pub fn energy(e_g: f64) -> f64 {
        1e-3 * e_g.abs().max(1.0)
    }
}

/// Stage-tagged error type for the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value in {context} at r = {r}")]
    NonFinite { context: String, r: f64 },
    #[error("no untrapped-to-trapped transition: {0}")]
    NoHorizon(String),
    #[error("ADM estimators disagree: primary {primary}, flux {flux}, tolerance {tol}")]
    AsymptoticMismatch { primary: f64, flux: f64, tol: f64 },
    #[error("slope reached |beta| = 1 at interior radius r = {r}: marginally trapped surface inside the working region")]
    BlowupEscape { r: f64 },
    #[error("decay violation: {0}")]
    DecayViolation(String),
    #[error("requested cap height {height} exceeds available graph range {available}")]
    CapOutOfRange { height: f64, available: f64 },
    #[error("linear solve failed: {0}")]
    SolveFailure(String),
    #[error("conformal factor lost positivity at r = {r}")]
    NonPositive { r: f64 },
    #[error("degenerate denominator in {0}")]
    DegenerateDenominator(String),
    #[error("energy bound violated: E = {energy}, bound = {bound} ({context})")]
    BoundViolation { energy: f64, bound: f64, context: String },
    #[error("{stage}: {source}")]
    Staged {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it surfaced in.
    pub fn stage(self, stage: &'static str) -> Error {
        match self {
            Error::Staged { .. } => self,
            other => Error::Staged { stage, source: Box::new(other) },
        }
    }

    /// Process exit code: 2 for a violated bound, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BoundViolation { .. } => 2,
            Error::Staged { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
