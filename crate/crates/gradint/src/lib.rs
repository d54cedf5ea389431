//! Staircase laminates for two-phase elliptic coefficients, and the
//! piecewise-affine maps that realize them.
//!
//! Given an elliptic pair of 2×2 coefficient matrices (σ₁, σ₂), the solutions
//! of the mixed equation div(σ∇u) = 0 with σ ∈ {σ₁, σ₂} have gradients whose
//! integrability degenerates at a critical pair of exponents (q, p) determined
//! by the pair. This crate constructs the extremal objects behind that
//! degeneracy and measures them:
//!
//! * [`coefficients`] — critical exponents q = 2K/(K+1), p = 2K/(K−1) for a
//!   general elliptic pair, the diagonal normal form, and the Beltrami
//!   translation between coefficients and complex dilatations.
//! * [`conformal`] — plus/minus coordinates for real 2×2 matrices, the algebra
//!   everything else is written in.
//! * [`targets`] — the two rank-one-free target lines T₁, T₂, distances and
//!   projections, and the two elementary rank-one decompositions (through the
//!   conformal line at infinity, and onto a conjugation point) that every
//!   staircase step is assembled from.
//! * [`laminate`] — finitely supported gradient measures with their splitting
//!   trees, moments and tail masses.
//! * [`staircase`] — the step measure ν_A for A near n·J·R_θ, the infinite
//!   staircase iteration, its per-level masses, and the product asymptotics
//!   that pin the distribution exponent p(R_θ).
//! * [`geometry`] — convex polygon clipping and exact area bookkeeping for the
//!   mesh layer.
//! * [`realize`] — piecewise-affine convex integration: sawtooth strip
//!   constructions for a single rank-one split, recursive laminate
//!   realization, and the finite-depth staircase map on a domain.
//! * [`analysis`] — gradient distribution functions, weak-L^p quasinorms,
//!   truncated L^p integrals, log-log slope fits, and the weak-form residual
//!   of the realized two-phase field.
//!
//! The `gradint` binary exposes the pipeline as `exponents`, `staircase`,
//! `realize` and `verify` subcommands.

pub mod analysis;
pub mod cli;
pub mod coefficients;
pub mod conformal;
pub mod geometry;
pub mod laminate;
pub mod rational;
pub mod realize;
pub mod staircase;
pub mod targets;

/// Library-wide error type. The CLI maps variants onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or self-inconsistent input: bad config, non-elliptic
    /// coefficients, matrices that fail a precondition by construction.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Structurally valid input outside the supported regime (e.g. a pair
    /// whose mean diagonal deviation s vanishes, where the staircase
    /// construction changes character).
    #[error("unsupported coefficient pair: {0}")]
    Unsupported(String),
    /// A mathematical invariant that should hold failed at runtime, or a
    /// verification audit found a violated guarantee.
    #[error("invariant violation: {0}")]
    Invariant(String),
    /// The cell budget ran out before the requested depth was reached.
    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Tolerances shared across modules. Each constant is the default for the
/// check named in its doc; call sites that need a scaled or user-supplied
/// tolerance take it as a parameter instead.
pub mod tol {
    /// Rank-one defect: D is accepted as rank-one when |det D| ≤ RANK_ONE·‖D‖²_HS.
    pub const RANK_ONE: f64 = 1e-9;
    /// Laminate weights must sum to 1 within this.
    pub const WEIGHT_SUM: f64 = 1e-12;
    /// Atoms closer than this (relative to scale) are merged.
    pub const MERGE: f64 = 1e-12;
    /// Weights below this are pruned outright.
    pub const PRUNE: f64 = 1e-300;
    /// Relative distance under which a matrix counts as degenerate (on T₁,
    /// or at zero) for the angle/decomposition routines.
    pub const DEGENERATE: f64 = 1e-12;
    /// Ellipticity margin: symmetric parts must have eigenvalues above this.
    pub const ELLIPTICITY: f64 = 1e-10;
    /// Mesh continuity across shared edges (absolute, per unit scale).
    pub const CONTINUITY: f64 = 1e-9;
    /// |s| below this is rejected as unsupported rather than sign-flipped.
    pub const S_MEAN: f64 = 1e-12;
}
