//! Estimators for the principal Lyapunov exponent of randomly driven linear
//! parabolic equations in one space dimension.
//!
//! The library is organized bottom-up:
//!
//! * [`linalg`]: tridiagonal matrices and solvers shared by every module.
//! * [`flow`]: drivers, i.e. measure-preserving flows on a torus, smoothed
//!   Markov switching paths, and rotations carrying an unbounded amplitude
//!   factor.
//! * [`coeffs`]: coefficient expressions `a`, `a1`, `b`, `c0`, `d0` parsed
//!   from text, their bounds, and assumption validation.
//! * [`fem`]: P1 finite elements on a uniform mesh, giving mass matrices and
//!   the bilinear-form matrix for Dirichlet, Neumann and Robin boundaries.
//! * [`spectral`]: principal eigenpair of the frozen-coefficient pencil.
//! * [`propagate`]: theta-scheme time stepping with per-step renormalization,
//!   pullback spin-up of the distinguished positive direction, and growth
//!   bookkeeping.
//! * [`estimate`]: the three exponent estimators (direct log-growth,
//!   Dirichlet-form average, frozen-eigenvalue upper bound), Monte-Carlo
//!   one-step growth, and operator-norm rates.
//! * [`scenario`]: end-to-end configuration, presets, and report output
//!   consumed by the command-line front end.

pub mod coeffs;
pub mod estimate;
pub mod fem;
pub mod flow;
pub mod linalg;
pub mod propagate;
pub mod scenario;
pub mod spectral;

pub use coeffs::{parse_expression, BoundaryKind, Expr, ProblemCoefficients};
pub use estimate::EstimatorReport;
pub use fem::Mesh1D;
pub use flow::{FlowPoint, MetricFlowSpec};
pub use linalg::TriMat;
pub use propagate::{Problem, PropagatorState, SchemeConfig, TimeScheme};
pub use scenario::{Scenario, ScenarioConfig, ScenarioError};
pub use spectral::{EigenOptions, EigenResult};
