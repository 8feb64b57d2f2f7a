//! Finite-difference solution of the stationary HJB equation, policy
//! extraction and asymptote diagnostics.

pub mod diagnostics;
pub mod grid;
pub mod policy;
pub mod solver;
pub mod tridiag;
pub mod value;

pub use diagnostics::{
    left_asymptote, residual, right_asymptote, validate_candidate, CandidateReport,
    LeftAsymptoteReport, RightAsymptoteReport,
};
pub use grid::GridSpec;
pub use policy::{extract_policy, ConstantPolicy, ConsumptionPolicy, Extrapolation, FnPolicy, Policy};
pub use solver::{scheme_residual, solve, BoundaryDiagnostics, RightClosure, SolveReport, SolverConfig};
pub use value::ValueFunction;
