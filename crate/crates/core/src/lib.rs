//! Numerical core for nonlinear Robin problems driven by the p-Laplacian
//! with gradient-dependent (convection) reactions.
//!
//! The crate computes principal Robin eigenpairs by Rayleigh-quotient
//! minimization, solves an epsilon-perturbed auxiliary problem by
//! frozen-convection Picard iteration with damped Newton steps, drives the
//! epsilon-to-zero continuation toward a positive solution of the original
//! equation, and verifies the structural inequalities the construction rests
//! on (operator monotonicity, coercivity margins, pointwise nonnegativity of
//! the nonlinear Picone density).

pub mod assembly;
pub mod cli;
pub mod config;
pub mod eigen;
pub mod error;
pub mod field;
pub mod field_io;
pub mod mesh;
pub mod picone;
pub mod reaction;
pub mod solver;
pub mod sparse;

pub use assembly::{
    a_form, element_gradient, gradient_lp_norm, lp_norm, psi_p_form, robin_form, sobolev_norm,
    v_jacobian, v_residual, AuxiliaryProblem, ProblemSpec,
};
pub use eigen::{
    coercivity_margin, principal_eigenpair, rayleigh_quotient, CoercivityEstimate,
    CoercivityOptions, EigenOptions, EigenPair, GradientMetric,
};
pub use error::{Error, Result};
pub use field::DiscreteField;
pub use mesh::{boundary_measure, build_interval_mesh, build_rectangle_mesh, Mesh};
pub use picone::{collapse_test, picone_density, picone_integral, CollapseVerdict, PiconeReport};
pub use reaction::{
    check_growth, check_liminf_at_zero, check_limsup_at_infinity, CheckOptions,
    ExampleReactionParams, HypothesisId, HypothesisReport, HypothesisWitness, ReactionSpec,
    SampleGrid,
};
pub use solver::{
    check_solution, continuation_run, solve_auxiliary, ContinuationOptions, ContinuationTrace,
    EpsilonSchedule, Solution, SolutionCheck, SolverOptions, TraceRecord,
};
