//! Convex programs for generators facing two-layer discriminators.

mod abs;
mod model;
mod nnls;
mod one_d;
mod recovery;
mod regularizer;
mod svt;

pub use abs::{kkt_residual, solve_abs_constrained, AbsConstraint, AbsConstraintSystem, AbsSolution};
pub use model::{polynomial_lift, polynomial_weights, GeneratorModel};
pub use nnls::nnls;
pub use one_d::{build_1d_constraints, solve_1d_relu_program, OneDSolution, OneDTemplate};
pub use recovery::{generator_recovery, RecoveredNeuron, RecoveryReport};
pub use regularizer::{ConvexFunction, Regularizer, RegularizerKind};
pub use svt::{
    beta_for_rank, closed_form_linear_weights, closed_form_linear_weights_rotated, mean_match_weights, retained_rank, svt_generator,
    svt_objectives, OrthogonalChoice,
};
