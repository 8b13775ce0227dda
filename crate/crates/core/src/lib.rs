//! Generalized Maslov index and renormalized oscillation counts for
//! y' = A(x; lambda) y on [0, 1] with subspace boundary conditions.

// `!(a > b)` is used on purpose so NaN falls on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cli;
pub mod error;
pub mod invariance;
pub mod maslovbox;
pub mod multilinear;
pub mod problems;
pub mod propagation;
pub mod winding;

pub use error::{Error, Result};
pub use invariance::{
    classify_loss_point, constants_report, delta_bound_higher_order, rho_grid_scan,
    InvarianceReport, LossPoint, RhoScan,
};
pub use maslovbox::{
    compute_box, localize_eigenvalues_top, monotonicity_audit, renormalized_count, shelf_path,
    MaslovBoxReport, Shelf, SpectralProblem,
};
pub use multilinear::{
    build_a_tilde, gram_volume, omega1_eval, omega2_eval, psi_rho, BlockLambdaMatrix, Frame,
    OmegaPairValue,
};
pub use problems::{builtin_catalog, eval_expression, load_problem, parse_expression, Expression, ProblemConfig};
pub use propagation::{integrate_frame, CoefficientField, FramePath};
pub use winding::{crossing_direction, detect_crossings, p_point, winding_index, CrossingRecord, PathSamples};
