//! Node splitting by a kernelized dipole-criterion SVM.

mod dual;
mod fit;
mod orient;
mod surface;

pub use dual::{assemble_dual, recover_intercept, DualLayout, Sign};
pub use fit::{
    decision_values, fit_split, initial_hyperplane, time_orientation, SplitFit, SplitParams, DEFAULT_EPSILON,
    DEFAULT_MAX_ROUNDS, DEFAULT_TAU,
};
pub use orient::{beta_weights, beta_weights_priced, orient_dipoles, BetaWeights, OrientationAssignment};
pub use surface::{
    criterion_from_values, hinge_pair, regularized_criterion, Hyperplane, SplitModel, Surface,
    SupportPoint,
};
