//! Stability analysis, gait fitting and run summaries.

pub mod fit;
pub mod poincare;
pub mod summary;
pub mod transverse;

pub use fit::{fit_nominal_gait, nominal_setup, FitTargets};
pub use poincare::{find_fixed_point, linearize_poincare, PoincareResult, ReturnMap};
pub use summary::{summarize, Summary};
pub use transverse::{transverse_matrix, TransverseSpec};
