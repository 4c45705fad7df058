//! Exact reverse-mode gradients for the fixed set of model variants,
//! optimizers, and a central-difference oracle.

mod backward;
mod check;
mod finite_diff;
mod optim;

pub use backward::{backward, backward_seeded, logit_backward, loss_logit_grad, GradBundle};
pub use check::{compare_with_finite_diff, CheckReport, Mismatch, Tolerance};
pub use finite_diff::{all_coords, central_difference, finite_diff, finite_diff_at, Coord};
pub use optim::{OptimKind, OptimState};
