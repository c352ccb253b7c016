//! Dense linear algebra: row-major matrices, Jacobi SVD, Householder chains,
//! MAC instrumentation and the `MOOREMAT` file format.

mod flops;
mod householder;
pub mod io;
mod matrix;
mod svd;

pub use flops::FlopCounter;
pub(crate) use flops::record;
pub use householder::{HouseholderChain, NORM_FLOOR};
pub use matrix::{dot, max_abs_diff, norm2, Matrix};
pub use svd::{svd, SvdFactors, JACOBI_TOL, RANK_TOL};
