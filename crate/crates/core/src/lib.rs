//! MoORE: mixtures of orthogonal rank-one experts.
//!
//! A dense weight `W = U diag(σ) Vᵀ` is read as `D` rank-one experts
//! `u_d v_dᵀ`. A hybrid task/sample router re-weights them and a Householder
//! chain `H` rotates the input:
//!
//! ```text
//! y = U diag(g(x, k) + σ) Vᵀ H x,     g(x, k) = Pᵀ t_k + Qᵀ Γ x
//! ```
//!
//! Modules:
//! - [`linalg`]: matrices, SVD, Householder reflections, MAC counting.
//! - [`moore`]: the layer, its merge-for-inference form and checkpoints.
//! - [`grad`]: analytic backward pass and a finite-difference oracle.
//! - [`baselines`]: the low-rank MoE adapters MoORE is compared against.
//! - [`harness`]: synthetic task suites, a small MLP host and the trainer.
//! - [`analysis`]: routing statistics and conflict/oblivion summaries.

pub mod analysis;
pub mod baselines;
pub mod error;
pub mod grad;
pub mod gradcheck;
pub mod harness;
pub mod linalg;
pub mod moore;

pub use error::{MooreError, Result};
pub use linalg::{FlopCounter, HouseholderChain, Matrix, SvdFactors};
pub use moore::{MergedLayer, MooreDims, MooreLayer, RoutingWeights};
