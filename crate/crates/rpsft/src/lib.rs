//! Rotation-preserving fine-tuning at desk scale.
//!
//! The core idea: cache the top-k singular bases (U_k, V_k) of each
//! pretrained weight matrix and penalize drift of the projected block
//! U_k^T W V_k during fine-tuning. Complementary directions stay free, so
//! the model adapts while the dominant pretrained subspace interaction is
//! anchored. The crate provides the penalty and its calculus
//! ([`subspace`]), deterministic dense linear algebra ([`linalg`]), a toy
//! continual-learning harness ([`trainer`]), a gradient-flow simulator
//! ([`flow`]), rank-selection trade-off curves ([`rank`]), drift and energy
//! diagnostics ([`diagnostics`]), binary checkpoints ([`checkpoint`]), and
//! reproducible experiment presets ([`presets`]) behind one CLI.

pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod presets;
pub mod rank;
pub mod subspace;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, OrthonormalBasis, SvdResult};
pub use subspace::{ProtectedBasis, RegularizerConfig};
