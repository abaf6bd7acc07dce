//! Random quasi-one-dimensional Dirac operators `J∂ + W + Σ V_j δ_{x_j}` with
//! time-reversal symmetry.
//!
//! The crate builds transfer-matrix cocycles in SO*(2L), computes Lyapunov
//! spectra, Weyl-Titchmarsh matrices, averaged Green matrices and spectral
//! densities, and checks the structural identities that tie them together
//! (Wronskian, Herglotz, Kramers pairing, Kotani/Thouless).
//!
//! Conventions used throughout:
//! - `J = [[0, -1], [1, 0]]` in `L×L` blocks; the upper `L` rows of a `2L×L`
//!   plane are its `(1; 0)` component.
//! - Transfer matrices solve `∂T = J(W - z)T` and are right-continuous; the
//!   jump `e^{JV_j}` of cell `j` sits at its right end.
//! - Weyl matrices are always reported "after the jump": at a cell boundary the
//!   pair `(M_+, M_-)` describes the regular point immediately to its right.

pub mod algebra;
pub mod green;
pub mod kotani;
pub mod lyapunov;
pub mod mat;
pub mod model;
pub mod oracle;
pub mod stats;
pub mod transfer;
pub mod weyl;

mod error;
mod par;

pub use error::{Error, Result};
pub use mat::{CMat, C64};
pub use par::with_threads;
