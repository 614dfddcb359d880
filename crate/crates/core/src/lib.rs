//! Graph-smooth null-space representations for linear inverse problems.
//!
//! A sensing operator `H` splits every image into a measurable range component
//! and an invisible null-space component. This crate builds the null-restricted
//! graph Laplacian `T = Pₙ L Pₙ`, extracts its smoothest eigenmodes (the rows of
//! the projection `S`), analyses how much null-space variance those modes cover
//! and how predictable their coefficients are from measurements, and uses them
//! to regularize a plug-and-play proximal gradient solver.
//!
//! Module map:
//!
//! * [`linop`]: forward operators (Hadamard CS, block-average SR, Bayer mosaic,
//!   Gaussian blur, explicit dense), pseudoinverse, range/null projectors.
//! * [`graph`]: grid graph Laplacians and Dirichlet energies.
//! * [`spectral`]: the implicit operator `T`, a projected Lanczos eigensolver,
//!   a dense oracle, and the basis `S`.
//! * [`gmrf`]: Gaussian Markov random field priors, coverage curves,
//!   automatic choice of `p`, the minimax bound, per-mode predictability.
//! * [`predictor`]: linear coefficient predictors (Wiener and ridge) and `R²`.
//! * [`solver`]: GSNR-regularized PnP proximal gradient descent, denoisers,
//!   spectral step sizing and contraction diagnostics.
//! * [`experiment`]: config-driven experiment runner behind the `gsnr` binary.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod denoise;
pub mod error;
pub mod experiment;
pub mod gmrf;
pub mod graph;
pub mod linalg;
pub mod linop;
pub mod predictor;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
pub use graph::{GraphLaplacian, Topology};
pub use linop::{ImageShape, ImageSignal, LinearMap, OperatorKind, OperatorSpec};
pub use spectral::NullSpectralBasis;

/// Largest problem size for which dense factorizations are attempted.
pub const DENSE_CAP: usize = 4096;
