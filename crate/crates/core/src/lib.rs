//! Data-driven stochastic closure modeling for 2-D turbulence.
//!
//! The crate covers the full pipeline: a pseudo-spectral solver for
//! stochastically forced 2-D Navier–Stokes in vorticity form with
//! closure-term bookkeeping ([`solver`]), conditional score-based diffusion
//! with a multi-pipeline Fourier neural operator and hand-rolled exact
//! gradients ([`network`], [`diffusion`]), closure-in-the-loop simulation
//! ([`rollout`]), sparse-observation conditioning ([`conditioning`]),
//! evaluation metrics ([`analysis`]), and file formats ([`io`]).

pub mod analysis;
pub mod conditioning;
pub mod diffusion;
pub mod error;
pub mod field;
pub mod grid;
pub mod io;
pub mod network;
pub mod random;
pub mod rollout;
pub mod solver;
pub mod tolerances;

pub use error::{Error, Result};
pub use field::{dft_forward, dft_inverse, RealField2D, SpectralField2D};
pub use grid::Grid2D;
