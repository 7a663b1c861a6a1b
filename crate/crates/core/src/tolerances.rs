//! Centralized numerical tolerances.
//!
//! Every hard-coded comparison threshold in the engine lives here so the
//! provenance of each bound is documented once instead of being scattered
//! through call sites.

/// Forward/inverse transform round trip must reproduce a field to this
/// absolute error; pure f64 rounding leaves a couple of orders of headroom.
pub const ROUND_TRIP: f64 = 1e-12;

/// Spectral derivatives of analytic trigonometric fields must match the
/// closed-form derivative to this absolute error.
pub const SPECTRAL_DERIVATIVE: f64 = 1e-10;

/// Maximum relative conjugate asymmetry tolerated before `dft_inverse`
/// refuses to project a spectral field back to real values.
pub const SYMMETRY_REL: f64 = 1e-8;

/// Imaginary residue (relative to the field magnitude) silently discarded
/// when projecting an inverse transform onto real values.
pub const IMAG_RESIDUE_REL: f64 = 1e-10;

/// Feeding the recorded closure term back through the surrogate step must
/// reproduce the full solver trajectory to this absolute error per point.
pub const CLOSURE_BOOKKEEPING: f64 = 1e-10;

/// Single-mode Crank–Nicolson decay error after 1000 steps at dt = 1e-3
/// stays below this bound.
pub const CN_DECAY: f64 = 1e-6;

/// Relative disagreement allowed between hand-rolled reverse-mode gradients
/// and central finite differences on the tiny gradient-check network.
pub const GRAD_CHECK_REL: f64 = 1e-4;

/// Step used by the central finite-difference gradient oracle.
pub const GRAD_CHECK_STEP: f64 = 1e-5;
