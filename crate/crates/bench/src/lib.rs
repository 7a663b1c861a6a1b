//! Shared fixtures for the criterion benches: deterministic fields and a
//! ready-made score network, so every bench measures the kernel and not
//! its setup.

use sclo_core::diffusion::{DiffusionConfig, Normalization};
use sclo_core::field::{dft_forward, RealField2D, SpectralField2D};
use sclo_core::network::{ScoreNetConfig, ScoreNetwork};
use sclo_core::random::{GrfSpec, SeedStream};
use sclo_core::Grid2D;

pub fn grid(n: usize) -> Grid2D {
    Grid2D::new(n).expect("even benchmark grid")
}

/// A smooth, fully populated test field.
pub fn demo_field(n: usize) -> RealField2D {
    let mut rng = SeedStream::root(17).named("bench-field").rng();
    sclo_core::random::sample_initial_vorticity(grid(n), &GrfSpec::default(), &mut rng)
        .expect("field")
}

pub fn demo_spectral(n: usize) -> SpectralField2D {
    dft_forward(&demo_field(n))
}

/// Desk-profile conditional score network with all three pipelines.
pub fn demo_network() -> ScoreNetwork {
    ScoreNetwork::new(ScoreNetConfig::desk(29)).expect("network")
}

/// Tiny network for sampler benches, where the schedule length is the
/// point of comparison rather than the network cost.
pub fn tiny_network() -> ScoreNetwork {
    let mut cfg = ScoreNetConfig::tiny(29);
    cfg.with_sparse = false;
    ScoreNetwork::new(cfg).expect("network")
}

pub fn diffusion() -> DiffusionConfig {
    DiffusionConfig::default()
}

pub fn identity_normalization() -> Normalization {
    Normalization::identity()
}
