//! Seed management and random field sampling.
//!
//! Every random draw in the engine descends from one root seed through
//! named sub-streams ("data", "noise", "init", "sampler", …), so any
//! component can be replayed in isolation without consuming another
//! component's draws. Streams are mixed with splitmix64 over an FNV-1a name
//! hash — fixed integer arithmetic, identical on every platform.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{dft_inverse, RealField2D, SpectralField2D};
use crate::grid::Grid2D;

pub const STREAM_DATA: &str = "data";
pub const STREAM_NOISE: &str = "noise";
pub const STREAM_INIT: &str = "init";
pub const STREAM_SAMPLER: &str = "sampler";
pub const STREAM_TRAIN: &str = "train";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// A point in the seed tree. The root is the run's master seed; children are
/// reached by name or by index, and any node can mint an RNG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn root(seed: u64) -> Self {
        SeedStream(splitmix64(seed))
    }

    pub fn named(&self, name: &str) -> Self {
        SeedStream(splitmix64(self.0 ^ fnv1a(name.as_bytes())))
    }

    pub fn indexed(&self, index: u64) -> Self {
        SeedStream(splitmix64(self.0 ^ splitmix64(index.wrapping_add(1))))
    }

    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(self.0)
    }

    pub fn raw(&self) -> u64 {
        self.0
    }
}

/// Gaussian random field N(0, a·(−Δ + s·I)^{−d}) on the periodic square.
///
/// The spectral coefficient at integer mode m has variance
/// a·(4π²|m|²/L² + s)^{−d}; the mean mode is zeroed so samples integrate to
/// zero. Defaults reproduce the initial-vorticity ensemble
/// N(0, 7^{3/2}(−Δ + 49·I)^{−5/2}).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GrfSpec {
    /// a — overall variance scale.
    pub variance_scale: f64,
    /// s — shift added to the (negative) Laplacian.
    pub laplacian_shift: f64,
    /// d — decay exponent on the shifted Laplacian.
    pub spectral_decay: f64,
}

impl Default for GrfSpec {
    fn default() -> Self {
        GrfSpec {
            variance_scale: 7.0f64.powf(1.5),
            laplacian_shift: 49.0,
            spectral_decay: 2.5,
        }
    }
}

impl GrfSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance_scale > 0.0) {
            return Err(Error::Config("GRF variance scale must be positive".into()));
        }
        if !(self.laplacian_shift > 0.0) {
            return Err(Error::Config("GRF Laplacian shift must be positive".into()));
        }
        if !(self.spectral_decay > 1.0) {
            return Err(Error::Config(
                "GRF spectral decay must exceed 1 for a well-defined field".into(),
            ));
        }
        Ok(())
    }

    /// Variance of the spectral coefficient at signed mode (mx, my).
    pub fn mode_variance(&self, grid: Grid2D, mx: i64, my: i64) -> f64 {
        let k2 = (2.0 * std::f64::consts::PI / grid.length()).powi(2)
            * (mx * mx + my * my) as f64;
        self.variance_scale * (k2 + self.laplacian_shift).powf(-self.spectral_decay)
    }
}

/// Draw one GRF sample. Coefficients are drawn once per conjugate pair in a
/// fixed index order (the lexicographically smaller index is canonical),
/// self-conjugate modes get real Gaussians, and the mean mode is zero, so
/// the inverse transform is real to rounding.
pub fn sample_initial_vorticity(
    grid: Grid2D,
    spec: &GrfSpec,
    rng: &mut ChaCha12Rng,
) -> Result<RealField2D> {
    spec.validate()?;
    let n = grid.n();
    let mut spectral = SpectralField2D::zeros(grid);
    for ix in 0..n {
        for iy in 0..n {
            if ix == 0 && iy == 0 {
                continue;
            }
            let (jx, jy) = ((n - ix) % n, (n - iy) % n);
            let self_conjugate = (ix, iy) == (jx, jy);
            if !self_conjugate && (jx, jy) < (ix, iy) {
                continue;
            }
            let std = spec
                .mode_variance(grid, grid.signed_mode(ix), grid.signed_mode(iy))
                .sqrt();
            if self_conjugate {
                let a: f64 = rng.sample(StandardNormal);
                spectral.coeffs_mut()[[ix, iy]] = Complex64::new(std * a, 0.0);
            } else {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                let c = Complex64::new(a, b) * (std / 2.0f64.sqrt());
                spectral.coeffs_mut()[[ix, iy]] = c;
                spectral.coeffs_mut()[[jx, jy]] = c.conj();
            }
        }
    }
    dft_inverse(&spectral)
}

/// White-in-time noise increment for a step of length dt: independent
/// N(0, 1/dt) at each grid point, so that β·ξ·dt behaves like β·dW.
pub fn sample_noise_increment(grid: Grid2D, dt: f64, rng: &mut ChaCha12Rng) -> Result<RealField2D> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let std = dt.sqrt().recip();
    let n = grid.n();
    let values = Array2::from_shape_fn((n, n), |_| {
        let z: f64 = rng.sample(StandardNormal);
        std * z
    });
    RealField2D::from_values(grid, values)
}
