//! Real and spectral fields on the periodic square, plus the exact spectral
//! calculus the rest of the engine is built on.
//!
//! Transform convention: `dft_forward` divides by n², so spectral
//! coefficients are Fourier-series amplitudes — cos(2πx/L) has coefficient
//! 0.5 at modes ±(1,0) at every resolution — and `dft_inverse` sums modes
//! without further normalization. Under this convention Parseval reads
//! Σ_m |c_m|² = mean(f²), and band-limited fields keep identical
//! coefficients across grid sizes, which is what makes spectral weights
//! resolution-transferable downstream.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::tolerances::{IMAG_RESIDUE_REL, SYMMETRY_REL};

/// Real-valued scalar field sampled at the grid points of [0, L)².
/// `values[[ix, iy]]` lives at (x, y) = (ix·L/n, iy·L/n).
#[derive(Debug, Clone, PartialEq)]
pub struct RealField2D {
    grid: Grid2D,
    values: Array2<f64>,
}

/// Complex spectral coefficients in standard FFT index order; see the
/// module docs for the normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField2D {
    grid: Grid2D,
    coeffs: Array2<Complex64>,
}

impl RealField2D {
    pub fn zeros(grid: Grid2D) -> Self {
        let n = grid.n();
        Self {
            grid,
            values: Array2::zeros((n, n)),
        }
    }

    /// Sample f(x, y) at the grid points.
    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let n = grid.n();
        let values = Array2::from_shape_fn((n, n), |(ix, iy)| f(grid.coord(ix), grid.coord(iy)));
        Self { grid, values }
    }

    pub fn from_values(grid: Grid2D, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.n(), grid.n()) {
            return Err(Error::Shape(format!(
                "expected {0}x{0} values, got {1}x{2}",
                grid.n(),
                values.dim().0,
                values.dim().1
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Mean of f² over the grid; equals Σ_m |c_m|² by Parseval.
    pub fn mean_square(&self) -> f64 {
        let n2 = self.grid.point_count() as f64;
        self.values.iter().map(|v| v * v).sum::<f64>() / n2
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl SpectralField2D {
    pub fn zeros(grid: Grid2D) -> Self {
        let n = grid.n();
        Self {
            grid,
            coeffs: Array2::zeros((n, n)),
        }
    }

    pub fn from_coeffs(grid: Grid2D, coeffs: Array2<Complex64>) -> Result<Self> {
        if coeffs.dim() != (grid.n(), grid.n()) {
            return Err(Error::Shape(format!(
                "expected {0}x{0} coefficients, got {1}x{2}",
                grid.n(),
                coeffs.dim().0,
                coeffs.dim().1
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn coeffs(&self) -> &Array2<Complex64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.coeffs
    }

    /// Σ_m |c_m|², the spectral side of Parseval.
    pub fn coefficient_energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Largest relative deviation from conjugate symmetry c(−m) = conj(c(m)).
    pub fn conjugate_asymmetry(&self) -> f64 {
        let n = self.grid.n();
        let scale = self
            .coeffs
            .iter()
            .fold(0.0f64, |m, c| m.max(c.norm()))
            .max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for ix in 0..n {
            let jx = (n - ix) % n;
            for iy in 0..n {
                let jy = (n - iy) % n;
                let d = self.coeffs[[ix, iy]] - self.coeffs[[jx, jy]].conj();
                worst = worst.max(d.norm());
            }
        }
        worst / scale
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(n, direction))
}

/// In-place 2-D transform: rows along axis 1, then columns along axis 0.
/// Unnormalized in both directions, like the underlying FFT kernels.
pub(crate) fn fft2_inplace(a: &mut Array2<Complex64>, direction: FftDirection) {
    let n = a.nrows();
    let fft = plan(n, direction);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];

    for mut row in a.rows_mut() {
        let slice = row.as_slice_mut().expect("standard-layout row");
        fft.process_with_scratch(slice, &mut scratch);
    }
    let mut column = vec![Complex64::default(); n];
    for iy in 0..n {
        for ix in 0..n {
            column[ix] = a[[ix, iy]];
        }
        fft.process_with_scratch(&mut column, &mut scratch);
        for ix in 0..n {
            a[[ix, iy]] = column[ix];
        }
    }
}

/// Forward transform with the 1/n² amplitude normalization.
pub fn dft_forward(field: &RealField2D) -> SpectralField2D {
    let n = field.grid.n();
    let mut coeffs = field.values.mapv(|v| Complex64::new(v, 0.0));
    fft2_inplace(&mut coeffs, FftDirection::Forward);
    let scale = 1.0 / (n * n) as f64;
    coeffs.mapv_inplace(|c| c * scale);
    SpectralField2D {
        grid: field.grid,
        coeffs,
    }
}

/// Forward transform of an arbitrary complex-valued grid array, same
/// normalization as [`dft_forward`]. Used by adjoint computations that need
/// the transform of a non-symmetric cotangent.
pub fn dft_forward_complex(grid: Grid2D, values: &Array2<f64>) -> Array2<Complex64> {
    let n = grid.n();
    let mut coeffs = values.mapv(|v| Complex64::new(v, 0.0));
    fft2_inplace(&mut coeffs, FftDirection::Forward);
    let scale = 1.0 / (n * n) as f64;
    coeffs.mapv_inplace(|c| c * scale);
    coeffs
}

/// Unnormalized inverse transform of raw coefficients; the caller decides
/// what to do with the (generally complex) result.
pub fn idft_complex(mut coeffs: Array2<Complex64>) -> Array2<Complex64> {
    fft2_inplace(&mut coeffs, FftDirection::Inverse);
    coeffs
}

/// Inverse transform onto real values.
///
/// Requires conjugate symmetry up to [`SYMMETRY_REL`]; the sub-tolerance
/// imaginary residue left by rounding is discarded.
pub fn dft_inverse(spectral: &SpectralField2D) -> Result<RealField2D> {
    let asymmetry = spectral.conjugate_asymmetry();
    if asymmetry > SYMMETRY_REL {
        return Err(Error::SymmetryViolation {
            asymmetry,
            tolerance: SYMMETRY_REL,
        });
    }
    let mut coeffs = spectral.coeffs.clone();
    fft2_inplace(&mut coeffs, FftDirection::Inverse);
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.re.abs())).max(1.0);
    let worst_imag = coeffs.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
    debug_assert!(
        worst_imag <= IMAG_RESIDUE_REL * scale * 1e2,
        "imaginary residue {worst_imag:.3e} unexpectedly large for a symmetric field"
    );
    let values = coeffs.mapv(|c| c.re);
    Ok(RealField2D {
        grid: spectral.grid,
        values,
    })
}

/// Spectral partial derivatives (∂/∂x, ∂/∂y): multiply by i·k along each
/// axis. The Nyquist line of the differentiated axis is zeroed because the
/// odd multiplier has no conjugate partner there.
pub fn spectral_gradient(spectral: &SpectralField2D) -> (SpectralField2D, SpectralField2D) {
    let grid = spectral.grid;
    let n = grid.n();
    let nyq = grid.nyquist();
    let mut dx = spectral.coeffs.clone();
    let mut dy = spectral.coeffs.clone();
    for ix in 0..n {
        let kx = if ix == nyq { 0.0 } else { grid.wavenumber(ix) };
        for iy in 0..n {
            let ky = if iy == nyq { 0.0 } else { grid.wavenumber(iy) };
            let c = spectral.coeffs[[ix, iy]];
            dx[[ix, iy]] = Complex64::new(-kx * c.im, kx * c.re);
            dy[[ix, iy]] = Complex64::new(-ky * c.im, ky * c.re);
        }
    }
    (
        SpectralField2D { grid, coeffs: dx },
        SpectralField2D { grid, coeffs: dy },
    )
}

/// Spectral Laplacian: multiply by −|k|² (the Nyquist mode carries its full
/// even multiplier, which preserves conjugate symmetry).
pub fn spectral_laplacian(spectral: &SpectralField2D) -> SpectralField2D {
    let grid = spectral.grid;
    let n = grid.n();
    let mut coeffs = spectral.coeffs.clone();
    for ix in 0..n {
        let kx = grid.wavenumber(ix);
        for iy in 0..n {
            let ky = grid.wavenumber(iy);
            coeffs[[ix, iy]] *= -(kx * kx + ky * ky);
        }
    }
    SpectralField2D { grid, coeffs }
}
