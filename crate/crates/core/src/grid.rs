//! Periodic square grid shared by real and spectral fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform n × n grid on the periodic square [0, L)².
///
/// Grid points sit at x_i = i·L/n, y_j = j·L/n. Spectral coefficients are
/// indexed the usual FFT way: index i maps to the signed integer mode
/// m = i for i ≤ n/2 and m = i − n otherwise, with wavenumber k = 2π m / L.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    n: usize,
    length: f64,
}

impl Grid2D {
    /// Unit square with n points per side. `n` must be even and at least 4
    /// so the Nyquist index n/2 is well defined.
    pub fn new(n: usize) -> Result<Self> {
        Self::with_length(n, 1.0)
    }

    pub fn with_length(n: usize, length: f64) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::Config(format!(
                "grid size must be even and >= 4, got {n}"
            )));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::Config(format!(
                "domain length must be positive and finite, got {length}"
            )));
        }
        Ok(Self { n, length })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn point_count(&self) -> usize {
        self.n * self.n
    }

    /// Grid spacing L/n.
    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Physical coordinate of grid index i along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.length / self.n as f64
    }

    /// Signed integer mode for FFT index i: 0, 1, …, n/2, −n/2+1, …, −1.
    pub fn signed_mode(&self, i: usize) -> i64 {
        debug_assert!(i < self.n);
        if i <= self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// Wavenumber 2π·m/L for FFT index i.
    pub fn wavenumber(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.signed_mode(i) as f64 / self.length
    }

    /// FFT index of the signed mode m (m in −n/2+1 ..= n/2).
    pub fn index_of_mode(&self, m: i64) -> usize {
        let n = self.n as i64;
        debug_assert!(m > -n / 2 && m <= n / 2);
        m.rem_euclid(n) as usize
    }

    /// Index of the Nyquist mode n/2.
    pub fn nyquist(&self) -> usize {
        self.n / 2
    }

    pub fn same_as(&self, other: &Grid2D) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{}x{} (L={}) vs {}x{} (L={})",
                self.n, self.n, self.length, other.n, other.n, other.length
            )))
        }
    }
}
