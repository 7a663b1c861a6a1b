//! Sparse observations and the two upscaling routes that turn them into
//! full-resolution conditioning fields.
//!
//! Observations are plain point samples on an evenly strided lattice.
//! `upscale_bicubic` reconstructs with a periodic cubic interpolating
//! spline (exact at the lattice nodes, fourth-order on smooth fields);
//! `upscale_conv` replicates each observation into a block and smooths with
//! a periodic uniform filter of width 2·(n_target/n_sparse) − 1, which
//! preserves the field mean exactly.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::field::RealField2D;
use crate::grid::Grid2D;

/// Values of a field at an n_s × n_s evenly strided point lattice, plus the
/// provenance needed to place those points back on a full grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseObservation {
    n_sparse: usize,
    source_n: usize,
    length: f64,
    values: Array2<f64>,
}

impl SparseObservation {
    pub fn n_sparse(&self) -> usize {
        self.n_sparse
    }

    pub fn source_n(&self) -> usize {
        self.source_n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn from_values(n_sparse: usize, source_n: usize, length: f64, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (n_sparse, n_sparse) {
            return Err(Error::Shape(format!(
                "expected {0}x{0} observation values, got {1}x{2}",
                n_sparse,
                values.dim().0,
                values.dim().1
            )));
        }
        Ok(Self {
            n_sparse,
            source_n,
            length,
            values,
        })
    }
}

/// Point-sample a field on an n_s × n_s lattice with even stride n/n_s.
pub fn subsample_sparse(field: &RealField2D, n_sparse: usize) -> Result<SparseObservation> {
    let n = field.grid().n();
    if n_sparse == 0 || n % n_sparse != 0 {
        return Err(Error::Config(format!(
            "sparse lattice size {n_sparse} must evenly divide the grid size {n}"
        )));
    }
    let stride = n / n_sparse;
    let values = Array2::from_shape_fn((n_sparse, n_sparse), |(i, j)| {
        field.values()[[i * stride, j * stride]]
    });
    Ok(SparseObservation {
        n_sparse,
        source_n: n,
        length: field.grid().length(),
        values,
    })
}

/// Point-subsample a full field to a coarser grid with even stride.
pub fn subsample_field(field: &RealField2D, n_target: usize) -> Result<RealField2D> {
    let n = field.grid().n();
    if n_target == 0 || n % n_target != 0 {
        return Err(Error::Config(format!(
            "target size {n_target} must evenly divide the grid size {n}"
        )));
    }
    let stride = n / n_target;
    let grid = Grid2D::with_length(n_target, field.grid().length())?;
    let values = Array2::from_shape_fn((n_target, n_target), |(i, j)| {
        field.values()[[i * stride, j * stride]]
    });
    RealField2D::from_values(grid, values)
}

/// Cardinal cubic B-spline.
fn bspline3(s: f64) -> f64 {
    let a = s.abs();
    if a < 1.0 {
        (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0
    } else if a < 2.0 {
        let t = 2.0 - a;
        t * t * t / 6.0
    } else {
        0.0
    }
}

/// Periodic B-spline prefilter: solve (c_{i−1} + 4c_i + c_{i+1})/6 = f_i
/// along both axes by circulant deconvolution in Fourier space.
fn bspline_prefilter(values: &Array2<f64>) -> Array2<f64> {
    let n = values.nrows();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let eigen: Vec<f64> = (0..n)
        .map(|m| (4.0 + 2.0 * (2.0 * std::f64::consts::PI * m as f64 / n as f64).cos()) / 6.0)
        .collect();

    let mut work = values.mapv(|v| Complex64::new(v, 0.0));
    let mut buf = vec![Complex64::default(); n];
    // Axis 1 (rows are contiguous).
    for mut row in work.rows_mut() {
        let slice = row.as_slice_mut().expect("standard layout");
        fwd.process(slice);
        for (c, lam) in slice.iter_mut().zip(&eigen) {
            *c /= lam * n as f64;
        }
        inv.process(slice);
    }
    // Axis 0.
    for j in 0..n {
        for i in 0..n {
            buf[i] = work[[i, j]];
        }
        fwd.process(&mut buf);
        for (c, lam) in buf.iter_mut().zip(&eigen) {
            *c /= lam * n as f64;
        }
        inv.process(&mut buf);
        for i in 0..n {
            work[[i, j]] = buf[i];
        }
    }
    work.mapv(|c| c.re)
}

/// The two reconstruction routes from a sparse lattice to a full grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum UpscaleMethod {
    Bicubic,
    Conv,
}

impl std::fmt::Display for UpscaleMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UpscaleMethod::Bicubic => write!(f, "bicubic"),
            UpscaleMethod::Conv => write!(f, "conv"),
        }
    }
}

impl std::str::FromStr for UpscaleMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bicubic" => Ok(UpscaleMethod::Bicubic),
            "conv" => Ok(UpscaleMethod::Conv),
            other => Err(Error::Config(format!("unknown upscale method '{other}'"))),
        }
    }
}

pub fn upscale(obs: &SparseObservation, target: Grid2D, method: UpscaleMethod) -> Result<RealField2D> {
    match method {
        UpscaleMethod::Bicubic => upscale_bicubic(obs, target),
        UpscaleMethod::Conv => upscale_conv(obs, target),
    }
}

/// Reconstruct a full-resolution field from sparse observations with a
/// periodic bicubic interpolating spline. Exact at the observation nodes;
/// the target size must be a multiple of the lattice size so nodes land on
/// target points.
pub fn upscale_bicubic(obs: &SparseObservation, target: Grid2D) -> Result<RealField2D> {
    let ns = obs.n_sparse;
    let nt = target.n();
    if nt % ns != 0 {
        return Err(Error::Config(format!(
            "target size {nt} must be a multiple of the sparse lattice size {ns}"
        )));
    }
    if (target.length() - obs.length).abs() > 1e-12 * obs.length {
        return Err(Error::GridMismatch(format!(
            "observation domain length {} vs target {}",
            obs.length,
            target.length()
        )));
    }
    let coeffs = bspline_prefilter(&obs.values);
    let ratio = nt / ns;
    let inv_ratio = 1.0 / ratio as f64;

    // Per-target-offset B-spline weights over the 4-point stencil.
    let mut weights = vec![[0.0f64; 4]; ratio];
    for (r, w) in weights.iter_mut().enumerate() {
        let t = r as f64 * inv_ratio;
        for (k, item) in w.iter_mut().enumerate() {
            *item = bspline3(t - (k as f64 - 1.0));
        }
    }

    let values = Array2::from_shape_fn((nt, nt), |(it, jt)| {
        let (bi, ri) = (it / ratio, it % ratio);
        let (bj, rj) = (jt / ratio, jt % ratio);
        let wx = &weights[ri];
        let wy = &weights[rj];
        let mut acc = 0.0;
        for (kx, wxe) in wx.iter().enumerate() {
            if *wxe == 0.0 {
                continue;
            }
            let si = (bi + ns + kx - 1) % ns;
            for (ky, wye) in wy.iter().enumerate() {
                if *wye == 0.0 {
                    continue;
                }
                let sj = (bj + ns + ky - 1) % ns;
                acc += wxe * wye * coeffs[[si, sj]];
            }
        }
        acc
    });
    RealField2D::from_values(target, values)
}

/// Reconstruct by nearest-neighbor block replication followed by a periodic
/// uniform (2r−1)×(2r−1) averaging filter, r = n_target/n_sparse.
pub fn upscale_conv(obs: &SparseObservation, target: Grid2D) -> Result<RealField2D> {
    let ns = obs.n_sparse;
    let nt = target.n();
    if nt % ns != 0 {
        return Err(Error::Config(format!(
            "target size {nt} must be a multiple of the sparse lattice size {ns}"
        )));
    }
    if (target.length() - obs.length).abs() > 1e-12 * obs.length {
        return Err(Error::GridMismatch(format!(
            "observation domain length {} vs target {}",
            obs.length,
            target.length()
        )));
    }
    let ratio = nt / ns;
    let kernel = 2 * ratio - 1;

    let replicated = Array2::from_shape_fn((nt, nt), |(i, j)| obs.values[[i / ratio, j / ratio]]);
    Ok(RealField2D::from_values(
        target,
        box_filter_periodic(&box_filter_periodic(&replicated, kernel, 0), kernel, 1),
    )?)
}

/// Periodic 1-D moving average of odd width k along the given axis.
fn box_filter_periodic(values: &Array2<f64>, k: usize, axis: usize) -> Array2<f64> {
    debug_assert!(k % 2 == 1);
    let n = values.nrows();
    let half = k / 2;
    let inv_k = 1.0 / k as f64;
    Array2::from_shape_fn((n, n), |(i, j)| {
        let mut acc = 0.0;
        for d in 0..k {
            let off = (d + n - half) % n;
            let (ii, jj) = if axis == 0 {
                ((i + off) % n, j)
            } else {
                (i, (j + off) % n)
            };
            acc += values[[ii, jj]];
        }
        acc * inv_k
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cosine_field(n: usize) -> RealField2D {
        let grid = Grid2D::new(n).unwrap();
        RealField2D::from_fn(grid, |x, _| (2.0 * PI * x).cos())
    }

    #[test]
    fn subsample_picks_lattice_points() {
        let grid = Grid2D::new(16).unwrap();
        let field = RealField2D::from_fn(grid, |x, y| x + 10.0 * y);
        let obs = subsample_sparse(&field, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(obs.values()[[i, j]], field.values()[[4 * i, 4 * j]]);
            }
        }
        assert!(subsample_sparse(&field, 3).is_err());
    }

    #[test]
    fn bicubic_is_exact_at_nodes() {
        let grid = Grid2D::new(32).unwrap();
        let field = RealField2D::from_fn(grid, |x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).cos());
        let obs = subsample_sparse(&field, 8).unwrap();
        let up = upscale_bicubic(&obs, grid).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_abs_diff_eq!(
                    up.values()[[4 * i, 4 * j]],
                    obs.values()[[i, j]],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn bicubic_reconstructs_smooth_mode_to_one_permille() {
        let fine = cosine_field(64);
        let obs = subsample_sparse(&fine, 16).unwrap();
        let up = upscale_bicubic(&obs, fine.grid()).unwrap();
        let err = (up.values() - fine.values()).mapv(|d| d * d).sum().sqrt()
            / fine.values().mapv(|v| v * v).sum().sqrt();
        assert!(err < 1e-3, "relative reconstruction error {err:.2e}");
    }

    #[test]
    fn constant_fields_upscale_to_constants() {
        let grid = Grid2D::new(32).unwrap();
        let field = RealField2D::from_fn(grid, |_, _| 3.25);
        let obs = subsample_sparse(&field, 8).unwrap();
        for up in [
            upscale_bicubic(&obs, grid).unwrap(),
            upscale_conv(&obs, grid).unwrap(),
        ] {
            for v in up.values() {
                assert_abs_diff_eq!(*v, 3.25, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn conv_upscale_preserves_the_mean() {
        let grid = Grid2D::new(64).unwrap();
        let field = RealField2D::from_fn(grid, |x, y| {
            (2.0 * PI * x).sin() + 0.3 * (4.0 * PI * y).cos() + 0.11
        });
        let obs = subsample_sparse(&field, 16).unwrap();
        let up = upscale_conv(&obs, grid).unwrap();
        let obs_mean = obs.values().mean().unwrap();
        let up_mean = up.values().mean().unwrap();
        assert_abs_diff_eq!(obs_mean, up_mean, epsilon = 1e-12);
    }

    #[test]
    fn conv_kernel_width_follows_the_upscale_ratio() {
        // A single unit observation spreads over exactly (2r−1 + r−1)² points:
        // replication (r wide) convolved with the (2r−1) box.
        let mut values = Array2::zeros((8, 8));
        values[[4, 4]] = 1.0;
        let obs = SparseObservation::from_values(8, 32, 1.0, values).unwrap();
        let grid = Grid2D::new(32).unwrap();
        let up = upscale_conv(&obs, grid).unwrap();
        let support = up.values().iter().filter(|v| v.abs() > 1e-15).count();
        let r = 4usize;
        let width = (2 * r - 1) + (r - 1);
        assert_eq!(support, width * width);
        // Total mass: r² replicated points averaged by a mass-preserving box.
        assert_abs_diff_eq!(up.values().sum(), (r * r) as f64, epsilon = 1e-12);
    }

    #[test]
    fn mismatched_targets_are_rejected() {
        let field = cosine_field(32);
        let obs = subsample_sparse(&field, 8).unwrap();
        let bad = Grid2D::new(12).unwrap();
        assert!(upscale_bicubic(&obs, bad).is_err());
        assert!(upscale_conv(&obs, bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn upscalers_are_linear(seed in 0u64..500, alpha in -2.0f64..2.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let grid = Grid2D::new(16).unwrap();
            let mk = |rng: &mut rand_chacha::ChaCha12Rng| {
                let v = Array2::from_shape_fn((4, 4), |_| rng.random_range(-1.0..1.0));
                SparseObservation::from_values(4, 16, 1.0, v).unwrap()
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let combo = SparseObservation::from_values(
                4, 16, 1.0,
                a.values() * alpha + b.values(),
            ).unwrap();
            for up in [upscale_bicubic, upscale_conv] {
                let lhs = up(&combo, grid).unwrap();
                let ua = up(&a, grid).unwrap();
                let ub = up(&b, grid).unwrap();
                for ((i, j), v) in lhs.values().indexed_iter() {
                    let rhs = alpha * ua.values()[[i, j]] + ub.values()[[i, j]];
                    prop_assert!((v - rhs).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn bicubic_is_shift_equivariant(shift in 0usize..4) {
            let field = cosine_field(32);
            let obs = subsample_sparse(&field, 8).unwrap();
            let shifted = SparseObservation::from_values(
                8, 32, 1.0,
                Array2::from_shape_fn((8, 8), |(i, j)| obs.values()[[(i + shift) % 8, j]]),
            ).unwrap();
            let grid = Grid2D::new(32).unwrap();
            let up = upscale_bicubic(&obs, grid).unwrap();
            let up_shifted = upscale_bicubic(&shifted, grid).unwrap();
            for ((i, j), v) in up_shifted.values().indexed_iter() {
                let expect = up.values()[[(i + 4 * shift) % 32, j]];
                prop_assert!((v - expect).abs() < 1e-10);
            }
        }
    }
}
