//! Evaluation mathematics: field error metrics, isotropic energy spectra,
//! temporal correlation maps, and periodic-shift data augmentation.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::subsample_sparse;
use crate::error::{Error, Result};
use crate::field::{dft_forward, RealField2D};
use crate::random::SeedStream;
use crate::solver::Snapshot;

/// The four scalar error measures between a truth and a predicted field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// ‖truth − pred‖²_F / N with N the grid point count.
    pub d_mse: f64,
    /// ‖truth − pred‖_F / ‖truth‖_F.
    pub d_fro: f64,
    /// σ_max(truth − pred) / σ_max(truth).
    pub d_spe: f64,
    /// max|truth − pred| / max|truth|.
    pub d_max: f64,
}

/// Largest singular value by power iteration on AᵀA with a deterministic
/// start vector, iterated to machine-level stagnation (well inside the
/// 1e-8 relative contract).
pub fn spectral_norm(m: &Array2<f64>) -> f64 {
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let mut v = ndarray::Array1::from_elem(cols, 1.0 / (cols as f64).sqrt());
    let mut sigma = 0.0_f64;
    for _ in 0..200_000 {
        let av = m.dot(&v);
        let next_sigma = av.dot(&av).sqrt();
        if next_sigma == 0.0 {
            return 0.0;
        }
        let mut w = m.t().dot(&av);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return next_sigma;
        }
        w /= norm;
        let stalled = (next_sigma - sigma).abs() <= 1e-15 * next_sigma;
        sigma = next_sigma;
        v = w;
        if stalled {
            break;
        }
    }
    sigma
}

/// Compute all four error metrics. Relative metrics are undefined for a
/// zero-norm truth field.
pub fn error_metrics(truth: &RealField2D, pred: &RealField2D) -> Result<MetricsReport> {
    truth.grid().same_as(&pred.grid())?;
    let t = truth.values();
    let p = pred.values();
    let n = t.len() as f64;

    let diff = t - p;
    let sq = diff.iter().map(|d| d * d).sum::<f64>();
    let truth_sq = t.iter().map(|v| v * v).sum::<f64>();
    let truth_max = truth.max_abs();
    if truth_sq == 0.0 || truth_max == 0.0 {
        return Err(Error::Config(
            "relative error metrics are undefined for a zero-norm truth field".into(),
        ));
    }

    Ok(MetricsReport {
        d_mse: sq / n,
        d_fro: (sq / truth_sq).sqrt(),
        d_spe: spectral_norm(&diff) / spectral_norm(t),
        d_max: diff.iter().fold(0.0_f64, |a, d| a.max(d.abs())) / truth_max,
    })
}

/// Isotropic energy spectrum: per-mode energies ½|coeff|² summed into
/// integer radial shells k = round(|m|).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Shell energies indexed by integer wavenumber; includes the corner
    /// shells beyond the isotropic limit so the total closes under
    /// Parseval.
    pub energies: Vec<f64>,
    /// Largest shell fully contained in the grid's resolved disc (n/2);
    /// shells above it sample only the corners of mode space.
    pub isotropic_limit: usize,
    /// How the coefficients are scaled.
    pub convention: String,
}

impl SpectrumReport {
    pub fn total_energy(&self) -> f64 {
        self.energies.iter().sum()
    }
}

pub fn energy_spectrum(field: &RealField2D) -> SpectrumReport {
    let grid = field.grid();
    let n = grid.n();
    let coeffs = dft_forward(field);
    let max_shell = ((2.0_f64).sqrt() * (n as f64) / 2.0).round() as usize;
    let mut energies = vec![0.0; max_shell + 1];
    for ((i, j), c) in coeffs.coeffs().indexed_iter() {
        let mx = grid.signed_mode(i) as f64;
        let my = grid.signed_mode(j) as f64;
        let shell = (mx * mx + my * my).sqrt().round() as usize;
        energies[shell] += 0.5 * c.norm_sqr();
    }
    SpectrumReport {
        energies,
        isotropic_limit: n / 2,
        convention: "amplitude coefficients (forward transform divided by n^2)".to_string(),
    }
}

/// Least-squares slope of ln E against ln k over the shells `k_lo..=k_hi`
/// (shells with zero energy are skipped).
pub fn log_log_slope(spectrum: &SpectrumReport, k_lo: usize, k_hi: usize) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in k_lo..=k_hi.min(spectrum.energies.len().saturating_sub(1)) {
        if k == 0 {
            continue;
        }
        let e = spectrum.energies[k];
        if e > 0.0 {
            xs.push((k as f64).ln());
            ys.push(e.ln());
        }
    }
    if xs.len() < 2 {
        return Err(Error::Config(format!(
            "slope fit needs at least two non-empty shells in [{k_lo}, {k_hi}]"
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Pearson correlation between the time series of one field at a reference
/// point and another field everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub x_c: (usize, usize),
    pub values: Array2<f64>,
    /// False where the local time series had zero variance (the value is
    /// reported as 0 there).
    pub defined: Array2<bool>,
    pub samples: usize,
}

impl CorrelationMap {
    /// Location of the largest |correlation| among defined cells.
    pub fn peak(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_val = -1.0;
        for ((i, j), v) in self.values.indexed_iter() {
            if self.defined[[i, j]] && v.abs() > best_val {
                best_val = v.abs();
                best = (i, j);
            }
        }
        best
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .zip(self.defined.iter())
            .filter(|(_, d)| **d)
            .fold(0.0_f64, |a, (v, _)| a.max(v.abs()))
    }

    /// Median of |correlation| over defined cells.
    pub fn median_abs(&self) -> f64 {
        let mut vals: Vec<f64> = self
            .values
            .iter()
            .zip(self.defined.iter())
            .filter(|(_, d)| **d)
            .map(|(v, _)| v.abs())
            .collect();
        if vals.is_empty() {
            return 0.0;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = vals.len() / 2;
        if vals.len() % 2 == 1 {
            vals[mid]
        } else {
            0.5 * (vals[mid - 1] + vals[mid])
        }
    }
}

/// Correlate the series U(x_c, ·) against ω(x, ·) for every grid point x.
pub fn correlation_map(
    u_series: &[RealField2D],
    omega_series: &[RealField2D],
    x_c: (usize, usize),
) -> Result<CorrelationMap> {
    if u_series.len() != omega_series.len() || u_series.len() < 2 {
        return Err(Error::Config(format!(
            "correlation needs two equal-length series of length >= 2, got {} and {}",
            u_series.len(),
            omega_series.len()
        )));
    }
    let grid = u_series[0].grid();
    for f in u_series.iter().chain(omega_series.iter()) {
        grid.same_as(&f.grid())?;
    }
    let n = grid.n();
    if x_c.0 >= n || x_c.1 >= n {
        return Err(Error::Config(format!(
            "reference point {x_c:?} outside {n}x{n} grid"
        )));
    }

    let t = u_series.len();
    let a: Vec<f64> = u_series.iter().map(|f| f.values()[[x_c.0, x_c.1]]).collect();
    let a_mean = a.iter().sum::<f64>() / t as f64;
    let a_dev: Vec<f64> = a.iter().map(|v| v - a_mean).collect();
    let saa: f64 = a_dev.iter().map(|d| d * d).sum();
    if saa == 0.0 {
        return Err(Error::Config(
            "reference-point series is constant; correlation undefined".into(),
        ));
    }

    let mut values = Array2::zeros((n, n));
    let mut defined = Array2::from_elem((n, n), true);
    for i in 0..n {
        for j in 0..n {
            let b_mean = omega_series
                .iter()
                .map(|f| f.values()[[i, j]])
                .sum::<f64>()
                / t as f64;
            let mut sbb = 0.0;
            let mut sab = 0.0;
            for (k, f) in omega_series.iter().enumerate() {
                let bd = f.values()[[i, j]] - b_mean;
                sbb += bd * bd;
                sab += a_dev[k] * bd;
            }
            if sbb == 0.0 {
                values[[i, j]] = 0.0;
                defined[[i, j]] = false;
                continue;
            }
            // For bitwise-identical series saa == sbb and sab == saa, so
            // the self-correlation comes out exactly 1.
            let denom = if saa == sbb { saa } else { (saa * sbb).sqrt() };
            values[[i, j]] = (sab / denom).clamp(-1.0, 1.0);
        }
    }
    Ok(CorrelationMap {
        x_c,
        values,
        defined,
        samples: t,
    })
}

/// f'(i, j) = f((i + dx) mod n, (j + dy) mod n).
pub fn circular_shift(field: &RealField2D, dx: usize, dy: usize) -> RealField2D {
    let n = field.grid().n();
    let src = field.values();
    let values = Array2::from_shape_fn((n, n), |(i, j)| src[[(i + dx) % n, (j + dy) % n]]);
    RealField2D::from_values(field.grid(), values).expect("same grid")
}

fn shift_snapshot(snap: &Snapshot, dx: usize, dy: usize) -> Result<Snapshot> {
    let g = circular_shift(&snap.g_truth, dx, dy);
    let h = circular_shift(&snap.h_truth, dx, dy);
    let ns = snap.sparse_g.n_sparse();
    Ok(Snapshot {
        trajectory: snap.trajectory,
        time: snap.time,
        omega: circular_shift(&snap.omega, dx, dy),
        sparse_g: subsample_sparse(&g, ns)?,
        sparse_h: subsample_sparse(&h, ns)?,
        g_truth: g,
        h_truth: h,
    })
}

/// Expand a snapshot set `copies`-fold using the periodic boundary: copy 0
/// is the data unchanged, every further copy applies one random circular
/// shift per snapshot (the same shift to ω, both closure fields, and the
/// re-sampled sparse observations). `copies` ≤ 1 returns the data
/// unchanged.
pub fn augment_periodic_shifts(
    snapshots: &[Snapshot],
    copies: usize,
    stream: SeedStream,
) -> Result<Vec<Snapshot>> {
    let mut out = Vec::with_capacity(snapshots.len() * copies.max(1));
    out.extend(snapshots.iter().cloned());
    for copy in 1..copies.max(1) {
        let copy_stream = stream.named("augment").indexed(copy as u64);
        for (si, snap) in snapshots.iter().enumerate() {
            let mut rng = copy_stream.indexed(si as u64).rng();
            let n = snap.omega.grid().n();
            let dx = rng.random_range(0..n);
            let dy = rng.random_range(0..n);
            out.push(shift_snapshot(snap, dx, dy)?);
        }
    }
    Ok(out)
}
