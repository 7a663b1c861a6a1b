//! Pseudo-spectral solver for stochastically forced 2-D Navier–Stokes in
//! vorticity form,
//!
//!   ∂ω/∂t = −u·∇ω + f + ν∇²ω + β·ξ,
//!
//! on the periodic unit square, plus the closure-term bookkeeping that
//! turns resolved trajectories into training data.
//!
//! Time integration is Crank–Nicolson in the viscous term (half explicit,
//! half implicit) with explicit convection, forcing, and noise:
//!
//!   ω̂_{n+1} = [ω̂_n − Δt·F̂_n + Δt·f̂ − (Δt/2)·ν|k|²·ω̂_n + Δt·β·ξ̂_n] / (1 + (Δt/2)·ν|k|²).
//!
//! Two closure decompositions are tracked alongside every step:
//! G† = ν∇²ω + 2βξ (the half-weighted viscous+noise bundle — the factor 2
//! makes (Δt/2)·Ĝ† land exactly on the explicit terms it replaces) and
//! H† = −u·∇ω + βξ (convection+noise). Feeding either recorded term into
//! its surrogate step reproduces the full solver trajectory to rounding.

use ndarray::Array2;
use num_complex::Complex64;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{subsample_field, subsample_sparse, SparseObservation};
use crate::error::{Error, Result};
use crate::field::{
    dft_forward, dft_inverse, spectral_gradient, spectral_laplacian, RealField2D, SpectralField2D,
};
use crate::grid::Grid2D;
use crate::random::{
    sample_initial_vorticity, sample_noise_increment, GrfSpec, SeedStream, STREAM_INIT,
    STREAM_NOISE,
};

/// Physical and numerical parameters of the resolved simulation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NsConfig {
    pub grid: Grid2D,
    /// Kinematic viscosity ν.
    pub nu: f64,
    /// Noise amplitude β.
    pub beta: f64,
    /// Time step Δt.
    pub dt: f64,
    /// Amplitude of the fixed deterministic forcing
    /// a·(sin(2π(x+y)/L) + cos(2π(x+y)/L)).
    pub forcing_amplitude: f64,
    /// Apply the 2/3 rule to the convection product.
    pub dealias: bool,
}

impl NsConfig {
    pub fn new(grid: Grid2D) -> Self {
        NsConfig {
            grid,
            nu: 1e-3,
            beta: 5e-5,
            dt: 1e-3,
            forcing_amplitude: 0.1,
            dealias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::Config(format!("viscosity must be positive, got {}", self.nu)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "noise amplitude must be non-negative, got {}",
                self.beta
            )));
        }
        if !self.forcing_amplitude.is_finite() {
            return Err(Error::Config("forcing amplitude must be finite".into()));
        }
        Ok(())
    }

    /// The fixed deterministic forcing field.
    pub fn forcing_field(&self) -> RealField2D {
        let a = self.forcing_amplitude;
        let l = self.grid.length();
        RealField2D::from_fn(self.grid, |x, y| {
            let phase = 2.0 * std::f64::consts::PI * (x + y) / l;
            a * (phase.sin() + phase.cos())
        })
    }
}

/// Solve the Poisson equation −∇²ψ = ω spectrally: ψ̂ = ω̂/|k|², with the
/// mean mode pinned to zero.
pub fn solve_stream_function(omega_hat: &SpectralField2D) -> SpectralField2D {
    let grid = omega_hat.grid();
    let n = grid.n();
    let mut psi = omega_hat.clone();
    for ix in 0..n {
        let kx = grid.wavenumber(ix);
        for iy in 0..n {
            if ix == 0 && iy == 0 {
                psi.coeffs_mut()[[0, 0]] = Complex64::new(0.0, 0.0);
                continue;
            }
            let ky = grid.wavenumber(iy);
            psi.coeffs_mut()[[ix, iy]] /= kx * kx + ky * ky;
        }
    }
    psi
}

/// Divergence-free velocity from the stream function:
/// û = (i·k_y·ψ̂, −i·k_x·ψ̂), i.e. u = (∂ψ/∂y, −∂ψ/∂x).
pub fn velocity_from_stream(psi_hat: &SpectralField2D) -> (SpectralField2D, SpectralField2D) {
    let (dpsi_dx, dpsi_dy) = spectral_gradient(psi_hat);
    let ux = dpsi_dy;
    let uy = SpectralField2D::from_coeffs(psi_hat.grid(), dpsi_dx.coeffs().mapv(|c| -c))
        .expect("same grid");
    (ux, uy)
}

/// Output of one diagnostic solver step.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    /// Convection product F = u·∇ω (dealiased if the config asks for it).
    pub convection: RealField2D,
    /// Stream function ψ.
    pub stream_function: RealField2D,
    pub velocity_x: RealField2D,
    pub velocity_y: RealField2D,
    /// G† = ν∇²ω + 2βξ.
    pub g_truth: RealField2D,
    /// H† = −F + βξ.
    pub h_truth: RealField2D,
    /// Largest |k·û| over all modes — zero to rounding by construction.
    pub max_divergence: f64,
}

struct ConvectionParts {
    convection: RealField2D,
    convection_hat: SpectralField2D,
    stream_function: RealField2D,
    velocity_x: RealField2D,
    velocity_y: RealField2D,
    max_divergence: f64,
}

fn convection_parts(omega_hat: &SpectralField2D, dealias: bool) -> Result<ConvectionParts> {
    let grid = omega_hat.grid();
    let psi_hat = solve_stream_function(omega_hat);
    let (ux_hat, uy_hat) = velocity_from_stream(&psi_hat);

    // Divergence under the same derivative convention the velocities were
    // built with (Nyquist multipliers zeroed), where it cancels exactly.
    let mut max_divergence = 0.0f64;
    let n = grid.n();
    let nyq = grid.nyquist();
    for ix in 0..n {
        let kx = if ix == nyq { 0.0 } else { grid.wavenumber(ix) };
        for iy in 0..n {
            let ky = if iy == nyq { 0.0 } else { grid.wavenumber(iy) };
            let div = ux_hat.coeffs()[[ix, iy]] * kx + uy_hat.coeffs()[[ix, iy]] * ky;
            max_divergence = max_divergence.max(div.norm());
        }
    }

    let (domega_dx_hat, domega_dy_hat) = spectral_gradient(omega_hat);
    let ux = dft_inverse(&ux_hat)?;
    let uy = dft_inverse(&uy_hat)?;
    let wx = dft_inverse(&domega_dx_hat)?;
    let wy = dft_inverse(&domega_dy_hat)?;

    let mut product = Array2::<f64>::zeros((n, n));
    for ix in 0..n {
        for iy in 0..n {
            product[[ix, iy]] = ux.values()[[ix, iy]] * wx.values()[[ix, iy]]
                + uy.values()[[ix, iy]] * wy.values()[[ix, iy]];
        }
    }
    let mut convection = RealField2D::from_values(grid, product)?;
    let mut convection_hat = dft_forward(&convection);
    if dealias {
        let cutoff = n as i64 / 3;
        for ix in 0..n {
            let mx = grid.signed_mode(ix).abs();
            for iy in 0..n {
                let my = grid.signed_mode(iy).abs();
                if mx > cutoff || my > cutoff {
                    convection_hat.coeffs_mut()[[ix, iy]] = Complex64::new(0.0, 0.0);
                }
            }
        }
        convection = dft_inverse(&convection_hat)?;
    }

    Ok(ConvectionParts {
        convection,
        convection_hat,
        stream_function: dft_inverse(&psi_hat)?,
        velocity_x: ux,
        velocity_y: uy,
        max_divergence,
    })
}

/// The nonlinear convection product F = u·∇ω for a spectral vorticity state.
pub fn convection_term(omega_hat: &SpectralField2D, dealias: bool) -> Result<RealField2D> {
    Ok(convection_parts(omega_hat, dealias)?.convection)
}

/// Crank–Nicolson stepper with precomputed spectral multipliers.
pub struct CnStepper {
    cfg: NsConfig,
    k2: Array2<f64>,
    forcing_hat: Array2<Complex64>,
    denom_inv: Array2<f64>,
}

impl CnStepper {
    pub fn new(cfg: NsConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid;
        let n = grid.n();
        let mut k2 = Array2::<f64>::zeros((n, n));
        for ix in 0..n {
            let kx = grid.wavenumber(ix);
            for iy in 0..n {
                let ky = grid.wavenumber(iy);
                k2[[ix, iy]] = kx * kx + ky * ky;
            }
        }
        let denom_inv = k2.mapv(|k2| 1.0 / (1.0 + 0.5 * cfg.dt * cfg.nu * k2));
        let forcing_hat = dft_forward(&cfg.forcing_field()).coeffs().clone();
        Ok(CnStepper {
            cfg,
            k2,
            forcing_hat,
            denom_inv,
        })
    }

    pub fn config(&self) -> &NsConfig {
        &self.cfg
    }

    /// One full step. `xi` is the white-noise increment for this step
    /// (per-point std 1/√Δt).
    pub fn step(&self, omega_hat: &SpectralField2D, xi: &RealField2D) -> Result<SpectralField2D> {
        self.cfg.grid.same_as(&omega_hat.grid())?;
        self.cfg.grid.same_as(&xi.grid())?;
        let parts = convection_parts(omega_hat, self.cfg.dealias)?;
        Ok(self.advance(omega_hat, &parts.convection_hat, xi))
    }

    /// One full step that also reports the per-step fields, including both
    /// closure decompositions.
    pub fn step_with_diagnostics(
        &self,
        omega_hat: &SpectralField2D,
        xi: &RealField2D,
    ) -> Result<(SpectralField2D, StepDiagnostics)> {
        self.cfg.grid.same_as(&omega_hat.grid())?;
        self.cfg.grid.same_as(&xi.grid())?;
        let parts = convection_parts(omega_hat, self.cfg.dealias)?;
        let next = self.advance(omega_hat, &parts.convection_hat, xi);

        let laplacian = dft_inverse(&spectral_laplacian(omega_hat))?;
        let n = self.cfg.grid.n();
        let mut g = Array2::<f64>::zeros((n, n));
        let mut h = Array2::<f64>::zeros((n, n));
        for ix in 0..n {
            for iy in 0..n {
                let noise = xi.values()[[ix, iy]];
                g[[ix, iy]] = self.cfg.nu * laplacian.values()[[ix, iy]] + 2.0 * self.cfg.beta * noise;
                h[[ix, iy]] = -parts.convection.values()[[ix, iy]] + self.cfg.beta * noise;
            }
        }
        let diagnostics = StepDiagnostics {
            g_truth: RealField2D::from_values(self.cfg.grid, g)?,
            h_truth: RealField2D::from_values(self.cfg.grid, h)?,
            convection: parts.convection,
            stream_function: parts.stream_function,
            velocity_x: parts.velocity_x,
            velocity_y: parts.velocity_y,
            max_divergence: parts.max_divergence,
        };
        Ok((next, diagnostics))
    }

    fn advance(
        &self,
        omega_hat: &SpectralField2D,
        convection_hat: &SpectralField2D,
        xi: &RealField2D,
    ) -> SpectralField2D {
        let dt = self.cfg.dt;
        let nu = self.cfg.nu;
        let beta = self.cfg.beta;
        let xi_hat = dft_forward(xi);
        let n = self.cfg.grid.n();
        let mut out = SpectralField2D::zeros(self.cfg.grid);
        for ix in 0..n {
            for iy in 0..n {
                let w = omega_hat.coeffs()[[ix, iy]];
                let numerator = w - convection_hat.coeffs()[[ix, iy]] * dt
                    + self.forcing_hat[[ix, iy]] * dt
                    - w * (0.5 * dt * nu * self.k2[[ix, iy]])
                    + xi_hat.coeffs()[[ix, iy]] * (dt * beta);
                out.coeffs_mut()[[ix, iy]] = numerator * self.denom_inv[[ix, iy]];
            }
        }
        out
    }

    /// Surrogate step driven by a generated diffusion closure G in place of
    /// the explicit viscous+noise terms:
    /// ω̂_{n+1} = [ω̂_n − Δt·F̂_n + Δt·f̂ + (Δt/2)·Ĝ] / (1 + (Δt/2)·ν|k|²).
    pub fn step_with_g(
        &self,
        omega_hat: &SpectralField2D,
        g_gen: &RealField2D,
    ) -> Result<SpectralField2D> {
        self.cfg.grid.same_as(&omega_hat.grid())?;
        self.cfg.grid.same_as(&g_gen.grid())?;
        let dt = self.cfg.dt;
        let parts = convection_parts(omega_hat, self.cfg.dealias)?;
        let g_hat = dft_forward(g_gen);
        let n = self.cfg.grid.n();
        let mut out = SpectralField2D::zeros(self.cfg.grid);
        for ix in 0..n {
            for iy in 0..n {
                let numerator = omega_hat.coeffs()[[ix, iy]]
                    - parts.convection_hat.coeffs()[[ix, iy]] * dt
                    + self.forcing_hat[[ix, iy]] * dt
                    + g_hat.coeffs()[[ix, iy]] * (0.5 * dt);
                out.coeffs_mut()[[ix, iy]] = numerator * self.denom_inv[[ix, iy]];
            }
        }
        Ok(out)
    }

    /// Surrogate step driven by a generated convection closure H in place of
    /// the explicit convection+noise terms:
    /// ω̂_{n+1} = [ω̂_n + Δt·Ĥ + Δt·f̂ − (Δt/2)·ν|k|²·ω̂_n] / (1 + (Δt/2)·ν|k|²).
    pub fn step_with_h(
        &self,
        omega_hat: &SpectralField2D,
        h_gen: &RealField2D,
    ) -> Result<SpectralField2D> {
        self.cfg.grid.same_as(&omega_hat.grid())?;
        self.cfg.grid.same_as(&h_gen.grid())?;
        let dt = self.cfg.dt;
        let nu = self.cfg.nu;
        let h_hat = dft_forward(h_gen);
        let n = self.cfg.grid.n();
        let mut out = SpectralField2D::zeros(self.cfg.grid);
        for ix in 0..n {
            for iy in 0..n {
                let w = omega_hat.coeffs()[[ix, iy]];
                let numerator = w + h_hat.coeffs()[[ix, iy]] * dt + self.forcing_hat[[ix, iy]] * dt
                    - w * (0.5 * dt * nu * self.k2[[ix, iy]]);
                out.coeffs_mut()[[ix, iy]] = numerator * self.denom_inv[[ix, iy]];
            }
        }
        Ok(out)
    }
}

/// Enstrophy ½·mean(ω²), evaluated from the spectrum via Parseval.
pub fn enstrophy(omega_hat: &SpectralField2D) -> f64 {
    0.5 * omega_hat.coefficient_energy()
}

/// Runaway guard: a trajectory is declared diverged when its state stops
/// being finite or its enstrophy exceeds this multiple of the initial value.
pub const ENSTROPHY_RUNAWAY_FACTOR: f64 = 1e6;

pub(crate) fn check_state(
    omega_hat: &SpectralField2D,
    initial_enstrophy: f64,
    step: usize,
) -> Result<()> {
    let e = enstrophy(omega_hat);
    if !e.is_finite() {
        return Err(Error::Diverged {
            step,
            reason: "non-finite vorticity state".into(),
        });
    }
    if initial_enstrophy > 0.0 && e > ENSTROPHY_RUNAWAY_FACTOR * initial_enstrophy {
        return Err(Error::Diverged {
            step,
            reason: format!(
                "enstrophy {e:.3e} exceeds {ENSTROPHY_RUNAWAY_FACTOR:.0e}× the initial value"
            ),
        });
    }
    Ok(())
}

/// Data-generation protocol: how long to warm up, how long and how densely
/// to record, and how the source resolution maps to the stored resolution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Protocol {
    /// Resolution the solver runs at.
    pub source_n: usize,
    /// Resolution snapshots are subsampled to before storage.
    pub target_n: usize,
    /// Sparse observation lattice size.
    pub sparse_n: usize,
    pub trajectories: usize,
    pub train_trajectories: usize,
    /// Transient discarded before recording starts, in physical seconds.
    pub warmup_time: f64,
    /// Recorded window length in physical seconds.
    pub horizon_time: f64,
    /// Record every this many solver steps.
    pub record_every: usize,
}

impl Protocol {
    /// The protocol the reference tables were produced with: 256→64 grids,
    /// 16×16 observations, 10 trajectories (8 train / 2 test), 30 s warmup,
    /// 10 s horizon at every 10th step.
    pub fn paper() -> Self {
        Protocol {
            source_n: 256,
            target_n: 64,
            sparse_n: 16,
            trajectories: 10,
            train_trajectories: 8,
            warmup_time: 30.0,
            horizon_time: 10.0,
            record_every: 10,
        }
    }

    /// Small protocol sized for workstation runs and the test suite.
    pub fn desk() -> Self {
        Protocol {
            source_n: 64,
            target_n: 32,
            sparse_n: 8,
            trajectories: 2,
            train_trajectories: 1,
            warmup_time: 5.0,
            horizon_time: 2.0,
            record_every: 10,
        }
    }

    pub fn validate(&self, grid: Grid2D) -> Result<()> {
        if grid.n() != self.source_n {
            return Err(Error::Config(format!(
                "solver grid {} does not match protocol source resolution {}",
                grid.n(),
                self.source_n
            )));
        }
        if self.target_n == 0 || self.source_n % self.target_n != 0 {
            return Err(Error::Config(format!(
                "target resolution {} must divide source {}",
                self.target_n, self.source_n
            )));
        }
        if self.sparse_n == 0 || self.target_n % self.sparse_n != 0 {
            return Err(Error::Config(format!(
                "sparse lattice {} must divide target resolution {}",
                self.sparse_n, self.target_n
            )));
        }
        if self.trajectories == 0 || self.train_trajectories > self.trajectories {
            return Err(Error::Config(format!(
                "bad trajectory split {}/{}",
                self.train_trajectories, self.trajectories
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be positive".into()));
        }
        if !(self.warmup_time >= 0.0) || !(self.horizon_time > 0.0) {
            return Err(Error::Config("bad warmup/horizon times".into()));
        }
        Ok(())
    }

    pub fn snapshots_per_trajectory(&self, dt: f64) -> usize {
        (self.horizon_time / (self.record_every as f64 * dt)).round() as usize
    }
}

/// One stored training/evaluation instance at the target resolution.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub trajectory: usize,
    pub time: f64,
    pub omega: RealField2D,
    pub g_truth: RealField2D,
    pub h_truth: RealField2D,
    pub sparse_g: SparseObservation,
    pub sparse_h: SparseObservation,
}

/// Which closure decomposition a model targets: G replaces the viscous and
/// stochastic terms, H replaces the convective and stochastic terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosureKind {
    G,
    H,
}

impl std::fmt::Display for ClosureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClosureKind::G => write!(f, "G"),
            ClosureKind::H => write!(f, "H"),
        }
    }
}

impl std::str::FromStr for ClosureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "G" | "g" => Ok(ClosureKind::G),
            "H" | "h" => Ok(ClosureKind::H),
            other => Err(Error::Config(format!("unknown closure kind '{other}'"))),
        }
    }
}

impl Snapshot {
    pub fn closure_field(&self, kind: ClosureKind) -> &RealField2D {
        match kind {
            ClosureKind::G => &self.g_truth,
            ClosureKind::H => &self.h_truth,
        }
    }

    pub fn sparse_observation(&self, kind: ClosureKind) -> &SparseObservation {
        match kind {
            ClosureKind::G => &self.sparse_g,
            ClosureKind::H => &self.sparse_h,
        }
    }
}

/// A generated dataset with everything needed to reproduce it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: NsConfig,
    pub grf: GrfSpec,
    pub protocol: Protocol,
    pub root_seed: u64,
    pub snapshots: Vec<Snapshot>,
}

impl Dataset {
    pub fn train_snapshots(&self) -> impl Iterator<Item = &Snapshot> {
        let cut = self.protocol.train_trajectories;
        self.snapshots.iter().filter(move |s| s.trajectory < cut)
    }

    pub fn test_snapshots(&self) -> impl Iterator<Item = &Snapshot> {
        let cut = self.protocol.train_trajectories;
        self.snapshots.iter().filter(move |s| s.trajectory >= cut)
    }

    pub fn target_grid(&self) -> Grid2D {
        Grid2D::with_length(self.protocol.target_n, self.config.grid.length())
            .expect("validated protocol")
    }
}

/// Run the full-resolution solver over every trajectory of the protocol and
/// record subsampled snapshots with their closure terms and sparse
/// observations. Each trajectory draws its initial condition from the
/// "init" stream and its noise from the "noise" stream, both indexed by
/// trajectory, so trajectories are independent and reproducible.
pub fn generate_dataset(
    cfg: &NsConfig,
    grf: &GrfSpec,
    protocol: &Protocol,
    root: SeedStream,
) -> Result<Dataset> {
    cfg.validate()?;
    protocol.validate(cfg.grid)?;
    let stepper = CnStepper::new(*cfg)?;
    let warm_steps = (protocol.warmup_time / cfg.dt).round() as usize;
    let count = protocol.snapshots_per_trajectory(cfg.dt);
    let total_steps = warm_steps + (count - 1) * protocol.record_every + 1;

    let mut snapshots = Vec::with_capacity(count * protocol.trajectories);
    for traj in 0..protocol.trajectories {
        let mut init_rng: ChaCha12Rng = root.named(STREAM_INIT).indexed(traj as u64).rng();
        let mut noise_rng: ChaCha12Rng = root.named(STREAM_NOISE).indexed(traj as u64).rng();
        let omega0 = sample_initial_vorticity(cfg.grid, grf, &mut init_rng)?;
        let mut omega_hat = dft_forward(&omega0);
        let initial_enstrophy = enstrophy(&omega_hat);

        let mut recorded = 0usize;
        for step in 0..total_steps {
            let xi = sample_noise_increment(cfg.grid, cfg.dt, &mut noise_rng)?;
            let record = step >= warm_steps
                && (step - warm_steps) % protocol.record_every == 0
                && recorded < count;
            if record {
                let (next, diag) = stepper.step_with_diagnostics(&omega_hat, &xi)?;
                let omega = dft_inverse(&omega_hat)?;
                let omega_t = subsample_field(&omega, protocol.target_n)?;
                let g_t = subsample_field(&diag.g_truth, protocol.target_n)?;
                let h_t = subsample_field(&diag.h_truth, protocol.target_n)?;
                let sparse_g = subsample_sparse(&g_t, protocol.sparse_n)?;
                let sparse_h = subsample_sparse(&h_t, protocol.sparse_n)?;
                snapshots.push(Snapshot {
                    trajectory: traj,
                    time: step as f64 * cfg.dt,
                    omega: omega_t,
                    g_truth: g_t,
                    h_truth: h_t,
                    sparse_g,
                    sparse_h,
                });
                recorded += 1;
                omega_hat = next;
            } else {
                omega_hat = stepper.step(&omega_hat, &xi)?;
            }
            if step % 100 == 0 || step + 1 == total_steps {
                check_state(&omega_hat, initial_enstrophy, step)?;
            }
        }
    }
    Ok(Dataset {
        config: *cfg,
        grf: *grf,
        protocol: *protocol,
        root_seed: root.raw(),
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn single_mode_config(n: usize) -> NsConfig {
        let grid = Grid2D::new(n).unwrap();
        let mut cfg = NsConfig::new(grid);
        cfg.beta = 0.0;
        cfg.forcing_amplitude = 0.0;
        cfg
    }

    #[test]
    fn stream_function_inverts_the_laplacian() {
        let grid = Grid2D::new(32).unwrap();
        let omega = RealField2D::from_fn(grid, |x, _| (2.0 * PI * x).sin());
        let psi = dft_inverse(&solve_stream_function(&dft_forward(&omega))).unwrap();
        for ((ix, _), v) in psi.values().indexed_iter() {
            let expect = (2.0 * PI * grid.coord(ix)).sin() / (4.0 * PI * PI);
            assert_abs_diff_eq!(*v, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn velocity_matches_perpendicular_gradient() {
        let grid = Grid2D::new(32).unwrap();
        let omega = RealField2D::from_fn(grid, |x, _| (2.0 * PI * x).sin());
        let psi_hat = solve_stream_function(&dft_forward(&omega));
        let (ux_hat, uy_hat) = velocity_from_stream(&psi_hat);
        let ux = dft_inverse(&ux_hat).unwrap();
        let uy = dft_inverse(&uy_hat).unwrap();
        for ((ix, _), v) in uy.values().indexed_iter() {
            let expect = -(2.0 * PI * grid.coord(ix)).cos() / (2.0 * PI);
            assert_abs_diff_eq!(*v, expect, epsilon = 1e-12);
        }
        assert!(ux.max_abs() < 1e-12);
    }

    #[test]
    fn velocity_is_divergence_free() {
        let grid = Grid2D::new(32).unwrap();
        let mut rng = SeedStream::root(5).named(STREAM_INIT).rng();
        let omega = sample_initial_vorticity(grid, &GrfSpec::default(), &mut rng).unwrap();
        let parts = convection_parts(&dft_forward(&omega), false).unwrap();
        assert!(parts.max_divergence < 1e-10, "div {:.3e}", parts.max_divergence);
    }

    #[test]
    fn convection_vanishes_for_a_single_shear_mode() {
        let grid = Grid2D::new(32).unwrap();
        let omega = RealField2D::from_fn(grid, |x, _| (2.0 * PI * x).sin());
        let f = convection_term(&dft_forward(&omega), false).unwrap();
        assert!(f.max_abs() < 1e-11, "max |F| = {:.3e}", f.max_abs());
    }

    #[test]
    fn single_mode_step_matches_the_cn_amplification_factor() {
        let cfg = single_mode_config(16);
        let stepper = CnStepper::new(cfg).unwrap();
        let omega = RealField2D::from_fn(cfg.grid, |x, _| (2.0 * PI * x).sin());
        let xi = RealField2D::zeros(cfg.grid);
        let next = stepper.step(&dft_forward(&omega), &xi).unwrap();
        let a = 0.5 * cfg.dt * cfg.nu * 4.0 * PI * PI;
        let factor = (1.0 - a) / (1.0 + a);
        let next_real = dft_inverse(&next).unwrap();
        for ((ix, _), v) in next_real.values().indexed_iter() {
            let expect = factor * (2.0 * PI * cfg.grid.coord(ix)).sin();
            assert_abs_diff_eq!(*v, expect, epsilon = 1e-13);
        }
    }

    #[test]
    fn long_single_mode_decay_tracks_the_heat_kernel() {
        let cfg = single_mode_config(16);
        let stepper = CnStepper::new(cfg).unwrap();
        let omega = RealField2D::from_fn(cfg.grid, |x, _| (2.0 * PI * x).sin());
        let xi = RealField2D::zeros(cfg.grid);
        let mut state = dft_forward(&omega);
        let steps = 1000;
        for _ in 0..steps {
            state = stepper.step(&state, &xi).unwrap();
        }
        let amp = state.coeffs()[[1, 0]].norm() * 2.0;
        let exact = (-cfg.nu * 4.0 * PI * PI * cfg.dt * steps as f64).exp();
        assert!(
            (amp - exact).abs() < crate::tolerances::CN_DECAY,
            "amp {amp:.12} vs exact {exact:.12}"
        );
    }

    #[test]
    fn halving_dt_quarters_the_decay_error() {
        // Mode m=2 at a coarser dt lifts the discretization error well above
        // accumulated rounding so the second-order ratio is measurable.
        let grid = Grid2D::new(16).unwrap();
        let horizon = 1.0;
        let err_for = |dt: f64| {
            let mut cfg = single_mode_config(16);
            cfg.dt = dt;
            let stepper = CnStepper::new(cfg).unwrap();
            let omega = RealField2D::from_fn(grid, |x, _| (4.0 * PI * x).sin());
            let xi = RealField2D::zeros(grid);
            let mut state = dft_forward(&omega);
            let steps = (horizon / dt).round() as usize;
            for _ in 0..steps {
                state = stepper.step(&state, &xi).unwrap();
            }
            let amp = state.coeffs()[[2, 0]].norm() * 2.0;
            let exact = (-1e-3 * 16.0 * PI * PI * horizon).exp();
            (amp - exact).abs()
        };
        let ratio = err_for(1e-2) / err_for(5e-3);
        assert!(
            (ratio - 4.0).abs() < 0.5,
            "convergence ratio {ratio:.3} not ~4"
        );
    }

    #[test]
    fn viscous_only_enstrophy_is_non_increasing() {
        let grid = Grid2D::new(32).unwrap();
        let mut cfg = NsConfig::new(grid);
        cfg.forcing_amplitude = 0.0;
        cfg.beta = 0.0;
        let stepper = CnStepper::new(cfg).unwrap();
        let mut rng = SeedStream::root(12).named(STREAM_INIT).rng();
        let omega0 = sample_initial_vorticity(grid, &GrfSpec::default(), &mut rng).unwrap();
        let zero_h = RealField2D::zeros(grid);
        let mut state = dft_forward(&omega0);
        let mut prev = enstrophy(&state);
        for _ in 0..50 {
            state = stepper.step_with_h(&state, &zero_h).unwrap();
            let e = enstrophy(&state);
            assert!(e <= prev * (1.0 + 1e-14), "enstrophy rose: {e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn recorded_closures_reproduce_the_full_step() {
        let grid = Grid2D::new(32).unwrap();
        let cfg = NsConfig::new(grid);
        let stepper = CnStepper::new(cfg).unwrap();
        let root = SeedStream::root(3);
        let mut init_rng = root.named(STREAM_INIT).rng();
        let mut noise_rng = root.named(STREAM_NOISE).rng();
        let omega0 = sample_initial_vorticity(grid, &GrfSpec::default(), &mut init_rng).unwrap();

        let mut full = dft_forward(&omega0);
        let mut via_g = full.clone();
        let mut via_h = full.clone();
        for _ in 0..100 {
            let xi = sample_noise_increment(grid, cfg.dt, &mut noise_rng).unwrap();
            let (next, diag) = stepper.step_with_diagnostics(&full, &xi).unwrap();
            via_g = stepper.step_with_g(&via_g, &diag.g_truth).unwrap();
            via_h = stepper.step_with_h(&via_h, &diag.h_truth).unwrap();
            full = next;

            let to_real = |s: &SpectralField2D| dft_inverse(s).unwrap();
            let (f, g, h) = (to_real(&full), to_real(&via_g), to_real(&via_h));
            let worst_g = f
                .values()
                .iter()
                .zip(g.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let worst_h = f
                .values()
                .iter()
                .zip(h.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(worst_g < 1e-12, "G surrogate drift {worst_g:.3e}");
            assert!(worst_h < 1e-12, "H surrogate drift {worst_h:.3e}");
        }
    }

    #[test]
    fn dataset_counts_split_and_reproducibility() {
        let grid = Grid2D::new(32).unwrap();
        let mut cfg = NsConfig::new(grid);
        cfg.dt = 1e-3;
        let protocol = Protocol {
            source_n: 32,
            target_n: 16,
            sparse_n: 4,
            trajectories: 2,
            train_trajectories: 1,
            warmup_time: 0.02,
            horizon_time: 0.1,
            record_every: 10,
        };
        let root = SeedStream::root(77);
        let ds = generate_dataset(&cfg, &GrfSpec::default(), &protocol, root).unwrap();
        assert_eq!(protocol.snapshots_per_trajectory(cfg.dt), 10);
        assert_eq!(ds.snapshots.len(), 20);
        assert_eq!(ds.train_snapshots().count(), 10);
        assert_eq!(ds.test_snapshots().count(), 10);
        let first = &ds.snapshots[0];
        assert_abs_diff_eq!(first.time, 0.02, epsilon = 1e-12);
        assert_eq!(first.omega.grid().n(), 16);
        assert_eq!(first.sparse_g.n_sparse(), 4);
        // Sparse observations are subsamples of the stored closure fields.
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(
                    first.sparse_g.values()[[i, j]],
                    first.g_truth.values()[[4 * i, 4 * j]]
                );
            }
        }
        let ds2 = generate_dataset(&cfg, &GrfSpec::default(), &protocol, root).unwrap();
        assert_eq!(
            ds.snapshots[5].omega.values(),
            ds2.snapshots[5].omega.values()
        );
    }

    #[test]
    fn paper_protocol_counts() {
        let p = Protocol::paper();
        assert_eq!(p.snapshots_per_trajectory(1e-3), 1000);
        assert_eq!(p.train_trajectories * p.snapshots_per_trajectory(1e-3), 8000);
    }

    #[test]
    fn runaway_states_are_reported() {
        let grid = Grid2D::new(16).unwrap();
        let mut state = SpectralField2D::zeros(grid);
        state.coeffs_mut()[[1, 0]] = Complex64::new(f64::NAN, 0.0);
        let err = check_state(&state, 1.0, 42).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 42, .. }));
    }
}
