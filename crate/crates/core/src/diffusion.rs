//! Variance-exploding diffusion over closure fields: the forward
//! perturbation kernel, denoising-score-matching training, and the reverse
//! stochastic sampler.
//!
//! The forward process dU = σ^τ dW has the Gaussian transition kernel
//! U_τ | U_0 ~ N(U_0, std(τ)² I) with std(τ)² = (σ^{2τ} − 1)/(2 ln σ), so a
//! network trained to regress −ε/std(τ) from (τ, U_τ, conditions) learns
//! the score of the perturbed marginal. Sampling integrates the reverse
//! SDE with Euler–Maruyama steps over either a uniform grid of times or
//! the polynomial warping that concentrates steps near τ = 0.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioning::{upscale, UpscaleMethod};
use crate::error::{Error, Result};
use crate::field::RealField2D;
use crate::grid::Grid2D;
use crate::network::{Adam, AdamConfig, GradientTape, ScoreNetwork};
use crate::random::{SeedStream, STREAM_TRAIN};
use crate::solver::{ClosureKind, Snapshot};

/// Samples per work unit when a minibatch gradient is accumulated in
/// parallel; chunks are reduced in index order so the result does not
/// depend on thread scheduling.
const GRAD_CHUNK: usize = 8;

/// Forward-process parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    /// VE base σ; the per-time noise scale is σ^τ.
    pub sigma: f64,
    /// Largest diffusion time the process is trained over.
    pub horizon: f64,
    /// Smallest τ drawn during training, keeping 1/std(τ) finite.
    pub tau_floor: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            sigma: 25.0,
            horizon: 1.0,
            tau_floor: 1e-5,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 1.0) {
            return Err(Error::Config(format!("sigma must exceed 1, got {}", self.sigma)));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.tau_floor > 0.0 && self.tau_floor < self.horizon) {
            return Err(Error::Config(format!(
                "tau floor must lie in (0, horizon), got {}",
                self.tau_floor
            )));
        }
        Ok(())
    }

    /// Standard deviation of the transition kernel at time τ:
    /// sqrt((σ^{2τ} − 1)/(2 ln σ)). Zero at τ = 0, ≈ √τ for small τ.
    pub fn perturbation_std(&self, tau: f64) -> f64 {
        ((self.sigma.powf(2.0 * tau) - 1.0) / (2.0 * self.sigma.ln())).sqrt()
    }

    /// Draw U_τ = U_0 + std(τ)·ε with ε i.i.d. standard normal; returns
    /// both the perturbed field and ε.
    pub fn perturb(
        &self,
        u0: &RealField2D,
        tau: f64,
        rng: &mut ChaCha12Rng,
    ) -> (RealField2D, Array2<f64>) {
        let std = self.perturbation_std(tau);
        let n = u0.grid().n();
        let eps = Array2::from_shape_fn((n, n), |_| rng.sample::<f64, _>(StandardNormal));
        let values = u0.values() + &(std * &eps);
        let u_tau = RealField2D::from_values(u0.grid(), values).expect("same grid");
        (u_tau, eps)
    }
}

/// Mean-squared error between the network output and the denoising target
/// −ε/std(τ).
pub fn dsm_loss(s_out: &RealField2D, eps: &Array2<f64>, tau: f64, cfg: &DiffusionConfig) -> f64 {
    let std = cfg.perturbation_std(tau);
    let mut acc = 0.0;
    for (s, e) in s_out.values().iter().zip(eps.iter()) {
        let r = s + e / std;
        acc += r * r;
    }
    acc / s_out.values().len() as f64
}

/// Ordered reverse-sampling times τ_0 > τ_1 > … > τ_N = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    taus: Vec<f64>,
}

impl Schedule {
    /// Polynomially warped times
    /// τ_i = (τ_max^{1/ρ} + i/(N−1)·(τ_min^{1/ρ} − τ_max^{1/ρ}))^ρ for
    /// i = 0…N−1, with τ_N = 0 appended. Larger ρ concentrates steps near
    /// τ_min.
    pub fn adaptive(tau_max: f64, tau_min: f64, n_steps: usize, rho: f64) -> Result<Self> {
        Self::check_args(tau_max, tau_min, n_steps)?;
        if !(rho >= 1.0) {
            return Err(Error::Config(format!("rho must be >= 1, got {rho}")));
        }
        let a = tau_max.powf(1.0 / rho);
        let b = tau_min.powf(1.0 / rho);
        let mut taus: Vec<f64> = (0..n_steps)
            .map(|i| {
                let f = i as f64 / (n_steps - 1) as f64;
                (a + f * (b - a)).powf(rho)
            })
            .collect();
        taus[0] = tau_max;
        taus[n_steps - 1] = tau_min;
        taus.push(0.0);
        let s = Schedule { taus };
        s.validate()?;
        Ok(s)
    }

    /// Equally spaced times from τ_max down to τ_min, with τ_N = 0 appended.
    pub fn uniform(tau_max: f64, tau_min: f64, n_steps: usize) -> Result<Self> {
        Self::check_args(tau_max, tau_min, n_steps)?;
        let mut taus: Vec<f64> = (0..n_steps)
            .map(|i| {
                let f = i as f64 / (n_steps - 1) as f64;
                tau_max + f * (tau_min - tau_max)
            })
            .collect();
        taus[0] = tau_max;
        taus[n_steps - 1] = tau_min;
        taus.push(0.0);
        let s = Schedule { taus };
        s.validate()?;
        Ok(s)
    }

    fn check_args(tau_max: f64, tau_min: f64, n_steps: usize) -> Result<()> {
        if n_steps < 2 {
            return Err(Error::Config(format!(
                "schedules need at least 2 steps, got {n_steps}"
            )));
        }
        if !(tau_min > 0.0 && tau_min < tau_max) {
            return Err(Error::Config(format!(
                "need 0 < tau_min < tau_max, got {tau_min} and {tau_max}"
            )));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.taus.len() < 3 || *self.taus.last().unwrap() != 0.0 {
            return Err(Error::Config("schedule must end at 0".into()));
        }
        for w in self.taus.windows(2) {
            if !(w[1] < w[0]) || !w[0].is_finite() {
                return Err(Error::Config(format!(
                    "schedule times must strictly decrease, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    /// Number of Euler–Maruyama steps the schedule produces.
    pub fn steps(&self) -> usize {
        self.taus.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.taus[0]
    }
}

/// Which schedule family a sampler uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    Adaptive,
    Uniform,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(ScheduleKind::Adaptive),
            "uniform" => Ok(ScheduleKind::Uniform),
            other => Err(Error::Config(format!("unknown schedule kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScheduleKind::Adaptive => write!(f, "adaptive"),
            ScheduleKind::Uniform => write!(f, "uniform"),
        }
    }
}

/// A complete sampler recipe: where the reverse SDE starts, how many steps
/// it takes, and how the times are spaced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub start: f64,
    pub n_steps: usize,
    pub kind: ScheduleKind,
    pub tau_min: f64,
    pub rho: f64,
}

impl SamplerSpec {
    /// Fast sampler: 10 adaptive steps from τ = 0.1.
    pub fn fast_adaptive() -> Self {
        SamplerSpec {
            start: 0.1,
            n_steps: 10,
            kind: ScheduleKind::Adaptive,
            tau_min: 1e-3,
            rho: 7.0,
        }
    }

    /// Fast sampler with equal step sizes: 10 uniform steps from τ = 0.1.
    pub fn fast_uniform() -> Self {
        SamplerSpec {
            kind: ScheduleKind::Uniform,
            ..Self::fast_adaptive()
        }
    }

    /// Reference sampler: 1000 uniform steps from τ = 1.
    pub fn reference() -> Self {
        SamplerSpec {
            start: 1.0,
            n_steps: 1000,
            kind: ScheduleKind::Uniform,
            tau_min: 1e-3,
            rho: 7.0,
        }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        match self.kind {
            ScheduleKind::Adaptive => Schedule::adaptive(self.start, self.tau_min, self.n_steps, self.rho),
            ScheduleKind::Uniform => Schedule::uniform(self.start, self.tau_min, self.n_steps),
        }
    }
}

/// Integrate the reverse SDE
/// U_{τ−Δτ} = U_τ + σ^{2τ}·s(τ, U_τ)·Δτ + σ^τ·√Δτ·z from a Gaussian prior
/// at the schedule start down to τ = 0. `score` supplies the (possibly
/// learned, possibly analytic) score estimate.
pub fn reverse_sde_sample<F>(
    cfg: &DiffusionConfig,
    schedule: &Schedule,
    grid: Grid2D,
    mut score: F,
    rng: &mut ChaCha12Rng,
) -> Result<RealField2D>
where
    F: FnMut(f64, &RealField2D) -> Result<RealField2D>,
{
    cfg.validate()?;
    let n = grid.n();
    let prior_std = cfg.perturbation_std(schedule.start());
    let mut u = RealField2D::from_values(
        grid,
        Array2::from_shape_fn((n, n), |_| prior_std * rng.sample::<f64, _>(StandardNormal)),
    )?;

    let taus = schedule.taus();
    for i in 0..schedule.steps() {
        let tau = taus[i];
        let dtau = taus[i] - taus[i + 1];
        let s = score(tau, &u)?;
        let drift = cfg.sigma.powf(2.0 * tau) * dtau;
        let noise = cfg.sigma.powf(tau) * dtau.sqrt();
        {
            let values = u.values_mut();
            for (v, sv) in values.iter_mut().zip(s.values().iter()) {
                let z: f64 = rng.sample(StandardNormal);
                *v += drift * sv + noise * z;
            }
        }
        if !u.is_finite() {
            return Err(Error::SamplerDiverged {
                index: i,
                reason: format!("non-finite state stepping from tau = {tau:.6}"),
            });
        }
    }
    Ok(u)
}

/// Per-field affine rescalings fitted on the training split; the diffusion
/// process runs in the normalized units, and samples are mapped back
/// before any physics or metrics touch them. Sparse observations share the
/// target's constants since they observe the same field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub target_mean: f64,
    pub target_std: f64,
    pub omega_mean: f64,
    pub omega_std: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            target_mean: 0.0,
            target_std: 1.0,
            omega_mean: 0.0,
            omega_std: 1.0,
        }
    }

    fn moments<'a>(fields: impl Iterator<Item = &'a RealField2D>) -> (f64, f64) {
        let mut count = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for f in fields {
            for &v in f.values() {
                count += 1;
                let delta = v - mean;
                mean += delta / count as f64;
                m2 += delta * (v - mean);
            }
        }
        let var = if count > 1 { m2 / (count - 1) as f64 } else { 0.0 };
        (mean, var.sqrt().max(1e-300))
    }

    pub fn fit<'a>(
        targets: impl Iterator<Item = &'a RealField2D>,
        omegas: impl Iterator<Item = &'a RealField2D>,
    ) -> Self {
        let (tm, ts) = Self::moments(targets);
        let (om, os) = Self::moments(omegas);
        Normalization {
            target_mean: tm,
            target_std: ts,
            omega_mean: om,
            omega_std: os,
        }
    }

    fn apply(field: &RealField2D, mean: f64, std: f64) -> RealField2D {
        RealField2D::from_values(field.grid(), (field.values() - mean) / std).expect("same grid")
    }

    pub fn normalize_target(&self, field: &RealField2D) -> RealField2D {
        Self::apply(field, self.target_mean, self.target_std)
    }

    pub fn normalize_omega(&self, field: &RealField2D) -> RealField2D {
        Self::apply(field, self.omega_mean, self.omega_std)
    }

    pub fn denormalize_target(&self, field: &RealField2D) -> RealField2D {
        RealField2D::from_values(
            field.grid(),
            field.values() * self.target_std + self.target_mean,
        )
        .expect("same grid")
    }
}

/// One training example in normalized units.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub target: RealField2D,
    pub omega: RealField2D,
    pub sparse_upscaled: Option<RealField2D>,
}

/// Normalized training set plus the constants needed to leave normalized
/// units again.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub samples: Vec<TrainSample>,
    pub normalization: Normalization,
}

/// Assemble (and normalize) training samples from recorded snapshots for
/// one closure kind. Sparse observations are upscaled to the snapshot grid
/// here, once, rather than per epoch.
pub fn prepare_training_samples<'a>(
    snapshots: impl Iterator<Item = &'a Snapshot> + Clone,
    kind: ClosureKind,
    method: UpscaleMethod,
    with_sparse: bool,
) -> Result<PreparedData> {
    let normalization = Normalization::fit(
        snapshots.clone().map(|s| s.closure_field(kind)),
        snapshots.clone().map(|s| &s.omega),
    );
    prepare_samples_normalized(snapshots, kind, method, with_sparse, normalization)
}

/// Like [`prepare_training_samples`], but with externally supplied
/// normalization constants — used when continuing from a checkpoint or
/// evaluating held-out data, where the constants must match the ones the
/// network was trained in.
pub fn prepare_samples_normalized<'a>(
    snapshots: impl Iterator<Item = &'a Snapshot>,
    kind: ClosureKind,
    method: UpscaleMethod,
    with_sparse: bool,
    normalization: Normalization,
) -> Result<PreparedData> {
    let mut samples = Vec::new();
    for snap in snapshots {
        let grid = snap.omega.grid();
        let sparse_upscaled = if with_sparse {
            let up = upscale(snap.sparse_observation(kind), grid, method)?;
            Some(normalization.normalize_target(&up))
        } else {
            None
        };
        samples.push(TrainSample {
            target: normalization.normalize_target(snap.closure_field(kind)),
            omega: normalization.normalize_omega(&snap.omega),
            sparse_upscaled,
        });
    }
    if samples.is_empty() {
        return Err(Error::Config("no snapshots to train on".into()));
    }
    Ok(PreparedData {
        samples,
        normalization,
    })
}

/// Optimization settings for denoising score matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epoch interval at which the learning rate is multiplied by
    /// `lr_decay_factor`.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// The published optimization recipe: 1000 epochs, minibatch 80,
    /// learning rate 1e-3 halved every 200 epochs.
    pub fn paper_profile(seed: u64) -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 80,
            learning_rate: 1e-3,
            lr_decay_every: 200,
            lr_decay_factor: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.lr_decay_every == 0 {
            return Err(Error::Config("epochs, batch size, lr_decay_every must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay_factor > 0.0) {
            return Err(Error::Config("learning rate and decay factor must be positive".into()));
        }
        Ok(())
    }
}

/// What a training run produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    /// Epoch at which a non-finite loss appeared; parameters were rolled
    /// back to the end of the previous epoch.
    pub diverged_at: Option<usize>,
    pub final_learning_rate: f64,
}

fn batch_gradient(
    net: &ScoreNetwork,
    diff: &DiffusionConfig,
    samples: &[TrainSample],
    batch: &[usize],
    draw_stream: SeedStream,
) -> Result<(f64, GradientTape)> {
    let b = batch.len() as f64;
    let parts: Vec<(f64, GradientTape)> = batch
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(chunk_idx, chunk)| -> Result<(f64, GradientTape)> {
            let mut tape = net.gradient_tape();
            let mut loss = 0.0;
            for (offset, &si) in chunk.iter().enumerate() {
                let slot = (chunk_idx * GRAD_CHUNK + offset) as u64;
                let mut rng = draw_stream.indexed(slot).rng();
                let sample = &samples[si];
                let tau = rng.random_range(diff.tau_floor..diff.horizon);
                let std = diff.perturbation_std(tau);
                let (u_tau, eps) = diff.perturb(&sample.target, tau, &mut rng);
                let (out, trace) = net.forward_traced(
                    tau,
                    &u_tau,
                    &sample.omega,
                    sample.sparse_upscaled.as_ref(),
                )?;
                let n2 = (u_tau.grid().point_count()) as f64;
                let mut residual = eps;
                for (r, o) in residual.iter_mut().zip(out.values().iter()) {
                    *r = o + *r / std;
                }
                loss += residual.iter().map(|r| r * r).sum::<f64>() / (n2 * b);
                let seed = residual.mapv(|r| 2.0 * r / (n2 * b));
                net.backward(&trace, &seed, &mut tape)?;
            }
            Ok((loss, tape))
        })
        .collect::<Result<_>>()?;

    let mut total = net.gradient_tape();
    let mut loss = 0.0;
    for (l, tape) in parts {
        loss += l;
        total.axpy(1.0, &tape);
    }
    Ok((loss, total))
}

/// Denoising-score-matching training (per epoch: shuffle, minibatch,
/// Adam). Each sample draws its own τ ~ U(τ_floor, horizon) and noise from
/// a stream keyed by (epoch, step, slot), so results are independent of
/// thread count. A non-finite loss rolls parameters back to the last
/// completed epoch and stops.
pub fn train_score_network(
    net: &mut ScoreNetwork,
    diff: &DiffusionConfig,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    diff.validate()?;
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    for s in samples {
        if s.sparse_upscaled.is_some() != net.config().with_sparse {
            return Err(Error::Config(
                "sparse conditioning of the samples does not match the network".into(),
            ));
        }
    }

    let stream = SeedStream::root(cfg.seed).named(STREAM_TRAIN);
    let mut opt = Adam::new(net.params(), AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut last_good = net.params().clone();
    let mut diverged_at = None;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate
            * cfg
                .lr_decay_factor
                .powi((epoch / cfg.lr_decay_every) as i32);
        opt.set_learning_rate(lr);

        let epoch_stream = stream.indexed(epoch as u64);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut epoch_stream.named("shuffle").rng());

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let draw_stream = epoch_stream.named("draw").indexed(step as u64);
            let (loss, grads) = batch_gradient(net, diff, samples, batch, draw_stream)?;
            if !loss.is_finite() || !grads.is_finite() {
                net.set_params(last_good)?;
                diverged_at = Some(epoch);
                break 'epochs;
            }
            opt.step(net.params_mut(), &grads);
            epoch_loss += loss;
            batches += 1;
        }
        epoch_losses.push(epoch_loss / batches as f64);
        last_good = net.params().clone();
    }

    Ok(TrainReport {
        epoch_losses,
        diverged_at,
        final_learning_rate: opt.learning_rate(),
    })
}

/// Deterministic DSM loss over a fixed set of (τ, ε) draws — one per
/// sample, keyed by `seed`. Because the draws are identical across calls,
/// two evaluations of different parameter states are directly comparable;
/// this is the held-out metric training progress is judged by.
pub fn evaluate_dsm_loss(
    net: &ScoreNetwork,
    diff: &DiffusionConfig,
    samples: &[TrainSample],
    seed: u64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let stream = SeedStream::root(seed).named("eval");
    let mut total = 0.0;
    for (i, sample) in samples.iter().enumerate() {
        let mut rng = stream.indexed(i as u64).rng();
        let tau = rng.random_range(diff.tau_floor..diff.horizon);
        let (u_tau, eps) = diff.perturb(&sample.target, tau, &mut rng);
        let out = net.forward(tau, &u_tau, &sample.omega, sample.sparse_upscaled.as_ref())?;
        total += dsm_loss(&out, &eps, tau, diff);
    }
    Ok(total / samples.len() as f64)
}

/// Draw one closure-field sample from a trained network by integrating the
/// reverse SDE conditioned on `omega` (and optionally an upscaled sparse
/// observation), in normalized units; the returned field is mapped back to
/// physical units.
pub fn sample_closure(
    net: &ScoreNetwork,
    diff: &DiffusionConfig,
    schedule: &Schedule,
    omega: &RealField2D,
    sparse_upscaled: Option<&RealField2D>,
    norm: &Normalization,
    rng: &mut ChaCha12Rng,
) -> Result<RealField2D> {
    let omega_n = norm.normalize_omega(omega);
    let sparse_n = sparse_upscaled.map(|s| norm.normalize_target(s));
    let sample = reverse_sde_sample(diff, schedule, omega.grid(), |tau, u| {
        net.forward(tau, u, &omega_n, sparse_n.as_ref())
    }, rng)?;
    Ok(norm.denormalize_target(&sample))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ScoreNetConfig;
    use approx::assert_abs_diff_eq;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn cfg() -> DiffusionConfig {
        DiffusionConfig::default()
    }

    #[test]
    fn perturbation_std_matches_closed_form_anchors() {
        let c = cfg();
        assert_eq!(c.perturbation_std(0.0), 0.0);
        // τ → 0 limit: std ≈ √τ.
        let tau = 1e-9;
        assert_abs_diff_eq!(c.perturbation_std(tau), tau.sqrt(), epsilon = 1e-7 * tau.sqrt());
        // σ = 25, τ = 1 → sqrt(624 / (2 ln 25)).
        assert_abs_diff_eq!(c.perturbation_std(1.0), 9.8452, epsilon = 1e-4);
        // Monotone in τ.
        let mut prev = 0.0;
        for i in 1..=100 {
            let s = c.perturbation_std(i as f64 / 100.0);
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn perturb_at_zero_time_is_identity_and_variance_matches() {
        let grid = Grid2D::new(8).unwrap();
        let u0 = RealField2D::from_fn(grid, |x, y| (2.0 * std::f64::consts::PI * (x + y)).sin());
        let c = cfg();
        let mut rng = SeedStream::root(1).named("perturb").rng();
        let (u, _) = c.perturb(&u0, 0.0, &mut rng);
        assert_eq!(u.values(), u0.values());

        let tau = 0.5;
        let expect = c.perturbation_std(tau).powi(2);
        let mut acc = 0.0;
        let mut count = 0usize;
        for _ in 0..160 {
            let (u, _) = c.perturb(&u0, tau, &mut rng);
            for (v, v0) in u.values().iter().zip(u0.values().iter()) {
                acc += (v - v0).powi(2);
                count += 1;
            }
        }
        let var = acc / count as f64;
        assert!(
            (var - expect).abs() < 0.03 * expect,
            "empirical variance {var}, kernel variance {expect}"
        );
    }

    #[test]
    fn perturb_is_reproducible() {
        let grid = Grid2D::new(8).unwrap();
        let u0 = RealField2D::zeros(grid);
        let c = cfg();
        let (a, ea) = c.perturb(&u0, 0.3, &mut SeedStream::root(9).rng());
        let (b, eb) = c.perturb(&u0, 0.3, &mut SeedStream::root(9).rng());
        assert_eq!(a.values(), b.values());
        assert_eq!(ea, eb);
    }

    #[test]
    fn dsm_loss_examples() {
        let grid = Grid2D::new(8).unwrap();
        let c = cfg();
        let tau = 0.4;
        let std = c.perturbation_std(tau);
        let mut rng = SeedStream::root(3).rng();
        let eps = Array2::from_shape_fn((8, 8), |_| rng.sample::<f64, _>(StandardNormal));

        let target = RealField2D::from_values(grid, eps.mapv(|e| -e / std)).unwrap();
        assert_abs_diff_eq!(dsm_loss(&target, &eps, tau, &c), 0.0, epsilon = 1e-30);

        // Zero output: loss = mean(ε²)/std² → 1/std² in expectation.
        let mut acc = 0.0;
        let draws = 400;
        for _ in 0..draws {
            let eps = Array2::from_shape_fn((8, 8), |_| rng.sample::<f64, _>(StandardNormal));
            acc += dsm_loss(&RealField2D::zeros(grid), &eps, tau, &c);
        }
        let mean = acc / draws as f64;
        let expect = 1.0 / (std * std);
        assert!(
            (mean - expect).abs() < 0.05 * expect,
            "mean {mean}, expected {expect}"
        );
    }

    #[test]
    fn schedule_anchors_and_validation() {
        let s = Schedule::adaptive(0.1, 1e-3, 10, 7.0).unwrap();
        assert_eq!(s.taus()[0], 0.1);
        assert_eq!(s.taus()[9], 1e-3);
        assert_eq!(*s.taus().last().unwrap(), 0.0);
        assert_eq!(s.steps(), 10);
        assert_abs_diff_eq!(s.taus()[5], 1.13e-2, epsilon = 1e-4);

        let u = Schedule::uniform(0.1, 1e-3, 10).unwrap();
        let d01 = u.taus()[0] - u.taus()[1];
        for w in u.taus()[..10].windows(2) {
            assert_abs_diff_eq!(w[0] - w[1], d01, epsilon = 1e-15);
        }

        assert!(Schedule::adaptive(0.1, 1e-3, 1, 7.0).is_err());
        assert!(Schedule::uniform(1e-3, 0.1, 10).is_err());

        // The adaptive schedule front-loads large times: its midpoint time
        // sits far below the uniform midpoint.
        assert!(s.taus()[5] < 0.3 * u.taus()[5]);
    }

    /// Reverse-SDE correctness against the conditional-Gaussian oracle:
    /// for data U0 ~ N(0, s²I) the marginal at τ has variance
    /// s² + std(τ)², so the exact score is −u/(s²+std(τ)²). Integrating
    /// the reverse SDE with that score from the prior must reproduce
    /// N(0, s²).
    #[test]
    fn analytic_score_sampler_recovers_target_gaussian() {
        let c = cfg();
        let data_std = 1.3_f64;
        let schedule = SamplerSpec::reference().schedule().unwrap();
        let grid = Grid2D::new(100).unwrap();
        let mut rng = SeedStream::root(31).named("sampler").rng();
        let out = reverse_sde_sample(&c, &schedule, grid, |tau, u| {
            let v = data_std * data_std + c.perturbation_std(tau).powi(2);
            Ok(RealField2D::from_values(grid, u.values().mapv(|x| -x / v)).unwrap())
        }, &mut rng)
        .unwrap();

        let vals: Vec<f64> = out.values().iter().copied().collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05 * data_std, "mean {mean}");
        assert!(
            (var - data_std * data_std).abs() < 0.10 * data_std * data_std,
            "variance {var} vs target {}",
            data_std * data_std
        );

        // Wasserstein-1 distance to the target marginal via matched
        // quantiles.
        let mut sorted = vals;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let normal = Normal::new(0.0, data_std).unwrap();
        let w1: f64 = sorted
            .iter()
            .enumerate()
            .map(|(i, v)| (v - normal.inverse_cdf((i as f64 + 0.5) / n)).abs())
            .sum::<f64>()
            / n;
        assert!(w1 < 0.05 * data_std, "W1 distance {w1}");
    }

    #[test]
    fn sampler_reports_divergence_with_step_index() {
        let c = cfg();
        let schedule = SamplerSpec::fast_uniform().schedule().unwrap();
        let grid = Grid2D::new(8).unwrap();
        let mut rng = SeedStream::root(4).rng();
        let err = reverse_sde_sample(&c, &schedule, grid, |_, u| {
            Ok(RealField2D::from_values(grid, u.values().mapv(|_| f64::NAN)).unwrap())
        }, &mut rng)
        .unwrap_err();
        match err {
            Error::SamplerDiverged { index, .. } => assert_eq!(index, 0),
            other => panic!("unexpected error {other}"),
        }
    }

    /// Denoising and explicit score matching differ by a θ-independent
    /// constant on the Gaussian toy; with shared draws the gap's spread
    /// across parameter perturbations is Monte Carlo noise only.
    #[test]
    fn dsm_and_esm_differ_by_a_constant() {
        let c = cfg();
        let grid = Grid2D::new(8).unwrap();
        let data_std = 1.0_f64;
        let draws: Vec<(f64, RealField2D, Array2<f64>)> = {
            let mut rng = SeedStream::root(17).named("draws").rng();
            (0..200)
                .map(|_| {
                    let u0 = RealField2D::from_values(
                        grid,
                        Array2::from_shape_fn((8, 8), |_| {
                            data_std * rng.sample::<f64, _>(StandardNormal)
                        }),
                    )
                    .unwrap();
                    let tau = rng.random_range(0.1..1.0);
                    let (u_tau, eps) = c.perturb(&u0, tau, &mut rng);
                    (tau, u_tau, eps)
                })
                .collect()
        };

        let mut cfg_net = ScoreNetConfig::tiny(5);
        cfg_net.with_sparse = false;
        let base = ScoreNetwork::new(cfg_net).unwrap();
        let omega = RealField2D::zeros(grid);

        let mut gaps = Vec::new();
        for k in 0..20 {
            let mut net = ScoreNetwork::new(cfg_net).unwrap();
            let mut delta = net.params().zeros_like();
            let mut rng = SeedStream::root(100 + k).rng();
            for (_, slice) in delta.flat_mut() {
                for v in slice {
                    *v = 0.05 * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let mut p = base.params().clone();
            p.axpy(1.0, &delta);
            net.set_params(p).unwrap();

            let mut dsm = 0.0;
            let mut esm = 0.0;
            for (tau, u_tau, eps) in &draws {
                let out = net.forward(*tau, u_tau, &omega, None).unwrap();
                dsm += dsm_loss(&out, eps, *tau, &c);
                let v = data_std * data_std + c.perturbation_std(*tau).powi(2);
                let mut acc = 0.0;
                for (o, u) in out.values().iter().zip(u_tau.values().iter()) {
                    let r = o + u / v;
                    acc += r * r;
                }
                esm += acc / 64.0;
            }
            gaps.push((dsm - esm) / draws.len() as f64);
        }
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let std = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (gaps.len() - 1) as f64)
            .sqrt();
        assert!(
            std < 0.05 * mean.abs(),
            "gap spread {std} vs mean {mean}"
        );
    }

    fn toy_samples(grid: Grid2D, count: usize, data_std: f64, seed: u64) -> Vec<TrainSample> {
        let mut rng = SeedStream::root(seed).named("toy").rng();
        let n = grid.n();
        (0..count)
            .map(|_| TrainSample {
                target: RealField2D::from_values(
                    grid,
                    Array2::from_shape_fn((n, n), |_| {
                        data_std * rng.sample::<f64, _>(StandardNormal)
                    }),
                )
                .unwrap(),
                omega: RealField2D::zeros(grid),
                sparse_upscaled: None,
            })
            .collect()
    }

    #[test]
    fn training_reduces_held_out_loss_and_is_deterministic() {
        let grid = Grid2D::new(8).unwrap();
        let samples = toy_samples(grid, 48, 1.0, 77);
        let held_out = toy_samples(grid, 64, 1.0, 78);
        let mut cfg_net = ScoreNetConfig::tiny(5);
        cfg_net.with_sparse = false;
        // A mild τ floor keeps this smoke test's gradients tame; the full
        // recipe's 1e-5 floor is exercised by the toy-oracle training run
        // in the acceptance suite.
        let diff = DiffusionConfig {
            tau_floor: 0.05,
            ..cfg()
        };
        let t_cfg = TrainConfig {
            epochs: 25,
            batch_size: 16,
            learning_rate: 1e-3,
            lr_decay_every: 200,
            lr_decay_factor: 0.5,
            seed: 6,
        };

        let mut net = ScoreNetwork::new(cfg_net).unwrap();
        let before = evaluate_dsm_loss(&net, &diff, &held_out, 99).unwrap();
        let report = train_score_network(&mut net, &diff, &samples, &t_cfg).unwrap();
        assert!(report.diverged_at.is_none());
        assert_eq!(report.epoch_losses.len(), t_cfg.epochs);
        let after = evaluate_dsm_loss(&net, &diff, &held_out, 99).unwrap();
        assert!(
            after < before,
            "held-out loss did not decrease: before {before}, after {after}"
        );

        let mut net2 = ScoreNetwork::new(cfg_net).unwrap();
        let report2 = train_score_network(&mut net2, &diff, &samples, &t_cfg).unwrap();
        assert_eq!(report.epoch_losses, report2.epoch_losses);
        let a = net.params().flat();
        let b = net2.params().flat();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.2, y.2);
        }
    }

    #[test]
    fn learning_rate_decays_on_schedule() {
        let grid = Grid2D::new(8).unwrap();
        let samples = toy_samples(grid, 4, 1.0, 7);
        let mut cfg_net = ScoreNetConfig::tiny(5);
        cfg_net.with_sparse = false;
        let mut net = ScoreNetwork::new(cfg_net).unwrap();
        let t_cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            learning_rate: 1e-3,
            lr_decay_every: 2,
            lr_decay_factor: 0.5,
            seed: 6,
        };
        let report = train_score_network(&mut net, &cfg(), &samples, &t_cfg).unwrap();
        // Epoch 4 runs with lr·0.5² since epochs 0–1 use the base rate.
        assert_abs_diff_eq!(report.final_learning_rate, 2.5e-4, epsilon = 1e-18);
    }
}
