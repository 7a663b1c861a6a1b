//! Closure-in-the-loop simulation: the surrogate solver advanced by
//! generated closure terms, compared against a same-resolution reference
//! run that shares its stochastic forcing.
//!
//! A rollout warms up the full solver from a random initial state, then
//! branches: the reference keeps integrating the complete dynamics while
//! the closure run advances the surrogate step for the chosen
//! decomposition, drawing a fresh closure sample from the reverse SDE
//! every `sample_every` steps and propagating it by a small Gaussian
//! random walk in between. Sparse observations handed to the sampler are
//! taken from the reference trajectory at the sampling instant, so the
//! rollout is an observation-assisted closure. Sharing the forcing noise
//! between the two runs makes the recorded errors attributable to the
//! closure model rather than to differing stochastic realizations.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::analysis::error_metrics;
use crate::conditioning::{subsample_sparse, upscale, UpscaleMethod};
use crate::diffusion::{sample_closure, DiffusionConfig, Normalization, SamplerSpec};
use crate::error::{Error, Result};
use crate::field::{dft_inverse, RealField2D};
use crate::network::ScoreNetwork;
use crate::random::{sample_initial_vorticity, sample_noise_increment, GrfSpec, SeedStream, STREAM_INIT, STREAM_NOISE, STREAM_SAMPLER};
use crate::solver::{enstrophy, ClosureKind, CnStepper, NsConfig, ENSTROPHY_RUNAWAY_FACTOR};

/// Propagate the previous closure sample one step by a Gaussian random
/// walk: U ← U + β·z with z i.i.d. standard normal.
pub fn hold_update(u_prev: &RealField2D, beta: f64, rng: &mut ChaCha12Rng) -> RealField2D {
    let n = u_prev.grid().n();
    let values = Array2::from_shape_fn((n, n), |(i, j)| {
        u_prev.values()[[i, j]] + beta * rng.sample::<f64, _>(StandardNormal)
    });
    RealField2D::from_values(u_prev.grid(), values).expect("same grid")
}

/// How the closure run obtains its closure term.
pub enum ClosureSource<'a> {
    /// Ablation: the closed terms are simply dropped.
    None,
    /// Oracle: the reference run's recorded closure term, refreshed every
    /// step (reproduces the reference trajectory to rounding).
    Truth,
    /// A trained score network sampled through the reverse SDE.
    Model {
        net: &'a ScoreNetwork,
        diff: &'a DiffusionConfig,
        norm: &'a Normalization,
        method: UpscaleMethod,
        sparse_n: usize,
    },
}

impl ClosureSource<'_> {
    fn label(&self) -> &'static str {
        match self {
            ClosureSource::None => "none",
            ClosureSource::Truth => "truth",
            ClosureSource::Model { .. } => "model",
        }
    }
}

/// Rollout settings.
#[derive(Debug, Clone, Copy)]
pub struct ClosureRunConfig {
    pub kind: ClosureKind,
    /// Physical steps between reverse-SDE samples; the first step always
    /// samples.
    pub sample_every: usize,
    pub sampler: SamplerSpec,
    /// Random-walk scale of the hold update between samples.
    pub hold_beta: f64,
    /// Seconds of full-solver spin-up before the runs branch.
    pub warmup: f64,
    /// Seconds of closure-assisted simulation.
    pub horizon: f64,
    /// Steps between error records.
    pub record_every: usize,
    pub seed: u64,
}

impl ClosureRunConfig {
    pub fn validate(&self, dt: f64) -> Result<()> {
        if self.sample_every == 0 || self.record_every == 0 {
            return Err(Error::Config("sample_every and record_every must be positive".into()));
        }
        if !(self.horizon > 0.0) || self.warmup < 0.0 {
            return Err(Error::Config("rollout horizon must be positive, warmup non-negative".into()));
        }
        if self.hold_beta < 0.0 {
            return Err(Error::Config("hold update scale must be non-negative".into()));
        }
        if self.horizon / dt < 1.0 {
            return Err(Error::Config("horizon shorter than one time step".into()));
        }
        Ok(())
    }
}

/// What one rollout produced.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    /// Physical times (measured from the branch point) of the error records.
    pub times: Vec<f64>,
    /// Relative Frobenius error of the closure run's vorticity against the
    /// reference, per record.
    pub omega_error: Vec<f64>,
    /// Vorticity of the closure run at the final time.
    pub final_omega: RealField2D,
    /// Vorticity of the reference at the final time.
    pub final_omega_truth: RealField2D,
    /// Terminal relative Frobenius error.
    pub terminal_error: f64,
    /// Mean relative Frobenius error of the sampled closure terms against
    /// the recorded truth terms at the sampling instants.
    pub generated_error: Option<f64>,
    pub samples_drawn: usize,
    /// Seconds spent inside reverse-SDE sampling.
    pub sampling_seconds: f64,
    pub total_seconds: f64,
    pub closure_source: &'static str,
}

/// Run the closure-assisted surrogate against its shared-noise reference.
pub fn simulate_with_closure(
    ns_cfg: &NsConfig,
    grf: &GrfSpec,
    run: &ClosureRunConfig,
    source: ClosureSource<'_>,
) -> Result<RolloutResult> {
    ns_cfg.validate()?;
    grf.validate()?;
    run.validate(ns_cfg.dt)?;
    if let ClosureSource::Model { net, sparse_n, .. } = &source {
        if net.config().min_grid() > ns_cfg.grid.n() {
            return Err(Error::Config(format!(
                "network needs a grid of at least {}, rollout runs at {}",
                net.config().min_grid(),
                ns_cfg.grid.n()
            )));
        }
        if ns_cfg.grid.n() % sparse_n != 0 {
            return Err(Error::Config(format!(
                "sparse lattice {} must divide the rollout resolution {}",
                sparse_n,
                ns_cfg.grid.n()
            )));
        }
    }

    let started = Instant::now();
    let stepper = CnStepper::new(*ns_cfg)?;
    let stream = SeedStream::root(run.seed);
    let mut init_rng = stream.named(STREAM_INIT).rng();
    let mut noise_rng = stream.named(STREAM_NOISE).rng();
    let mut sampler_rng = stream.named(STREAM_SAMPLER).rng();
    let mut hold_rng = stream.named("hold").rng();

    let omega0 = sample_initial_vorticity(ns_cfg.grid, grf, &mut init_rng)?;
    let mut truth_hat = crate::field::dft_forward(&omega0);
    let warm_steps = (run.warmup / ns_cfg.dt).round() as usize;
    for _ in 0..warm_steps {
        let xi = sample_noise_increment(ns_cfg.grid, ns_cfg.dt, &mut noise_rng)?;
        truth_hat = stepper.step(&truth_hat, &xi)?;
    }
    let reference_enstrophy = enstrophy(&truth_hat).max(1e-12);

    let mut closure_hat = truth_hat.clone();
    let steps = (run.horizon / ns_cfg.dt).round() as usize;
    let schedule = run.sampler.schedule()?;

    let mut times = Vec::new();
    let mut omega_error = Vec::new();
    let mut closure_field: Option<RealField2D> = None;
    let mut generated_err_acc = 0.0;
    let mut samples_drawn = 0usize;
    let mut sampling_seconds = 0.0;

    for step in 0..steps {
        let xi = sample_noise_increment(ns_cfg.grid, ns_cfg.dt, &mut noise_rng)?;
        let (truth_next, diag) = stepper.step_with_diagnostics(&truth_hat, &xi)?;
        let truth_term = match run.kind {
            ClosureKind::G => &diag.g_truth,
            ClosureKind::H => &diag.h_truth,
        };

        let term: Option<RealField2D> = match &source {
            ClosureSource::None => None,
            ClosureSource::Truth => Some(truth_term.clone()),
            ClosureSource::Model { net, diff, norm, method, sparse_n } => {
                if step % run.sample_every == 0 {
                    let omega_now = dft_inverse(&closure_hat)?;
                    let obs = subsample_sparse(truth_term, *sparse_n)?;
                    let sparse_up = if net.config().with_sparse {
                        Some(upscale(&obs, ns_cfg.grid, *method)?)
                    } else {
                        None
                    };
                    let clock = Instant::now();
                    let sample = sample_closure(
                        net,
                        diff,
                        &schedule,
                        &omega_now,
                        sparse_up.as_ref(),
                        norm,
                        &mut sampler_rng,
                    )?;
                    sampling_seconds += clock.elapsed().as_secs_f64();
                    samples_drawn += 1;
                    generated_err_acc += error_metrics(truth_term, &sample)?.d_fro;
                    Some(sample)
                } else {
                    let held = closure_field
                        .as_ref()
                        .expect("the first step always samples");
                    Some(hold_update(held, run.hold_beta, &mut hold_rng))
                }
            }
        };

        closure_hat = match (&term, run.kind) {
            (Some(f), ClosureKind::G) => stepper.step_with_g(&closure_hat, f)?,
            (Some(f), ClosureKind::H) => stepper.step_with_h(&closure_hat, f)?,
            (None, ClosureKind::G) => {
                stepper.step_with_g(&closure_hat, &RealField2D::zeros(ns_cfg.grid))?
            }
            (None, ClosureKind::H) => {
                stepper.step_with_h(&closure_hat, &RealField2D::zeros(ns_cfg.grid))?
            }
        };
        closure_field = term;
        truth_hat = truth_next;

        let ens = enstrophy(&closure_hat);
        if !ens.is_finite() || ens > ENSTROPHY_RUNAWAY_FACTOR * reference_enstrophy {
            return Err(Error::Diverged {
                step,
                reason: format!(
                    "closure run enstrophy {ens:.3e} vs reference {reference_enstrophy:.3e}"
                ),
            });
        }

        if (step + 1) % run.record_every == 0 || step + 1 == steps {
            let w_c = dft_inverse(&closure_hat)?;
            let w_t = dft_inverse(&truth_hat)?;
            times.push((step + 1) as f64 * ns_cfg.dt);
            omega_error.push(error_metrics(&w_t, &w_c)?.d_fro);
        }
    }

    let final_omega = dft_inverse(&closure_hat)?;
    let final_omega_truth = dft_inverse(&truth_hat)?;
    let terminal_error = *omega_error.last().expect("at least one record");
    Ok(RolloutResult {
        times,
        omega_error,
        final_omega,
        final_omega_truth,
        terminal_error,
        generated_error: if samples_drawn > 0 {
            Some(generated_err_acc / samples_drawn as f64)
        } else {
            None
        },
        samples_drawn,
        sampling_seconds,
        total_seconds: started.elapsed().as_secs_f64(),
        closure_source: source.label(),
    })
}
