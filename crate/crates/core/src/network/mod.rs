//! Conditional score network: parallel Fourier-operator pipelines with
//! hand-rolled exact reverse-mode gradients.
//!
//! The network estimates the score of a noised closure field U_τ given the
//! resolved vorticity ω and (optionally) an upscaled sparse observation of
//! the closure term. Each conditioning field runs through its own pipeline
//! of spectral layers
//!
//!   Q_{l+1} = GELU(L·Q_l + b + Re IFFT(R ⊙ mask_K FFT(Q_l))),
//!
//! where R are complex weights on the (2K−1)² lowest modes per axis; the
//! diffusion time τ enters pipeline 0 as a per-channel bias produced from
//! fixed sin/cos random features through a small MLP; pipeline outputs are
//! fused by 1×1 convolutions. Because spectral weights are indexed by
//! signed mode rather than grid index, one parameter set evaluates on any
//! grid with n ≥ 2K.
//!
//! Gradients are computed by a hand-written reverse sweep over the recorded
//! forward trace; the adjoint of the forward transform is the inverse
//! transform up to the 1/n² normalization, so both passes share the same
//! FFT kernels. `backward` is exact to rounding — see the finite-difference
//! tests.

mod adam;
mod params;

pub use adam::{Adam, AdamConfig};
pub use params::{
    init_params, EmbedParams, FourierLayerParams, GradientTape, HeadParams, PipelineParams,
    ScoreParams,
};

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{fft2_inplace, RealField2D};
use crate::random::SeedStream;

/// Architecture hyperparameters. `with_sparse` selects three conditioning
/// pipelines (U_τ, ω, upscaled sparse observation) versus two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreNetConfig {
    /// Retained modes per axis direction (K); the mask spans 2K−1 signed
    /// modes per axis.
    pub modes: usize,
    /// Channels per pipeline.
    pub width: usize,
    /// Number of random time-feature frequencies (embedding dim is twice
    /// this).
    pub embed_count: usize,
    /// Hidden widths of the two fusion-head stages.
    pub head_widths: (usize, usize),
    pub fourier_layers: usize,
    pub with_sparse: bool,
    /// Std of the frozen random frequencies γ.
    pub gamma_std: f64,
    pub init_seed: u64,
}

impl ScoreNetConfig {
    /// The frozen full-size profile: K = 16, four spectral layers per
    /// pipeline, three pipelines, and widths solved so the parameter count
    /// is exactly 697,237.
    pub fn paper_profile(init_seed: u64) -> Self {
        ScoreNetConfig {
            modes: 16,
            width: 5,
            embed_count: 144,
            head_widths: (165, 197),
            fourier_layers: 4,
            with_sparse: true,
            gamma_std: 16.0,
            init_seed,
        }
    }

    /// Workstation-scale profile used by the test suite.
    pub fn desk(init_seed: u64) -> Self {
        ScoreNetConfig {
            modes: 8,
            width: 8,
            embed_count: 16,
            head_widths: (48, 48),
            fourier_layers: 4,
            with_sparse: true,
            gamma_std: 16.0,
            init_seed,
        }
    }

    /// Minimal profile for gradient checks: K = 2, width 4.
    pub fn tiny(init_seed: u64) -> Self {
        ScoreNetConfig {
            modes: 2,
            width: 4,
            embed_count: 4,
            head_widths: (6, 5),
            fourier_layers: 4,
            with_sparse: true,
            gamma_std: 16.0,
            init_seed,
        }
    }

    pub fn pipeline_count(&self) -> usize {
        if self.with_sparse {
            3
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes == 0
            || self.width == 0
            || self.embed_count == 0
            || self.fourier_layers == 0
            || self.head_widths.0 == 0
            || self.head_widths.1 == 0
        {
            return Err(Error::Config("score network dimensions must be positive".into()));
        }
        if !(self.gamma_std > 0.0) {
            return Err(Error::Config("gamma_std must be positive".into()));
        }
        Ok(())
    }

    /// Smallest grid this architecture evaluates on.
    pub fn min_grid(&self) -> usize {
        2 * self.modes
    }
}

/// Retained spectral indices for a given grid: per axis the signed modes
/// −(K−1)…K−1, listed as grid indices [0…K−1, n−K+1…n−1].
struct SpectralMask {
    axis: Vec<usize>,
    side: usize,
}

impl SpectralMask {
    fn new(n: usize, modes: usize) -> Result<Self> {
        if n < 2 * modes {
            return Err(Error::Shape(format!(
                "grid size {n} too small for {modes} retained modes (need at least {})",
                2 * modes
            )));
        }
        let axis: Vec<usize> = (0..modes).chain(n - modes + 1..n).collect();
        Ok(SpectralMask {
            side: axis.len(),
            axis,
        })
    }
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
pub(crate) const GELU_A: f64 = 0.044_715;

/// tanh-form GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Random sin/cos time features r(τ) = [sin(2πγτ); cos(2πγτ)].
pub fn time_features(tau: f64, gamma: &Array1<f64>) -> Array1<f64> {
    let m = gamma.len();
    let mut r = Array1::zeros(2 * m);
    for (i, g) in gamma.iter().enumerate() {
        let phase = 2.0 * std::f64::consts::PI * g * tau;
        r[i] = phase.sin();
        r[m + i] = phase.cos();
    }
    r
}

fn fft2_unnorm(x: ArrayView2<f64>) -> Array2<Complex64> {
    let mut buf = x.mapv(|v| Complex64::new(v, 0.0));
    fft2_inplace(&mut buf, FftDirection::Forward);
    buf
}

fn conv1x1(w: &Array2<f64>, b: &Array1<f64>, x: &ArrayView3<f64>) -> Array3<f64> {
    let (cout, cin) = (w.nrows(), w.ncols());
    let n = x.shape()[1];
    let mut out = Array3::zeros((cout, n, n));
    for co in 0..cout {
        let mut o = out.index_axis_mut(Axis(0), co);
        o.fill(b[co]);
        for ci in 0..cin {
            o.scaled_add(w[[co, ci]], &x.index_axis(Axis(0), ci));
        }
    }
    out
}

struct LayerTrace {
    x_in: Array3<f64>,
    x_mask: Array3<Complex64>,
    preact: Array3<f64>,
}

struct PipelineTrace {
    lift_in: Array3<f64>,
    layers: Vec<LayerTrace>,
}

struct EmbedTrace {
    r: Array1<f64>,
    h1: Array1<f64>,
}

struct HeadTrace {
    cat: Array3<f64>,
    h1: Array3<f64>,
    h2: Array3<f64>,
}

/// Everything the reverse sweep needs from one forward evaluation.
pub struct ForwardTrace {
    n: usize,
    embed: EmbedTrace,
    pipelines: Vec<PipelineTrace>,
    head: HeadTrace,
}

fn fourier_layer_traced(
    lp: &FourierLayerParams,
    x: Array3<f64>,
    mask: &SpectralMask,
) -> (Array3<f64>, LayerTrace) {
    let w = lp.b.len();
    let n = x.shape()[1];
    let s = mask.side;
    let norm = 1.0 / (n * n) as f64;

    let mut x_mask = Array3::<Complex64>::zeros((w, s, s));
    for c in 0..w {
        let spec = fft2_unnorm(x.index_axis(Axis(0), c));
        for (a, &ia) in mask.axis.iter().enumerate() {
            for (b, &ib) in mask.axis.iter().enumerate() {
                x_mask[[c, a, b]] = spec[[ia, ib]] * norm;
            }
        }
    }

    let mut preact = conv1x1(&lp.l, &lp.b, &x.view());
    let mut ybuf = Array2::<Complex64>::zeros((n, n));
    for co in 0..w {
        ybuf.fill(Complex64::new(0.0, 0.0));
        for (a, &ia) in mask.axis.iter().enumerate() {
            for (b, &ib) in mask.axis.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for ci in 0..w {
                    let r = Complex64::new(lp.r_re[[co, ci, a, b]], lp.r_im[[co, ci, a, b]]);
                    acc += r * x_mask[[ci, a, b]];
                }
                ybuf[[ia, ib]] = acc;
            }
        }
        fft2_inplace(&mut ybuf, FftDirection::Inverse);
        let mut pre = preact.index_axis_mut(Axis(0), co);
        for ((i, j), v) in ybuf.indexed_iter() {
            pre[[i, j]] += v.re;
        }
    }

    let out = preact.mapv(gelu);
    (
        out,
        LayerTrace {
            x_in: x,
            x_mask,
            preact,
        },
    )
}

fn fourier_layer_backward(
    lp: &FourierLayerParams,
    lt: &LayerTrace,
    grad_out: &Array3<f64>,
    mask: &SpectralMask,
    tape: &mut FourierLayerParams,
) -> Array3<f64> {
    let w = lp.b.len();
    let n = lt.x_in.shape()[1];
    let s = mask.side;
    let norm = 1.0 / (n * n) as f64;

    let mut s_bar = grad_out.clone();
    for (sb, pre) in s_bar.iter_mut().zip(lt.preact.iter()) {
        *sb *= gelu_prime(*pre);
    }

    // Pointwise path.
    let mut grad_in = Array3::<f64>::zeros((w, n, n));
    for co in 0..w {
        let sb = s_bar.index_axis(Axis(0), co);
        tape.b[co] += sb.sum();
        for ci in 0..w {
            tape.l[[co, ci]] += (&sb * &lt.x_in.index_axis(Axis(0), ci)).sum();
            grad_in
                .index_axis_mut(Axis(0), ci)
                .scaled_add(lp.l[[co, ci]], &sb);
        }
    }

    // Spectral path: Ȳ is the unnormalized forward transform of the
    // preactivation cotangent, gathered at the mask.
    let mut y_bar = Array3::<Complex64>::zeros((w, s, s));
    for co in 0..w {
        let spec = fft2_unnorm(s_bar.index_axis(Axis(0), co));
        for (a, &ia) in mask.axis.iter().enumerate() {
            for (b, &ib) in mask.axis.iter().enumerate() {
                y_bar[[co, a, b]] = spec[[ia, ib]];
            }
        }
    }
    for co in 0..w {
        for ci in 0..w {
            for a in 0..s {
                for b in 0..s {
                    let prod = y_bar[[co, a, b]] * lt.x_mask[[ci, a, b]].conj();
                    tape.r_re[[co, ci, a, b]] += prod.re;
                    tape.r_im[[co, ci, a, b]] += prod.im;
                }
            }
        }
    }
    let mut xbuf = Array2::<Complex64>::zeros((n, n));
    for ci in 0..w {
        xbuf.fill(Complex64::new(0.0, 0.0));
        for (a, &ia) in mask.axis.iter().enumerate() {
            for (b, &ib) in mask.axis.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for co in 0..w {
                    let r = Complex64::new(lp.r_re[[co, ci, a, b]], lp.r_im[[co, ci, a, b]]);
                    acc += r.conj() * y_bar[[co, a, b]];
                }
                xbuf[[ia, ib]] = acc;
            }
        }
        fft2_inplace(&mut xbuf, FftDirection::Inverse);
        let mut gi = grad_in.index_axis_mut(Axis(0), ci);
        for ((i, j), v) in xbuf.indexed_iter() {
            gi[[i, j]] += v.re * norm;
        }
    }
    grad_in
}

/// One spectral layer applied to a multi-channel activation — the building
/// block the pipelines iterate. Exposed for direct inspection and tests.
pub fn fourier_layer_forward(
    lp: &FourierLayerParams,
    x: &Array3<f64>,
    modes: usize,
) -> Result<Array3<f64>> {
    let n = x.shape()[1];
    let mask = SpectralMask::new(n, modes)?;
    if x.shape()[0] != lp.b.len() || x.shape()[2] != n {
        return Err(Error::Shape(format!(
            "expected [{}, n, n] activation, got {:?}",
            lp.b.len(),
            x.shape()
        )));
    }
    Ok(fourier_layer_traced(lp, x.clone(), &mask).0)
}

/// The conditional score network.
#[derive(Debug, Clone)]
pub struct ScoreNetwork {
    cfg: ScoreNetConfig,
    gamma: Array1<f64>,
    params: ScoreParams,
}

impl ScoreNetwork {
    pub fn new(cfg: ScoreNetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeedStream::root(cfg.init_seed).named("gamma").rng();
        let gamma = Array1::from_shape_fn(cfg.embed_count, |_| {
            let z: f64 = rng.sample(StandardNormal);
            cfg.gamma_std * z
        });
        let params = init_params(
            cfg.pipeline_count(),
            cfg.fourier_layers,
            cfg.width,
            cfg.modes,
            cfg.embed_count,
            cfg.head_widths,
            cfg.init_seed,
        );
        Ok(ScoreNetwork { cfg, gamma, params })
    }

    pub fn config(&self) -> &ScoreNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ScoreParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ScoreParams {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ScoreParams) -> Result<()> {
        let expect: Vec<_> = self.params.flat().iter().map(|(n, s, _)| (n.clone(), s.clone())).collect();
        let got: Vec<_> = params.flat().iter().map(|(n, s, _)| (n.clone(), s.clone())).collect();
        if expect != got {
            return Err(Error::Shape("parameter layout does not match architecture".into()));
        }
        self.params = params;
        Ok(())
    }

    /// Trainable parameter count (the frozen γ frequencies are excluded).
    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn gradient_tape(&self) -> GradientTape {
        self.params.zeros_like()
    }

    fn validate_inputs(
        &self,
        tau: f64,
        u_tau: &RealField2D,
        omega: &RealField2D,
        sparse_upscaled: Option<&RealField2D>,
    ) -> Result<()> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::Config(format!("diffusion time must be >= 0, got {tau}")));
        }
        u_tau.grid().same_as(&omega.grid())?;
        match (self.cfg.with_sparse, sparse_upscaled) {
            (true, Some(sp)) => u_tau.grid().same_as(&sp.grid())?,
            (true, None) => {
                return Err(Error::Config(
                    "this network conditions on sparse observations; none supplied".into(),
                ))
            }
            (false, Some(_)) => {
                return Err(Error::Config(
                    "this network has no sparse pipeline; drop the sparse input".into(),
                ))
            }
            (false, None) => {}
        }
        Ok(())
    }

    fn lift_input(field: &Array2<f64>) -> Array3<f64> {
        let n = field.nrows();
        let mut x = Array3::zeros((3, n, n));
        for i in 0..n {
            for j in 0..n {
                x[[0, i, j]] = field[[i, j]];
                x[[1, i, j]] = i as f64 / n as f64;
                x[[2, i, j]] = j as f64 / n as f64;
            }
        }
        x
    }

    fn run_pipeline(
        &self,
        pp: &PipelineParams,
        field: &Array2<f64>,
        emb: Option<&Array1<f64>>,
        mask: &SpectralMask,
    ) -> (Array3<f64>, PipelineTrace) {
        let lift_in = Self::lift_input(field);
        let mut z = conv1x1(&pp.lift_w, &pp.lift_b, &lift_in.view());
        if let Some(e) = emb {
            for (c, ec) in e.iter().enumerate() {
                z.index_axis_mut(Axis(0), c).mapv_inplace(|v| v + ec);
            }
        }
        let mut layers = Vec::with_capacity(pp.layers.len());
        for lp in &pp.layers {
            let (next, lt) = fourier_layer_traced(lp, z, mask);
            layers.push(lt);
            z = next;
        }
        (z, PipelineTrace { lift_in, layers })
    }

    /// Score estimate s_θ(τ, U_τ, ω[, sparse]); same grid as U_τ.
    pub fn forward(
        &self,
        tau: f64,
        u_tau: &RealField2D,
        omega: &RealField2D,
        sparse_upscaled: Option<&RealField2D>,
    ) -> Result<RealField2D> {
        self.forward_traced(tau, u_tau, omega, sparse_upscaled)
            .map(|(out, _)| out)
    }

    /// Forward pass that records the trace [`ScoreNetwork::backward`] needs.
    pub fn forward_traced(
        &self,
        tau: f64,
        u_tau: &RealField2D,
        omega: &RealField2D,
        sparse_upscaled: Option<&RealField2D>,
    ) -> Result<(RealField2D, ForwardTrace)> {
        self.validate_inputs(tau, u_tau, omega, sparse_upscaled)?;
        let grid = u_tau.grid();
        let n = grid.n();
        let mask = SpectralMask::new(n, self.cfg.modes)?;
        let w = self.cfg.width;

        // Time embedding: sin/cos features → GELU → linear → GELU → dense.
        let r = time_features(tau, &self.gamma);
        let e0 = r.mapv(gelu);
        let h1 = self.params.embed.w1.dot(&e0) + &self.params.embed.b1;
        let e1 = h1.mapv(gelu);
        let e2 = self.params.embed.w2.dot(&e1) + &self.params.embed.b2;

        let inputs: Vec<&Array2<f64>> = match sparse_upscaled {
            Some(sp) => vec![u_tau.values(), omega.values(), sp.values()],
            None => vec![u_tau.values(), omega.values()],
        };
        let mut cat = Array3::zeros((inputs.len() * w, n, n));
        let mut pipes = Vec::with_capacity(inputs.len());
        for (p, field) in inputs.iter().enumerate() {
            let emb = if p == 0 { Some(&e2) } else { None };
            let (out, trace) = self.run_pipeline(&self.params.pipelines[p], field, emb, &mask);
            cat.slice_mut(ndarray::s![p * w..(p + 1) * w, .., ..])
                .assign(&out);
            pipes.push(trace);
        }

        let head = &self.params.head;
        let h1_head = conv1x1(&head.w1, &head.b1, &cat.view());
        let a1 = h1_head.mapv(gelu);
        let h2_head = conv1x1(&head.w2, &head.b2, &a1.view());
        let a2 = h2_head.mapv(gelu);
        let out3 = conv1x1(&head.w3, &head.b3, &a2.view());
        let out = RealField2D::from_values(grid, out3.index_axis(Axis(0), 0).to_owned())?;

        Ok((
            out,
            ForwardTrace {
                n,
                embed: EmbedTrace { r, h1 },
                pipelines: pipes,
                head: HeadTrace {
                    cat,
                    h1: h1_head,
                    h2: h2_head,
                },
            },
        ))
    }

    /// Accumulate dL/dθ into `tape`, where `seed` is dL/d(output field) for
    /// the recorded forward pass. A zero seed accumulates nothing.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        seed: &Array2<f64>,
        tape: &mut GradientTape,
    ) -> Result<()> {
        let n = trace.n;
        if seed.dim() != (n, n) {
            return Err(Error::Shape(format!(
                "loss seed is {:?}, trace grid is {n}x{n}",
                seed.dim()
            )));
        }
        let mask = SpectralMask::new(n, self.cfg.modes)?;
        let w = self.cfg.width;
        let head = &self.params.head;

        // Head, reversed.
        let a2 = trace.head.h2.mapv(gelu);
        let a1 = trace.head.h1.mapv(gelu);
        let (hw1, hw2) = (head.w1.nrows(), head.w2.nrows());

        // out = w3·a2 + b3 (single output channel).
        tape.head.b3[0] += seed.sum();
        let mut a2_bar = Array3::<f64>::zeros(a2.raw_dim());
        for c in 0..hw2 {
            tape.head.w3[[0, c]] += (&a2.index_axis(Axis(0), c) * seed).sum();
            a2_bar
                .index_axis_mut(Axis(0), c)
                .scaled_add(head.w3[[0, c]], &seed.view());
        }
        let mut s2_bar = a2_bar;
        for (sb, pre) in s2_bar.iter_mut().zip(trace.head.h2.iter()) {
            *sb *= gelu_prime(*pre);
        }
        let mut a1_bar = Array3::<f64>::zeros(a1.raw_dim());
        for c2 in 0..hw2 {
            let sb = s2_bar.index_axis(Axis(0), c2);
            tape.head.b2[c2] += sb.sum();
            for c1 in 0..hw1 {
                tape.head.w2[[c2, c1]] += (&sb * &a1.index_axis(Axis(0), c1)).sum();
                a1_bar
                    .index_axis_mut(Axis(0), c1)
                    .scaled_add(head.w2[[c2, c1]], &sb);
            }
        }
        let mut s1_bar = a1_bar;
        for (sb, pre) in s1_bar.iter_mut().zip(trace.head.h1.iter()) {
            *sb *= gelu_prime(*pre);
        }
        let cat_width = trace.head.cat.shape()[0];
        let mut cat_bar = Array3::<f64>::zeros(trace.head.cat.raw_dim());
        for c1 in 0..hw1 {
            let sb = s1_bar.index_axis(Axis(0), c1);
            tape.head.b1[c1] += sb.sum();
            for cc in 0..cat_width {
                tape.head.w1[[c1, cc]] += (&sb * &trace.head.cat.index_axis(Axis(0), cc)).sum();
                cat_bar
                    .index_axis_mut(Axis(0), cc)
                    .scaled_add(head.w1[[c1, cc]], &sb);
            }
        }

        // Pipelines, reversed.
        let mut e2_bar: Option<Array1<f64>> = None;
        for (p, pt) in trace.pipelines.iter().enumerate() {
            let pp = &self.params.pipelines[p];
            let mut g = cat_bar
                .slice(ndarray::s![p * w..(p + 1) * w, .., ..])
                .to_owned();
            for li in (0..pt.layers.len()).rev() {
                g = fourier_layer_backward(
                    &pp.layers[li],
                    &pt.layers[li],
                    &g,
                    &mask,
                    &mut tape.pipelines[p].layers[li],
                );
            }
            // Lift: z0 = W·x + b (+ e2 on pipeline 0).
            for c in 0..w {
                let gc = g.index_axis(Axis(0), c);
                let total = gc.sum();
                tape.pipelines[p].lift_b[c] += total;
                for j in 0..3 {
                    tape.pipelines[p].lift_w[[c, j]] +=
                        (&gc * &pt.lift_in.index_axis(Axis(0), j)).sum();
                }
                if p == 0 {
                    e2_bar.get_or_insert_with(|| Array1::zeros(w))[c] += total;
                }
            }
        }

        // Time-embedding MLP, reversed.
        if let Some(e2b) = e2_bar {
            let e1 = trace.embed.h1.mapv(gelu);
            let e0 = trace.embed.r.mapv(gelu);
            tape.embed.b2 += &e2b;
            for c in 0..w {
                for k in 0..e1.len() {
                    tape.embed.w2[[c, k]] += e2b[c] * e1[k];
                }
            }
            let mut e1_bar = self.params.embed.w2.t().dot(&e2b);
            for (eb, pre) in e1_bar.iter_mut().zip(trace.embed.h1.iter()) {
                *eb *= gelu_prime(*pre);
            }
            tape.embed.b1 += &e1_bar;
            for c in 0..e1_bar.len() {
                for k in 0..e0.len() {
                    tape.embed.w1[[c, k]] += e1_bar[c] * e0[k];
                }
            }
            // γ is frozen: the sweep stops at the features.
        }
        Ok(())
    }
}
