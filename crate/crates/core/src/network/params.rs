//! Parameter storage for the score network.
//!
//! Parameters live in plain typed arrays so the forward and backward passes
//! get compile-time shapes, while `flat`/`flat_mut` expose every tensor as a
//! named slice in one fixed order for the optimizer, checkpoint I/O,
//! parameter counting, and finite-difference sweeps. A [`GradientTape`] is
//! the same structure holding accumulated gradients.

use ndarray::{Array1, Array2, Array4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::random::SeedStream;

/// Complex spectral weights are stored as separate re/im arrays of shape
/// [c_out, c_in, 2K−1, 2K−1]; `l` is the pointwise 1×1 path.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierLayerParams {
    pub r_re: Array4<f64>,
    pub r_im: Array4<f64>,
    pub l: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub lift_w: Array2<f64>,
    pub lift_b: Array1<f64>,
    pub layers: Vec<FourierLayerParams>,
}

/// Two-stage MLP applied to the sin/cos time features.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Fusion head: three 1×1 convolutions with GELU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreParams {
    pub embed: EmbedParams,
    pub pipelines: Vec<PipelineParams>,
    pub head: HeadParams,
}

/// Gradient accumulators with the exact layout of [`ScoreParams`].
pub type GradientTape = ScoreParams;

macro_rules! push_tensor {
    ($out:ident, $name:expr, $arr:expr) => {
        $out.push(($name, $arr.shape().to_vec(), $arr.as_slice().expect("standard layout")))
    };
}

macro_rules! push_tensor_mut {
    ($out:ident, $name:expr, $arr:expr) => {
        $out.push(($name, $arr.as_slice_mut().expect("standard layout")))
    };
}

impl ScoreParams {
    /// Every tensor as (name, shape, values), in a fixed deterministic order.
    pub fn flat(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        push_tensor!(out, "embed.w1".to_string(), self.embed.w1);
        push_tensor!(out, "embed.b1".to_string(), self.embed.b1);
        push_tensor!(out, "embed.w2".to_string(), self.embed.w2);
        push_tensor!(out, "embed.b2".to_string(), self.embed.b2);
        for (p, pipe) in self.pipelines.iter().enumerate() {
            push_tensor!(out, format!("p{p}.lift.w"), pipe.lift_w);
            push_tensor!(out, format!("p{p}.lift.b"), pipe.lift_b);
            for (l, layer) in pipe.layers.iter().enumerate() {
                push_tensor!(out, format!("p{p}.layer{l}.r_re"), layer.r_re);
                push_tensor!(out, format!("p{p}.layer{l}.r_im"), layer.r_im);
                push_tensor!(out, format!("p{p}.layer{l}.l"), layer.l);
                push_tensor!(out, format!("p{p}.layer{l}.b"), layer.b);
            }
        }
        push_tensor!(out, "head.w1".to_string(), self.head.w1);
        push_tensor!(out, "head.b1".to_string(), self.head.b1);
        push_tensor!(out, "head.w2".to_string(), self.head.w2);
        push_tensor!(out, "head.b2".to_string(), self.head.b2);
        push_tensor!(out, "head.w3".to_string(), self.head.w3);
        push_tensor!(out, "head.b3".to_string(), self.head.b3);
        out
    }

    /// Mutable view of every tensor, same order as [`ScoreParams::flat`].
    pub fn flat_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        push_tensor_mut!(out, "embed.w1".to_string(), self.embed.w1);
        push_tensor_mut!(out, "embed.b1".to_string(), self.embed.b1);
        push_tensor_mut!(out, "embed.w2".to_string(), self.embed.w2);
        push_tensor_mut!(out, "embed.b2".to_string(), self.embed.b2);
        for (p, pipe) in self.pipelines.iter_mut().enumerate() {
            push_tensor_mut!(out, format!("p{p}.lift.w"), pipe.lift_w);
            push_tensor_mut!(out, format!("p{p}.lift.b"), pipe.lift_b);
            for (l, layer) in pipe.layers.iter_mut().enumerate() {
                push_tensor_mut!(out, format!("p{p}.layer{l}.r_re"), layer.r_re);
                push_tensor_mut!(out, format!("p{p}.layer{l}.r_im"), layer.r_im);
                push_tensor_mut!(out, format!("p{p}.layer{l}.l"), layer.l);
                push_tensor_mut!(out, format!("p{p}.layer{l}.b"), layer.b);
            }
        }
        push_tensor_mut!(out, "head.w1".to_string(), self.head.w1);
        push_tensor_mut!(out, "head.b1".to_string(), self.head.b1);
        push_tensor_mut!(out, "head.w2".to_string(), self.head.w2);
        push_tensor_mut!(out, "head.b2".to_string(), self.head.b2);
        push_tensor_mut!(out, "head.w3".to_string(), self.head.w3);
        push_tensor_mut!(out, "head.b3".to_string(), self.head.b3);
        out
    }

    pub fn count(&self) -> usize {
        self.flat().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn zeros_like(&self) -> ScoreParams {
        let mut z = self.clone();
        for (_, slice) in z.flat_mut() {
            slice.fill(0.0);
        }
        z
    }

    /// self += alpha · other. Layouts must match (same architecture).
    pub fn axpy(&mut self, alpha: f64, other: &ScoreParams) {
        let src = other.flat();
        for ((_, dst), (_, _, s)) in self.flat_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += alpha * v;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, slice) in self.flat_mut() {
            for v in slice {
                *v *= alpha;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.flat()
            .iter()
            .flat_map(|(_, _, v)| v.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }
}

fn normal_matrix(shape: (usize, usize), std: f64, stream: SeedStream) -> Array2<f64> {
    let mut rng = stream.rng();
    Array2::from_shape_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        std * z
    })
}

fn normal_array4(shape: (usize, usize, usize, usize), std: f64, stream: SeedStream) -> Array4<f64> {
    let mut rng = stream.rng();
    Array4::from_shape_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        std * z
    })
}

/// Initialize parameters for the given architecture. Each tensor draws from
/// its own name-derived stream, so initialization is independent of
/// construction order and identical across platforms. Pointwise weights use
/// 1/√fan_in scaling; spectral weights use the 1/(channels · retained-modes)
/// scale; biases start at zero.
pub fn init_params(
    pipelines: usize,
    layers: usize,
    width: usize,
    modes: usize,
    embed_count: usize,
    head_widths: (usize, usize),
    seed: u64,
) -> ScoreParams {
    let init = SeedStream::root(seed).named("init");
    let side = 2 * modes - 1;
    let spectral_std = 1.0 / (width * side * side) as f64;
    let two_m = 2 * embed_count;
    let cat_width = pipelines * width;

    let pipelines = (0..pipelines)
        .map(|p| PipelineParams {
            lift_w: normal_matrix(
                (width, 3),
                (1.0f64 / 3.0).sqrt(),
                init.named(&format!("p{p}.lift.w")),
            ),
            lift_b: Array1::zeros(width),
            layers: (0..layers)
                .map(|l| FourierLayerParams {
                    r_re: normal_array4(
                        (width, width, side, side),
                        spectral_std,
                        init.named(&format!("p{p}.layer{l}.r_re")),
                    ),
                    r_im: normal_array4(
                        (width, width, side, side),
                        spectral_std,
                        init.named(&format!("p{p}.layer{l}.r_im")),
                    ),
                    l: normal_matrix(
                        (width, width),
                        (1.0 / width as f64).sqrt(),
                        init.named(&format!("p{p}.layer{l}.l")),
                    ),
                    b: Array1::zeros(width),
                })
                .collect(),
        })
        .collect();

    ScoreParams {
        embed: EmbedParams {
            w1: normal_matrix(
                (two_m, two_m),
                (1.0 / two_m as f64).sqrt(),
                init.named("embed.w1"),
            ),
            b1: Array1::zeros(two_m),
            w2: normal_matrix(
                (width, two_m),
                (1.0 / two_m as f64).sqrt(),
                init.named("embed.w2"),
            ),
            b2: Array1::zeros(width),
        },
        pipelines,
        head: HeadParams {
            w1: normal_matrix(
                (head_widths.0, cat_width),
                (1.0 / cat_width as f64).sqrt(),
                init.named("head.w1"),
            ),
            b1: Array1::zeros(head_widths.0),
            w2: normal_matrix(
                (head_widths.1, head_widths.0),
                (1.0 / head_widths.0 as f64).sqrt(),
                init.named("head.w2"),
            ),
            b2: Array1::zeros(head_widths.1),
            w3: normal_matrix(
                (1, head_widths.1),
                (1.0 / head_widths.1 as f64).sqrt(),
                init.named("head.w3"),
            ),
            b3: Array1::zeros(1),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_orders_match_between_const_and_mut() {
        let mut p = init_params(3, 4, 4, 2, 4, (6, 5), 1);
        let names: Vec<String> = p.flat().into_iter().map(|(n, _, _)| n).collect();
        let names_mut: Vec<String> = p.flat_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        assert!(names.contains(&"p2.layer3.r_im".to_string()));
    }

    #[test]
    fn init_is_deterministic_and_order_independent() {
        let a = init_params(3, 4, 4, 2, 4, (6, 5), 7);
        let b = init_params(3, 4, 4, 2, 4, (6, 5), 7);
        assert_eq!(a, b);
        let c = init_params(3, 4, 4, 2, 4, (6, 5), 8);
        assert_ne!(a, c);
    }

    #[test]
    fn axpy_and_scale_walk_every_tensor() {
        let p = init_params(2, 2, 3, 2, 2, (4, 4), 3);
        let mut q = p.zeros_like();
        q.axpy(2.0, &p);
        q.axpy(-1.0, &p);
        q.axpy(-1.0, &p);
        assert!(q.max_abs() < 1e-15);
        let mut r = p.clone();
        r.scale(0.0);
        assert!(r.max_abs() == 0.0);
    }
}
