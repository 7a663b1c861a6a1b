//! Adam with bias correction, operating directly on the typed parameter
//! pytree.

use super::params::ScoreParams;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: ScoreParams,
    v: ScoreParams,
    step: u64,
}

impl Adam {
    pub fn new(template: &ScoreParams, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: template.zeros_like(),
            v: template.zeros_like(),
            step: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.cfg.learning_rate
    }

    pub fn set_learning_rate(&mut self, learning_rate: f64) {
        self.cfg.learning_rate = learning_rate;
    }

    pub fn step(&mut self, params: &mut ScoreParams, grads: &ScoreParams) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let lr = self.cfg.learning_rate;
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.epsilon);

        let mut p_flat = params.flat_mut();
        let mut m_flat = self.m.flat_mut();
        let mut v_flat = self.v.flat_mut();
        let g_flat = grads.flat();
        debug_assert_eq!(p_flat.len(), g_flat.len());
        for idx in 0..p_flat.len() {
            debug_assert_eq!(p_flat[idx].0, g_flat[idx].0);
            let p = &mut p_flat[idx].1;
            let m = &mut m_flat[idx].1;
            let v = &mut v_flat[idx].1;
            let g = g_flat[idx].2;
            for k in 0..g.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::params::init_params;

    #[test]
    fn first_step_moves_each_parameter_by_learning_rate() {
        let mut params = init_params(2, 1, 2, 2, 2, (3, 3), 7);
        let before = params.clone();
        let mut grads = params.zeros_like();
        for (_, slice) in grads.flat_mut() {
            for v in slice {
                *v = 0.5;
            }
        }
        let mut opt = Adam::new(&params, AdamConfig::with_learning_rate(1e-2));
        opt.step(&mut params, &grads);
        // After one step m̂/(√v̂+ε) ≈ sign(g), so every parameter moves by ≈ lr.
        let b = before.flat();
        for (idx, (_, _, after)) in params.flat().iter().enumerate() {
            for (k, v) in after.iter().enumerate() {
                let delta = b[idx].2[k] - v;
                assert!((delta - 1e-2).abs() < 1e-6, "delta {delta}");
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_fixed() {
        let mut params = init_params(2, 1, 2, 2, 2, (3, 3), 7);
        let before = params.clone();
        let grads = params.zeros_like();
        let mut opt = Adam::new(&params, AdamConfig::with_learning_rate(1e-2));
        opt.step(&mut params, &grads);
        let b = before.flat();
        for (idx, (_, _, after)) in params.flat().iter().enumerate() {
            assert_eq!(b[idx].2, *after);
        }
    }
}
