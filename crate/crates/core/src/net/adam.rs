use serde::{Deserialize, Serialize};

use super::MlpParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        AdamState {
            config,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grad: &MlpParams) {
        assert_eq!(params.shape(), grad.shape(), "gradient shape differs from parameters");
        assert_eq!(self.m.len(), grad.as_slice().len(), "optimizer state belongs to another network");
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// One optimizer step on `params` given `grad`.
pub fn adam_step(params: &mut MlpParams, grad: &MlpParams, state: &mut AdamState) {
    state.step(params, grad);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::MlpShape;

    fn shape() -> MlpShape {
        MlpShape::new(3, 4, 2).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = MlpParams::zeros(shape());
        p.fill(0.3);
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), p.as_slice().len());
        adam_step(&mut p, &MlpParams::zeros(shape()), &mut st);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let mut p = MlpParams::zeros(shape());
        let mut g = MlpParams::zeros(shape());
        for (i, v) in g.as_mut_slice().iter_mut().enumerate() {
            *v = (i as f64 - 20.0) * 0.37;
        }
        let cfg = AdamConfig { lr: 1e-2, ..AdamConfig::default() };
        let mut st = AdamState::new(cfg, p.as_slice().len());
        adam_step(&mut p, &g, &mut st);
        for (&pi, &gi) in p.as_slice().iter().zip(g.as_slice()) {
            let expected = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((pi - expected).abs() < 1e-12, "{pi} vs {expected}");
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let target: Vec<f64> = (0..shape().num_params()).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut p = MlpParams::zeros(shape());
        let cfg = AdamConfig { lr: 1e-2, ..AdamConfig::default() };
        let mut st = AdamState::new(cfg, p.as_slice().len());
        for _ in 0..2000 {
            let g: Vec<f64> = p.as_slice().iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            let g = MlpParams::from_vec(shape(), g).unwrap();
            adam_step(&mut p, &g, &mut st);
        }
        let err: f64 = p
            .as_slice()
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-3, "{err}");
        assert_eq!(st.step, 2000);
    }
}
