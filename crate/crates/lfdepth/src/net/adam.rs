//! Adam parameter updates with bias correction.

use super::tensor::Scalar;
use super::Network;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment estimates, one pair per parameter array.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    t: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamState<T> {
    /// Zero state matching the network's parameter arrays.
    pub fn for_network(net: &Network<T>) -> Self {
        let moments = net
            .param_arrays()
            .iter()
            .map(|p| (vec![T::zero(); p.len()], vec![T::zero(); p.len()]))
            .collect();
        AdamState { t: 0, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam step over aligned parameter and gradient arrays:
    /// `m = b1*m + (1-b1)*g`, `v = b2*v + (1-b2)*g^2`, then
    /// `p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
    pub fn step(&mut self, params: &mut [&mut Vec<T>], grads: &[&Vec<T>], cfg: &AdamConfig) {
        assert_eq!(params.len(), self.moments.len(), "parameter array count changed");
        assert_eq!(params.len(), grads.len(), "gradient array count must match parameters");
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let lr = T::from_f64(cfg.learning_rate);
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let one_m_b1 = T::from_f64(1.0 - cfg.beta1);
        let one_m_b2 = T::from_f64(1.0 - cfg.beta2);
        let inv_bc1 = T::from_f64(1.0 / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(cfg.epsilon);

        for ((param, grad), (m, v)) in params.iter_mut().zip(grads).zip(&mut self.moments) {
            assert_eq!(param.len(), m.len(), "parameter shape changed");
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + one_m_b1 * g;
                v[i] = b2 * v[i] + one_m_b2 * g * g;
                let mhat = m[i] * inv_bc1;
                let vhat = v[i] * inv_bc2;
                param[i] = param[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{ConvSpec, Layer};

    fn one_param_net(values: Vec<f64>) -> Network<f64> {
        Network::from_layers(vec![Layer::Conv {
            spec: ConvSpec { in_channels: 1, out_channels: 1, kernel: 1, stride: 1, padding: 0 },
            weight: values,
            bias: vec![0.0],
        }])
    }

    #[test]
    fn first_step_is_signed_learning_rate_for_large_gradients() {
        let mut net = one_param_net(vec![1.0]);
        let mut state = AdamState::for_network(&net);
        let cfg = AdamConfig::default();
        let grad_w = vec![5.0];
        let grad_b = vec![-3.0];
        {
            let mut params = net.param_arrays_mut();
            state.step(&mut params, &[&grad_w, &grad_b], &cfg);
        }
        let params = net.param_arrays();
        // t=1 closed form: delta = -lr * g / (|g| + eps).
        let expect_w = 1.0 - cfg.learning_rate * 5.0 / (5.0 + cfg.epsilon);
        let expect_b = 0.0 + cfg.learning_rate * 3.0 / (3.0 + cfg.epsilon);
        assert!((params[0][0] - expect_w).abs() < 1e-15);
        assert!((params[1][0] - expect_b).abs() < 1e-15);
        // For |g| >> eps this is -lr * sign(g).
        assert!((params[0][0] - (1.0 - cfg.learning_rate)).abs() < 1e-9);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut net = one_param_net(vec![0.25]);
        let mut state = AdamState::for_network(&net);
        let cfg = AdamConfig::default();
        for _ in 0..10 {
            let zero_w = vec![0.0];
            let zero_b = vec![0.0];
            let mut params = net.param_arrays_mut();
            state.step(&mut params, &[&zero_w, &zero_b], &cfg);
        }
        assert_eq!(net.param_arrays()[0][0], 0.25);
        assert_eq!(net.param_arrays()[1][0], 0.0);
    }

    #[test]
    fn identical_streams_follow_identical_trajectories() {
        let run = || {
            let mut net = one_param_net(vec![1.0]);
            let mut state = AdamState::for_network(&net);
            let cfg = AdamConfig::default();
            for step in 0..25 {
                let g = vec![(step as f64 * 0.37).sin()];
                let gb = vec![(step as f64 * 0.11).cos()];
                let mut params = net.param_arrays_mut();
                state.step(&mut params, &[&g, &gb], &cfg);
            }
            (net.param_arrays()[0][0], net.param_arrays()[1][0])
        };
        assert_eq!(run(), run());
    }
}
