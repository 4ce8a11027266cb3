use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{KaaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for a fixed, ordered list of parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, cfg: &AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    /// One bias-corrected Adam update. Weight decay is added to the gradient
    /// as an L2 term. Nothing is modified if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut [(&str, &mut Tensor)],
        grads: &[Tensor],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(KaaError::Contract(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(KaaError::shape("adam_step", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(KaaError::Divergence {
                    name: (*name).to_string(),
                });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first_moment[k].data_mut();
            let v = self.second_moment[k].data_mut();
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi + weight_decay * *pi;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param_step(state: &mut AdamState, w: &mut Tensor, g: f64, lr: f64) -> Result<()> {
        let grads = [Tensor::scalar(g)];
        state.step(&mut [("w", w)], &grads, lr, 0.0)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = AdamConfig::default();
        let mut w = Tensor::vector(vec![0.3, -2.0]);
        let mut st = AdamState::new([&w], &cfg);
        let before = w.clone();
        st.step(&mut [("w", &mut w)], &[Tensor::zeros(&[2])], 0.1, 0.0)
            .unwrap();
        assert_eq!(w, before);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε) ≈ lr.
        let cfg = AdamConfig::default();
        let mut w = Tensor::scalar(0.0);
        let mut st = AdamState::new([&w], &cfg);
        one_param_step(&mut st, &mut w, 1.0, 0.1).unwrap();
        assert!((w.data()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn quadratic_converges() {
        let cfg = AdamConfig::default();
        let mut w = Tensor::scalar(0.0);
        let mut st = AdamState::new([&w], &cfg);
        for _ in 0..100 {
            let g = 2.0 * (w.data()[0] - 3.0);
            one_param_step(&mut st, &mut w, g, 0.1).unwrap();
        }
        assert!((w.data()[0] - 3.0).abs() < 0.1, "w = {}", w.data()[0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let cfg = AdamConfig::default();
        let mut w = Tensor::scalar(1.0);
        let mut st = AdamState::new([&w], &cfg);
        let err = st
            .step(
                &mut [("layer0.coef", &mut w)],
                &[Tensor::scalar(f64::NAN)],
                0.1,
                0.0,
            )
            .unwrap_err();
        match err {
            KaaError::Divergence { name } => assert_eq!(name, "layer0.coef"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(st.step_count, 0);
        assert_eq!(w.data()[0], 1.0);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let cfg = AdamConfig::default();
        let mut w = Tensor::scalar(5.0);
        let mut st = AdamState::new([&w], &cfg);
        st.step(&mut [("w", &mut w)], &[Tensor::scalar(0.0)], 0.1, 5e-4)
            .unwrap();
        assert!(w.data()[0] < 5.0);
    }
}
