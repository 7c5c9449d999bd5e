use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

/// Adam moment estimates for a fixed list of parameter tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl AdamState {
    pub fn new(params: &[Tensor2], lr: f64, beta1: f64, beta2: f64) -> Result<Self> {
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidConfig(format!("{name}={b} outside (0,1)")));
            }
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr={lr} must be positive")));
        }
        let zeros: Vec<Tensor2> = params
            .iter()
            .map(|p| Tensor2::zeros(p.rows(), p.cols()))
            .collect();
        Ok(Self {
            lr,
            beta1,
            beta2,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update applied in place.
    pub fn step(&mut self, params: &mut [Tensor2], grads: &[Tensor2]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params, {} grads, state for {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "tensor {i}: param {:?}, grad {:?}, state {:?}",
                        p.shape(),
                        g.shape(),
                        self.m[i].shape()
                    ),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((w, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor2::new(1, 3, vec![0.5, -1.0, 2.0]).unwrap()];
        let before = params.clone();
        let mut state = AdamState::new(&params, 0.01, 0.9, 0.98).unwrap();
        state.step(&mut params, &[Tensor2::zeros(1, 3)]).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // m = 0.1, v = 0.02; m_hat = 0.1/0.1 = 1, v_hat = 0.02/0.02 = 1
        // delta = 0.01 * 1 / (1 + 1e-8)
        let mut params = vec![Tensor2::scalar(1.0)];
        let mut state = AdamState::new(&params, 0.01, 0.9, 0.98).unwrap();
        state.step(&mut params, &[Tensor2::scalar(1.0)]).unwrap();
        let expected = 1.0 - 0.01 / (1.0 + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn second_step_matches_hand_evaluation() {
        // g = (1, -0.5): m = 0.9*0.1 - 0.05 = 0.04, v = 0.98*0.02 + 0.02*0.25 = 0.0246
        // m_hat = 0.04 / 0.19, v_hat = 0.0246 / 0.0396
        let mut params = vec![Tensor2::scalar(0.0)];
        let mut state = AdamState::new(&params, 0.01, 0.9, 0.98).unwrap();
        state.step(&mut params, &[Tensor2::scalar(1.0)]).unwrap();
        let after_one = params[0].data()[0];
        state.step(&mut params, &[Tensor2::scalar(-0.5)]).unwrap();
        let m_hat: f64 = 0.04 / 0.19;
        let v_hat: f64 = 0.0246 / 0.0396;
        let expected = after_one - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_gradient_streams_give_identical_trajectories() {
        let init = vec![Tensor2::new(1, 2, vec![0.1, 0.2]).unwrap()];
        let run = || {
            let mut p = init.clone();
            let mut s = AdamState::new(&p, 0.01, 0.9, 0.98).unwrap();
            for k in 0..20 {
                let g = Tensor2::new(1, 2, vec![(k as f64).sin(), (k as f64).cos()]).unwrap();
                s.step(&mut p, &[g]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor2::zeros(2, 2)];
        let mut state = AdamState::new(&params, 0.01, 0.9, 0.98).unwrap();
        let err = state.step(&mut params, &[Tensor2::zeros(2, 3)]).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "adam_step", .. }));
    }

    #[test]
    fn rejects_bad_betas() {
        assert!(AdamState::new(&[], 0.01, 1.0, 0.98).is_err());
        assert!(AdamState::new(&[], 0.01, 0.9, 0.0).is_err());
    }
}
