//! Adaptive-moment gradient descent for the training loops.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub struct Adam {
    pub learning_rate: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub epsilon: Real,
    step: u64,
    m: Vec<Vec<Real>>,
    v: Vec<Vec<Real>>,
}

impl Adam {
    pub fn new(learning_rate: Real, beta1: Real, beta2: Real) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over a fixed-order parameter list. The list must keep
    /// the same shapes across calls.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract("one gradient per parameter".into()));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "param {:?} vs grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let data = p.data_mut();
            for i in 0..data.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(all(test, not(feature = "f32")))]
mod tests {
    use super::*;

    #[test]
    fn converges_on_a_quadratic() {
        // minimize (x - 3)^2
        let mut x = Tensor::vector(vec![0.0]);
        let mut adam = Adam::new(0.1, 0.9, 0.999);
        for _ in 0..500 {
            let g = Tensor::vector(vec![2.0 * (x.data()[0] - 3.0)]);
            adam.step(&mut [&mut x], &[&g]).unwrap();
        }
        assert!((x.data()[0] - 3.0).abs() < 1e-3, "x = {}", x.data()[0]);
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut x = Tensor::vector(vec![1.0, -2.0]);
            let mut adam = Adam::new(0.01, 0.5, 0.999);
            for i in 0..50 {
                let g = Tensor::vector(vec![x.data()[0] + i as Real * 0.1, x.data()[1]]);
                adam.step(&mut [&mut x], &[&g]).unwrap();
            }
            x
        };
        assert!(run().bit_eq(&run()));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut x = Tensor::vector(vec![1.0]);
        let g = Tensor::vector(vec![1.0, 2.0]);
        let mut adam = Adam::new(0.01, 0.9, 0.999);
        assert!(adam.step(&mut [&mut x], &[&g]).is_err());
    }
}
