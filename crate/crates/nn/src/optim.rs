use crate::network::Param;
use crate::tensor::{Scalar, Tensor};
use crate::{NnError, Result};

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam<F: Scalar = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &[Param<F>], lr: f64) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [Param<F>], grads: &[Tensor<F>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(NnError::Shape(format!(
                "optimizer tracks {} parameters, got {} values and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.value.shape() != g.shape() || m.shape() != g.shape() {
                return Err(NnError::Shape(format!(
                    "gradient for `{}` has shape {:?}, expected {:?}",
                    p.name,
                    g.shape(),
                    p.value.shape()
                )));
            }
            if !g.is_finite() {
                return Err(NnError::NonFiniteGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let gi = gi.as_f64();
                let mn = self.beta1 * mi.as_f64() + (1.0 - self.beta1) * gi;
                let vn = self.beta2 * vi.as_f64() + (1.0 - self.beta2) * gi * gi;
                *mi = F::from_f64(mn);
                *vi = F::from_f64(vn);
                let update = self.lr * (mn / bc1) / ((vn / bc2).sqrt() + self.eps);
                *w = F::from_f64(w.as_f64() - update);
            }
        }
        Ok(())
    }
}
