//! Adam optimiser with bias correction, mirroring a parameter store
//! index-for-index so steps are deterministic and the state can be
//! checkpointed alongside the parameters.

use ndarray::ArrayD;

use crate::nn::{Grads, ParamStore};

#[derive(Debug, Clone)]
pub struct Adam {
    /// First-moment estimates, one per parameter tensor.
    pub m: Vec<ArrayD<f64>>,
    /// Second-moment estimates, one per parameter tensor.
    pub v: Vec<ArrayD<f64>>,
    /// Completed step count (drives bias correction).
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(ps: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            m: ps.values().iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
            v: ps.values().iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// One update: `p -= lr * m_hat / (sqrt(v_hat) + eps)` with
    /// bias-corrected moment estimates.
    pub fn step(&mut self, ps: &mut ParamStore, grads: &Grads, lr: f64) {
        assert_eq!(self.m.len(), ps.len(), "optimizer/store mismatch");
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in ps
            .values_mut()
            .iter_mut()
            .zip(grads.values().iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}
