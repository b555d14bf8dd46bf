//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

fn check_lens(op: &'static str, params: &[f64], grad: &[f64], state: usize) -> Result<()> {
    if params.len() != grad.len() || params.len() != state {
        return Err(contract(
            op,
            format!(
                "parameter/gradient/state lengths {} / {} / {}",
                params.len(),
                grad.len(),
                state
            ),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_lens("adam", params, grad, self.m.len())?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// RMSprop with squared-gradient averaging `alpha`; entries flagged in
/// `frozen` are never touched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    sq: Vec<f64>,
    frozen: Vec<bool>,
}

impl RmsProp {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            alpha: 0.99,
            eps: 1e-8,
            sq: vec![0.0; n],
            frozen: vec![false; n],
        }
    }

    pub fn with_frozen(mut self, frozen: Vec<bool>) -> Self {
        assert_eq!(frozen.len(), self.sq.len());
        self.frozen = frozen;
        self
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_lens("rmsprop", params, grad, self.sq.len())?;
        for i in 0..params.len() {
            if self.frozen[i] {
                continue;
            }
            let g = grad[i];
            self.sq[i] = self.alpha * self.sq[i] + (1.0 - self.alpha) * g * g;
            params[i] -= self.lr * g / (self.sq[i].sqrt() + self.eps);
        }
        Ok(())
    }
}
