//! Implicit-function hypergradients with a truncated Neumann inverse.
//!
//! Second-order quantities are finite differences of first-order gradients:
//! Hessian-vector products differentiate `∂L_T/∂θ` along a direction, and the
//! mixed partial differentiates `∂L_T/∂φ` along the same kind of direction.
//! Everything here is generic over gradient closures so the analytic oracles
//! in the tests exercise exactly the code the trainer runs.

mod train;

pub use train::{
    inner_step, score_split, train, validation_loss, AugStrategy, EpochRecord, OuterRecord, TaskAugSettings,
    TrainConfig, TrainReport, TrainSplits,
};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    /// Inner steps between outer steps (P).
    pub inner_steps: usize,
    /// Neumann terms after the leading one (J).
    pub neumann_terms: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    /// Finite-difference step; `None` means `1e-3 · (1 + ‖θ‖∞)`.
    pub fd_epsilon: Option<f64>,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self {
            inner_steps: 1,
            neumann_terms: 1,
            inner_lr: 1e-3,
            outer_lr: 1e-2,
            fd_epsilon: None,
        }
    }
}

impl HyperConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 {
            return Err(contract("hyper_config", "inner steps P must be >= 1"));
        }
        if let Some(e) = self.fd_epsilon {
            if !(e > 0.0) {
                return Err(contract("hyper_config", format!("fd_epsilon must be > 0, got {e}")));
            }
        }
        if !(self.inner_lr >= 0.0) || !(self.outer_lr >= 0.0) {
            return Err(contract("hyper_config", "learning rates must be >= 0"));
        }
        Ok(())
    }

    /// Neumann preconditioner, tied to the inner learning rate.
    pub fn alpha(&self) -> f64 {
        self.inner_lr
    }

    pub fn epsilon_for(&self, theta: &[f64]) -> f64 {
        self.fd_epsilon
            .unwrap_or_else(|| 1e-3 * (1.0 + theta.iter().fold(0.0f64, |m, v| m.max(v.abs()))))
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn offset(theta: &[f64], dir: &[f64], step: f64) -> Vec<f64> {
    theta.iter().zip(dir).map(|(t, d)| t + step * d).collect()
}

/// Central difference of `f` along `dir`, with the evaluation points
/// `θ ± eps·dir/‖dir‖`. Returns the directional derivative scaled by `‖dir‖`.
fn directional<F>(theta: &[f64], dir: &[f64], eps: f64, f: &mut F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = norm(dir);
    if n == 0.0 {
        return Ok(Vec::new());
    }
    let step = eps / n;
    let plus = f(&offset(theta, dir, step))?;
    let minus = f(&offset(theta, dir, -step))?;
    if plus.len() != minus.len() {
        return Err(contract("finite_difference", "gradient lengths differ between evaluations"));
    }
    Ok(plus
        .iter()
        .zip(&minus)
        .map(|(a, b)| (a - b) / (2.0 * step))
        .collect())
}

/// `H·w` by central differences of `grad_theta`.
pub fn hvp<F>(theta: &[f64], w: &[f64], eps: f64, grad_theta: &mut F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let out = directional(theta, w, eps, grad_theta)?;
    Ok(if out.is_empty() {
        vec![0.0; theta.len()]
    } else {
        out
    })
}

/// `α · Σ_{j=0..J} (I − αH)^j · v`.
pub fn neumann_inverse_hvp<F>(
    v: &[f64],
    theta: &[f64],
    terms: usize,
    alpha: f64,
    eps: f64,
    grad_theta: &mut F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if v.len() != theta.len() {
        return Err(contract("neumann_inverse_hvp", "v and θ differ in length"));
    }
    let mut p = v.to_vec();
    let mut acc = v.to_vec();
    for _ in 0..terms {
        let hp = hvp(theta, &p, eps, grad_theta)?;
        for ((pi, a), h) in p.iter_mut().zip(acc.iter_mut()).zip(&hp) {
            *pi -= alpha * h;
            *a += *pi;
        }
    }
    acc.iter_mut().for_each(|a| *a *= alpha);
    Ok(acc)
}

/// `pᵀ · ∂²L_T/∂θ∂φ` by central differences of `grad_phi` at `θ ± ε̂·p`,
/// `ε̂ = eps/‖p‖`. The closure must reuse identical augmentation draws on
/// both evaluations.
pub fn mixed_partial_vjp<F>(
    p: &[f64],
    theta: &[f64],
    num_phi: usize,
    eps: f64,
    grad_phi: &mut F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let out = directional(theta, p, eps, grad_phi)?;
    if out.is_empty() {
        return Ok(vec![0.0; num_phi]);
    }
    if out.len() != num_phi {
        return Err(contract("mixed_partial_vjp", "∂L_T/∂φ has the wrong length"));
    }
    Ok(out)
}

/// Hypergradient `dL_V/dφ ≈ −(∂L_V/∂θ)·H⁻¹·∂²L_T/∂θ∂φ`, given `val_grad = ∂L_V/∂θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypergradient {
    pub grad: Vec<f64>,
    /// Norm of the preconditioned direction `q`.
    pub q_norm: f64,
}

pub fn hypergradient<Ft, Fp>(
    theta: &[f64],
    val_grad: &[f64],
    num_phi: usize,
    cfg: &HyperConfig,
    grad_theta: &mut Ft,
    grad_phi: &mut Fp,
) -> Result<Hypergradient>
where
    Ft: FnMut(&[f64]) -> Result<Vec<f64>>,
    Fp: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let eps = cfg.epsilon_for(theta);
    let q = neumann_inverse_hvp(val_grad, theta, cfg.neumann_terms, cfg.alpha(), eps, grad_theta)?;
    let mixed = mixed_partial_vjp(&q, theta, num_phi, eps, grad_phi)?;
    Ok(Hypergradient {
        grad: mixed.into_iter().map(|m| -m).collect(),
        q_norm: norm(&q),
    })
}
