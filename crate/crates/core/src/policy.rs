//! K-stage stochastic augmentation policy with per-class strengths.
//!
//! Each stage draws one operator through a Gumbel-softmax sample, applies it at
//! the strength selected by the example's label, and multiplies the result by
//! the straight-through factor `u_i / stop_grad(u_i)`. The factor's value is
//! exactly one; its gradient is the only path from the loss to the selection
//! logits.

use serde::{Deserialize, Serialize};

use crate::augops::{apply_op, AugDraw, AugOp, OpSettings};
use crate::diffcore::{softmax, Graph, Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub logits: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl StageParams {
    /// Operator-selection probabilities, `softmax(logits)`.
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub operators: Vec<AugOp>,
    pub stages: Vec<StageParams>,
    pub temperature: f64,
    /// One strength per operator and stage shared by both classes.
    #[serde(default)]
    pub shared_magnitude: bool,
}

/// Uniform selection probabilities and per-operator initial strengths.
pub fn init_policy(operators: &[AugOp], stages: usize, temperature: f64) -> Result<PolicyParams> {
    if operators.is_empty() {
        return Err(contract("init_policy", "operator set is empty"));
    }
    if !(temperature > 0.0) {
        return Err(contract(
            "init_policy",
            format!("temperature must be > 0, got {temperature}"),
        ));
    }
    let m = operators.len();
    let init: Vec<f64> = operators.iter().map(|op| op.initial_strength()).collect();
    Ok(PolicyParams {
        operators: operators.to_vec(),
        stages: (0..stages)
            .map(|_| StageParams {
                logits: vec![0.0; m],
                mu0: init.clone(),
                mu1: init.clone(),
            })
            .collect(),
        temperature,
        shared_magnitude: false,
    })
}

/// Graph handles for one stage. In shared-magnitude mode `mu0 == mu1`.
#[derive(Clone, Copy, Debug)]
pub struct StageVars {
    pub logits: Var,
    pub mu0: Var,
    pub mu1: Var,
}

#[derive(Clone, Debug)]
pub struct PolicyVars {
    pub stages: Vec<StageVars>,
}

impl PolicyParams {
    pub fn num_ops(&self) -> usize {
        self.operators.len()
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.operators.is_empty() {
            return Err(contract("policy", "operator set is empty"));
        }
        if !(self.temperature > 0.0) {
            return Err(contract("policy", "temperature must be > 0"));
        }
        let m = self.num_ops();
        for (k, st) in self.stages.iter().enumerate() {
            if st.logits.len() != m || st.mu0.len() != m || st.mu1.len() != m {
                return Err(contract("policy", format!("stage {k} does not have {m} entries")));
            }
        }
        Ok(())
    }

    /// Switches to a single strength per operator and stage, initialized from
    /// the class-0 value.
    pub fn into_shared_magnitude(mut self) -> Self {
        for st in &mut self.stages {
            st.mu1 = st.mu0.clone();
        }
        self.shared_magnitude = true;
        self
    }

    /// Length of the flat parameter vector.
    pub fn num_params(&self) -> usize {
        let per = if self.shared_magnitude { 2 } else { 3 };
        per * self.num_ops() * self.num_stages()
    }

    /// Flat layout per stage: logits, then mu0 and mu1 (or the shared mu).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for st in &self.stages {
            out.extend(&st.logits);
            out.extend(&st.mu0);
            if !self.shared_magnitude {
                out.extend(&st.mu1);
            }
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(contract(
                "policy",
                format!("expected {} parameters, got {}", self.num_params(), flat.len()),
            ));
        }
        let m = self.num_ops();
        let mut chunks = flat.chunks(m);
        for st in &mut self.stages {
            st.logits.copy_from_slice(chunks.next().unwrap());
            st.mu0.copy_from_slice(chunks.next().unwrap());
            if self.shared_magnitude {
                st.mu1.copy_from_slice(&st.mu0.clone());
            } else {
                st.mu1.copy_from_slice(chunks.next().unwrap());
            }
        }
        Ok(())
    }

    /// Mask over the flat layout marking strengths that are never learned.
    pub fn frozen_mask(&self) -> Vec<bool> {
        let fixed: Vec<bool> = self
            .operators
            .iter()
            .map(|op| !op.has_learnable_strength())
            .collect();
        let mut out = Vec::with_capacity(self.num_params());
        for _ in &self.stages {
            out.extend(std::iter::repeat_n(false, self.num_ops()));
            out.extend(&fixed);
            if !self.shared_magnitude {
                out.extend(&fixed);
            }
        }
        out
    }

    /// Places the parameters on `g`, as params when `trainable`.
    pub fn to_graph(&self, g: &mut Graph, trainable: bool) -> PolicyVars {
        let leaf = |g: &mut Graph, v: &[f64]| {
            let t = Tensor::vector(v.to_vec());
            if trainable {
                g.param(t)
            } else {
                g.constant(t)
            }
        };
        let stages = self
            .stages
            .iter()
            .map(|st| {
                let logits = leaf(g, &st.logits);
                let mu0 = leaf(g, &st.mu0);
                let mu1 = if self.shared_magnitude {
                    mu0
                } else {
                    leaf(g, &st.mu1)
                };
                StageVars { logits, mu0, mu1 }
            })
            .collect();
        PolicyVars { stages }
    }

    /// Gradient of `loss` with respect to the policy, in the flat layout.
    pub fn flat_grad(&self, g: &Graph, loss: Var, vars: &PolicyVars) -> Result<Vec<f64>> {
        let seed = Tensor::full(g.shape(loss), 1.0);
        if seed.len() != 1 {
            return Err(contract("flat_grad", "loss must be scalar"));
        }
        self.flat_vjp(g, loss, seed, vars)
    }

    /// Pulls `seed` at `out` back to the policy, in the flat layout.
    pub fn flat_vjp(&self, g: &Graph, out: Var, seed: Tensor, vars: &PolicyVars) -> Result<Vec<f64>> {
        let mut wrt = Vec::new();
        for sv in &vars.stages {
            wrt.push(sv.logits);
            wrt.push(sv.mu0);
            if !self.shared_magnitude {
                wrt.push(sv.mu1);
            }
        }
        let grads = g.backward_seeded(out, seed, &wrt)?;
        let mut out: Vec<f64> = grads.into_iter().flat_map(|t| t.into_data()).collect();
        for (v, fixed) in out.iter_mut().zip(self.frozen_mask()) {
            if fixed {
                *v = 0.0;
            }
        }
        Ok(out)
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            operators: self.operators.clone(),
            temperature: self.temperature,
            shared_magnitude: self.shared_magnitude,
            stages: self
                .stages
                .iter()
                .map(|st| StageSnapshot {
                    pi: st.probabilities(),
                    mu0: st.mu0.clone(),
                    mu1: st.mu1.clone(),
                    logits: st.logits.clone(),
                })
                .collect(),
        }
    }
}

/// Serialized policy state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub stages: Vec<StageSnapshot>,
    pub operators: Vec<AugOp>,
    pub temperature: f64,
    #[serde(default)]
    pub shared_magnitude: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSnapshot {
    pub pi: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    #[serde(default)]
    pub logits: Vec<f64>,
}

/// Gumbel noise `−ln(−ln U)` for `m` categories.
pub fn gumbel_noise(m: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..m).map(|_| -(-rng.uniform_open().ln()).ln()).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(u: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in u.iter().enumerate() {
        if *v > u[best] {
            best = i;
        }
    }
    best
}

/// Relaxed sample `softmax((logits + gumbel) / τ)` without a graph.
pub fn relaxed_sample(logits: &[f64], gumbel: &[f64], temperature: f64) -> Vec<f64> {
    let z: Vec<f64> = logits
        .iter()
        .zip(gumbel)
        .map(|(l, g)| (l + g) / temperature)
        .collect();
    softmax(&z)
}

/// Draws an operator index for one stage and records the straight-through
/// factor. Returns `(index, factor)`.
pub fn sample_stage(
    g: &mut Graph,
    logits: Var,
    temperature: f64,
    gumbel: &[f64],
) -> Result<(usize, Var)> {
    if !(temperature > 0.0) {
        return Err(contract(
            "sample_stage",
            format!("temperature must be > 0, got {temperature}"),
        ));
    }
    let noise = g.constant(Tensor::vector(gumbel.to_vec()));
    let z = g.add(logits, noise)?;
    let z = g.scale_const(z, 1.0 / temperature);
    let u = g.softmax(z)?;
    let i = argmax(g.value(u).data());
    let ui = g.index(u, i)?;
    let denom = g.value(ui).item();
    Ok((i, g.div_const(ui, denom)))
}

/// `s = y μ1 + (1 − y) μ0`, recorded so exactly one strength gets gradient.
pub fn compute_strength(g: &mut Graph, label: u8, mu0: Var, mu1: Var) -> Result<Var> {
    if label > 1 {
        return Err(contract(
            "compute_strength",
            format!("label must be 0 or 1, got {label}"),
        ));
    }
    let y = f64::from(label);
    let a = g.scale_const(mu1, y);
    let b = g.scale_const(mu0, 1.0 - y);
    g.add(a, b)
}

/// Per-stage record of what the policy did to one example.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTrace {
    pub op: AugOp,
    pub index: usize,
    pub strength: f64,
}

/// Applies every stage in sequence to `x` (`[C, T]`).
///
/// All randomness comes from `plan`: stage `k` uses `plan.split(k)`, with the
/// Gumbel draw on sub-key 0 and operator `i`'s draw on sub-key `1 + i`. Two
/// calls with the same plan therefore see identical draws.
pub fn apply_policy(
    g: &mut Graph,
    x: Var,
    label: u8,
    params: &PolicyParams,
    vars: &PolicyVars,
    plan: &RngStream,
    settings: &OpSettings,
) -> Result<(Var, Vec<StageTrace>)> {
    let (c, t) = match g.shape(x) {
        [c, t] => (*c, *t),
        s => {
            return Err(Error::Shape {
                op: "apply_policy",
                shapes: format!("{s:?}"),
            })
        }
    };
    let m = params.num_ops();
    let mut out = x;
    let mut trace = Vec::with_capacity(vars.stages.len());
    for (k, sv) in vars.stages.iter().enumerate() {
        let stage_rng = plan.split(k as u64);
        let gumbel = gumbel_noise(m, &mut stage_rng.split(0));
        let (i, factor) = sample_stage(g, sv.logits, params.temperature, &gumbel)?;
        let op = params.operators[i];
        let mu0 = g.index(sv.mu0, i)?;
        let mu1 = g.index(sv.mu1, i)?;
        let s = compute_strength(g, label, mu0, mu1)?;
        let draw = AugDraw::sample(op, c, t, &mut stage_rng.split(1 + i as u64));
        let y = apply_op(g, op, out, s, &draw, settings)?;
        out = g.scale(y, factor)?;
        trace.push(StageTrace {
            op,
            index: i,
            strength: g.value(s).item(),
        });
    }
    Ok((out, trace))
}
