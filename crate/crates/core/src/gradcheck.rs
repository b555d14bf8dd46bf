//! Finite-difference verification of every gradient path the policy relies on:
//! tape ops, operator strengths, the straight-through factor, end-to-end
//! policy strengths, the classifier, and the hypergradient on a quadratic
//! bilevel problem.

use std::time::Instant;

use serde::Serialize;

use crate::augops::{apply_op, AugDraw, AugOp, OpSettings};
use crate::diffcore::{check_gradient, relative_error, Graph, Tensor, Var};
use crate::error::Result;
use crate::hypergrad::{hypergradient, HyperConfig};
use crate::model::{build_model, forward, ModelConfig, ModelParams};
use crate::policy::{apply_policy, argmax, init_policy, relaxed_sample, sample_stage, PolicyParams};
use crate::rng::RngStream;

/// Step for central differences.
const H: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub seeds: u64,
    /// Relative tolerance for every check except displacement.
    pub tolerance: f64,
    /// Displacement interpolates between samples and gets a looser bound.
    pub displacement_tolerance: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            tolerance: 1e-4,
            displacement_tolerance: 1e-3,
        }
    }
}

impl SuiteConfig {
    /// Uniform tolerance `tol`, displacement ten times looser.
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            tolerance: tol,
            displacement_tolerance: 10.0 * tol,
            ..Self::default()
        }
    }
}

/// Worst case of one registered check over all seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub group: &'static str,
    pub seeds: u64,
    pub max_rel_err: f64,
    pub worst_seed: u64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub rows: Vec<CheckRow>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| !r.passed)
    }
}

type CheckFn = fn(&mut RngStream) -> Result<f64>;

struct Check {
    name: &'static str,
    group: &'static str,
    loose: bool,
    run: CheckFn,
}

fn tensor(rng: &mut RngStream, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rng.normals(n)).expect("shape matches data")
}

/// Values in `[lo, hi)`.
fn uniform_tensor(rng: &mut RngStream, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Random linear functional of `y`, so every output element carries gradient.
fn probe(g: &mut Graph, y: Var, weights: &[f64]) -> Result<Var> {
    let w = g.constant(Tensor::new(g.shape(y).to_vec(), weights[..g.value(y).len()].to_vec())?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Relative error of `d probe(f(x)) / dx` against central differences.
fn fd<F>(rng: &mut RngStream, x: &Tensor, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let weights = rng.normals(4096);
    let chk = check_gradient(x, H, |g, v| {
        let y = f(g, v)?;
        probe(g, y, &weights)
    })?;
    Ok(chk.rel_err)
}

/// The worse of two relative errors.
fn both(a: Result<f64>, b: Result<f64>) -> Result<f64> {
    Ok(a?.max(b?))
}

fn op_add(rng: &mut RngStream) -> Result<f64> {
    let (x, c) = (tensor(rng, &[3, 5]), tensor(rng, &[3, 5]));
    fd(rng, &x, |g, v| {
        let k = g.constant(c.clone());
        g.add(v, k)
    })
}

fn op_sub(rng: &mut RngStream) -> Result<f64> {
    let (x, c) = (tensor(rng, &[3, 5]), tensor(rng, &[3, 5]));
    let a = fd(rng, &x, |g, v| {
        let k = g.constant(c.clone());
        g.sub(v, k)
    });
    let b = fd(rng, &x, |g, v| {
        let k = g.constant(c.clone());
        g.sub(k, v)
    });
    both(a, b)
}

fn op_mul(rng: &mut RngStream) -> Result<f64> {
    let (x, c) = (tensor(rng, &[2, 7]), tensor(rng, &[2, 7]));
    let a = fd(rng, &x, |g, v| {
        let k = g.constant(c.clone());
        g.mul(v, k)
    });
    let b = fd(rng, &x, |g, v| g.mul(v, v));
    both(a, b)
}

fn op_scale(rng: &mut RngStream) -> Result<f64> {
    let (x, s) = (tensor(rng, &[2, 6]), tensor(rng, &[1]));
    let a = fd(rng, &x, |g, v| {
        let k = g.constant(s.clone());
        g.scale(v, k)
    });
    let b = fd(rng, &s, |g, v| {
        let k = g.constant(x.clone());
        g.scale(k, v)
    });
    both(a, b)
}

fn op_scale_const(rng: &mut RngStream) -> Result<f64> {
    let x = tensor(rng, &[9]);
    let k = rng.normal();
    fd(rng, &x, |g, v| Ok(g.scale_const(v, k)))
}

fn op_div_const(rng: &mut RngStream) -> Result<f64> {
    let x = tensor(rng, &[9]);
    let k = 0.5 + rng.uniform();
    fd(rng, &x, |g, v| Ok(g.div_const(v, k)))
}

fn op_add_const(rng: &mut RngStream) -> Result<f64> {
    let x = tensor(rng, &[9]);
    let k = rng.normal();
    fd(rng, &x, |g, v| Ok(g.add_const(v, k)))
}

fn op_matmul(rng: &mut RngStream) -> Result<f64> {
    let (a, b) = (tensor(rng, &[3, 4]), tensor(rng, &[4, 2]));
    let ga = fd(rng, &a, |g, v| {
        let k = g.constant(b.clone());
        g.matmul(v, k)
    });
    let gb = fd(rng, &b, |g, v| {
        let k = g.constant(a.clone());
        g.matmul(k, v)
    });
    both(ga, gb)
}

fn op_add_bias(rng: &mut RngStream) -> Result<f64> {
    let (x, b) = (tensor(rng, &[2, 3, 4]), tensor(rng, &[3]));
    let gx = fd(rng, &x, |g, v| {
        let k = g.constant(b.clone());
        g.add_bias(v, k)
    });
    let gb = fd(rng, &b, |g, v| {
        let k = g.constant(x.clone());
        g.add_bias(k, v)
    });
    both(gx, gb)
}

fn op_conv1d(rng: &mut RngStream) -> Result<f64> {
    let x = tensor(rng, &[2, 3, 11]);
    let w = tensor(rng, &[4, 3, 5]);
    let b = tensor(rng, &[4]);
    let gx = fd(rng, &x, |g, v| {
        let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
        g.conv1d(v, wv, Some(bv), 2, 2)
    });
    let gw = fd(rng, &w, |g, v| {
        let (xv, bv) = (g.constant(x.clone()), g.constant(b.clone()));
        g.conv1d(xv, v, Some(bv), 2, 2)
    });
    let gb = fd(rng, &b, |g, v| {
        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
        g.conv1d(xv, wv, Some(v), 1, 0)
    });
    Ok(gx?.max(gw?).max(gb?))
}

fn op_avgpool1d(rng: &mut RngStream) -> Result<f64> {
    let x = tensor(rng, &[2, 3, 10]);
    fd(rng, &x, |g, v| g.avgpool1d(v, 3))
}

fn op_relu(rng: &mut RngStream) -> Result<f64> {
    // Keep inputs away from the kink so differences do not straddle it.
    let mut x = tensor(rng, &[12]);
    for v in x.data_mut() {
        *v += 0.1f64.copysign(*v);
    }
    fd(rng, &x, |g, v| Ok(g.relu(v)))
}

fn op_sigmoid(rng: &mut RngStream) -> Result<f64> {
    let x = tensor(rng, &[12]);
    fd(rng, &x, |g, v| Ok(g.sigmoid(v)))
}

fn op_sin(rng: &mut RngStream) -> Result<f64> {
    let x = tensor(rng, &[12]);
    fd(rng, &x, |g, v| Ok(g.sin(v)))
}

fn op_softmax(rng: &mut RngStream) -> Result<f64> {
    let x = tensor(rng, &[6]);
    fd(rng, &x, |g, v| g.softmax(v))
}

fn op_sum(rng: &mut RngStream) -> Result<f64> {
    let x = tensor(rng, &[3, 4]);
    let c = tensor(rng, &[3, 4]);
    fd(rng, &x, |g, v| {
        let k = g.constant(c.clone());
        let p = g.mul(v, k)?;
        Ok(g.sum(p))
    })
}

fn op_mean(rng: &mut RngStream) -> Result<f64> {
    let x = tensor(rng, &[3, 4]);
    fd(rng, &x, |g, v| {
        let s = g.sin(v);
        g.mean(s)
    })
}

fn op_index(rng: &mut RngStream) -> Result<f64> {
    let x = tensor(rng, &[7]);
    let i = rng.below(7);
    fd(rng, &x, |g, v| g.index(v, i))
}

fn op_stack(rng: &mut RngStream) -> Result<f64> {
    let (x, c) = (tensor(rng, &[2, 5]), tensor(rng, &[2, 5]));
    fd(rng, &x, |g, v| {
        let k = g.constant(c.clone());
        let s = g.sin(v);
        g.stack(&[v, k, s])
    })
}

fn op_linear_resample(rng: &mut RngStream) -> Result<f64> {
    let t = 16;
    let x = tensor(rng, &[2, t]);
    // Fractional parts kept away from integers, where the interpolant kinks.
    let d: Vec<f64> = (0..t)
        .map(|_| rng.below(5) as f64 - 2.0 + 0.2 + 0.6 * rng.uniform())
        .collect();
    let d = Tensor::vector(d);
    let gx = fd(rng, &x, |g, v| {
        let k = g.constant(d.clone());
        g.linear_resample(v, k)
    });
    let gd = fd(rng, &d, |g, v| {
        let k = g.constant(x.clone());
        g.linear_resample(k, v)
    });
    both(gx, gd)
}

fn op_gaussian_smooth(rng: &mut RngStream) -> Result<f64> {
    let x = tensor(rng, &[2, 20]);
    let std = 0.5 + 2.0 * rng.uniform();
    fd(rng, &x, |g, v| g.gaussian_smooth(v, std))
}

fn op_bce_loss(rng: &mut RngStream) -> Result<f64> {
    let p = uniform_tensor(rng, &[8], 0.05, 0.95);
    let y: Vec<f64> = (0..8).map(|_| rng.below(2) as f64).collect();
    fd(rng, &p, |g, v| g.bce_loss(v, &y))
}

fn op_pad_crop(rng: &mut RngStream) -> Result<f64> {
    let x = tensor(rng, &[2, 9]);
    let a = fd(rng, &x, |g, v| g.pad_zeros(v, 3, 2));
    let b = fd(rng, &x, |g, v| g.crop(v, 2, 5));
    both(a, b)
}

fn op_reshape(rng: &mut RngStream) -> Result<f64> {
    let x = tensor(rng, &[2, 6]);
    fd(rng, &x, |g, v| g.reshape(v, vec![3, 4]))
}

fn smooth_signal(rng: &mut RngStream, c: usize, t: usize) -> Vec<f64> {
    let f = 0.03 + 0.05 * rng.uniform();
    let ph = rng.uniform() * 6.0;
    (0..c * t)
        .map(|i| {
            let (ci, ti) = (i / t, (i % t) as f64);
            (ti * f + ph + ci as f64).sin() + 0.5 * (ti * 0.013).cos()
        })
        .collect()
}

/// Strength gradient of one operator at a random strength.
fn strength(rng: &mut RngStream, op: AugOp, s_lo: f64, s_hi: f64) -> Result<f64> {
    let (c, t) = (2, 96);
    let x = smooth_signal(rng, c, t);
    let draw = AugDraw::sample(op, c, t, rng);
    let s0 = Tensor::scalar(s_lo + (s_hi - s_lo) * rng.uniform());
    let settings = OpSettings::with_fs(100.0);
    fd(rng, &s0, |g, s| {
        let xv = g.constant(Tensor::new(vec![c, t], x.clone())?);
        apply_op(g, op, xv, s, &draw, &settings)
    })
}

fn aug_warp(rng: &mut RngStream) -> Result<f64> {
    strength(rng, AugOp::TemporalWarp, -1.0, 1.0)
}

fn aug_noise(rng: &mut RngStream) -> Result<f64> {
    strength(rng, AugOp::GaussianNoise, -2.0, 2.0)
}

fn aug_wander(rng: &mut RngStream) -> Result<f64> {
    strength(rng, AugOp::BaselineWander, -2.0, 2.0)
}

fn aug_scale(rng: &mut RngStream) -> Result<f64> {
    strength(rng, AugOp::MagnitudeScale, -2.0, 2.0)
}

fn aug_displacement(rng: &mut RngStream) -> Result<f64> {
    strength(rng, AugOp::TemporalDisplacement, -1.0, 1.0)
}

/// Tape gradient of the straight-through factor against differences of
/// `u_i / const`, the function whose gradient the factor carries.
fn policy_factor(rng: &mut RngStream) -> Result<f64> {
    let m = 6;
    let logits = tensor(rng, &[m]);
    let gum: Vec<f64> = (0..m).map(|_| -(-rng.uniform_open().ln()).ln()).collect();
    let temp = 0.5 + rng.uniform();
    let u = relaxed_sample(logits.data(), &gum, temp);
    let i = argmax(&u);
    let numeric = check_gradient(&logits, H, |g, l| {
        let noise = g.constant(Tensor::vector(gum.clone()));
        let z = g.add(l, noise)?;
        let z = g.scale_const(z, 1.0 / temp);
        let s = g.softmax(z)?;
        let ui = g.index(s, i)?;
        Ok(g.div_const(ui, u[i]))
    })?
    .numeric;
    let mut g = Graph::new();
    let l = g.param(logits);
    let (_, f) = sample_stage(&mut g, l, temp, &gum)?;
    let analytic = g.backward(f, &[l])?.remove(0).into_data();
    Ok(relative_error(&analytic, &numeric, 1e-8))
}

/// Gradient of an augmented two-stage loss with respect to both class
/// strengths of every operator, with the logits and draws held fixed. Noise
/// is left out: it reads its input's spread as a constant, which differencing
/// through an earlier stage would not hold fixed.
fn policy_strengths(rng: &mut RngStream) -> Result<f64> {
    let ops = [
        AugOp::TemporalWarp,
        AugOp::BaselineWander,
        AugOp::MagnitudeScale,
        AugOp::TimeMask,
    ];
    let (c, t) = (2, 64);
    let mut policy = init_policy(&ops, 2, 1.0)?;
    for st in &mut policy.stages {
        st.mu0 = (0..ops.len()).map(|_| 0.5 * rng.normal()).collect();
        st.mu1 = (0..ops.len()).map(|_| 0.5 * rng.normal()).collect();
        st.logits = rng.normals(ops.len());
    }
    let x = smooth_signal(rng, c, t);
    let label = rng.below(2) as u8;
    let key = rng.next_u64();
    let plan = rng.split(key);
    let settings = OpSettings::with_fs(50.0);
    let weights = rng.normals(c * t);
    let eval = |p: &PolicyParams, want: bool| -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let vars = p.to_graph(&mut g, want);
        let xv = g.constant(Tensor::new(vec![c, t], x.clone())?);
        let (y, _) = apply_policy(&mut g, xv, label, p, &vars, &plan, &settings)?;
        let loss = probe(&mut g, y, &weights)?;
        let grad = if want { p.flat_grad(&g, loss, &vars)? } else { Vec::new() };
        Ok((g.value(loss).item(), grad))
    };
    let (_, analytic) = eval(&policy, true)?;
    let flat = policy.to_flat();
    let mut numeric = Vec::with_capacity(flat.len());
    for i in 0..flat.len() {
        let mut shifted = policy.clone();
        let mut f = flat.clone();
        f[i] += H;
        shifted.set_flat(&f)?;
        let up = eval(&shifted, false)?.0;
        f[i] -= 2.0 * H;
        shifted.set_flat(&f)?;
        let down = eval(&shifted, false)?.0;
        numeric.push((up - down) / (2.0 * H));
    }
    // Logit entries differ by design: the factor's forward value is constant.
    let m = ops.len();
    let keep = |i: usize| i % (3 * m) >= m;
    let a: Vec<f64> = analytic.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, v)| *v).collect();
    let n: Vec<f64> = numeric.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, v)| *v).collect();
    Ok(relative_error(&a, &n, 1e-8))
}

/// Directional derivative of the batch loss along a random direction.
fn model_gradient(rng: &mut RngStream) -> Result<f64> {
    let cfg = ModelConfig::desk(2, 64);
    let theta = build_model(&cfg, rng)?.to_flat();
    let x = tensor(rng, &[3, 2, 64]);
    let y: Vec<f64> = vec![0.0, 1.0, 1.0];
    let loss = |th: &[f64], want: bool| -> Result<(f64, Vec<f64>)> {
        let params = ModelParams::from_flat(&cfg, th)?;
        let mut g = Graph::new();
        let vars = params.to_graph(&mut g, want);
        let xv = g.constant(x.clone());
        let logits = forward(&mut g, &cfg, &vars, xv)?;
        let p = g.sigmoid(logits);
        let l = g.bce_loss(p, &y)?;
        let grad = if want {
            g.backward(l, &vars)?.into_iter().flat_map(|t| t.into_data()).collect()
        } else {
            Vec::new()
        };
        Ok((g.value(l).item(), grad))
    };
    let dir = rng.normals(theta.len());
    let (_, grad) = loss(&theta, true)?;
    let analytic: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
    let shifted = |s: f64| -> Vec<f64> { theta.iter().zip(&dir).map(|(t, d)| t + s * d).collect() };
    let numeric = (loss(&shifted(H), false)?.0 - loss(&shifted(-H), false)?.0) / (2.0 * H);
    Ok(relative_error(&[analytic], &[numeric], 1e-8))
}

/// `L_T = ½(θ − φ)²`, `L_V = ½θ²` at the inner optimum `θ̂ = φ`: the true
/// hypergradient is `φ`.
fn bilevel_quadratic(rng: &mut RngStream) -> Result<f64> {
    let phi = (0.5 + 1.5 * rng.uniform()) * if rng.below(2) == 0 { 1.0 } else { -1.0 };
    let theta = [phi];
    let cfg = HyperConfig {
        neumann_terms: 200,
        inner_lr: 0.5,
        ..HyperConfig::default()
    };
    let mut gth = |th: &[f64]| Ok(vec![th[0] - phi]);
    let mut gphi = |th: &[f64]| Ok(vec![phi - th[0]]);
    let h = hypergradient(&theta, &theta, 1, &cfg, &mut gth, &mut gphi)?;
    Ok(relative_error(&h.grad, &[phi], 1e-8))
}

const CHECKS: &[Check] = &[
    Check { name: "add", group: "diffcore", loose: false, run: op_add },
    Check { name: "sub", group: "diffcore", loose: false, run: op_sub },
    Check { name: "mul", group: "diffcore", loose: false, run: op_mul },
    Check { name: "scale", group: "diffcore", loose: false, run: op_scale },
    Check { name: "scale_const", group: "diffcore", loose: false, run: op_scale_const },
    Check { name: "div_const", group: "diffcore", loose: false, run: op_div_const },
    Check { name: "add_const", group: "diffcore", loose: false, run: op_add_const },
    Check { name: "matmul", group: "diffcore", loose: false, run: op_matmul },
    Check { name: "add_bias", group: "diffcore", loose: false, run: op_add_bias },
    Check { name: "conv1d", group: "diffcore", loose: false, run: op_conv1d },
    Check { name: "avgpool1d", group: "diffcore", loose: false, run: op_avgpool1d },
    Check { name: "relu", group: "diffcore", loose: false, run: op_relu },
    Check { name: "sigmoid", group: "diffcore", loose: false, run: op_sigmoid },
    Check { name: "sin", group: "diffcore", loose: false, run: op_sin },
    Check { name: "softmax", group: "diffcore", loose: false, run: op_softmax },
    Check { name: "sum", group: "diffcore", loose: false, run: op_sum },
    Check { name: "mean", group: "diffcore", loose: false, run: op_mean },
    Check { name: "index", group: "diffcore", loose: false, run: op_index },
    Check { name: "stack", group: "diffcore", loose: false, run: op_stack },
    Check { name: "linear_resample", group: "diffcore", loose: false, run: op_linear_resample },
    Check { name: "gaussian_smooth", group: "diffcore", loose: false, run: op_gaussian_smooth },
    Check { name: "bce_loss", group: "diffcore", loose: false, run: op_bce_loss },
    Check { name: "pad_zeros_crop", group: "diffcore", loose: false, run: op_pad_crop },
    Check { name: "reshape", group: "diffcore", loose: false, run: op_reshape },
    Check { name: "temporal_warp", group: "augops", loose: false, run: aug_warp },
    Check { name: "gaussian_noise", group: "augops", loose: false, run: aug_noise },
    Check { name: "baseline_wander", group: "augops", loose: false, run: aug_wander },
    Check { name: "magnitude_scale", group: "augops", loose: false, run: aug_scale },
    Check { name: "temporal_displacement", group: "augops", loose: true, run: aug_displacement },
    Check { name: "straight_through_factor", group: "policy", loose: false, run: policy_factor },
    Check { name: "policy_strengths", group: "policy", loose: false, run: policy_strengths },
    Check { name: "classifier", group: "model", loose: false, run: model_gradient },
    Check { name: "bilevel_quadratic", group: "hypergrad", loose: false, run: bilevel_quadratic },
];

/// Names of every registered check, in report order.
pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.name).collect()
}

/// Runs every check for seeds `0..cfg.seeds` and keeps the worst error of each.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let started = Instant::now();
    let mut rows = Vec::with_capacity(CHECKS.len());
    for (k, check) in CHECKS.iter().enumerate() {
        let mut worst = (f64::NEG_INFINITY, 0);
        for seed in 0..cfg.seeds {
            let mut rng = RngStream::new(seed).split(k as u64);
            let e = (check.run)(&mut rng)?;
            // NaN counts as worst.
            if !(e <= worst.0) {
                worst = (e, seed);
            }
        }
        let tolerance = if check.loose {
            cfg.displacement_tolerance
        } else {
            cfg.tolerance
        };
        rows.push(CheckRow {
            check: check.name.to_string(),
            group: check.group,
            seeds: cfg.seeds,
            max_rel_err: worst.0,
            worst_seed: worst.1,
            tolerance,
            passed: worst.0 <= tolerance,
        });
    }
    Ok(SuiteReport {
        rows,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let r = run_suite(&SuiteConfig { seeds: 3, ..SuiteConfig::default() }).unwrap();
        for row in &r.rows {
            assert!(row.passed, "{row:?}");
        }
        assert_eq!(r.rows.len(), check_names().len());
    }

    #[test]
    fn unattainable_tolerance_fails() {
        let r = run_suite(&SuiteConfig {
            seeds: 1,
            ..SuiteConfig::with_tolerance(1e-15)
        })
        .unwrap();
        assert!(!r.all_passed());
        assert!(r.failures().count() > 0);
    }

    #[test]
    fn names_are_unique() {
        let mut names = check_names();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), CHECKS.len());
    }
}
