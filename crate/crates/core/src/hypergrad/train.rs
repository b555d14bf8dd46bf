use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{hypergradient, HyperConfig};
use crate::augops::{AugOp, OpSettings};
use crate::baselines::{dgw_augment_batch, smote, spec_augment, time_mask_baseline};
use crate::data::{LabeledDataset, Splits};
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::model::{auprc, auroc, build_model, forward, EarlyStopping, ModelConfig, ModelParams, StopDecision};
use crate::optim::{Adam, RmsProp};
use crate::policy::{apply_policy, init_policy, PolicyParams, PolicySnapshot, PolicyVars};
use crate::rng::RngStream;

pub type TrainSplits = Splits;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugStrategy {
    None,
    TaskAug,
    TimeMask { frac: f64 },
    SpecAug { frac: f64 },
    Dgw,
    Smote,
}

impl AugStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            AugStrategy::None => "none",
            AugStrategy::TaskAug => "taskaug",
            AugStrategy::TimeMask { .. } => "timemask",
            AugStrategy::SpecAug { .. } => "specaug",
            AugStrategy::Dgw => "dgw",
            AugStrategy::Smote => "smote",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskAugSettings {
    pub stages: usize,
    pub temperature: f64,
    pub operators: Vec<AugOp>,
    /// Keep the policy at its initial values.
    pub freeze_policy: bool,
    /// One strength per operator for both classes.
    pub global_magnitude: bool,
}

impl Default for TaskAugSettings {
    fn default() -> Self {
        Self {
            stages: 2,
            temperature: 1.0,
            operators: AugOp::ALL.to_vec(),
            freeze_policy: false,
            global_magnitude: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub hyper: HyperConfig,
    pub aug: AugStrategy,
    pub taskaug: TaskAugSettings,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, aug: AugStrategy, seed: u64) -> Self {
        Self {
            model,
            hyper: HyperConfig::default(),
            aug,
            taskaug: TaskAugSettings::default(),
            epochs: 30,
            patience: 10,
            batch_size: 16,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.hyper.validate()?;
        if self.epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(contract("train", "epochs, patience and batch size must be >= 1"));
        }
        match self.aug {
            AugStrategy::TimeMask { frac } | AugStrategy::SpecAug { frac } if !(0.0..=1.0).contains(&frac) => {
                Err(contract("train", format!("mask fraction {frac} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auroc: f64,
    pub val_auprc: f64,
}

/// One outer step of the policy (or the point where one would have run).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub outer_step: usize,
    pub inner_step: usize,
    /// Loss on the validation batch used for the hypergradient.
    pub val_loss: Option<f64>,
    pub grad_norm_logits: Option<f64>,
    pub grad_norm_mu0: Option<f64>,
    pub grad_norm_mu1: Option<f64>,
    pub policy: PolicySnapshot,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub strategy: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_val_auroc: f64,
    pub best_val_auprc: f64,
    pub test_loss: Option<f64>,
    pub test_auroc: Option<f64>,
    pub test_auprc: Option<f64>,
    pub inner_steps: usize,
    pub outer_steps: usize,
    pub stopped_early: bool,
    pub seconds: f64,
    /// Policy snapshots, starting with the initial policy.
    pub trajectory: Vec<OuterRecord>,
    #[serde(skip)]
    pub final_policy: Option<PolicyParams>,
    #[serde(skip)]
    pub best_params: Option<ModelParams>,
}

/// Loss and requested gradients of the mean BCE at `theta` on `(x, y)`.
struct Eval {
    loss: f64,
    theta_grad: Vec<f64>,
    input_grad: Option<Tensor>,
}

fn evaluate(
    cfg: &ModelConfig,
    theta: &[f64],
    x: &Tensor,
    y: &[f64],
    want_theta: bool,
    want_input: bool,
) -> Result<Eval> {
    let params = ModelParams::from_flat(cfg, theta)?;
    let mut g = Graph::new();
    let vars = params.to_graph(&mut g, want_theta);
    let xv = if want_input {
        g.param(x.clone())
    } else {
        g.constant(x.clone())
    };
    let logits = forward(&mut g, cfg, &vars, xv)?;
    let p = g.sigmoid(logits);
    let loss = g.bce_loss(p, y)?;
    let lv = g.value(loss).item();
    if !want_theta && !want_input {
        return Ok(Eval {
            loss: lv,
            theta_grad: Vec::new(),
            input_grad: None,
        });
    }
    let mut wrt: Vec<Var> = if want_theta { vars } else { Vec::new() };
    if want_input {
        wrt.push(xv);
    }
    let mut grads = g.backward(loss, &wrt)?;
    let input_grad = if want_input { grads.pop() } else { None };
    Ok(Eval {
        loss: lv,
        theta_grad: grads.into_iter().flat_map(|t| t.into_data()).collect(),
        input_grad,
    })
}

fn as_targets(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| l as f64).collect()
}

/// One Adam step on the batch loss. Returns the pre-step loss.
pub fn inner_step(
    cfg: &ModelConfig,
    theta: &mut [f64],
    adam: &mut Adam,
    x: &Tensor,
    labels: &[u8],
    batch_index: usize,
) -> Result<f64> {
    let e = evaluate(cfg, theta, x, &as_targets(labels), true, false)?;
    if !e.loss.is_finite() || e.theta_grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "training loss",
            batch: batch_index,
        });
    }
    adam.step(theta, &e.theta_grad)?;
    Ok(e.loss)
}

/// Mean BCE on un-augmented data.
pub fn validation_loss(cfg: &ModelConfig, theta: &[f64], x: &Tensor, labels: &[u8]) -> Result<f64> {
    if labels.is_empty() {
        return Err(contract("validation_loss", "empty batch"));
    }
    Ok(evaluate(cfg, theta, x, &as_targets(labels), false, false)?.loss)
}

/// Loss, AUROC and AUPRC over a whole split.
pub fn score_split(cfg: &ModelConfig, theta: &[f64], ds: &LabeledDataset) -> Result<(f64, f64, f64)> {
    let params = ModelParams::from_flat(cfg, theta)?;
    let mut probs = Vec::with_capacity(ds.len());
    let mut loss_sum = 0.0;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(128) {
        let x = ds.batch(chunk)?;
        let y: Vec<f64> = chunk.iter().map(|&i| ds.records[i].label as f64).collect();
        let mut g = Graph::new();
        let vars = params.to_graph(&mut g, false);
        let xv = g.constant(x);
        let logits = forward(&mut g, cfg, &vars, xv)?;
        let p = g.sigmoid(logits);
        let loss = g.bce_loss(p, &y)?;
        loss_sum += g.value(loss).item() * chunk.len() as f64;
        probs.extend_from_slice(g.value(p).data());
    }
    let labels = ds.labels();
    Ok((
        loss_sum / ds.len() as f64,
        auroc(&labels, &probs)?,
        auprc(&labels, &probs)?,
    ))
}

/// Augmented batch on a tape whose leaves include the policy parameters.
struct AugTape {
    g: Graph,
    out: Var,
    vars: PolicyVars,
}

fn taskaug_batch(
    policy: &PolicyParams,
    trainable: bool,
    x: &Tensor,
    labels: &[u8],
    plan: &RngStream,
    settings: &OpSettings,
) -> Result<AugTape> {
    let (b, c, t) = match x.shape() {
        [b, c, t] => (*b, *c, *t),
        s => return Err(contract("taskaug_batch", format!("expected [B, C, T], got {s:?}"))),
    };
    let mut g = Graph::new();
    let vars = policy.to_graph(&mut g, trainable);
    let mut outs = Vec::with_capacity(b);
    for (i, &label) in labels.iter().enumerate() {
        let xi = g.constant(Tensor::new(vec![c, t], x.data()[i * c * t..(i + 1) * c * t].to_vec())?);
        let (yi, _) = apply_policy(&mut g, xi, label, policy, &vars, &plan.split(i as u64), settings)?;
        outs.push(yi);
    }
    let out = g.stack(&outs)?;
    Ok(AugTape { g, out, vars })
}

fn baseline_batch(aug: AugStrategy, x: &Tensor, labels: &[u8], rng: &mut RngStream) -> Result<Tensor> {
    let (b, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let rows: Vec<&[f64]> = (0..b).map(|i| &x.data()[i * c * t..(i + 1) * c * t]).collect();
    let out: Vec<Vec<f64>> = match aug {
        AugStrategy::TimeMask { frac } => rows
            .iter()
            .map(|r| time_mask_baseline(r, c, frac, rng))
            .collect::<Result<_>>()?,
        AugStrategy::SpecAug { frac } => rows
            .iter()
            .map(|r| spec_augment(r, c, frac, rng))
            .collect::<Result<_>>()?,
        AugStrategy::Dgw => {
            let batch: Vec<(&[f64], u8)> = rows.iter().copied().zip(labels.iter().copied()).collect();
            dgw_augment_batch(&batch, c)?
        }
        _ => return Ok(x.clone()),
    };
    Tensor::new(vec![b, c, t], out.concat())
}

/// Gradient norms of the logits, `mu0` and `mu1` groups of a flat policy vector.
fn group_norms(policy: &PolicyParams, grad: &[f64]) -> (f64, f64, f64) {
    let m = policy.num_ops();
    let per = if policy.shared_magnitude { 2 * m } else { 3 * m };
    let (mut l, mut a, mut b) = (0.0, 0.0, 0.0);
    for stage in grad.chunks(per) {
        l += stage[..m].iter().map(|v| v * v).sum::<f64>();
        a += stage[m..2 * m].iter().map(|v| v * v).sum::<f64>();
        b += if policy.shared_magnitude {
            stage[m..2 * m].iter().map(|v| v * v).sum::<f64>()
        } else {
            stage[2 * m..].iter().map(|v| v * v).sum::<f64>()
        };
    }
    (l.sqrt(), a.sqrt(), b.sqrt())
}

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_AUG: u64 = 3;
const STREAM_VAL: u64 = 4;
const STREAM_SMOTE: u64 = 5;

/// Trains one model under `cfg.aug`, with per-epoch validation, early
/// stopping on validation loss, and test scoring of the best epoch.
pub fn train(splits: &Splits, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let started = Instant::now();
    let (leads, length, fs) = splits.train.geometry()?;
    if leads != cfg.model.leads || length != cfg.model.length {
        return Err(contract(
            "train",
            format!(
                "model expects {}x{}, data is {}x{}",
                cfg.model.leads, cfg.model.length, leads, length
            ),
        ));
    }
    let root = RngStream::new(cfg.seed);
    let mut train_set = splits.train.clone();
    if cfg.aug == AugStrategy::Smote {
        train_set = smote(&train_set, 5, &mut root.split(STREAM_SMOTE))?.dataset;
    }
    let val = &splits.val;
    let mcfg = &cfg.model;
    let mut theta = build_model(mcfg, &mut root.split(STREAM_INIT))?.to_flat();
    let mut adam = Adam::new(theta.len(), cfg.hyper.inner_lr);

    let is_taskaug = cfg.aug == AugStrategy::TaskAug;
    let ta = &cfg.taskaug;
    let mut policy = init_policy(&ta.operators, ta.stages, ta.temperature)?;
    if ta.global_magnitude {
        policy = policy.into_shared_magnitude();
    }
    let mut rms = RmsProp::new(policy.num_params(), cfg.hyper.outer_lr).with_frozen(policy.frozen_mask());
    let learn_policy = is_taskaug && !ta.freeze_policy;
    let settings = OpSettings::with_fs(fs);

    let mut trajectory = Vec::new();
    if is_taskaug {
        trajectory.push(OuterRecord {
            outer_step: 0,
            inner_step: 0,
            val_loss: None,
            grad_norm_logits: None,
            grad_norm_mu0: None,
            grad_norm_mu1: None,
            policy: policy.snapshot(),
        });
    }

    let mut early = EarlyStopping::new(cfg.patience);
    let mut epochs = Vec::new();
    let mut best_theta = theta.clone();
    let mut best_val = (f64::INFINITY, 0.0, 0.0);
    let mut stopped_early = false;
    let mut step = 0usize;
    let mut outer = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        root.split2(STREAM_SHUFFLE, epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = train_set.batch(chunk)?;
            let labels: Vec<u8> = chunk.iter().map(|&i| train_set.records[i].label).collect();
            let plan = root.split2(STREAM_AUG, step as u64);
            let tape = if is_taskaug {
                Some(taskaug_batch(&policy, learn_policy, &x, &labels, &plan, &settings)?)
            } else {
                None
            };
            let xa = match &tape {
                Some(t) => t.g.value(t.out).clone(),
                None => baseline_batch(cfg.aug, &x, &labels, &mut plan.clone())?,
            };
            let loss = inner_step(mcfg, &mut theta, &mut adam, &xa, &labels, bi)?;
            loss_sum += loss * chunk.len() as f64;
            step += 1;

            if is_taskaug && step % cfg.hyper.inner_steps == 0 {
                outer += 1;
                let mut rec = OuterRecord {
                    outer_step: outer,
                    inner_step: step,
                    val_loss: None,
                    grad_norm_logits: None,
                    grad_norm_mu0: None,
                    grad_norm_mu1: None,
                    policy: policy.snapshot(),
                };
                if let Some(tape) = tape.filter(|_| learn_policy) {
                    let mut vidx: Vec<usize> = (0..val.len()).collect();
                    root.split2(STREAM_VAL, outer as u64).shuffle(&mut vidx);
                    vidx.truncate(cfg.batch_size);
                    let xv = val.batch(&vidx)?;
                    let yv: Vec<f64> = vidx.iter().map(|&i| val.records[i].label as f64).collect();
                    let ev = evaluate(mcfg, &theta, &xv, &yv, true, false)?;
                    let y = as_targets(&labels);
                    let mut grad_theta =
                        |th: &[f64]| evaluate(mcfg, th, &xa, &y, true, false).map(|e| e.theta_grad);
                    let mut grad_phi = |th: &[f64]| {
                        let e = evaluate(mcfg, th, &xa, &y, false, true)?;
                        let seed = e.input_grad.expect("input gradient requested");
                        policy.flat_vjp(&tape.g, tape.out, seed, &tape.vars)
                    };
                    let hg = hypergradient(
                        &theta,
                        &ev.theta_grad,
                        policy.num_params(),
                        &cfg.hyper,
                        &mut grad_theta,
                        &mut grad_phi,
                    )?;
                    if !ev.loss.is_finite() || hg.grad.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite {
                            what: "hypergradient",
                            batch: bi,
                        });
                    }
                    let mut flat = policy.to_flat();
                    rms.step(&mut flat, &hg.grad)?;
                    policy.set_flat(&flat)?;
                    let (l, a, b) = group_norms(&policy, &hg.grad);
                    rec.val_loss = Some(ev.loss);
                    rec.grad_norm_logits = Some(l);
                    rec.grad_norm_mu0 = Some(a);
                    rec.grad_norm_mu1 = Some(b);
                    rec.policy = policy.snapshot();
                }
                trajectory.push(rec);
            }
        }
        let (val_loss, val_auroc, val_auprc) = score_split(mcfg, &theta, val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite {
                what: "validation loss",
                batch: 0,
            });
        }
        let train_loss = loss_sum / train_set.len() as f64;
        log::debug!(
            "{} seed {} epoch {epoch}: train {train_loss:.4} val {val_loss:.4} auroc {val_auroc:.4}",
            cfg.aug.name(),
            cfg.seed
        );
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_auroc,
            val_auprc,
        });
        let (improved, decision) = early.update(val_loss);
        if improved {
            best_theta.copy_from_slice(&theta);
            best_val = (val_loss, val_auroc, val_auprc);
        }
        if decision == StopDecision::Stop {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }

    let (test_loss, test_auroc, test_auprc) = if splits.test.is_empty() {
        (None, None, None)
    } else {
        let (l, a, p) = score_split(mcfg, &best_theta, &splits.test)?;
        (Some(l), Some(a), Some(p))
    };
    Ok(TrainReport {
        strategy: cfg.aug.name().to_string(),
        seed: cfg.seed,
        epochs,
        best_epoch: early.best_epoch(),
        best_val_loss: best_val.0,
        best_val_auroc: best_val.1,
        best_val_auprc: best_val.2,
        test_loss,
        test_auroc,
        test_auprc,
        inner_steps: step,
        outer_steps: outer,
        stopped_early,
        seconds: started.elapsed().as_secs_f64(),
        trajectory,
        final_policy: is_taskaug.then_some(policy),
        best_params: Some(ModelParams::from_flat(mcfg, &best_theta)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split, SplitConfig, SynthTask, SynthTaskConfig};

    fn tiny_splits(seed: u64) -> Splits {
        let mut sc = SynthTaskConfig::new(SynthTask::RrIrregularity);
        sc.leads = 1;
        sc.length = 64;
        sc.prevalence = 0.3;
        sc.seed = seed;
        let ds = generate_synthetic(&sc, 40).unwrap();
        split(&ds, &SplitConfig { seed, ..SplitConfig::default() }).unwrap()
    }

    fn tiny_config(aug: AugStrategy) -> TrainConfig {
        let mut cfg = TrainConfig::new(ModelConfig::desk(1, 64), aug, 3);
        cfg.epochs = 2;
        cfg.batch_size = 8;
        cfg
    }

    /// Constant-valued signals of sign `2y - 1`.
    fn separable(n: usize) -> (Tensor, Vec<u8>) {
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let data: Vec<f64> = labels
            .iter()
            .flat_map(|&y| std::iter::repeat_n(if y == 1 { 1.0 } else { -1.0 }, 64))
            .collect();
        (Tensor::new(vec![n, 1, 64], data).unwrap(), labels)
    }

    fn theta0(cfg: &ModelConfig) -> Vec<f64> {
        build_model(cfg, &mut RngStream::new(0)).unwrap().to_flat()
    }

    #[test]
    fn zero_learning_rate_keeps_theta() {
        let cfg = ModelConfig::desk(1, 64);
        let mut theta = theta0(&cfg);
        let before = theta.clone();
        let (x, y) = separable(8);
        let mut adam = Adam::new(theta.len(), 0.0);
        inner_step(&cfg, &mut theta, &mut adam, &x, &y, 0).unwrap();
        assert_eq!(theta, before);
    }

    #[test]
    fn loss_falls_on_separable_toy_set() {
        let cfg = ModelConfig::desk(1, 64);
        let mut theta = theta0(&cfg);
        let (x, y) = separable(16);
        let mut adam = Adam::new(theta.len(), 1e-2);
        let first = inner_step(&cfg, &mut theta, &mut adam, &x, &y, 0).unwrap();
        for i in 1..50 {
            inner_step(&cfg, &mut theta, &mut adam, &x, &y, i).unwrap();
        }
        let last = validation_loss(&cfg, &theta, &x, &y).unwrap();
        assert!(last < 0.1 * first, "{first} -> {last}");
    }

    #[test]
    fn zero_weights_give_ln2() {
        let cfg = ModelConfig::desk(1, 64);
        let theta = vec![0.0; cfg.num_params()];
        let (x, y) = separable(6);
        let l = validation_loss(&cfg, &theta, &x, &y).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn validation_matches_inner_loss() {
        let cfg = ModelConfig::desk(1, 64);
        let mut theta = theta0(&cfg);
        let (x, y) = separable(6);
        let v = validation_loss(&cfg, &theta, &x, &y).unwrap();
        let mut adam = Adam::new(theta.len(), 1e-3);
        assert_eq!(inner_step(&cfg, &mut theta, &mut adam, &x, &y, 0).unwrap(), v);
    }

    #[test]
    fn empty_validation_batch_rejected() {
        let cfg = ModelConfig::desk(1, 64);
        let theta = theta0(&cfg);
        let x = Tensor::zeros(&[0, 1, 64]);
        assert!(validation_loss(&cfg, &theta, &x, &[]).is_err());
    }

    #[test]
    fn non_finite_loss_names_batch() {
        let cfg = ModelConfig::desk(1, 64);
        let mut theta = theta0(&cfg);
        let (mut x, y) = separable(4);
        x.data_mut()[5] = f64::NAN;
        let mut adam = Adam::new(theta.len(), 1e-3);
        match inner_step(&cfg, &mut theta, &mut adam, &x, &y, 7) {
            Err(Error::NonFinite { batch, .. }) => assert_eq!(batch, 7),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn empty_policy_matches_plain_training() {
        let splits = tiny_splits(1);
        let plain = train(&splits, &tiny_config(AugStrategy::None)).unwrap();
        let mut cfg = tiny_config(AugStrategy::TaskAug);
        cfg.taskaug.stages = 0;
        let aug = train(&splits, &cfg).unwrap();
        assert_eq!(plain.epochs, aug.epochs);
        assert_eq!(plain.best_params, aug.best_params);
    }

    #[test]
    fn outer_step_after_every_inner_step() {
        let splits = tiny_splits(2);
        let r = train(&splits, &tiny_config(AugStrategy::TaskAug)).unwrap();
        assert_eq!(r.outer_steps, r.inner_steps);
        assert_eq!(r.trajectory.len(), r.outer_steps + 1);
        for (i, rec) in r.trajectory.iter().enumerate().skip(1) {
            assert_eq!(rec.inner_step, i);
            assert!(rec.val_loss.unwrap().is_finite());
        }
        assert_ne!(r.trajectory[0].policy, r.trajectory.last().unwrap().policy);
    }

    #[test]
    fn frozen_policy_trajectory_is_constant() {
        let splits = tiny_splits(3);
        let mut cfg = tiny_config(AugStrategy::TaskAug);
        cfg.taskaug.freeze_policy = true;
        let r = train(&splits, &cfg).unwrap();
        assert!(r.trajectory.len() > 1);
        assert!(r.trajectory.iter().all(|t| t.policy == r.trajectory[0].policy));
    }

    #[test]
    fn global_magnitude_keeps_strengths_tied() {
        let splits = tiny_splits(4);
        let mut cfg = tiny_config(AugStrategy::TaskAug);
        cfg.taskaug.global_magnitude = true;
        let r = train(&splits, &cfg).unwrap();
        for rec in &r.trajectory {
            for st in &rec.policy.stages {
                assert_eq!(st.mu0, st.mu1);
            }
        }
        assert_ne!(r.trajectory[0].policy, r.trajectory.last().unwrap().policy);
    }

    #[test]
    fn fixed_seed_reproduces_report() {
        let splits = tiny_splits(5);
        for aug in [AugStrategy::TaskAug, AugStrategy::TimeMask { frac: 0.1 }, AugStrategy::Smote] {
            let a = train(&splits, &tiny_config(aug)).unwrap();
            let b = train(&splits, &tiny_config(aug)).unwrap();
            assert_eq!(a.epochs, b.epochs);
            assert_eq!(a.trajectory, b.trajectory);
            assert_eq!(a.best_params, b.best_params);
        }
    }

    #[test]
    fn every_strategy_runs() {
        let splits = tiny_splits(6);
        for aug in [
            AugStrategy::SpecAug { frac: 0.1 },
            AugStrategy::Dgw,
            AugStrategy::TimeMask { frac: 0.2 },
        ] {
            let mut cfg = tiny_config(aug);
            cfg.epochs = 1;
            let r = train(&splits, &cfg).unwrap();
            assert_eq!(r.epochs.len(), 1);
            assert!(r.trajectory.is_empty());
            assert!(r.test_auroc.is_some());
        }
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let splits = tiny_splits(7);
        let cfg = TrainConfig::new(ModelConfig::desk(2, 64), AugStrategy::None, 0);
        assert!(train(&splits, &cfg).is_err());
    }

    #[test]
    fn bad_mask_fraction_rejected() {
        assert!(tiny_config(AugStrategy::TimeMask { frac: 1.5 }).validate().is_err());
    }
}
