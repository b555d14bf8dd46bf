//! Residual 1D CNN classifier producing one logit per example.

mod checkpoint;
pub mod metrics;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use metrics::{auprc, auroc, EarlyStopping, MetricRecord, StopDecision};

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{contract, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kernel: usize,
    pub stride: usize,
    /// Output channels of each residual block; the stem uses the first width.
    pub widths: Vec<usize>,
    pub leads: usize,
    pub length: usize,
}

impl ModelConfig {
    /// Two small blocks; fast enough for single-core experiments.
    pub fn desk(leads: usize, length: usize) -> Self {
        Self {
            kernel: 15,
            stride: 2,
            widths: vec![16, 32],
            leads,
            length,
        }
    }

    pub fn paper_scale(leads: usize, length: usize) -> Self {
        Self {
            widths: vec![32, 64, 128, 256],
            ..Self::desk(leads, length)
        }
    }

    /// Shortest input that leaves at least one sample after every strided conv.
    pub fn min_length(&self) -> usize {
        self.stride.pow(self.widths.len() as u32 + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(contract("build_model", "channel widths must be non-empty and positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(contract("build_model", format!("kernel {} must be odd", self.kernel)));
        }
        if self.stride == 0 || self.leads == 0 {
            return Err(contract("build_model", "stride and leads must be >= 1"));
        }
        if self.length < self.min_length() {
            return Err(contract(
                "build_model",
                format!(
                    "input length {} too short for the stride pyramid; need at least {}",
                    self.length,
                    self.min_length()
                ),
            ));
        }
        Ok(())
    }

    /// Shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let k = self.kernel;
        let w0 = self.widths[0];
        let mut shapes = vec![vec![w0, self.leads, k], vec![w0]];
        let mut cin = w0;
        for &cout in &self.widths {
            shapes.push(vec![cout, cin, k]);
            shapes.push(vec![cout]);
            shapes.push(vec![cout, cout, k]);
            shapes.push(vec![cout]);
            if self.has_projection(cin, cout) {
                shapes.push(vec![cout, cin, 1]);
                shapes.push(vec![cout]);
            }
            cin = cout;
        }
        shapes.push(vec![cin, 1]);
        shapes.push(vec![1]);
        shapes
    }

    fn has_projection(&self, cin: usize, cout: usize) -> bool {
        self.stride != 1 || cin != cout
    }

    pub fn num_params(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }
}

/// Classifier weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn from_flat(cfg: &ModelConfig, flat: &[f64]) -> Result<Self> {
        let shapes = cfg.param_shapes();
        let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if total != flat.len() {
            return Err(contract(
                "model",
                format!("expected {} parameters, got {}", total, flat.len()),
            ));
        }
        let mut off = 0;
        let mut tensors = Vec::with_capacity(shapes.len());
        for s in shapes {
            let n: usize = s.iter().product();
            tensors.push(Tensor::new(s, flat[off..off + n].to_vec())?);
            off += n;
        }
        Ok(Self { tensors })
    }

    pub fn to_graph(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }
}

/// Kaiming-uniform convolution weights, zero biases; the output layer uses
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn build_model(cfg: &ModelConfig, rng: &mut RngStream) -> Result<ModelParams> {
    cfg.validate()?;
    let shapes = cfg.param_shapes();
    let last = shapes.len() - 2;
    let tensors = shapes
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let n: usize = s.iter().product();
            if s.len() == 1 {
                return Tensor::new(s, vec![0.0; n]);
            }
            let fan_in: usize = s[1..].iter().product::<usize>();
            let bound = if i == last {
                1.0 / (s[0] as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            let data = (0..n).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect();
            Tensor::new(s, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelParams { tensors })
}

/// Logits `[B, 1]` for a `[B, C, T]` input.
pub fn forward(g: &mut Graph, cfg: &ModelConfig, params: &[Var], x: Var) -> Result<Var> {
    let pad = cfg.kernel / 2;
    let mut p = params.iter().copied();
    let mut next = || p.next().ok_or_else(|| contract("forward", "too few parameters"));

    let (w, b) = (next()?, next()?);
    let h = g.conv1d(x, w, Some(b), cfg.stride, pad)?;
    let mut h = g.relu(h);
    let mut cin = cfg.widths[0];
    for &cout in &cfg.widths {
        let (w1, b1, w2, b2) = (next()?, next()?, next()?, next()?);
        let a = g.conv1d(h, w1, Some(b1), cfg.stride, pad)?;
        let a = g.relu(a);
        let a = g.conv1d(a, w2, Some(b2), 1, pad)?;
        let skip = if cfg.has_projection(cin, cout) {
            let (wp, bp) = (next()?, next()?);
            g.conv1d(h, wp, Some(bp), cfg.stride, 0)?
        } else {
            h
        };
        let sum = g.add(a, skip)?;
        h = g.relu(sum);
        cin = cout;
    }
    let t = g.shape(h)[2];
    let pooled = g.avgpool1d(h, t)?;
    let bsz = g.shape(pooled)[0];
    let feat = g.reshape(pooled, vec![bsz, cin])?;
    let (wl, bl) = (next()?, next()?);
    let logits = g.matmul(feat, wl)?;
    g.add_bias(logits, bl)
}

/// Probabilities for a batch, no gradient tracking.
pub fn predict(cfg: &ModelConfig, params: &ModelParams, x: Tensor) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let vars = params.to_graph(&mut g, false);
    let xv = g.constant(x);
    let logits = forward(&mut g, cfg, &vars, xv)?;
    let p = g.sigmoid(logits);
    Ok(g.value(p).data().to_vec())
}
