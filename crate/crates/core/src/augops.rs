//! The six policy transformations, each recorded on a [`Graph`] so gradients
//! reach both the signal and the strength parameter.
//!
//! Every random quantity is drawn up front into an [`AugDraw`] that does not
//! depend on the strength, so the strength enters each op only through
//! deterministic arithmetic.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOp {
    TemporalWarp,
    BaselineWander,
    GaussianNoise,
    MagnitudeScale,
    TimeMask,
    TemporalDisplacement,
}

impl AugOp {
    pub const ALL: [AugOp; 6] = [
        AugOp::TemporalWarp,
        AugOp::BaselineWander,
        AugOp::GaussianNoise,
        AugOp::MagnitudeScale,
        AugOp::TimeMask,
        AugOp::TemporalDisplacement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugOp::TemporalWarp => "temporal_warp",
            AugOp::BaselineWander => "baseline_wander",
            AugOp::GaussianNoise => "gaussian_noise",
            AugOp::MagnitudeScale => "magnitude_scale",
            AugOp::TimeMask => "time_mask",
            AugOp::TemporalDisplacement => "temporal_displacement",
        }
    }

    /// Strength value both class strengths start from.
    pub fn initial_strength(self) -> f64 {
        match self {
            AugOp::TemporalWarp => 1.0,
            AugOp::TemporalDisplacement => 0.5,
            AugOp::BaselineWander | AugOp::GaussianNoise | AugOp::MagnitudeScale => 0.0,
            AugOp::TimeMask => 0.0,
        }
    }

    /// Time mask covers a fixed 10% and ignores its strength.
    pub fn has_learnable_strength(self) -> bool {
        self != AugOp::TimeMask
    }
}

impl fmt::Display for AugOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Malformed(format!("unknown augmentation op {s:?}")))
    }
}

/// Strength-independent randomness for one application of one op.
#[derive(Clone, Debug, PartialEq)]
pub enum AugDraw {
    /// Standard normals, one per sample of every lead.
    Noise { xi: Vec<f64> },
    /// Standard normals, one per time step.
    Warp { xi: Vec<f64> },
    Wander { amp: f64, freq: f64, phase: f64 },
    Scale { u: f64 },
    Mask { u: f64 },
    Displacement { u: f64 },
}

impl AugDraw {
    pub fn sample(op: AugOp, leads: usize, len: usize, rng: &mut RngStream) -> Self {
        match op {
            AugOp::GaussianNoise => AugDraw::Noise {
                xi: rng.normals(leads * len),
            },
            AugOp::TemporalWarp => AugDraw::Warp {
                xi: rng.normals(len),
            },
            AugOp::BaselineWander => AugDraw::Wander {
                amp: rng.uniform(),
                freq: rng.uniform(),
                phase: rng.uniform(),
            },
            AugOp::MagnitudeScale => AugDraw::Scale { u: rng.uniform() },
            AugOp::TimeMask => AugDraw::Mask { u: rng.uniform() },
            AugOp::TemporalDisplacement => AugDraw::Displacement { u: rng.uniform() },
        }
    }
}

/// Fixed settings shared by every op application.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpSettings {
    /// Sampling rate in Hz; baseline wander needs it.
    pub fs: Option<f64>,
    /// Scaling-and-squaring steps for the warp velocity field.
    pub warp_squarings: u32,
    /// Warp field smoothing width in samples; `None` means `T / 64`.
    pub warp_smooth_std: Option<f64>,
}

impl OpSettings {
    pub fn with_fs(fs: f64) -> Self {
        Self {
            fs: Some(fs),
            ..Self::default()
        }
    }
}

impl Default for OpSettings {
    fn default() -> Self {
        Self {
            fs: None,
            warp_squarings: 8,
            warp_smooth_std: None,
        }
    }
}

fn rows(g: &Graph, x: Var) -> Result<(usize, usize)> {
    match g.shape(x) {
        [c, t] => Ok((*c, *t)),
        s => Err(contract("augop", format!("expected [C, T] signal, got {:?}", s))),
    }
}

fn wrong_draw(op: AugOp) -> Error {
    contract("augop", format!("draw does not belong to {op}"))
}

/// Applies `op` at strength `s` (a scalar node) to `x` (`[C, T]`).
pub fn apply_op(
    g: &mut Graph,
    op: AugOp,
    x: Var,
    s: Var,
    draw: &AugDraw,
    settings: &OpSettings,
) -> Result<Var> {
    match op {
        AugOp::GaussianNoise => gaussian_noise(g, x, s, draw),
        AugOp::TemporalWarp => temporal_warp(g, x, s, draw, settings),
        AugOp::BaselineWander => baseline_wander(g, x, s, draw, settings.fs),
        AugOp::MagnitudeScale => magnitude_scale(g, x, s, draw),
        AugOp::TimeMask => time_mask(g, x, draw),
        AugOp::TemporalDisplacement => temporal_displacement(g, x, s, draw),
    }
}

/// `x + 0.25 · σ_lead · sigmoid(s) · ξ`, with σ_lead taken as a constant.
pub fn gaussian_noise(g: &mut Graph, x: Var, s: Var, draw: &AugDraw) -> Result<Var> {
    let AugDraw::Noise { xi } = draw else {
        return Err(wrong_draw(AugOp::GaussianNoise));
    };
    let (c, t) = rows(g, x)?;
    if xi.len() != c * t {
        return Err(contract("gaussian_noise", "draw length differs from signal"));
    }
    let vx = g.value(x).data();
    let mut noise = Vec::with_capacity(c * t);
    for ci in 0..c {
        let lead = &vx[ci * t..(ci + 1) * t];
        let mean = lead.iter().sum::<f64>() / t as f64;
        let sd = (lead.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64).sqrt();
        noise.extend(xi[ci * t..(ci + 1) * t].iter().map(|z| 0.25 * sd * z));
    }
    let noise = g.constant(Tensor::new(vec![c, t], noise)?);
    let k = g.sigmoid(s);
    let scaled = g.scale(noise, k)?;
    g.add(x, scaled)
}

/// Displacement field of the warp: integrate `v = 10 · s · ξ` by scaling and
/// squaring, then Gaussian-smooth. Returns a `[T]` node.
pub fn warp_field(
    g: &mut Graph,
    s: Var,
    xi: &[f64],
    settings: &OpSettings,
) -> Result<Var> {
    let t = xi.len();
    let xi = g.constant(Tensor::vector(xi.to_vec()));
    let s10 = g.scale_const(s, 10.0);
    let v = g.scale(xi, s10)?;
    let mut u = g.scale_const(v, 0.5f64.powi(settings.warp_squarings as i32));
    for _ in 0..settings.warp_squarings {
        let shifted = g.linear_resample(u, u)?;
        u = g.add(u, shifted)?;
    }
    let std = settings.warp_smooth_std.unwrap_or(t as f64 / 64.0);
    g.gaussian_smooth(u, std)
}

pub fn temporal_warp(
    g: &mut Graph,
    x: Var,
    s: Var,
    draw: &AugDraw,
    settings: &OpSettings,
) -> Result<Var> {
    let AugDraw::Warp { xi } = draw else {
        return Err(wrong_draw(AugOp::TemporalWarp));
    };
    let (_, t) = rows(g, x)?;
    if xi.len() != t {
        return Err(contract("temporal_warp", "draw length differs from signal"));
    }
    let field = warp_field(g, s, xi, settings)?;
    g.linear_resample(x, field)
}

/// Adds `A · sin(2π f t / fs + phase)` to every lead.
pub fn baseline_wander(
    g: &mut Graph,
    x: Var,
    s: Var,
    draw: &AugDraw,
    fs: Option<f64>,
) -> Result<Var> {
    let AugDraw::Wander { amp, freq, phase } = *draw else {
        return Err(wrong_draw(AugOp::BaselineWander));
    };
    let fs = fs
        .filter(|f| f.is_finite() && *f > 0.0)
        .ok_or_else(|| contract("baseline_wander", "signal has no sampling rate"))?;
    let (c, t) = rows(g, x)?;
    let (f, ph) = wander_frequency_phase(freq, phase);
    let wave: Vec<f64> = (0..t)
        .map(|i| (2.0 * PI * f * i as f64 / fs + ph).sin())
        .collect();
    let tiled: Vec<f64> = (0..c).flat_map(|_| wave.iter().copied()).collect();
    let wave = g.constant(Tensor::new(vec![c, t], tiled)?);
    let sig = g.sigmoid(s);
    let a = g.scale_const(sig, 0.25 * amp);
    let offset = g.scale(wave, a)?;
    g.add(x, offset)
}

/// Frequency in Hz (10 to 30 cycles per minute) and phase in radians.
pub fn wander_frequency_phase(u_freq: f64, u_phase: f64) -> (f64, f64) {
    ((20.0 * u_freq + 10.0) / 60.0, 2.0 * PI * u_phase)
}

/// Scales the signal by `sigmoid(s) · (0.75 + 0.5 u)`.
pub fn magnitude_scale(g: &mut Graph, x: Var, s: Var, draw: &AugDraw) -> Result<Var> {
    let AugDraw::Scale { u } = *draw else {
        return Err(wrong_draw(AugOp::MagnitudeScale));
    };
    let sig = g.sigmoid(s);
    let k = g.scale_const(sig, 0.75 + 0.5 * u);
    g.scale(x, k)
}

/// Number of samples the policy time mask zeroes for a length-`t` signal.
pub fn mask_len(t: usize) -> usize {
    t / 10
}

/// Zeroes `[start, start + T/10)` on all leads.
pub fn time_mask(g: &mut Graph, x: Var, draw: &AugDraw) -> Result<Var> {
    let AugDraw::Mask { u } = *draw else {
        return Err(wrong_draw(AugOp::TimeMask));
    };
    let (c, t) = rows(g, x)?;
    let len = mask_len(t);
    let start = ((u * (t - len) as f64).floor() as usize).min(t - len);
    let mut m = vec![1.0; c * t];
    for ci in 0..c {
        m[ci * t + start..ci * t + start + len].fill(0.0);
    }
    let m = g.constant(Tensor::new(vec![c, t], m)?);
    g.mul(x, m)
}

/// Offset in samples: `100 s² (2u − 1)`.
pub fn displacement_offset(s: f64, u: f64) -> f64 {
    100.0 * s * s * (2.0 * u - 1.0)
}

/// Translates the signal by `100 s² (2u − 1)` samples, zero-filling vacated
/// positions. Zero-extension before the clamped resampler keeps every source
/// position interior, so the op stays differentiable in `s`.
pub fn temporal_displacement(g: &mut Graph, x: Var, s: Var, draw: &AugDraw) -> Result<Var> {
    let AugDraw::Displacement { u } = *draw else {
        return Err(wrong_draw(AugOp::TemporalDisplacement));
    };
    let (_, t) = rows(g, x)?;
    let sv = g.value(s).item();
    let offset = displacement_offset(sv, u);
    let pad = offset.abs().ceil() as usize + 1;
    let padded = g.pad_zeros(x, pad, pad)?;
    let s2 = g.mul(s, s)?;
    let neg_offset = g.scale_const(s2, -100.0 * (2.0 * u - 1.0));
    let ones = g.constant(Tensor::full(&[t + 2 * pad], 1.0));
    let field = g.scale(ones, neg_offset)?;
    let moved = g.linear_resample(padded, field)?;
    g.crop(moved, pad, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::check_gradient;

    fn smooth_signal(c: usize, t: usize) -> Vec<f64> {
        (0..c * t)
            .map(|i| {
                let (ci, ti) = (i / t, (i % t) as f64);
                (ti * 0.05 + ci as f64).sin() + 0.5 * (ti * 0.013).cos()
            })
            .collect()
    }

    fn run(op: AugOp, x: &[f64], c: usize, t: usize, s: f64, draw: &AugDraw) -> Vec<f64> {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(vec![c, t], x.to_vec()).unwrap());
        let sv = g.constant(Tensor::scalar(s));
        let y = apply_op(&mut g, op, xv, sv, draw, &OpSettings::with_fs(100.0)).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn zero_strength_warp_and_displacement_are_exact() {
        let (c, t) = (3, 200);
        let x = smooth_signal(c, t);
        let mut rng = RngStream::new(4);
        for op in [AugOp::TemporalWarp, AugOp::TemporalDisplacement] {
            let d = AugDraw::sample(op, c, t, &mut rng);
            assert_eq!(run(op, &x, c, t, 0.0, &d), x, "{op}");
        }
    }

    #[test]
    fn saturated_low_strength_is_identity() {
        let (c, t) = (2, 128);
        let x = smooth_signal(c, t);
        let mut rng = RngStream::new(5);
        for op in [AugOp::GaussianNoise, AugOp::BaselineWander] {
            let d = AugDraw::sample(op, c, t, &mut rng);
            let y = run(op, &x, c, t, -30.0, &d);
            for (a, b) in y.iter().zip(&x) {
                assert!((a - b).abs() < 1e-9, "{op}");
            }
        }
    }

    #[test]
    fn scale_formula() {
        let x = vec![2.0, -4.0];
        let y = run(AugOp::MagnitudeScale, &x, 1, 2, 0.0, &AugDraw::Scale { u: 0.5 });
        assert_eq!(y, vec![1.0, -2.0]);
        let y = run(AugOp::MagnitudeScale, &x, 1, 2, 40.0, &AugDraw::Scale { u: 0.5 });
        assert!((y[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn noise_std_matches_formula() {
        // Lead with population σ = 2 (alternating ±2); s = 0 → 0.25·2·0.5 = 0.25.
        let t = 100_000;
        let x: Vec<f64> = (0..t).map(|i| if i % 2 == 0 { 2.0 } else { -2.0 }).collect();
        let mut rng = RngStream::new(8);
        let d = AugDraw::sample(AugOp::GaussianNoise, 1, t, &mut rng);
        let y = run(AugOp::GaussianNoise, &x, 1, t, 0.0, &d);
        let added: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let m = added.iter().sum::<f64>() / t as f64;
        let sd = (added.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t as f64).sqrt();
        assert!((sd - 0.25).abs() / 0.25 < 0.02, "{sd}");
    }

    #[test]
    fn time_mask_zeroes_tenth() {
        let t = 2500;
        let x = vec![1.0; 2 * t];
        let y = run(AugOp::TimeMask, &x, 2, t, 0.0, &AugDraw::Mask { u: 0.37 });
        for lead in y.chunks(t) {
            assert_eq!(lead.iter().filter(|v| **v == 0.0).count(), 250);
        }
        let y = run(AugOp::TimeMask, &x, 2, t, 0.0, &AugDraw::Mask { u: 0.0 });
        assert!(y[..250].iter().all(|v| *v == 0.0));
        assert_eq!(y[250], 1.0);
    }

    #[test]
    fn time_mask_keeps_unmasked_sum() {
        let t = 300;
        let x = smooth_signal(1, t);
        let y = run(AugOp::TimeMask, &x, 1, t, 0.0, &AugDraw::Mask { u: 0.5 });
        let start = (0.5 * (t - 30) as f64) as usize;
        let outside = |v: &[f64]| {
            v.iter()
                .enumerate()
                .filter(|(i, _)| *i < start || *i >= start + 30)
                .map(|(_, v)| v)
                .sum::<f64>()
        };
        assert_eq!(outside(&y), outside(&x));
    }

    #[test]
    fn integer_displacement_shifts_with_zero_fill() {
        // u = 1 → offset = 100 s²; s = 0.2 → 4 samples.
        let s = 0.2;
        let off = displacement_offset(s, 1.0);
        assert!((off - 4.0).abs() < 1e-12);
        let t = 20;
        let x: Vec<f64> = (1..=t).map(|v| v as f64).collect();
        let y = run(AugOp::TemporalDisplacement, &x, 1, t, s, &AugDraw::Displacement { u: 1.0 });
        for ti in 0..t {
            let want = if ti >= 4 { x[ti - 4] } else { 0.0 };
            assert!((y[ti] - want).abs() < 1e-9, "t={ti}: {} vs {}", y[ti], want);
        }
    }

    #[test]
    fn wander_lower_frequency_endpoint() {
        let (f, _) = wander_frequency_phase(0.0, 0.0);
        assert_eq!(f, 10.0 / 60.0);
    }

    #[test]
    fn wander_peak_amplitude() {
        let (fs, t) = (250.0, 2500);
        let x = vec![0.0; t];
        let draw = AugDraw::Wander {
            amp: 0.8,
            freq: 0.3,
            phase: 0.1,
        };
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(vec![1, t], x).unwrap());
        let sv = g.constant(Tensor::scalar(0.4));
        let y = baseline_wander(&mut g, xv, sv, &draw, Some(fs)).unwrap();
        let peak = g.value(y).data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let a = 0.25 * crate::diffcore::sigmoid(0.4) * 0.8;
        assert!((peak - a).abs() < 1e-3);
    }

    #[test]
    fn wander_requires_sampling_rate() {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::zeros(&[1, 64]));
        let sv = g.constant(Tensor::scalar(0.0));
        let d = AugDraw::Wander {
            amp: 0.5,
            freq: 0.5,
            phase: 0.5,
        };
        assert!(baseline_wander(&mut g, xv, sv, &d, None).is_err());
    }

    #[test]
    fn warp_field_shared_across_leads() {
        let (c, t) = (3, 256);
        let lead: Vec<f64> = smooth_signal(1, t);
        let x: Vec<f64> = (0..c).flat_map(|_| lead.iter().copied()).collect();
        let mut rng = RngStream::new(1);
        let d = AugDraw::sample(AugOp::TemporalWarp, c, t, &mut rng);
        let y = run(AugOp::TemporalWarp, &x, c, t, 0.7, &d);
        assert_ne!(&y[..t], &lead[..]);
        assert_eq!(&y[..t], &y[t..2 * t]);
        assert_eq!(&y[..t], &y[2 * t..]);
    }

    #[test]
    fn small_warp_is_invertible() {
        let t = 512;
        let x: Vec<f64> = (0..t).map(|i| (i as f64 * 2.0 * PI / 128.0).sin()).collect();
        let mut rng = RngStream::new(21);
        let AugDraw::Warp { xi } = AugDraw::sample(AugOp::TemporalWarp, 1, t, &mut rng) else {
            unreachable!()
        };
        let mut g = Graph::new();
        let s = g.constant(Tensor::scalar(0.1));
        let field = warp_field(&mut g, s, &xi, &OpSettings::default()).unwrap();
        let neg = g.scale_const(field, -1.0);
        let xv = g.constant(Tensor::new(vec![1, t], x.clone()).unwrap());
        let warped = g.linear_resample(xv, field).unwrap();
        let back = g.linear_resample(warped, neg).unwrap();
        let err: f64 = g
            .value(back)
            .data()
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err / norm < 1e-2, "{}", err / norm);
    }

    #[test]
    fn strength_gradients_match_fd() {
        let (c, t) = (2, 96);
        let x = smooth_signal(c, t);
        let mut rng = RngStream::new(31);
        let weights = rng.normals(c * t);
        let cases = [
            (AugOp::GaussianNoise, 0.3, 1e-4),
            (AugOp::TemporalWarp, 0.2, 1e-4),
            (AugOp::BaselineWander, -0.5, 1e-4),
            (AugOp::MagnitudeScale, 0.8, 1e-4),
            (AugOp::TemporalDisplacement, 0.37, 1e-3),
        ];
        for (op, s0, tol) in cases {
            let draw = AugDraw::sample(op, c, t, &mut rng);
            let chk = check_gradient(&Tensor::scalar(s0), 1e-6, |g, s| {
                let xv = g.constant(Tensor::new(vec![c, t], x.clone())?);
                let y = apply_op(g, op, xv, s, &draw, &OpSettings::with_fs(100.0))?;
                let w = g.constant(Tensor::new(vec![c, t], weights.clone())?);
                let p = g.mul(y, w)?;
                Ok(g.sum(p))
            })
            .unwrap();
            assert!(chk.rel_err < tol, "{op}: {}", chk.rel_err);
        }
    }

    #[test]
    fn ops_preserve_shape_and_ignore_nothing_but_draws() {
        let (c, t) = (4, 128);
        let x = smooth_signal(c, t);
        let mut rng = RngStream::new(77);
        for op in AugOp::ALL {
            let d = AugDraw::sample(op, c, t, &mut rng);
            let a = run(op, &x, c, t, 0.3, &d);
            let b = run(op, &x, c, t, 0.3, &d);
            assert_eq!(a.len(), c * t);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn op_names_round_trip() {
        for op in AugOp::ALL {
            assert_eq!(op.name().parse::<AugOp>().unwrap(), op);
        }
    }
}
