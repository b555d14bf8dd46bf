use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window: 256,
            hop: 64,
        }
    }
}

impl StftConfig {
    fn validate(&self) -> Result<()> {
        if self.window < 2 || self.hop == 0 {
            return Err(contract("stft", "window must be >= 2 and hop >= 1"));
        }
        if self.hop > self.window {
            return Err(contract(
                "stft",
                format!("hop {} exceeds window {}", self.hop, self.window),
            ));
        }
        Ok(())
    }
}

/// Complex bins `[frames × (window/2 + 1)]` of one lead, Hann-windowed.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub config: StftConfig,
    /// Length of the analysed signal.
    pub len: usize,
    pub frames: usize,
    pub bins: Vec<Complex64>,
}

impl Spectrogram {
    pub fn freq_bins(&self) -> usize {
        self.config.window / 2 + 1
    }

    pub fn at(&self, frame: usize, bin: usize) -> Complex64 {
        self.bins[frame * self.freq_bins() + bin]
    }

    pub fn set(&mut self, frame: usize, bin: usize, v: Complex64) {
        let nb = self.freq_bins();
        self.bins[frame * nb + bin] = v;
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Centered framing: the signal is zero-padded by `window/2` on the left and
/// enough on the right to fill the last frame.
fn layout(len: usize, cfg: &StftConfig) -> (usize, usize) {
    let pad = cfg.window / 2;
    let span = len + 2 * pad;
    let frames = if span <= cfg.window {
        1
    } else {
        (span - cfg.window).div_ceil(cfg.hop) + 1
    };
    (pad, frames)
}

fn plans(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let mut planner = FftPlanner::new();
    (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
}

pub fn stft(x: &[f64], cfg: StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(contract("stft", "empty signal"));
    }
    let n = cfg.window;
    let nb = n / 2 + 1;
    let (pad, frames) = layout(x.len(), &cfg);
    let w = hann(n);
    let (fwd, _) = plans(n);
    let mut bins = Vec::with_capacity(frames * nb);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..frames {
        for (i, b) in buf.iter_mut().enumerate() {
            let pos = (f * cfg.hop + i) as isize - pad as isize;
            let v = if pos >= 0 && (pos as usize) < x.len() {
                x[pos as usize]
            } else {
                0.0
            };
            *b = Complex64::new(v * w[i], 0.0);
        }
        fwd.process(&mut buf);
        bins.extend_from_slice(&buf[..nb]);
    }
    Ok(Spectrogram {
        config: cfg,
        len: x.len(),
        frames,
        bins,
    })
}

/// Weighted overlap-add inverse, normalized by the summed squared window.
pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    let cfg = spec.config;
    cfg.validate()?;
    let n = cfg.window;
    let nb = spec.freq_bins();
    let (pad, frames) = layout(spec.len, &cfg);
    if frames != spec.frames || spec.bins.len() != frames * nb {
        return Err(contract("istft", "spectrogram shape does not match its length"));
    }
    let w = hann(n);
    let (_, inv) = plans(n);
    let total = (frames - 1) * cfg.hop + n;
    let mut acc = vec![0.0; total];
    let mut wsum = vec![0.0; total];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..frames {
        let half = &spec.bins[f * nb..(f + 1) * nb];
        buf[..nb].copy_from_slice(half);
        for k in nb..n {
            buf[k] = half[n - k].conj();
        }
        inv.process(&mut buf);
        for i in 0..n {
            let t = f * cfg.hop + i;
            acc[t] += buf[i].re / n as f64 * w[i];
            wsum[t] += w[i] * w[i];
        }
    }
    Ok((0..spec.len)
        .map(|t| {
            let ws = wsum[t + pad];
            if ws > 1e-12 {
                acc[t + pad] / ws
            } else {
                0.0
            }
        })
        .collect())
}
