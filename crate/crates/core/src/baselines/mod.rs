//! Fixed augmentation strategies used as comparison arms: contiguous time
//! masking, SpecAugment, discriminative guided warping, and SMOTE.

mod dtw;
mod stft;

pub use dtw::{dtw, warp_onto, DtwResult};
pub use stft::{hann, istft, stft, Spectrogram, StftConfig};

use rustfft::num_complex::Complex64;

use crate::data::{LabeledDataset, Record, Signal};
use crate::error::{contract, Result};
use crate::rng::RngStream;

fn check_frac(op: &'static str, w: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&w) {
        return Err(contract(op, format!("mask fraction {w} outside [0, 1]")));
    }
    Ok(())
}

/// Zeroes `round(w·T)` contiguous samples on every lead of a `leads × T` signal.
pub fn time_mask_baseline(x: &[f64], leads: usize, w: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    check_frac("time_mask_baseline", w)?;
    let t = x.len() / leads.max(1);
    let len = (w * t as f64).round() as usize;
    let start = rng.below(t - len + 1);
    let mut out = x.to_vec();
    for c in 0..leads {
        out[c * t + start..c * t + start + len].fill(0.0);
    }
    Ok(out)
}

/// Contiguous frame and frequency masks, as `(start, len)` each.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpecMask {
    pub frames: (usize, usize),
    pub freqs: (usize, usize),
}

/// Applies a fixed mask to one lead.
pub fn spec_augment_with(x: &[f64], mask: SpecMask, cfg: StftConfig) -> Result<Vec<f64>> {
    let mut spec = stft(x, cfg)?;
    let zero = Complex64::new(0.0, 0.0);
    let nb = spec.freq_bins();
    for f in 0..spec.frames {
        let in_frames = f >= mask.frames.0 && f < mask.frames.0 + mask.frames.1;
        for b in 0..nb {
            let in_freqs = b >= mask.freqs.0 && b < mask.freqs.0 + mask.freqs.1;
            if in_frames || in_freqs {
                spec.set(f, b, zero);
            }
        }
    }
    istft(&spec)
}

/// SpecAugment on a `leads × T` signal: each lead gets its own random
/// frame and frequency masks of fraction `w`.
pub fn spec_augment(x: &[f64], leads: usize, w: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    spec_augment_cfg(x, leads, w, StftConfig::default(), rng)
}

pub fn spec_augment_cfg(
    x: &[f64],
    leads: usize,
    w: f64,
    cfg: StftConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    check_frac("spec_augment", w)?;
    let t = x.len() / leads.max(1);
    let mut out = Vec::with_capacity(x.len());
    for c in 0..leads {
        let lead = &x[c * t..(c + 1) * t];
        let probe = stft(lead, cfg)?;
        let (frames, bins) = (probe.frames, probe.freq_bins());
        let fl = (w * frames as f64).round() as usize;
        let bl = (w * bins as f64).round() as usize;
        let mask = SpecMask {
            frames: (rng.below(frames - fl + 1), fl),
            freqs: (rng.below(bins - bl + 1), bl),
        };
        out.extend(spec_augment_with(lead, mask, cfg)?);
    }
    Ok(out)
}

/// Index into `batch` of the DGW reference for class `y`: the same-class
/// member maximizing mean DTW cost to other-class members minus mean DTW
/// cost to the remaining same-class members. Without other-class members the
/// same-class medoid is used. Returns `None` when no member has label `y`.
pub fn dgw_reference(batch: &[(&[f64], u8)], y: u8, leads: usize) -> Result<Option<usize>> {
    let same: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].1 == y).collect();
    let other: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].1 != y).collect();
    if same.is_empty() {
        return Ok(None);
    }
    let cost = |i: usize, j: usize| dtw(batch[i].0, batch[j].0, leads).map(|r| r.cost);
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    if other.is_empty() {
        log::warn!("DGW batch lacks the other class; using the same-class medoid as reference");
    }
    let mut best: Option<(usize, f64)> = None;
    for &r in &same {
        let to_same = same
            .iter()
            .filter(|&&s| s != r)
            .map(|&s| cost(r, s))
            .collect::<Result<Vec<_>>>()?;
        let score = if other.is_empty() {
            -to_same.iter().sum::<f64>()
        } else {
            let to_other = other.iter().map(|&o| cost(r, o)).collect::<Result<Vec<_>>>()?;
            mean(&to_other) - mean(&to_same)
        };
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((r, score));
        }
    }
    Ok(best.map(|(i, _)| i))
}

/// Warps every batch member onto its class reference.
pub fn dgw_augment_batch(batch: &[(&[f64], u8)], leads: usize) -> Result<Vec<Vec<f64>>> {
    let refs = [dgw_reference(batch, 0, leads)?, dgw_reference(batch, 1, leads)?];
    batch
        .iter()
        .map(|(x, y)| match refs[*y as usize] {
            Some(r) => warp_onto(x, batch[r].0, leads),
            None => Ok(x.to_vec()),
        })
        .collect()
}

/// Single-example form: warps `x` onto the reference chosen from `batch`.
pub fn dgw_augment(x: &[f64], y: u8, batch: &[(&[f64], u8)], leads: usize) -> Result<Vec<f64>> {
    match dgw_reference(batch, y, leads)? {
        Some(r) => warp_onto(x, batch[r].0, leads),
        None => Ok(x.to_vec()),
    }
}

/// Which records a synthetic example interpolates, and where.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoteOrigin {
    pub base: usize,
    pub neighbor: usize,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoteOutput {
    pub dataset: LabeledDataset,
    /// One entry per appended synthetic record, indices into the input.
    pub origins: Vec<SmoteOrigin>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Oversamples the minority class to an exact balance by interpolating each
/// minority base toward one of its `k` nearest minority neighbours.
pub fn smote(dataset: &LabeledDataset, k: usize, rng: &mut RngStream) -> Result<SmoteOutput> {
    let pos: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.records[i].label == 1).collect();
    let neg: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.records[i].label == 0).collect();
    let (minority, need) = if pos.len() < neg.len() {
        let need = neg.len() - pos.len();
        (pos, need)
    } else {
        let need = pos.len() - neg.len();
        (neg, need)
    };
    if need == 0 {
        return Ok(SmoteOutput {
            dataset: dataset.clone(),
            origins: Vec::new(),
        });
    }
    if minority.len() < 2 {
        return Err(contract(
            "smote",
            format!("need at least 2 minority examples, found {}", minority.len()),
        ));
    }
    if k == 0 {
        return Err(contract("smote", "k must be >= 1"));
    }
    let k = k.min(minority.len() - 1);
    let values = |i: usize| &dataset.records[i].signal.values;
    let neighbours: Vec<Vec<usize>> = minority
        .iter()
        .map(|&i| {
            let mut d: Vec<(f64, usize)> = minority
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (sq_dist(values(i), values(j)), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();
    let mut out = dataset.clone();
    let mut origins = Vec::with_capacity(need);
    for s in 0..need {
        let slot = s % minority.len();
        let base = minority[slot];
        let neighbor = neighbours[slot][rng.below(k)];
        let lambda = rng.uniform();
        let src = &dataset.records[base];
        let values: Vec<f64> = src
            .signal
            .values
            .iter()
            .zip(values(neighbor))
            .map(|(a, b)| a + lambda * (b - a))
            .collect();
        out.records.push(Record {
            signal: Signal::new(src.signal.leads, src.signal.len, src.signal.fs, values)?,
            label: src.label,
            patient_id: format!("smote-{s:05}"),
            synthetic: true,
        });
        origins.push(SmoteOrigin {
            base,
            neighbor,
            lambda,
        });
    }
    Ok(SmoteOutput {
        dataset: out,
        origins,
    })
}
