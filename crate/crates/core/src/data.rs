//! Labeled multichannel signals: synthetic generation, patient-level splits,
//! normalization, and on-disk storage.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::{sigmoid, Tensor};
use crate::error::{contract, io_err, Error, Result};
use crate::rng::RngStream;

/// `leads × samples` values, row-major by lead.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub leads: usize,
    pub len: usize,
    pub fs: f64,
    pub values: Vec<f64>,
}

impl Signal {
    pub fn new(leads: usize, len: usize, fs: f64, values: Vec<f64>) -> Result<Self> {
        if leads == 0 || len < 64 || !(fs > 0.0) {
            return Err(contract(
                "signal",
                format!("need leads >= 1, len >= 64, fs > 0; got {leads}, {len}, {fs}"),
            ));
        }
        if values.len() != leads * len {
            return Err(contract(
                "signal",
                format!("{} values for {leads}x{len}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(contract("signal", "non-finite sample"));
        }
        Ok(Self {
            leads,
            len,
            fs,
            values,
        })
    }

    pub fn lead(&self, c: usize) -> &[f64] {
        &self.values[c * self.len..(c + 1) * self.len]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.leads, self.len], self.values.clone()).expect("signal shape")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub signal: Signal,
    pub label: u8,
    pub patient_id: String,
    /// Created by oversampling rather than observed.
    pub synthetic: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub task: String,
    pub records: Vec<Record>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn prevalence(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.positives() as f64 / self.records.len() as f64
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.label == 1).count()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// `(leads, len, fs)` shared by every record.
    pub fn geometry(&self) -> Result<(usize, usize, f64)> {
        let first = self
            .records
            .first()
            .ok_or_else(|| contract("dataset", "dataset is empty"))?;
        let s = &first.signal;
        if self
            .records
            .iter()
            .any(|r| r.signal.leads != s.leads || r.signal.len != s.len)
        {
            return Err(contract("dataset", "records differ in shape"));
        }
        Ok((s.leads, s.len, s.fs))
    }

    /// `[B, C, T]` batch of the chosen records.
    pub fn batch(&self, idx: &[usize]) -> Result<Tensor> {
        let (c, t, _) = self.geometry()?;
        let mut data = Vec::with_capacity(idx.len() * c * t);
        for &i in idx {
            data.extend_from_slice(&self.records[i].signal.values);
        }
        Tensor::new(vec![idx.len(), c, t], data)
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            task: self.task.clone(),
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    /// Positives have five times the beat-to-beat interval jitter.
    RrIrregularity,
    /// Positives have 1.5x R-wave amplitude on the designated leads.
    AmplitudeRatio,
    /// Positives carry a raised segment between QRS and T.
    StOffset,
}

impl SynthTask {
    pub fn name(self) -> &'static str {
        match self {
            SynthTask::RrIrregularity => "rr_irregularity",
            SynthTask::AmplitudeRatio => "amplitude_ratio",
            SynthTask::StOffset => "st_offset",
        }
    }
}

impl FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rr_irregularity" => Ok(SynthTask::RrIrregularity),
            "amplitude_ratio" => Ok(SynthTask::AmplitudeRatio),
            "st_offset" => Ok(SynthTask::StOffset),
            _ => Err(Error::Malformed(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTaskConfig {
    pub task: SynthTask,
    pub leads: usize,
    pub length: usize,
    pub fs: f64,
    pub prevalence: f64,
    pub noise_floor: f64,
    pub seed: u64,
}

impl SynthTaskConfig {
    pub fn new(task: SynthTask) -> Self {
        Self {
            task,
            leads: 2,
            length: 512,
            fs: 50.0,
            prevalence: 0.2,
            noise_floor: 0.05,
            seed: 0,
        }
    }
}

/// Relative RR-interval standard deviation for negatives.
pub const RR_JITTER: f64 = 0.03;
/// Positive-to-negative ratio of RR jitter in the irregularity task.
pub const RR_JITTER_FACTOR: f64 = 5.0;

fn lead_gain(c: usize) -> f64 {
    const GAINS: [f64; 6] = [1.0, 0.7, -0.5, 0.85, 0.6, -0.3];
    GAINS[c % GAINS.len()]
}

fn bump(tau: f64, center: f64, width: f64) -> f64 {
    (-(tau - center).powi(2) / (2.0 * width * width)).exp()
}

/// One beat, `tau` seconds from the R peak. `r_amp` scales the R wave and
/// `st` is the segment elevation.
fn beat(tau: f64, r_amp: f64, st: f64) -> f64 {
    let mut v = 0.15 * bump(tau, -0.2, 0.025) - 0.1 * bump(tau, -0.035, 0.012)
        + r_amp * bump(tau, 0.0, 0.015)
        - 0.2 * bump(tau, 0.035, 0.012)
        + 0.3 * bump(tau, 0.3, 0.05);
    if st != 0.0 {
        v += st * (sigmoid((tau - 0.06) / 0.01) - sigmoid((tau - 0.22) / 0.01));
    }
    v
}

fn synth_record(cfg: &SynthTaskConfig, positive: bool, rng: &mut RngStream) -> Vec<f64> {
    let (c, t, fs) = (cfg.leads, cfg.length, cfg.fs);
    let duration = t as f64 / fs;
    let mean_rr = 0.7 + 0.3 * rng.uniform();
    let jitter = if positive && cfg.task == SynthTask::RrIrregularity {
        RR_JITTER * RR_JITTER_FACTOR
    } else {
        RR_JITTER
    };
    let mut peaks = Vec::new();
    let mut at = -rng.uniform() * mean_rr;
    while at < duration + 0.5 {
        peaks.push(at);
        at += mean_rr * (1.0 + jitter * rng.normal()).max(0.5);
    }
    let amp = 0.8 + 0.4 * rng.uniform();
    let designated = (c / 2).max(1);
    let st = if positive && cfg.task == SynthTask::StOffset {
        0.2
    } else {
        0.0
    };
    let mut out = Vec::with_capacity(c * t);
    for ci in 0..c {
        let gain = lead_gain(ci) * (0.9 + 0.2 * rng.uniform());
        let r_amp = if positive && cfg.task == SynthTask::AmplitudeRatio && ci < designated {
            1.5
        } else {
            1.0
        };
        let offset = 0.1 * rng.normal();
        for ti in 0..t {
            let time = ti as f64 / fs;
            let clean: f64 = peaks
                .iter()
                .filter(|p| (time - **p).abs() < 0.6)
                .map(|p| beat(time - p, r_amp, st))
                .sum();
            let v = gain * amp * clean + offset + cfg.noise_floor * rng.normal();
            // Stored precision is 32-bit.
            out.push(v as f32 as f64);
        }
    }
    out
}

/// Deterministic synthetic dataset with exactly `round(prevalence · n)`
/// positives, one record per patient.
pub fn generate_synthetic(cfg: &SynthTaskConfig, n: usize) -> Result<LabeledDataset> {
    if n < 10 {
        return Err(contract("generate_synthetic", format!("n must be >= 10, got {n}")));
    }
    if !(cfg.prevalence > 0.0 && cfg.prevalence < 1.0) {
        return Err(contract(
            "generate_synthetic",
            format!("prevalence must be in (0, 1), got {}", cfg.prevalence),
        ));
    }
    let root = RngStream::new(cfg.seed);
    let n_pos = (cfg.prevalence * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    root.split(u64::MAX).shuffle(&mut order);
    let mut labels = vec![0u8; n];
    for &i in &order[..n_pos] {
        labels[i] = 1;
    }
    let records = (0..n)
        .map(|i| {
            let mut rng = root.split(i as u64);
            let values = synth_record(cfg, labels[i] == 1, &mut rng);
            Ok(Record {
                signal: Signal::new(cfg.leads, cfg.length, cfg.fs, values)?,
                label: labels[i],
                patient_id: format!("P{:05}", i),
                synthetic: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledDataset {
        task: cfg.task.name().to_string(),
        records,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
    pub stratify: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_frac: 0.2,
            val_frac: 0.2,
            seed: 0,
            stratify: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

/// Splits `groups` (grouped by stratum) into a held-out part of
/// `round(frac · total)` items and the rest, allocating the held-out count
/// across strata by largest remainder.
fn carve(strata: &[Vec<usize>], frac: f64) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let total: usize = strata.iter().map(|s| s.len()).sum();
    let want = (frac * total as f64).round() as usize;
    let quotas: Vec<f64> = strata
        .iter()
        .map(|s| want as f64 * s.len() as f64 / total.max(1) as f64)
        .collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..strata.len()).collect();
    rest.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut short = want - take.iter().sum::<usize>();
    for i in rest {
        if short == 0 {
            break;
        }
        if take[i] < strata[i].len() {
            take[i] += 1;
            short -= 1;
        }
    }
    let held = strata
        .iter()
        .zip(&take)
        .map(|(s, &k)| s[..k].to_vec())
        .collect();
    let kept = strata
        .iter()
        .zip(&take)
        .map(|(s, &k)| s[k..].to_vec())
        .collect();
    (held, kept)
}

/// Patient-level train/validation/test split. The test fraction is carved
/// from all patients, then the validation fraction from what remains.
pub fn split(dataset: &LabeledDataset, cfg: &SplitConfig) -> Result<Splits> {
    let mut patients: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in dataset.records.iter().enumerate() {
        patients.entry(r.patient_id.as_str()).or_default().push(i);
    }
    if patients.len() < 3 {
        return Err(contract(
            "split",
            format!("{} patients cannot fill three splits", patients.len()),
        ));
    }
    let groups: Vec<Vec<usize>> = patients.into_values().collect();
    let mut strata: Vec<Vec<usize>> = if cfg.stratify {
        let (mut neg, mut pos) = (Vec::new(), Vec::new());
        for (gi, g) in groups.iter().enumerate() {
            if g.iter().any(|&i| dataset.records[i].label == 1) {
                pos.push(gi);
            } else {
                neg.push(gi);
            }
        }
        vec![neg, pos]
    } else {
        vec![(0..groups.len()).collect()]
    };
    let mut rng = RngStream::new(cfg.seed).split(0x5EED);
    for s in &mut strata {
        rng.shuffle(s);
    }
    let (test, dev) = carve(&strata, cfg.test_frac);
    let (val, train) = carve(&dev, cfg.val_frac);
    let collect = |parts: Vec<Vec<usize>>| -> Vec<usize> {
        let mut idx: Vec<usize> = parts
            .into_iter()
            .flatten()
            .flat_map(|gi| groups[gi].iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    };
    let (train, val, test) = (collect(train), collect(val), collect(test));
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(contract("split", "a split came out empty"));
    }
    Ok(Splits {
        train: dataset.subset(&train),
        val: dataset.subset(&val),
        test: dataset.subset(&test),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMode {
    DivideBy1000,
    ZscorePerLead,
    None,
}

impl FromStr for NormalizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "divide_by_1000" => Ok(Self::DivideBy1000),
            "zscore_per_lead" => Ok(Self::ZscorePerLead),
            "none" => Ok(Self::None),
            _ => Err(Error::Malformed(format!("unknown normalization {s:?}"))),
        }
    }
}

/// Normalization fitted on a training split and applied to every split.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    mode: NormalizeMode,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(mode: NormalizeMode, train: &LabeledDataset) -> Result<Self> {
        if mode != NormalizeMode::ZscorePerLead {
            return Ok(Self {
                mode,
                mean: Vec::new(),
                std: Vec::new(),
            });
        }
        let (c, _, _) = train.geometry()?;
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for ci in 0..c {
            let n: usize = train.records.iter().map(|r| r.signal.len).sum();
            let m = train
                .records
                .iter()
                .flat_map(|r| r.signal.lead(ci))
                .sum::<f64>()
                / n as f64;
            let var = train
                .records
                .iter()
                .flat_map(|r| r.signal.lead(ci))
                .map(|v| (v - m).powi(2))
                .sum::<f64>()
                / n as f64;
            mean[ci] = m;
            std[ci] = var.sqrt();
            if std[ci] < 1e-8 {
                log::warn!("lead {ci} has zero variance; flooring its std at 1e-8");
                std[ci] = 1e-8;
            }
        }
        Ok(Self { mode, mean, std })
    }

    pub fn apply(&self, ds: &LabeledDataset) -> LabeledDataset {
        let mut out = ds.clone();
        for r in &mut out.records {
            let t = r.signal.len;
            for (i, v) in r.signal.values.iter_mut().enumerate() {
                *v = match self.mode {
                    NormalizeMode::None => *v,
                    NormalizeMode::DivideBy1000 => *v / 1000.0,
                    NormalizeMode::ZscorePerLead => {
                        let c = i / t;
                        (*v - self.mean[c]) / self.std[c]
                    }
                };
            }
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    n: usize,
    leads: usize,
    length: usize,
    fs: f64,
    task: String,
    labels: Vec<u8>,
    patient_ids: Vec<String>,
    synthetic: Vec<bool>,
    payload: String,
    payload_bytes: u64,
}

fn dataset_payload_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Writes a JSON header at `path` and little-endian `f32` samples next to it
/// (same stem, `.bin`), record-major then lead-major.
pub fn save_dataset(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let (leads, length, fs) = dataset.geometry()?;
    let mut bytes = Vec::with_capacity(dataset.len() * leads * length * 4);
    for r in &dataset.records {
        for v in &r.signal.values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let bin = dataset_payload_path(path);
    let header = DatasetHeader {
        n: dataset.len(),
        leads,
        length,
        fs,
        task: dataset.task.clone(),
        labels: dataset.labels(),
        patient_ids: dataset.records.iter().map(|r| r.patient_id.clone()).collect(),
        synthetic: dataset.records.iter().map(|r| r.synthetic).collect(),
        payload: bin
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        payload_bytes: bytes.len() as u64,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(&bin, &bytes).map_err(io_err(&bin))?;
    fs::write(path, serde_json::to_vec_pretty(&header)?).map_err(io_err(path))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let header: DatasetHeader = serde_json::from_slice(&fs::read(path).map_err(io_err(path))?)?;
    let n = header.n;
    if header.labels.len() != n || header.patient_ids.len() != n || header.synthetic.len() != n {
        return Err(Error::Malformed(format!(
            "{}: label/patient tables do not have {n} rows",
            path.display()
        )));
    }
    let bin = path.with_file_name(&header.payload);
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    let per = header.leads * header.length;
    let expected = (n * per * 4) as u64;
    if bytes.len() as u64 != expected || header.payload_bytes != expected {
        return Err(Error::Corrupt {
            path: bin,
            expected,
            found: bytes.len() as u64,
        });
    }
    let records = (0..n)
        .map(|i| {
            let values = bytes[i * per * 4..(i + 1) * per * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            Ok(Record {
                signal: Signal::new(header.leads, header.length, header.fs, values)?,
                label: header.labels[i],
                patient_id: header.patient_ids[i].clone(),
                synthetic: header.synthetic[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledDataset {
        task: header.task,
        records,
    })
}

/// Reads rows of `patient_id,label,v_0..v_{C·T-1}` (lead-major values).
pub fn import_csv(
    path: &Path,
    leads: usize,
    length: usize,
    fs: f64,
    task: &str,
) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let bad = |what: &str| Error::Malformed(format!("{}:{}: {}", path.display(), ln + 1, what));
        let pid = fields.next().ok_or_else(|| bad("missing patient id"))?.trim();
        let label: u8 = fields
            .next()
            .and_then(|s| s.trim().parse().ok())
            .filter(|l| *l <= 1)
            .ok_or_else(|| bad("label must be 0 or 1"))?;
        let values = fields
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad("non-numeric sample")))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != leads * length {
            return Err(bad(&format!(
                "expected {} samples, found {}",
                leads * length,
                values.len()
            )));
        }
        records.push(Record {
            signal: Signal::new(leads, length, fs, values)?,
            label,
            patient_id: pid.to_string(),
            synthetic: false,
        });
    }
    Ok(LabeledDataset {
        task: task.to_string(),
        records,
    })
}
