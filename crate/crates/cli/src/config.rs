//! Resolved run configurations. Each command writes one next to its outputs,
//! and `--config` reads it back with flags taking precedence.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use taskaug::data::{
    generate_synthetic, load_dataset, split, LabeledDataset, NormalizeMode, Normalizer, SplitConfig,
    Splits, SynthTask, SynthTaskConfig,
};
use taskaug::hypergrad::{AugStrategy, HyperConfig, TaskAugSettings, TrainConfig};
use taskaug::model::ModelConfig;

use crate::cli::{AugArg, GenDataArgs, ModelArg, NormalizeArg, SynthArgs, TaskArg, TrainArgs};
use crate::{CmdResult, Failure};

pub const RUN_CONFIG: &str = "run_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    GenData(GenDataRun),
    Train(TrainRun),
    Eval(EvalRun),
    Gradcheck(GradcheckRun),
    InspectPolicy(InspectRun),
}

impl RunConfig {
    fn name(&self) -> &'static str {
        match self {
            RunConfig::GenData(_) => "gen-data",
            RunConfig::Train(_) => "train",
            RunConfig::Eval(_) => "eval",
            RunConfig::Gradcheck(_) => "gradcheck",
            RunConfig::InspectPolicy(_) => "inspect-policy",
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        crate::output::write_json(path, self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataRun {
    pub synth: SynthTaskConfig,
    pub n: usize,
    pub out: PathBuf,
}

impl Default for GenDataRun {
    fn default() -> Self {
        Self {
            synth: SynthTaskConfig::new(SynthTask::RrIrregularity),
            n: 512,
            out: PathBuf::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    File { path: PathBuf },
    Synthetic { config: SynthTaskConfig, n: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    pub data: DataSource,
    pub split: SplitConfig,
    pub normalize: NormalizeMode,
    pub model: ModelConfig,
    pub hyper: HyperConfig,
    pub aug: AugStrategy,
    pub taskaug: TaskAugSettings,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub out: PathBuf,
}

impl Default for TrainRun {
    fn default() -> Self {
        let synth = SynthTaskConfig::new(SynthTask::RrIrregularity);
        let base = TrainConfig::new(ModelConfig::desk(synth.leads, synth.length), AugStrategy::TaskAug, 0);
        Self {
            data: DataSource::Synthetic { config: synth, n: 512 },
            split: SplitConfig::default(),
            normalize: NormalizeMode::ZscorePerLead,
            model: base.model,
            hyper: base.hyper,
            aug: base.aug,
            taskaug: base.taskaug,
            epochs: base.epochs,
            patience: base.patience,
            batch_size: base.batch_size,
            seeds: (0..5).collect(),
            jobs: 1,
            out: PathBuf::new(),
        }
    }
}

impl TrainRun {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            hyper: self.hyper.clone(),
            aug: self.aug,
            taskaug: self.taskaug.clone(),
            epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            seed,
        }
    }

    /// Loads or generates the data, splits by patient and normalizes every
    /// split with statistics of the training split.
    pub fn prepare(&self) -> anyhow::Result<(Splits, Normalizer)> {
        let ds = match &self.data {
            DataSource::File { path } => load_dataset(path)?,
            DataSource::Synthetic { config, n } => generate_synthetic(config, *n)?,
        };
        let s = split(&ds, &self.split)?;
        let norm = Normalizer::fit(self.normalize, &s.train)?;
        Ok((
            Splits {
                train: norm.apply(&s.train),
                val: norm.apply(&s.val),
                test: norm.apply(&s.test),
            },
            norm,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTarget {
    Split(String),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    pub run: PathBuf,
    pub target: EvalTarget,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckRun {
    pub seeds: u64,
    pub tolerance: f64,
    pub displacement_tolerance: f64,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InspectRun {
    pub inputs: Vec<PathBuf>,
    pub step: Option<usize>,
    pub all_steps: bool,
    pub out: Option<PathBuf>,
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(msg.to_string())
}

/// Reads a config file written by the same command.
fn read_config(path: &Path, command: &str) -> CmdResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
    if cfg.name() != command {
        return Err(usage(format!(
            "{} is a {} config, not {command}",
            path.display(),
            cfg.name()
        )));
    }
    Ok(cfg)
}

impl From<TaskArg> for SynthTask {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::RrIrregularity => SynthTask::RrIrregularity,
            TaskArg::AmplitudeRatio => SynthTask::AmplitudeRatio,
            TaskArg::StOffset => SynthTask::StOffset,
        }
    }
}

impl From<NormalizeArg> for NormalizeMode {
    fn from(n: NormalizeArg) -> Self {
        match n {
            NormalizeArg::DivideBy1000 => NormalizeMode::DivideBy1000,
            NormalizeArg::ZscorePerLead => NormalizeMode::ZscorePerLead,
            NormalizeArg::None => NormalizeMode::None,
        }
    }
}

/// Default masked fraction when `--aug` selects a masking baseline.
const DEFAULT_MASK_FRAC: f64 = 0.1;

fn aug_strategy(aug: AugArg, frac: f64) -> AugStrategy {
    match aug {
        AugArg::None => AugStrategy::None,
        AugArg::Taskaug => AugStrategy::TaskAug,
        AugArg::Timemask => AugStrategy::TimeMask { frac },
        AugArg::Specaug => AugStrategy::SpecAug { frac },
        AugArg::Dgw => AugStrategy::Dgw,
        AugArg::Smote => AugStrategy::Smote,
    }
}

fn apply_synth(cfg: &mut SynthTaskConfig, n: &mut usize, a: &SynthArgs) {
    if let Some(t) = a.task {
        cfg.task = t.into();
    }
    if let Some(v) = a.n {
        *n = v;
    }
    if let Some(v) = a.prevalence {
        cfg.prevalence = v;
    }
    if let Some(v) = a.leads {
        cfg.leads = v;
    }
    if let Some(v) = a.length {
        cfg.length = v;
    }
    if let Some(v) = a.fs {
        cfg.fs = v;
    }
    if let Some(v) = a.noise {
        cfg.noise_floor = v;
    }
}

fn check_synth(cfg: &SynthTaskConfig, n: usize) -> CmdResult {
    if n < 10 {
        return Err(usage(format!("--n must be at least 10, got {n}")));
    }
    if !(cfg.prevalence > 0.0 && cfg.prevalence < 1.0) {
        return Err(usage(format!("--prevalence must lie in (0, 1), got {}", cfg.prevalence)));
    }
    if cfg.leads == 0 || cfg.length < 64 || !(cfg.fs > 0.0) || !(cfg.noise_floor >= 0.0) {
        return Err(usage("--leads must be >= 1, --length >= 64, --fs > 0 and --noise >= 0"));
    }
    Ok(())
}

pub fn resolve_gen_data(a: &GenDataArgs) -> CmdResult<GenDataRun> {
    let mut run = match &a.config {
        Some(p) => match read_config(p, "gen-data")? {
            RunConfig::GenData(r) => r,
            _ => unreachable!("read_config checks the command"),
        },
        None => GenDataRun::default(),
    };
    apply_synth(&mut run.synth, &mut run.n, &a.synth);
    if let Some(s) = a.seed {
        run.synth.seed = s;
    }
    if let Some(o) = &a.out {
        run.out = o.clone();
    }
    if run.out.as_os_str().is_empty() {
        return Err(usage("--out is required"));
    }
    check_synth(&run.synth, run.n)?;
    Ok(run)
}

/// `"5"` means seeds 0 to 4; `"3,8,9"` lists them.
pub fn parse_seeds(s: &str) -> CmdResult<Vec<u64>> {
    let bad = || usage(format!("--seeds expects a count or a comma-separated list, got {s:?}"));
    let seeds: Vec<u64> = if s.contains(',') {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| bad()))
            .collect::<CmdResult<_>>()?
    } else {
        let n: u64 = s.trim().parse().map_err(|_| bad())?;
        (0..n).collect()
    };
    if seeds.is_empty() {
        return Err(usage("--seeds must name at least one seed"));
    }
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(usage("--seeds contains duplicates"));
    }
    Ok(seeds)
}

pub fn resolve_train(a: &TrainArgs) -> CmdResult<TrainRun> {
    let mut run = match &a.config {
        Some(p) => match read_config(p, "train")? {
            RunConfig::Train(r) => r,
            _ => unreachable!("read_config checks the command"),
        },
        None => TrainRun::default(),
    };

    if let Some(p) = &a.data {
        run.data = DataSource::File { path: p.clone() };
    } else if let DataSource::Synthetic { config, n } = &mut run.data {
        apply_synth(config, n, &a.synth);
        if let Some(s) = a.data_seed {
            config.seed = s;
        }
        check_synth(config, *n)?;
    } else if a.synth.task.is_some() || a.synth.n.is_some() {
        return Err(usage("the config reads a dataset file; synthetic flags do not apply"));
    }

    if let Some(v) = a.split_seed {
        run.split.seed = v;
    }
    if let Some(v) = a.test_frac {
        run.split.test_frac = v;
    }
    if let Some(v) = a.val_frac {
        run.split.val_frac = v;
    }
    if a.no_stratify {
        run.split.stratify = false;
    }
    for (name, f) in [("--test-frac", run.split.test_frac), ("--val-frac", run.split.val_frac)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(usage(format!("{name} must lie in (0, 1), got {f}")));
        }
    }
    if let Some(v) = a.normalize {
        run.normalize = v.into();
    }

    // Geometry always comes from the data.
    let (leads, length) = match &run.data {
        DataSource::Synthetic { config, .. } => (config.leads, config.length),
        DataSource::File { path } => {
            let ds: LabeledDataset = load_dataset(path).map_err(|e| Failure::Runtime(e.into()))?;
            let (c, t, _) = ds.geometry().map_err(|e| Failure::Runtime(e.into()))?;
            (c, t)
        }
    };
    run.model = match a.model {
        Some(ModelArg::Desk) => ModelConfig::desk(leads, length),
        Some(ModelArg::Paper) => ModelConfig::paper_scale(leads, length),
        None => ModelConfig {
            leads,
            length,
            ..run.model
        },
    };

    if let Some(aug) = a.aug {
        run.aug = aug_strategy(aug, a.mask_frac.unwrap_or(DEFAULT_MASK_FRAC));
    } else if let Some(f) = a.mask_frac {
        if let AugStrategy::TimeMask { frac } | AugStrategy::SpecAug { frac } = &mut run.aug {
            *frac = f;
        }
    }
    if a.mask_frac.is_some() && !matches!(run.aug, AugStrategy::TimeMask { .. } | AugStrategy::SpecAug { .. }) {
        return Err(usage("--mask-frac applies only to --aug timemask or specaug"));
    }
    if let Some(v) = a.stages {
        run.taskaug.stages = v;
    }
    if let Some(v) = a.temperature {
        run.taskaug.temperature = v;
    }
    if a.freeze_policy {
        run.taskaug.freeze_policy = true;
    }
    if a.global_magnitude {
        run.taskaug.global_magnitude = true;
    }
    let taskaug_flags = a.freeze_policy || a.global_magnitude || a.stages.is_some() || a.temperature.is_some();
    if taskaug_flags && run.aug != AugStrategy::TaskAug {
        return Err(usage("policy flags apply only to --aug taskaug"));
    }

    if let Some(v) = a.inner_steps {
        run.hyper.inner_steps = v;
    }
    if let Some(v) = a.neumann {
        run.hyper.neumann_terms = v;
    }
    if let Some(v) = a.inner_lr {
        run.hyper.inner_lr = v;
    }
    if let Some(v) = a.outer_lr {
        run.hyper.outer_lr = v;
    }
    if let Some(v) = a.fd_epsilon {
        run.hyper.fd_epsilon = Some(v);
    }
    if let Some(v) = a.epochs {
        run.epochs = v;
    }
    if let Some(v) = a.patience {
        run.patience = v;
    }
    if let Some(v) = a.batch_size {
        run.batch_size = v;
    }
    if let Some(s) = &a.seeds {
        run.seeds = parse_seeds(s)?;
    }
    if let Some(j) = a.jobs {
        run.jobs = j;
    }
    if run.jobs == 0 {
        return Err(usage("--jobs must be >= 1"));
    }
    if let Some(o) = &a.out {
        run.out = o.clone();
    }
    if run.out.as_os_str().is_empty() {
        return Err(usage("--out is required"));
    }
    run.train_config(0).validate().map_err(usage)?;
    Ok(run)
}
