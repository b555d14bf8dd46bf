use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use taskaug::data::Splits;
use taskaug::hypergrad::{train, TrainReport};
use taskaug::model::save_checkpoint;

use super::ensure_dir;
use crate::cli::TrainArgs;
use crate::config::{resolve_train, RunConfig, TrainRun, RUN_CONFIG};
use crate::output::{summarize, write_csv, write_json, Status, Summary};
use crate::{CmdResult, Failure};

pub const STATUS: &str = "status.json";
pub const AGGREGATE: &str = "aggregate.json";
pub const SEEDS_CSV: &str = "seeds.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const TRAJECTORY: &str = "trajectory.json";
pub const CHECKPOINT: &str = "model.json";

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// One row of `seeds.csv`.
#[derive(Debug, Serialize)]
struct SeedRow {
    seed: u64,
    strategy: String,
    epochs_run: usize,
    best_epoch: usize,
    stopped_early: bool,
    best_val_loss: f64,
    val_auroc: f64,
    val_auprc: f64,
    test_loss: Option<f64>,
    test_auroc: Option<f64>,
    test_auprc: Option<f64>,
}

impl SeedRow {
    fn new(r: &TrainReport) -> Self {
        Self {
            seed: r.seed,
            strategy: r.strategy.clone(),
            epochs_run: r.epochs.len(),
            best_epoch: r.best_epoch,
            stopped_early: r.stopped_early,
            best_val_loss: r.best_val_loss,
            val_auroc: r.best_val_auroc,
            val_auprc: r.best_val_auprc,
            test_loss: r.test_loss,
            test_auroc: r.test_auroc,
            test_auprc: r.test_auprc,
        }
    }
}

/// Per-seed run facts that vary between identical runs.
#[derive(Debug, Serialize)]
struct SeedTiming {
    seed: u64,
    seconds: f64,
    inner_steps: usize,
    outer_steps: usize,
}

#[derive(Debug, Serialize)]
struct Aggregate {
    strategy: String,
    complete: bool,
    n: usize,
    seeds: Vec<u64>,
    test_auroc: Option<Summary>,
    test_auprc: Option<Summary>,
    val_auroc: Option<Summary>,
    val_auprc: Option<Summary>,
    best_epoch: Option<Summary>,
    seconds: Option<Summary>,
}

fn write_seed(run: &TrainRun, r: &TrainReport) -> anyhow::Result<()> {
    let dir = seed_dir(&run.out, r.seed);
    ensure_dir(&dir)?;
    write_csv(&dir.join(METRICS_CSV), &r.epochs)?;
    if !r.trajectory.is_empty() {
        write_json(&dir.join(TRAJECTORY), &r.trajectory)?;
    }
    write_json(
        &dir.join("timing.json"),
        &SeedTiming {
            seed: r.seed,
            seconds: r.seconds,
            inner_steps: r.inner_steps,
            outer_steps: r.outer_steps,
        },
    )?;
    if let Some(p) = &r.best_params {
        save_checkpoint(&dir.join(CHECKPOINT), &run.model, r.seed, p)?;
    }
    Ok(())
}

fn train_seed(run: &TrainRun, splits: &Splits, seed: u64) -> anyhow::Result<TrainReport> {
    log::info!("{} seed {seed}: training", run.aug.name());
    let report = train(splits, &run.train_config(seed))?;
    write_seed(run, &report)?;
    log::info!(
        "{} seed {seed}: best epoch {} val auroc {:.4} test auroc {} ({:.1}s)",
        run.aug.name(),
        report.best_epoch,
        report.best_val_auroc,
        report.test_auroc.map_or("n/a".into(), |v| format!("{v:.4}")),
        report.seconds
    );
    Ok(report)
}

/// Trains every seed, `run.jobs` at a time. Results keep seed order.
fn train_all(run: &TrainRun, splits: &Splits) -> Vec<(u64, anyhow::Result<TrainReport>)> {
    if run.jobs <= 1 || run.seeds.len() <= 1 {
        return run.seeds.iter().map(|&s| (s, train_seed(run, splits, s))).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<anyhow::Result<TrainReport>>>> =
        Mutex::new((0..run.seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..run.jobs.min(run.seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = run.seeds.get(i) else { break };
                let r = train_seed(run, splits, seed);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let slots = slots.into_inner().expect("workers have finished");
    run.seeds
        .iter()
        .zip(slots)
        .map(|(&s, r)| (s, r.expect("every seed was claimed")))
        .collect()
}

fn aggregate(run: &TrainRun, reports: &[&TrainReport], complete: bool) -> Aggregate {
    let col = |f: &dyn Fn(&TrainReport) -> Option<f64>| -> Option<Summary> {
        let xs: Vec<f64> = reports.iter().filter_map(|r| f(r)).collect();
        summarize(&xs)
    };
    Aggregate {
        strategy: run.aug.name().to_string(),
        complete,
        n: reports.len(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        test_auroc: col(&|r| r.test_auroc),
        test_auprc: col(&|r| r.test_auprc),
        val_auroc: col(&|r| Some(r.best_val_auroc)),
        val_auprc: col(&|r| Some(r.best_val_auprc)),
        best_epoch: col(&|r| Some(r.best_epoch as f64)),
        seconds: col(&|r| Some(r.seconds)),
    }
}

pub fn run(args: Box<TrainArgs>) -> CmdResult {
    let run = resolve_train(&args)?;
    ensure_dir(&run.out)?;
    RunConfig::Train(run.clone()).write(&run.out.join(RUN_CONFIG))?;
    let status_path = run.out.join(STATUS);
    write_json(
        &status_path,
        &Status {
            complete: false,
            error: None,
            finished: &[],
        },
    )?;

    let splits = match run.prepare() {
        Ok((s, _)) => s,
        Err(e) => {
            let msg = format!("{e:#}");
            write_json(
                &status_path,
                &Status {
                    complete: false,
                    error: Some(msg),
                    finished: &[],
                },
            )?;
            return Err(Failure::Runtime(e));
        }
    };
    log::info!(
        "data: train {} ({} pos), val {} ({} pos), test {} ({} pos)",
        splits.train.len(),
        splits.train.positives(),
        splits.val.len(),
        splits.val.positives(),
        splits.test.len(),
        splits.test.positives()
    );

    let results = train_all(&run, &splits);
    let ok: Vec<&TrainReport> = results.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
    let errors: Vec<String> = results
        .iter()
        .filter_map(|(s, r)| r.as_ref().err().map(|e| format!("seed {s}: {e:#}")))
        .collect();
    let complete = errors.is_empty();
    let rows: Vec<SeedRow> = ok.iter().map(|r| SeedRow::new(r)).collect();
    write_csv(&run.out.join(SEEDS_CSV), &rows)?;
    write_json(&run.out.join(AGGREGATE), &aggregate(&run, &ok, complete))?;
    let finished: Vec<u64> = ok.iter().map(|r| r.seed).collect();
    write_json(
        &status_path,
        &Status {
            complete,
            error: (!complete).then(|| errors.join("; ")),
            finished: &finished,
        },
    )?;
    if complete {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow::anyhow!(
            "{} of {} seeds failed, outputs in {} are incomplete: {}",
            errors.len(),
            run.seeds.len(),
            run.out.display(),
            errors.join("; ")
        )))
    }
}
