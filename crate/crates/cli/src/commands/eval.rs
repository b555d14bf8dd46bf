use std::fs;

use anyhow::Context;
use serde::Serialize;
use serde_json::json;
use taskaug::data::load_dataset;
use taskaug::hypergrad::score_split;
use taskaug::model::load_checkpoint;

use super::ensure_dir;
use super::train::{seed_dir, CHECKPOINT};
use crate::cli::{EvalArgs, SplitArg};
use crate::config::{EvalRun, EvalTarget, RunConfig, RUN_CONFIG};
use crate::output::{print_csv, summarize, write_csv, write_json};
use crate::{CmdResult, Failure};

#[derive(Debug, Serialize)]
struct EvalRow {
    seed: u64,
    target: String,
    n: usize,
    loss: f64,
    auroc: f64,
    auprc: f64,
}

pub fn run(args: EvalArgs) -> CmdResult {
    let cfg_path = args.run.join(RUN_CONFIG);
    let text = fs::read_to_string(&cfg_path)
        .with_context(|| format!("reading {}", cfg_path.display()))?;
    let train_run = match serde_json::from_str::<RunConfig>(&text)
        .with_context(|| format!("parsing {}", cfg_path.display()))?
    {
        RunConfig::Train(r) => r,
        _ => {
            return Err(Failure::Usage(format!(
                "{} is not the output directory of a train run",
                args.run.display()
            )))
        }
    };
    let (splits, norm) = train_run.prepare()?;
    let (target, label) = match &args.data {
        Some(p) => (EvalTarget::File(p.clone()), p.display().to_string()),
        None => {
            let name = match args.split {
                SplitArg::Train => "train",
                SplitArg::Val => "val",
                SplitArg::Test => "test",
            };
            (EvalTarget::Split(name.into()), name.to_string())
        }
    };
    let ds = match &target {
        EvalTarget::File(p) => norm.apply(&load_dataset(p)?),
        EvalTarget::Split(s) => match s.as_str() {
            "train" => splits.train,
            "val" => splits.val,
            _ => splits.test,
        },
    };

    let mut rows = Vec::new();
    for &seed in &train_run.seeds {
        let path = seed_dir(&args.run, seed).join(CHECKPOINT);
        let (ck, params) = load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))?;
        let (loss, auroc, auprc) = score_split(&ck.config, &params.to_flat(), &ds)?;
        rows.push(EvalRow {
            seed,
            target: label.clone(),
            n: ds.len(),
            loss,
            auroc,
            auprc,
        });
    }

    match &args.out {
        Some(dir) => {
            ensure_dir(dir)?;
            RunConfig::Eval(EvalRun {
                run: args.run.clone(),
                target,
                out: args.out.clone(),
            })
            .write(&dir.join(RUN_CONFIG))?;
            write_csv(&dir.join("eval.csv"), &rows)?;
            let col = |f: fn(&EvalRow) -> f64| summarize(&rows.iter().map(f).collect::<Vec<_>>());
            write_json(
                &dir.join("eval_aggregate.json"),
                &json!({
                    "target": label,
                    "n": rows.len(),
                    "loss": col(|r| r.loss),
                    "auroc": col(|r| r.auroc),
                    "auprc": col(|r| r.auprc),
                }),
            )?;
        }
        None => print_csv(&rows)?,
    }
    Ok(())
}
