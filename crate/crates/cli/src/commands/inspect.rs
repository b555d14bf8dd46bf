use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::Serialize;
use taskaug::hypergrad::OuterRecord;
use taskaug::policy::PolicySnapshot;

use super::ensure_dir;
use super::train::TRAJECTORY;
use crate::cli::InspectArgs;
use crate::config::{InspectRun, RunConfig, RUN_CONFIG};
use crate::output::{csv_bytes, summarize, write_csv};
use crate::CmdResult;

#[derive(Debug, Serialize)]
pub struct ProbRow {
    pub step: String,
    pub stage: usize,
    pub operator: String,
    pub n: usize,
    pub mean: f64,
    pub stderr: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct StrengthRow {
    pub step: String,
    pub stage: usize,
    pub operator: String,
    pub n: usize,
    pub mu0_mean: f64,
    pub mu0_stderr: Option<f64>,
    pub mu1_mean: f64,
    pub mu1_stderr: Option<f64>,
}

/// Trajectory files named by `path`: the file itself, `path/trajectory.json`,
/// or those of its immediate subdirectories.
fn trajectory_files(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        bail!("{} does not exist", path.display());
    }
    let direct = path.join(TRAJECTORY);
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let mut found: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path().join(TRAJECTORY)))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        bail!("no {TRAJECTORY} under {}", path.display());
    }
    Ok(found)
}

fn check_snapshot(s: &PolicySnapshot, path: &Path, step: usize) -> anyhow::Result<()> {
    let m = s.operators.len();
    let bad = |what: &str| anyhow!("{}: outer step {step}: {what}", path.display());
    if m == 0 {
        return Err(bad("empty operator set"));
    }
    for st in &s.stages {
        if st.pi.len() != m || st.mu0.len() != m || st.mu1.len() != m {
            return Err(bad("stage tables do not match the operator count"));
        }
        let finite = st.pi.iter().chain(&st.mu0).chain(&st.mu1).all(|v| v.is_finite());
        if !finite {
            return Err(bad("non-finite entries"));
        }
        if (st.pi.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(bad("probabilities do not sum to one"));
        }
    }
    Ok(())
}

fn load(path: &Path) -> anyhow::Result<Vec<OuterRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let recs: Vec<OuterRecord> =
        serde_json::from_str(&text).with_context(|| format!("malformed trajectory {}", path.display()))?;
    if recs.is_empty() {
        bail!("{}: empty trajectory", path.display());
    }
    for r in &recs {
        check_snapshot(&r.policy, path, r.outer_step)?;
    }
    Ok(recs)
}

/// Probability and strength tables for one snapshot per run.
pub fn tabulate(step: &str, snaps: &[&PolicySnapshot]) -> anyhow::Result<(Vec<ProbRow>, Vec<StrengthRow>)> {
    let first = snaps.first().ok_or_else(|| anyhow!("no snapshots"))?;
    for s in snaps {
        if s.operators != first.operators || s.stages.len() != first.stages.len() {
            bail!("runs use different operator sets or stage counts");
        }
    }
    let (mut probs, mut strengths) = (Vec::new(), Vec::new());
    for k in 0..first.stages.len() {
        for (i, op) in first.operators.iter().enumerate() {
            let col = |f: &dyn Fn(&PolicySnapshot) -> f64| {
                summarize(&snaps.iter().map(|s| f(s)).collect::<Vec<_>>()).expect("at least one run")
            };
            let p = col(&|s| s.stages[k].pi[i]);
            let a = col(&|s| s.stages[k].mu0[i]);
            let b = col(&|s| s.stages[k].mu1[i]);
            probs.push(ProbRow {
                step: step.to_string(),
                stage: k + 1,
                operator: op.name().to_string(),
                n: snaps.len(),
                mean: p.mean,
                stderr: p.stderr,
            });
            strengths.push(StrengthRow {
                step: step.to_string(),
                stage: k + 1,
                operator: op.name().to_string(),
                n: snaps.len(),
                mu0_mean: a.mean,
                mu0_stderr: a.stderr,
                mu1_mean: b.mean,
                mu1_stderr: b.stderr,
            });
        }
    }
    Ok((probs, strengths))
}

fn tables(args: &InspectArgs) -> anyhow::Result<(Vec<ProbRow>, Vec<StrengthRow>)> {
    let mut runs = Vec::new();
    for input in &args.inputs {
        for f in trajectory_files(input)? {
            let recs = load(&f)?;
            runs.push((f, recs));
        }
    }
    let pick = |recs: &[OuterRecord], step: usize, f: &Path| -> anyhow::Result<PolicySnapshot> {
        recs.iter()
            .find(|r| r.outer_step == step)
            .map(|r| r.policy.clone())
            .ok_or_else(|| anyhow!("{} has no outer step {step}", f.display()))
    };
    if args.all_steps {
        let mut common: BTreeSet<usize> = runs[0].1.iter().map(|r| r.outer_step).collect();
        for (_, recs) in &runs[1..] {
            let s: BTreeSet<usize> = recs.iter().map(|r| r.outer_step).collect();
            common = common.intersection(&s).copied().collect();
        }
        let (mut probs, mut strengths) = (Vec::new(), Vec::new());
        for step in common {
            let snaps = runs
                .iter()
                .map(|(f, r)| pick(r, step, f))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let (p, s) = tabulate(&step.to_string(), &snaps.iter().collect::<Vec<_>>())?;
            probs.extend(p);
            strengths.extend(s);
        }
        return Ok((probs, strengths));
    }
    let (label, snaps) = match args.step {
        Some(step) => (
            step.to_string(),
            runs.iter()
                .map(|(f, r)| pick(r, step, f))
                .collect::<anyhow::Result<Vec<_>>>()?,
        ),
        None => (
            "final".to_string(),
            runs.iter()
                .map(|(_, r)| r.last().expect("non-empty").policy.clone())
                .collect(),
        ),
    };
    tabulate(&label, &snaps.iter().collect::<Vec<_>>())
}

pub fn run(args: InspectArgs) -> CmdResult {
    let (probs, strengths) = tables(&args)?;
    match &args.out {
        Some(dir) => {
            ensure_dir(dir)?;
            RunConfig::InspectPolicy(InspectRun {
                inputs: args.inputs.clone(),
                step: args.step,
                all_steps: args.all_steps,
                out: args.out.clone(),
            })
            .write(&dir.join(RUN_CONFIG))?;
            write_csv(&dir.join("probabilities.csv"), &probs)?;
            write_csv(&dir.join("strengths.csv"), &strengths)?;
        }
        None => {
            let mut text = csv_bytes(&probs)?;
            text.push(b'\n');
            text.extend(csv_bytes(&strengths)?);
            print!("{}", String::from_utf8_lossy(&text));
        }
    }
    Ok(())
}
