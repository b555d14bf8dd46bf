use serde_json::json;
use taskaug::data::{generate_synthetic, save_dataset};

use super::ensure_dir;
use crate::cli::GenDataArgs;
use crate::config::{resolve_gen_data, RunConfig};
use crate::CmdResult;

pub fn run(args: GenDataArgs) -> CmdResult {
    let run = resolve_gen_data(&args)?;
    let ds = generate_synthetic(&run.synth, run.n)?;
    if let Some(dir) = run.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_dataset(&ds, &run.out)?;
    let cfg_path = run.out.with_extension("run_config.json");
    RunConfig::GenData(run.clone()).write(&cfg_path)?;
    let summary = json!({
        "path": run.out,
        "payload": run.out.with_extension("bin"),
        "task": ds.task,
        "n": ds.len(),
        "positives": ds.positives(),
        "prevalence": ds.prevalence(),
        "leads": run.synth.leads,
        "length": run.synth.length,
        "fs": run.synth.fs,
        "seed": run.synth.seed,
    });
    println!("{summary}");
    Ok(())
}
