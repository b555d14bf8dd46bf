use taskaug::gradcheck::{run_suite, SuiteConfig};

use super::ensure_dir;
use crate::cli::GradcheckArgs;
use crate::config::{GradcheckRun, RunConfig, RUN_CONFIG};
use crate::output::{print_csv, write_csv};
use crate::{CmdResult, Failure};

pub fn run(args: GradcheckArgs) -> CmdResult {
    if args.seeds == 0 || !(args.tolerance > 0.0) {
        return Err(Failure::Usage("--seeds must be >= 1 and --tolerance > 0".into()));
    }
    let cfg = SuiteConfig {
        seeds: args.seeds,
        ..SuiteConfig::with_tolerance(args.tolerance)
    };
    let report = run_suite(&cfg)?;
    match &args.out {
        Some(dir) => {
            ensure_dir(dir)?;
            RunConfig::Gradcheck(GradcheckRun {
                seeds: cfg.seeds,
                tolerance: cfg.tolerance,
                displacement_tolerance: cfg.displacement_tolerance,
                out: args.out.clone(),
            })
            .write(&dir.join(RUN_CONFIG))?;
            write_csv(&dir.join("gradcheck.csv"), &report.rows)?;
        }
        None => print_csv(&report.rows)?,
    }
    let failed: Vec<&str> = report.failures().map(|r| r.check.as_str()).collect();
    log::info!(
        "{} checks over {} seeds in {:.2}s, {} failed",
        report.rows.len(),
        cfg.seeds,
        report.seconds,
        failed.len()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("{} exceeded tolerance: {}", failed.len(), failed.join(", "))))
    }
}
