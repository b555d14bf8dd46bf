use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Serializes `rows` as CSV with a header taken from the first row's fields.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    fs::write(path, csv_bytes(rows)?).with_context(|| format!("writing {}", path.display()))
}

pub fn print_csv<T: Serialize>(rows: &[T]) -> anyhow::Result<()> {
    std::io::stdout().write_all(&csv_bytes(rows)?)?;
    Ok(())
}

/// Mean and standard error of the mean across runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; absent for a single run.
    pub stderr: Option<f64>,
}

pub fn summarize(xs: &[f64]) -> Option<Summary> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let stderr = (xs.len() > 1).then(|| {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    Some(Summary { mean, stderr })
}

/// Completion marker written before work starts and rewritten at the end.
#[derive(Debug, Serialize)]
pub struct Status<'a> {
    pub complete: bool,
    pub error: Option<String>,
    pub finished: &'a [u64],
}
