use crate::error::{contract, Result};

/// Minimal-cost monotone alignment of two multichannel sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct DtwResult {
    pub cost: f64,
    /// Index pairs from `(0, 0)` to `(n-1, m-1)`.
    pub path: Vec<(usize, usize)>,
}

/// Euclidean distance between sample `i` of `a` and sample `j` of `b`, both
/// stored lead-major with `leads` rows.
fn local(a: &[f64], n: usize, i: usize, b: &[f64], m: usize, j: usize, leads: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..leads {
        let d = a[c * n + i] - b[c * m + j];
        s += d * d;
    }
    s.sqrt()
}

/// Full-window DTW between `a` (`leads × n`) and `b` (`leads × m`).
pub fn dtw(a: &[f64], b: &[f64], leads: usize) -> Result<DtwResult> {
    if leads == 0 || a.is_empty() || b.is_empty() {
        return Err(contract("dtw", "empty input"));
    }
    if a.len() % leads != 0 || b.len() % leads != 0 {
        return Err(contract("dtw", "sample count not divisible by lead count"));
    }
    let (n, m) = (a.len() / leads, b.len() / leads);
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let d = local(a, n, i, b, m, j, leads);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = d + best;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
        let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
        let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwResult {
        cost: acc[n * m - 1],
        path,
    })
}

/// Re-times `x` onto the time base of `reference`: output sample `j` is the
/// mean of the `x` samples aligned to reference index `j`.
pub fn warp_onto(x: &[f64], reference: &[f64], leads: usize) -> Result<Vec<f64>> {
    let res = dtw(x, reference, leads)?;
    let (n, m) = (x.len() / leads, reference.len() / leads);
    let mut out = vec![0.0; leads * m];
    let mut count = vec![0usize; m];
    for &(i, j) in &res.path {
        count[j] += 1;
        for c in 0..leads {
            out[c * m + j] += x[c * n + i];
        }
    }
    for c in 0..leads {
        for j in 0..m {
            out[c * m + j] /= count[j] as f64;
        }
    }
    Ok(out)
}
