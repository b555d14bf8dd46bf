//! Central finite-difference checks against the tape's gradients.

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing an analytic gradient with a numeric one.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_err: f64,
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, floor)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(floor)
}

/// Compares `d loss / d input` from the tape against central differences with
/// step `h`. `build` receives a fresh graph and the input node and returns the
/// scalar loss.
pub fn check_gradient<F>(input: &Tensor, h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.param(input.clone());
    let loss = build(&mut g, x)?;
    let analytic = g.backward(loss, &[x])?.remove(0).into_data();

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.param(t);
        let loss = build(&mut g, x)?;
        Ok(g.value(loss).item())
    };
    let mut numeric = Vec::with_capacity(input.len());
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += h;
        let mut minus = input.clone();
        minus.data_mut()[i] -= h;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * h));
    }
    let rel_err = relative_error(&analytic, &numeric, 1e-8);
    Ok(GradCheck {
        analytic,
        numeric,
        rel_err,
    })
}
