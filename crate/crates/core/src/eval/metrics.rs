use crate::error::{Error, Result};

pub const DEFAULT_MAPE_EPSILON: f64 = 1.0;

fn check(pred: &[Vec<f64>], actual: &[Vec<f64>]) -> Result<usize> {
    if pred.len() != actual.len() || pred.iter().zip(actual).any(|(p, a)| p.len() != a.len()) {
        return Err(Error::shape("prediction and actual matrices differ in shape"));
    }
    let n: usize = pred.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::shape("no entries to score"));
    }
    Ok(n)
}

fn entries<'a>(pred: &'a [Vec<f64>], actual: &'a [Vec<f64>]) -> impl Iterator<Item = (f64, f64)> + 'a {
    pred.iter().zip(actual).flat_map(|(p, a)| p.iter().copied().zip(a.iter().copied()))
}

/// Mean of `|pred − actual| / max(|actual|, epsilon)` over all entries.
pub fn mape(pred: &[Vec<f64>], actual: &[Vec<f64>], epsilon: f64) -> Result<f64> {
    let n = check(pred, actual)?;
    if !(epsilon >= 0.0) {
        return Err(Error::config(format!("MAPE epsilon {epsilon} must be non-negative")));
    }
    let mut sum = 0.0;
    for (p, a) in entries(pred, actual) {
        let d = a.abs().max(epsilon);
        if d == 0.0 {
            return Err(Error::Validation("zero actual speed with MAPE epsilon 0".into()));
        }
        sum += (p - a).abs() / d;
    }
    Ok(sum / n as f64)
}

/// Signed `(pred − actual) / pred` averaged over all entries, the
/// denominator floored at `epsilon` in magnitude. Reported alongside
/// [`mape`] for comparison only; errors of opposite sign cancel.
pub fn mape_signed(pred: &[Vec<f64>], actual: &[Vec<f64>], epsilon: f64) -> Result<f64> {
    let n = check(pred, actual)?;
    let mut sum = 0.0;
    for (p, a) in entries(pred, actual) {
        let d = if p.abs() >= epsilon { p } else { epsilon.copysign(p) };
        if d == 0.0 {
            return Err(Error::Validation("zero predicted speed with MAPE epsilon 0".into()));
        }
        sum += (p - a) / d;
    }
    Ok(sum / n as f64)
}

/// Root of the mean squared error over all entries.
pub fn rmse(pred: &[Vec<f64>], actual: &[Vec<f64>]) -> Result<f64> {
    let n = check(pred, actual)?;
    let sum: f64 = entries(pred, actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sum / n as f64).sqrt())
}
