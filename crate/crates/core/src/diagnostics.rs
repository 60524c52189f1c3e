//! Chain summaries: (step-size weighted) moments and effective sample size.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub ess: f64,
}

/// Mean and standard deviation, optionally weighted.
///
/// Weighted variance uses the reliability-weight correction
/// `Σw(x−m)² / (Σw − Σw²/Σw)`, which reduces to the unbiased sample variance for
/// uniform weights.
pub fn weighted_moments(values: &[f64], weights: Option<&[f64]>) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Argument(format!(
            "moments need at least two samples, have {}",
            values.len()
        )));
    }
    let Some(w) = weights else {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        return Ok((mean, var.sqrt()));
    };
    if w.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} samples",
            w.len(),
            values.len()
        )));
    }
    if w.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Argument("weights must be non-negative".into()));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Argument("weights sum to zero".into()));
    }
    let mean = values.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / total;
    let sq: f64 = w.iter().map(|w| w * w).sum();
    let ss: f64 = values.iter().zip(w).map(|(x, w)| w * (x - mean).powi(2)).sum();
    let denom = total - sq / total;
    let var = if denom > 0.0 { ss / denom } else { 0.0 };
    Ok((mean, var.sqrt()))
}

/// Normalized autocorrelation at lags `0..n`, computed by FFT.
pub fn autocorrelation(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = values
        .iter()
        .map(|x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    if c0 <= 0.0 {
        return vec![1.0; n.min(1)];
    }
    buf[..n].iter().map(|c| c.re / c0).collect()
}

/// ESS with Geyer's initial positive sequence truncation.
///
/// A constant trace has no defined autocorrelation; it is assigned ESS = 1.
pub fn effective_sample_size(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Argument(format!("ESS needs at least two samples, have {n}")));
    }
    let first = values[0];
    if values.iter().all(|&x| x == first) {
        return Ok(1.0);
    }
    let rho = autocorrelation(values);
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = rho[2 * m] + rho[2 * m + 1];
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        m += 1;
    }
    if tau <= 0.0 {
        return Ok(n as f64);
    }
    Ok((n as f64 / tau).max(1.0))
}

pub fn diagnostics_summary(values: &[f64], weights: Option<&[f64]>) -> Result<Summary> {
    let (mean, std) = weighted_moments(values, weights)?;
    Ok(Summary {
        mean,
        std,
        ess: effective_sample_size(values)?,
    })
}
