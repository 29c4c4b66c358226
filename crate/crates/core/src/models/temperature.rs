//! Single-parameter temperature scaling fitted on validation logits.

use nalgebra::DMatrix;

use super::mlp::MlpClassifier;
use crate::error::{Error, Result};
use crate::numerics::{bce_with_logit, sigmoid};

pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 20.0);

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureScaled {
    pub base: MlpClassifier,
    pub temperature: f64,
}

impl TemperatureScaled {
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self
            .base
            .logits(x)?
            .into_iter()
            .map(|z| sigmoid(z / self.temperature))
            .collect())
    }
}

pub fn scaled_bce(logits: &[f64], y: &[f64], temperature: f64) -> f64 {
    logits
        .iter()
        .zip(y)
        .map(|(z, t)| bce_with_logit(z / temperature, *t))
        .sum::<f64>()
        / y.len() as f64
}

/// Temperature in [0.05, 20] minimizing mean BCE of `sigmoid(z / T)`.
///
/// The loss is convex in the inverse temperature, so a golden-section
/// search over 1/T finds the global minimum. T = 1 is kept whenever the
/// search result is not strictly better.
pub fn fit_temperature_logits(logits: &[f64], y: &[f64]) -> Result<f64> {
    if logits.len() != y.len() || y.is_empty() {
        return Err(Error::Dimension {
            expected: y.len(),
            got: logits.len(),
        });
    }
    let positives = y.iter().filter(|&&t| t > 0.5).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::SingleClass(
            "temperature fit needs both classes in validation".into(),
        ));
    }
    let f = |beta: f64| scaled_bce(logits, y, 1.0 / beta);
    let (t_lo, t_hi) = TEMPERATURE_RANGE;
    let (mut a, mut b) = (1.0 / t_hi, 1.0 / t_lo);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    // stop when T = 1/β is pinned to ~1e-6 relative
    while (b - a) > 1e-7 * a.max(1e-3) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let beta = 0.5 * (a + b);
    let t = (1.0 / beta).clamp(t_lo, t_hi);
    if scaled_bce(logits, y, t) < scaled_bce(logits, y, 1.0) {
        Ok(t)
    } else {
        Ok(1.0)
    }
}

pub fn fit_temperature(
    model: &MlpClassifier,
    x_val: &DMatrix<f64>,
    y_val: &[f64],
) -> Result<TemperatureScaled> {
    let logits = model.logits(x_val)?;
    let temperature = fit_temperature_logits(&logits, y_val)?;
    Ok(TemperatureScaled {
        base: model.clone(),
        temperature,
    })
}
