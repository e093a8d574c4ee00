//! Autoregressive forecasting and error metrics.

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout, RolloutMode};
use crate::error::{Error, Result};
use crate::model::FluxCubeModel;
use crate::tensor::ActivityTensor;

pub const DEFAULT_HORIZONS: [usize; 3] = [13, 26, 52];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    /// First forecast time index (`t_c`).
    pub start: usize,
    pub horizon: usize,
    pub locations: usize,
    pub keywords: usize,
    /// `horizon x L x K`, normalized units.
    pub normalized: Vec<f64>,
    /// Raw units, when the model carries normalization statistics.
    pub denormalized: Option<Vec<f64>>,
}

impl ForecastResult {
    pub fn frame(&self, step: usize) -> &[f64] {
        let n = self.locations * self.keywords;
        &self.normalized[step * n..(step + 1) * n]
    }
}

/// Rolls the model forward `horizon` steps past the end of `history`.
///
/// The recurrence is replayed from time 0 over the history (it does not
/// read the data), then the last observed frame is fed autoregressively
/// with time and phase indices continuing from `t_c`.
pub fn forecast(model: &FluxCubeModel, history: &ActivityTensor, horizon: usize) -> Result<ForecastResult> {
    if !history.same_axes(&model.history) {
        return Err(Error::Shape("history axes differ from the model's axes".into()));
    }
    if history.len_t() == 0 {
        return Err(Error::InvalidArgument("empty history".into()));
    }
    let t_c = history.len_t();
    let last = history.frame(t_c - 1);
    let normalized = model.with_dynamics(|dynamics| {
        rollout(
            dynamics,
            &mut model.schedule(),
            last,
            horizon,
            t_c - 1,
            RolloutMode::Autoregressive,
        )
    })?;
    if normalized.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forecast".into()));
    }
    let denormalized = model.norm.as_ref().map(|n| n.denormalize(&normalized));
    Ok(ForecastResult {
        start: t_c,
        horizon,
        locations: model.locations(),
        keywords: model.keywords(),
        normalized,
        denormalized,
    })
}

/// Cumulative error over the first `horizon` steps; `None` when either
/// side is shorter than the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub horizons: Vec<HorizonMetrics>,
    /// Error at each individual step.
    pub per_step: Vec<StepMetrics>,
}

impl MetricTable {
    pub fn at(&self, horizon: usize) -> Option<&HorizonMetrics> {
        self.horizons.iter().find(|h| h.horizon == horizon)
    }
}

/// RMSE and MAE of `predictions` against `truth`, both whole `frame`-sized
/// steps.
pub fn evaluate(predictions: &[f64], truth: &[f64], frame: usize, horizons: &[usize]) -> Result<MetricTable> {
    if frame == 0 || predictions.len() % frame != 0 || truth.len() % frame != 0 {
        return Err(Error::Shape(format!(
            "predictions ({}) and truth ({}) must hold whole frames of {frame}",
            predictions.len(),
            truth.len()
        )));
    }
    let available = predictions.len().min(truth.len()) / frame;
    let per_step: Vec<StepMetrics> = (0..available)
        .map(|s| {
            let range = s * frame..(s + 1) * frame;
            let (sq, abs) = sums(&predictions[range.clone()], &truth[range]);
            StepMetrics {
                step: s + 1,
                rmse: libm::sqrt(sq / frame as f64),
                mae: abs / frame as f64,
            }
        })
        .collect();
    let horizons = horizons
        .iter()
        .map(|&h| {
            if h == 0 || h > available {
                return HorizonMetrics {
                    horizon: h,
                    rmse: None,
                    mae: None,
                };
            }
            let n = h * frame;
            let (sq, abs) = sums(&predictions[..n], &truth[..n]);
            HorizonMetrics {
                horizon: h,
                rmse: Some(libm::sqrt(sq / n as f64)),
                mae: Some(abs / n as f64),
            }
        })
        .collect();
    Ok(MetricTable { horizons, per_step })
}

fn sums(a: &[f64], b: &[f64]) -> (f64, f64) {
    a.iter().zip(b).fold((0.0, 0.0), |(sq, abs), (x, y)| {
        let e = x - y;
        (sq + e * e, abs + libm::fabs(e))
    })
}

/// Repeats the last observed value of the same phase: step `t_c + m` copies
/// `x_{t_c + m - p}`, wrapping to the previous cycle past one period.
pub fn baseline_seasonal_naive(history: &ActivityTensor, horizon: usize, period: usize) -> Result<Vec<f64>> {
    let t_c = history.len_t();
    if period == 0 || t_c < period {
        return Err(Error::InvalidArgument(format!(
            "seasonal-naive needs at least one period ({period} steps) of history, found {t_c}"
        )));
    }
    let mut out = Vec::with_capacity(horizon * history.frame_len());
    for m in 0..horizon {
        out.extend_from_slice(history.frame(t_c - period + m % period));
    }
    Ok(out)
}
