//! Two-part description length and the outer loop that grows the number of
//! area groups while the total cost keeps falling.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::clustering::{cluster, embed};
use crate::dynamics::{DiffusionMode, GroupAssignment};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::model::FluxCubeModel;
use crate::rng::derive_seed;
use crate::tensor::ActivityTensor;
use crate::training::{fit, TrainConfig};

/// Bits spent on each real-valued parameter.
pub const FLOAT_BITS: f64 = 32.0;
/// Diffusion entries above this value count as nonzero.
pub const NONZERO_THRESHOLD: f64 = 1e-6;
/// Lower bound on the residual standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

const LOG2_E: f64 = core::f64::consts::LOG2_E;

/// Universal code length for integers: `log2(2.865)` plus the positive
/// terms of `log2 n, log2 log2 n, ...`; zero for `n = 0`.
pub fn log_star(n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut bits = libm::log2(2.865);
    let mut x = libm::log2(n as f64);
    while x > 0.0 {
        bits += x;
        x = libm::log2(x);
    }
    bits
}

/// Gaussian code length of a residual set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataCost {
    pub bits: f64,
    pub mu: f64,
    pub sigma: f64,
}

/// `sum -log2 N(r | mu, sigma)` with the maximum-likelihood `mu` and
/// `sigma` (floored).
pub fn data_cost(residuals: &[f64]) -> Result<DataCost> {
    if residuals.is_empty() {
        return Err(Error::InvalidArgument("no residuals to encode".into()));
    }
    let n = residuals.len() as f64;
    let mu = residuals.iter().sum::<f64>() / n;
    let var = residuals.iter().map(|r| (r - mu) * (r - mu)).sum::<f64>() / n;
    let sigma = libm::sqrt(var).max(SIGMA_FLOOR);
    Ok(DataCost {
        bits: gaussian_bits(residuals, mu, sigma),
        mu,
        sigma,
    })
}

/// `sum -log2 N(r | mu, sigma)` for given `mu` and `sigma`.
pub fn gaussian_bits(residuals: &[f64], mu: f64, sigma: f64) -> f64 {
    let norm = 0.5 * libm::log2(2.0 * core::f64::consts::PI) + libm::log2(sigma);
    residuals
        .iter()
        .map(|r| {
            let z = (r - mu) / sigma;
            norm + 0.5 * z * z * LOG2_E
        })
        .sum()
}

/// Description length of the diffusion part for `nonzero` entries.
pub fn model_cost_bits(groups: usize, nonzero: usize, modeling_len: usize, keywords: usize) -> f64 {
    let per_entry = libm::log2(modeling_len as f64)
        + 2.0 * libm::log2(groups as f64)
        + libm::log2(keywords as f64)
        + FLOAT_BITS;
    log_star(groups) + nonzero as f64 * per_entry + log_star(nonzero)
}

/// Entries of `D^t`, `t = 0 .. t_c - 1`, above [`NONZERO_THRESHOLD`].
pub fn nonzero_diffusion(model: &FluxCubeModel) -> usize {
    model
        .diffusion_series(0, model.modeling_len())
        .iter()
        .flatten()
        .filter(|v| **v > NONZERO_THRESHOLD)
        .count()
}

/// Costed parts of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdlCost {
    pub groups: usize,
    pub data_cost: f64,
    pub model_cost: f64,
    pub total: f64,
    pub nonzero_d: usize,
    pub mu: f64,
    pub sigma: f64,
}

/// Model cost of a fitted model.
pub fn model_cost(model: &FluxCubeModel) -> f64 {
    model_cost_bits(
        model.group_count(),
        nonzero_diffusion(model),
        model.modeling_len(),
        model.keywords(),
    )
}

/// Total cost of `model` over its own modeling window.
pub fn total_cost(model: &FluxCubeModel) -> Result<MdlCost> {
    let residuals = model.residuals(&model.history)?;
    let data = data_cost(&residuals)?;
    let nonzero = nonzero_diffusion(model);
    let model_bits = model_cost_bits(model.group_count(), nonzero, model.modeling_len(), model.keywords());
    let total = data.bits + model_bits;
    if !total.is_finite() {
        return Err(Error::NonFinite("description length".into()));
    }
    Ok(MdlCost {
        groups: model.group_count(),
        data_cost: data.bits,
        model_cost: model_bits,
        total,
        nonzero_d: nonzero,
        mu: data.mu,
        sigma: data.sigma,
    })
}

/// One evaluated group count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub d_l: usize,
    pub data_cost: f64,
    pub model_cost: f64,
    pub total: f64,
    pub accepted: bool,
    pub nonzero_d: usize,
}

impl SelectionStep {
    fn from_cost(cost: &MdlCost, accepted: bool) -> Self {
        Self {
            d_l: cost.groups,
            data_cost: cost.data_cost,
            model_cost: cost.model_cost,
            total: cost.total,
            accepted,
            nonzero_d: cost.nonzero_d,
        }
    }
}

/// Selection result: the accepted model and anything worth telling the user.
#[derive(Debug, Clone)]
pub struct Selection {
    pub model: FluxCubeModel,
    pub warnings: Vec<String>,
}

/// Largest group count the loop may try.
pub fn group_cap(locations: usize, config: &TrainConfig) -> usize {
    if config.diffusion == DiffusionMode::Disabled {
        return 1;
    }
    locations.min(config.max_groups).max(1)
}

/// Grows the group count from 1. Each new grouping clusters the reaction
/// parameters of the last accepted model; the loop stops at the first
/// candidate that does not lower the total cost and returns the last
/// accepted model.
pub fn select<E: Executor>(window: &ActivityTensor, config: &TrainConfig, exec: &E) -> Result<Selection> {
    let l = window.locations();
    let cap = group_cap(l, config);
    let mut warnings = Vec::new();
    let (mut best, report) = fit(window, &GroupAssignment::single(l), config, exec)?;
    warnings.extend(report.warnings.iter().cloned());
    let mut best_cost = total_cost(&best)?;
    let mut trace = alloc::vec![SelectionStep::from_cost(&best_cost, true)];
    for d in 2..=cap {
        let groups = match embed(&best.params.reaction)
            .and_then(|e| cluster(&e, d, derive_seed(config.seed, d as u64), config.kmeans_restarts))
        {
            Ok(g) => g,
            Err(e) => {
                warnings.push(format!("stopped at {} groups: clustering failed ({e})", d - 1));
                break;
            }
        };
        let candidate = fit(window, &groups, config, exec).and_then(|(m, _)| total_cost(&m).map(|c| (m, c)));
        match candidate {
            Ok((model, cost)) => {
                let accepted = cost.total < best_cost.total;
                trace.push(SelectionStep::from_cost(&cost, accepted));
                if !accepted {
                    break;
                }
                best = model;
                best_cost = cost;
            }
            Err(e) => {
                warnings.push(format!("stopped at {} groups: training with {d} groups failed ({})", d - 1, e.to_string()));
                break;
            }
        }
    }
    best.trace = trace;
    if let Some(report) = best.report.as_mut() {
        report.warnings.extend(warnings.iter().cloned());
        report.warnings.dedup();
    }
    Ok(Selection { model: best, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn log_star_values() {
        let c = libm::log2(2.865);
        assert_eq!(log_star(0), 0.0);
        // log2 1 = 0 contributes nothing
        assert!((log_star(1) - c).abs() < 1e-15);
        assert!((log_star(2) - (c + 1.0)).abs() < 1e-15);
        assert!((log_star(16) - (c + 4.0 + 2.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn unit_gaussian_pair() {
        let bits = gaussian_bits(&[-1.0, 1.0], 0.0, 1.0);
        let expected = 2.0 * (0.5 * libm::log2(2.0 * core::f64::consts::PI) + 0.5 * LOG2_E);
        assert!((bits - expected).abs() < 1e-12);
        assert!((bits - 4.094).abs() < 1e-3);
        // the ML fit of {-1, 1} is exactly mu = 0, sigma = 1
        let fitted = data_cost(&[-1.0, 1.0]).unwrap();
        assert_eq!((fitted.mu, fitted.sigma), (0.0, 1.0));
        assert!((fitted.bits - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_residuals_hit_the_floor() {
        let c = data_cost(&[0.3; 5]).unwrap();
        assert_eq!(c.sigma, SIGMA_FLOOR);
        let per_point = 0.5 * libm::log2(2.0 * core::f64::consts::PI) + libm::log2(SIGMA_FLOOR);
        assert!((c.bits - 5.0 * per_point).abs() < 1e-9);
        assert!(c.bits < 0.0);
    }

    #[test]
    fn empty_residuals_are_rejected() {
        assert!(data_cost(&[]).is_err());
    }

    #[test]
    fn hand_evaluated_model_cost() {
        let expected = 10.0 * (8.0 + 4.0 + 3.0 + 32.0) + log_star(10) + log_star(4);
        assert_eq!(model_cost_bits(4, 10, 256, 8), expected);
        assert_eq!(model_cost_bits(1, 0, 256, 8), log_star(1));
    }

    #[test]
    fn halving_sigma_saves_one_bit_per_point() {
        let r: Vec<f64> = (0..200).map(|i| libm::sin(i as f64 * 0.37) * 0.2 + 0.01).collect();
        let half: Vec<f64> = r.iter().map(|v| v * 0.5).collect();
        let full = data_cost(&r).unwrap();
        let halved = data_cost(&half).unwrap();
        assert!((full.bits - halved.bits - 200.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn model_cost_grows_with_groups(nonzero in 0usize..5000, d in 1usize..11, t_c in 2usize..1000, k in 1usize..20) {
            prop_assert!(model_cost_bits(d + 1, nonzero, t_c, k) > model_cost_bits(d, nonzero, t_c, k));
        }

        #[test]
        fn shrinking_residuals_lowers_cost(r in proptest::collection::vec(-1.0f64..1.0, 3..50), s in 0.1f64..0.99) {
            let base = data_cost(&r).unwrap();
            prop_assume!(base.sigma > 1e-3);
            let scaled: Vec<f64> = r.iter().map(|v| v * s).collect();
            prop_assert!(data_cost(&scaled).unwrap().bits < base.bits);
        }

        #[test]
        fn data_cost_ignores_order(mut r in proptest::collection::vec(-1.0f64..1.0, 2..40)) {
            let a = data_cost(&r).unwrap().bits;
            r.reverse();
            let b = data_cost(&r).unwrap().bits;
            prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }
}
