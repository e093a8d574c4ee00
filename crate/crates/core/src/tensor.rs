//! Activity tensors, min-max normalization and modeling/forecast splits.
//!
//! Values are stored flat in `(t, location, keyword)` row-major order, so a
//! single time step is a contiguous `L * K` frame.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper clamp applied to normalized values outside the statistics window.
pub const CLAMP_CEILING: f64 = 1.5;

/// A labeled `T x L x K` activity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityTensor {
    values: Vec<f64>,
    time_labels: Vec<String>,
    location_labels: Vec<String>,
    keyword_labels: Vec<String>,
    normalized: bool,
}

fn check_unique(axis: &str, labels: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for label in labels {
        if !seen.insert(label.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate {axis} label {label:?}"
            )));
        }
    }
    Ok(())
}

impl ActivityTensor {
    /// Builds a raw (unnormalized) tensor. Requires `T >= 2`, `L, K >= 1`,
    /// unique labels on every axis and finite values.
    pub fn new(
        values: Vec<f64>,
        time_labels: Vec<String>,
        location_labels: Vec<String>,
        keyword_labels: Vec<String>,
    ) -> Result<Self> {
        if time_labels.len() < 2 {
            return Err(Error::Shape(format!(
                "need at least 2 time steps, found {}",
                time_labels.len()
            )));
        }
        let tensor = Self::view(values, time_labels, location_labels, keyword_labels, false)?;
        Ok(tensor)
    }

    /// Like [`ActivityTensor::new`] but allows any number of time steps,
    /// including zero. Used for slices such as forecast-truth views.
    pub fn view(
        values: Vec<f64>,
        time_labels: Vec<String>,
        location_labels: Vec<String>,
        keyword_labels: Vec<String>,
        normalized: bool,
    ) -> Result<Self> {
        if location_labels.is_empty() || keyword_labels.is_empty() {
            return Err(Error::Shape("need at least one location and one keyword".into()));
        }
        let expected = time_labels.len() * location_labels.len() * keyword_labels.len();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "{} values for a {}x{}x{} grid",
                values.len(),
                time_labels.len(),
                location_labels.len(),
                keyword_labels.len()
            )));
        }
        check_unique("time", &time_labels)?;
        check_unique("location", &location_labels)?;
        check_unique("keyword", &keyword_labels)?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {pos}")));
        }
        Ok(Self {
            values,
            time_labels,
            location_labels,
            keyword_labels,
            normalized,
        })
    }

    pub fn len_t(&self) -> usize {
        self.time_labels.len()
    }

    pub fn locations(&self) -> usize {
        self.location_labels.len()
    }

    pub fn keywords(&self) -> usize {
        self.keyword_labels.len()
    }

    /// Size of one time frame, `L * K`.
    pub fn frame_len(&self) -> usize {
        self.locations() * self.keywords()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    pub fn location_labels(&self) -> &[String] {
        &self.location_labels
    }

    pub fn keyword_labels(&self) -> &[String] {
        &self.keyword_labels
    }

    pub fn get(&self, t: usize, location: usize, keyword: usize) -> f64 {
        self.values[(t * self.locations() + location) * self.keywords() + keyword]
    }

    /// The `L x K` slice at time `t`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.values[t * n..(t + 1) * n]
    }

    /// Time steps `[start, end)` as a view sharing this tensor's axis labels.
    pub fn time_slice(&self, start: usize, end: usize) -> ActivityTensor {
        let end = end.min(self.len_t());
        let start = start.min(end);
        let n = self.frame_len();
        ActivityTensor {
            values: self.values[start * n..end * n].to_vec(),
            time_labels: self.time_labels[start..end].to_vec(),
            location_labels: self.location_labels.clone(),
            keyword_labels: self.keyword_labels.clone(),
            normalized: self.normalized,
        }
    }

    /// True when both tensors share location and keyword axes.
    pub fn same_axes(&self, other: &ActivityTensor) -> bool {
        self.location_labels == other.location_labels && self.keyword_labels == other.keyword_labels
    }

    pub(crate) fn with_values(&self, values: Vec<f64>, normalized: bool) -> ActivityTensor {
        debug_assert_eq!(values.len(), self.values.len());
        ActivityTensor {
            values,
            time_labels: self.time_labels.clone(),
            location_labels: self.location_labels.clone(),
            keyword_labels: self.keyword_labels.clone(),
            normalized,
        }
    }
}

/// Per-series min-max statistics used for normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// Per `(location, keyword)` minimum over the statistics window.
    pub min: Vec<f64>,
    /// Per `(location, keyword)` maximum over the statistics window.
    pub max: Vec<f64>,
    /// Series whose window was constant; they normalize to zero.
    pub constant: Vec<bool>,
    /// End (exclusive) of the window the statistics were computed on.
    pub window_end: usize,
    /// Ceiling applied to post-window values.
    pub clamp_ceiling: f64,
    /// Number of post-window entries that were clamped.
    pub clamped: usize,
}

impl NormStats {
    /// Maps normalized `L x K` frames back to raw units. `values` may hold
    /// any number of whole frames.
    pub fn denormalize(&self, values: &[f64]) -> Vec<f64> {
        let n = self.min.len();
        values
            .iter()
            .enumerate()
            .map(|(idx, &v)| {
                let s = idx % n;
                if self.constant[s] {
                    self.min[s]
                } else {
                    v * (self.max[s] - self.min[s]) + self.min[s]
                }
            })
            .collect()
    }

    /// Normalizes raw `L x K` frames with these statistics, without clamping.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let n = self.min.len();
        values
            .iter()
            .enumerate()
            .map(|(idx, &v)| {
                let s = idx % n;
                if self.constant[s] {
                    0.0
                } else {
                    (v - self.min[s]) / (self.max[s] - self.min[s])
                }
            })
            .collect()
    }
}

/// Min-max normalizes each `(location, keyword)` series using statistics
/// from `[0, stats_window_end)`. Later values are clamped to
/// `[0, CLAMP_CEILING]` and counted in [`NormStats::clamped`].
pub fn normalize(tensor: &ActivityTensor, stats_window_end: usize) -> Result<(ActivityTensor, NormStats)> {
    if tensor.is_normalized() {
        return Err(Error::InvalidArgument("tensor is already normalized".into()));
    }
    if stats_window_end == 0 || stats_window_end > tensor.len_t() {
        return Err(Error::InvalidArgument(format!(
            "statistics window end {stats_window_end} outside 1..={}",
            tensor.len_t()
        )));
    }
    let n = tensor.frame_len();
    let mut min = alloc::vec![f64::INFINITY; n];
    let mut max = alloc::vec![f64::NEG_INFINITY; n];
    for t in 0..stats_window_end {
        for (s, &v) in tensor.frame(t).iter().enumerate() {
            min[s] = min[s].min(v);
            max[s] = max[s].max(v);
        }
    }
    let constant: Vec<bool> = min.iter().zip(&max).map(|(lo, hi)| hi <= lo).collect();
    let mut stats = NormStats {
        min,
        max,
        constant,
        window_end: stats_window_end,
        clamp_ceiling: CLAMP_CEILING,
        clamped: 0,
    };
    let mut values = stats.apply(tensor.values());
    for v in values.iter_mut().skip(stats_window_end * n) {
        if *v > CLAMP_CEILING || *v < 0.0 {
            *v = v.clamp(0.0, CLAMP_CEILING);
            stats.clamped += 1;
        }
    }
    Ok((tensor.with_values(values, true), stats))
}

/// Modeling/forecast boundary: `t_c` ends the modeling window, `l_f` is the
/// forecast horizon in steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub t_c: usize,
    pub l_f: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    /// Steps `[0, t_c)`.
    pub modeling: ActivityTensor,
    /// Steps `[t_c, min(t_c + l_f, T))`; may be empty.
    pub truth: ActivityTensor,
    /// Actual truth length; smaller than `l_f` when the tensor ends early.
    pub truth_len: usize,
}

impl Split {
    pub fn is_truncated(&self, spec: &SplitSpec) -> bool {
        self.truth_len < spec.l_f
    }
}

pub fn split(tensor: &ActivityTensor, spec: SplitSpec) -> Result<Split> {
    if spec.t_c == 0 || spec.t_c > tensor.len_t() {
        return Err(Error::InvalidArgument(format!(
            "t_c = {} outside 1..={}",
            spec.t_c,
            tensor.len_t()
        )));
    }
    if spec.l_f == 0 {
        return Err(Error::InvalidArgument("forecast length must be at least 1".into()));
    }
    let end = (spec.t_c + spec.l_f).min(tensor.len_t());
    let truth = tensor.time_slice(spec.t_c, end);
    Ok(Split {
        modeling: tensor.time_slice(0, spec.t_c),
        truth_len: truth.len_t(),
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn labels(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn series(values: &[f64]) -> ActivityTensor {
        ActivityTensor::new(values.to_vec(), labels("t", values.len()), labels("l", 1), labels("k", 1)).unwrap()
    }

    #[test]
    fn min_max_identity() {
        let (norm, stats) = normalize(&series(&[0.0, 5.0, 10.0]), 3).unwrap();
        assert_eq!(norm.values(), &[0.0, 0.5, 1.0]);
        assert!(norm.is_normalized());
        assert_eq!(stats.clamped, 0);
    }

    #[test]
    fn constant_series_maps_to_zero_and_is_flagged() {
        let (norm, stats) = normalize(&series(&[7.0, 7.0, 7.0]), 3).unwrap();
        assert_eq!(norm.values(), &[0.0, 0.0, 0.0]);
        assert_eq!(stats.constant, vec![true]);
        assert_eq!(stats.denormalize(norm.values()), vec![7.0, 7.0, 7.0]);
    }

    #[test]
    fn post_window_values_clamp_at_ceiling() {
        // window (0, 10); later 20 maps to 2.0 and is clamped
        let (norm, stats) = normalize(&series(&[0.0, 10.0, 20.0]), 2).unwrap();
        assert_eq!(norm.values(), &[0.0, 1.0, 1.5]);
        assert_eq!(stats.clamped, 1);
    }

    #[test]
    fn double_normalization_rejected() {
        let (norm, _) = normalize(&series(&[0.0, 1.0]), 2).unwrap();
        assert!(normalize(&norm, 2).is_err());
    }

    #[test]
    fn split_lengths() {
        let t = series(&[0.0; 10]);
        let s = split(&t, SplitSpec { t_c: 7, l_f: 3 }).unwrap();
        assert_eq!((s.modeling.len_t(), s.truth_len), (7, 3));

        let spec = SplitSpec { t_c: 7, l_f: 5 };
        let s = split(&t, spec).unwrap();
        assert_eq!(s.truth_len, 3);
        assert!(s.is_truncated(&spec));

        let s = split(&t, SplitSpec { t_c: 10, l_f: 2 }).unwrap();
        assert_eq!(s.truth_len, 0);
        assert_eq!(s.truth.len_t(), 0);
    }

    #[test]
    fn rejects_duplicate_labels_and_short_time_axis() {
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(ActivityTensor::new(vec![0.0; 2], dup, labels("l", 1), labels("k", 1)).is_err());
        assert!(ActivityTensor::new(vec![0.0], labels("t", 1), labels("l", 1), labels("k", 1)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn denormalize_inverts_normalize(
                raw in proptest::collection::vec(0.0f64..1000.0, 12),
                window in 2usize..=6,
            ) {
                let t = ActivityTensor::new(raw.clone(), labels("t", 6), labels("l", 2), labels("k", 1)).unwrap();
                let (norm, stats) = normalize(&t, window).unwrap();
                let back = stats.denormalize(norm.values());
                for (idx, (&x, &y)) in raw.iter().zip(&back).enumerate() {
                    let clamped = idx >= window * 2 && {
                        let v = norm.values()[idx];
                        v == 0.0 || v == CLAMP_CEILING
                    };
                    if !clamped && !stats.constant[idx % 2] {
                        prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
                    }
                }
            }

            #[test]
            fn split_views_partition_the_horizon(t_c in 1usize..=10, l_f in 1usize..=12) {
                let t = series(&(0..10).map(f64::from).collect::<Vec<_>>());
                let s = split(&t, SplitSpec { t_c, l_f }).unwrap();
                let mut joined = s.modeling.values().to_vec();
                joined.extend_from_slice(s.truth.values());
                let end = (t_c + l_f).min(10);
                prop_assert_eq!(&joined[..], &t.values()[..end]);
            }
        }
    }
}
