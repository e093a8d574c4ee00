//! Readable summaries of a fitted model: keyword relationships, flows
//! between groups, and seasonal profiles.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FluxCubeModel;

pub const DEFAULT_ZERO_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relationship {
    Competitive,
    Parasitic,
    Commensal,
    Mutualistic,
    None,
    Unclassified,
}

/// Sign of a coefficient after zeroing values within `eps`.
fn sign(c: f64, eps: f64) -> i8 {
    if libm::fabs(c) <= eps {
        0
    } else if c > 0.0 {
        1
    } else {
        -1
    }
}

/// Relationship type of a keyword pair from the two cross coefficients
/// (`c_jj'` is the pressure of `j'` on `j`). Symmetric in its arguments.
pub fn classify_pair(c_jk: f64, c_kj: f64, eps: f64) -> Relationship {
    match (sign(c_jk, eps), sign(c_kj, eps)) {
        (1, 1) => Relationship::Competitive,
        (-1, 1) | (1, -1) => Relationship::Parasitic,
        (-1, 0) | (0, -1) => Relationship::Commensal,
        (-1, -1) => Relationship::Mutualistic,
        (0, 0) => Relationship::None,
        _ => Relationship::Unclassified,
    }
}

/// One unordered keyword pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRelation {
    pub first: usize,
    pub second: usize,
    pub kind: Relationship,
    /// Pressure of `second` on `first`.
    pub c_first_second: f64,
    /// Pressure of `first` on `second`.
    pub c_second_first: f64,
}

/// Directed influence of `source` on `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub kind: Relationship,
    pub coefficient: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationshipGraph {
    pub keywords: usize,
    pub pairs: Vec<PairRelation>,
    /// Directed edges whose coefficient survives the zero threshold.
    pub edges: Vec<Edge>,
}

impl RelationshipGraph {
    /// The `n` strongest edges, ties kept in their original order.
    pub fn top_edges(&self, n: usize) -> Vec<Edge> {
        let mut edges = self.edges.clone();
        edges.sort_by(|a, b| b.intensity.total_cmp(&a.intensity));
        edges.truncate(n);
        edges
    }

    pub fn pair(&self, a: usize, b: usize) -> Option<&PairRelation> {
        let (first, second) = if a < b { (a, b) } else { (b, a) };
        self.pairs.iter().find(|p| p.first == first && p.second == second)
    }
}

/// Classifies every keyword pair of a row-major `K x K` interaction matrix.
pub fn classify_relationships(c: &[f64], keywords: usize, eps: f64) -> Result<RelationshipGraph> {
    if c.len() != keywords * keywords {
        return Err(Error::Shape(format!("interaction matrix has {} entries, expected {}", c.len(), keywords * keywords)));
    }
    let mut pairs = Vec::new();
    let mut edges = Vec::new();
    for j in 0..keywords {
        for k in j + 1..keywords {
            let (c_jk, c_kj) = (c[j * keywords + k], c[k * keywords + j]);
            let kind = classify_pair(c_jk, c_kj, eps);
            pairs.push(PairRelation {
                first: j,
                second: k,
                kind,
                c_first_second: c_jk,
                c_second_first: c_kj,
            });
            for (source, target, coefficient) in [(k, j, c_jk), (j, k, c_kj)] {
                if libm::fabs(coefficient) > eps {
                    edges.push(Edge {
                        source,
                        target,
                        kind,
                        coefficient,
                        intensity: libm::fabs(coefficient),
                    });
                }
            }
        }
    }
    Ok(RelationshipGraph { keywords, pairs, edges })
}

/// Relationship graph of every location of a model.
pub fn location_graphs(model: &FluxCubeModel, eps: f64) -> Result<Vec<RelationshipGraph>> {
    let r = &model.params.reaction;
    (0..r.locations)
        .map(|i| classify_relationships(&r.interaction_matrix(i), r.keywords, eps))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// One bucket per seasonal period.
    Yearly,
    /// One bucket over the whole range.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub source: usize,
    pub destination: usize,
    pub keyword: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowBucket {
    /// Time range `[start, end)`.
    pub start: usize,
    pub end: usize,
    pub entries: Vec<FlowEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSeries {
    pub source: usize,
    pub destination: usize,
    pub keyword: usize,
    /// `D^t` from `start` to `end`.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub start: usize,
    pub end: usize,
    /// Whether the range reaches past the modeling window.
    pub extrapolated: bool,
    pub buckets: Vec<FlowBucket>,
    pub series: Vec<FlowSeries>,
}

/// Averages `D^t` over `[start, end)` per bucket. Ranges past the modeling
/// window need `allow_extrapolation`.
pub fn summarize_flows(
    model: &FluxCubeModel,
    start: usize,
    end: usize,
    aggregation: Aggregation,
    allow_extrapolation: bool,
) -> Result<FlowSummary> {
    let t_c = model.modeling_len();
    if start >= end {
        return Err(Error::InvalidArgument(format!("empty flow range {start}..{end}")));
    }
    let extrapolated = end > t_c;
    if extrapolated && !allow_extrapolation {
        return Err(Error::InvalidArgument(format!(
            "flow range ends at {end}, past the modeling window of {t_c} steps"
        )));
    }
    let d = model.group_count();
    let k = model.keywords();
    if d < 2 {
        return Ok(FlowSummary {
            start,
            end,
            extrapolated,
            buckets: Vec::new(),
            series: Vec::new(),
        });
    }
    let values = model.diffusion_series(start, end);
    let mut series = Vec::new();
    for dst in 0..d {
        for src in 0..d {
            if src == dst {
                continue;
            }
            for kw in 0..k {
                let idx = (dst * d + src) * k + kw;
                series.push(FlowSeries {
                    source: src,
                    destination: dst,
                    keyword: kw,
                    values: values.iter().map(|dt| dt[idx]).collect(),
                });
            }
        }
    }
    let width = match aggregation {
        Aggregation::Yearly => model.params.seasonality.period.max(1),
        Aggregation::Full => end - start,
    };
    let mut buckets = Vec::new();
    let mut b0 = start;
    while b0 < end {
        let b1 = (b0 + width).min(end);
        let entries = series
            .iter()
            .map(|s| {
                let slice = &s.values[b0 - start..b1 - start];
                FlowEntry {
                    source: s.source,
                    destination: s.destination,
                    keyword: s.keyword,
                    mean: slice.iter().sum::<f64>() / slice.len() as f64,
                }
            })
            .collect();
        buckets.push(FlowBucket { start: b0, end: b1, entries });
        b0 = b1;
    }
    Ok(FlowSummary {
        start,
        end,
        extrapolated,
        buckets,
        series,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseValue {
    pub phase: usize,
    /// Time label of the first modeled step with this phase.
    pub time_label: Option<String>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalProfile {
    pub location: String,
    pub keyword: String,
    pub phases: Vec<PhaseValue>,
}

impl SeasonalProfile {
    /// Phase with the largest gain (earliest on ties).
    pub fn peak_phase(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.phases.iter().enumerate() {
            if p.value > self.phases[best].value {
                best = i;
            }
        }
        self.phases[best].phase
    }
}

/// Seasonal gains of one `(location, keyword)` series, all zero when the
/// model has seasonality disabled.
pub fn seasonal_profile(model: &FluxCubeModel, location: &str, keyword: &str) -> Result<SeasonalProfile> {
    let h = &model.history;
    let i = h
        .location_labels()
        .iter()
        .position(|l| l == location)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown location {location:?}")))?;
    let j = h
        .keyword_labels()
        .iter()
        .position(|l| l == keyword)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown keyword {keyword:?}")))?;
    let s = &model.params.seasonality;
    let phases = (0..s.period)
        .map(|phase| PhaseValue {
            phase,
            time_label: h.time_labels().get(phase).cloned(),
            value: if model.config.seasonality { s.value(phase, i, j) } else { 0.0 },
        })
        .collect();
    Ok(SeasonalProfile {
        location: location.into(),
        keyword: keyword.into(),
        phases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DiffusionMode, DiffusionNet, GroupAssignment, ReactionParams, SeasonalityMatrix};
    use crate::model::Parameters;
    use crate::tensor::ActivityTensor;
    use crate::training::TrainConfig;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn paper_sign_examples() {
        assert_eq!(classify_pair(0.4, 0.3, 0.05), Relationship::Competitive);
        assert_eq!(classify_pair(-0.2, -0.1, 0.05), Relationship::Mutualistic);
        assert_eq!(classify_pair(-0.2, 0.0, 0.05), Relationship::Commensal);
    }

    #[test]
    fn full_sign_grid() {
        use Relationship::*;
        let v = [-0.3, 0.0, 0.3];
        let expected = [
            [Mutualistic, Commensal, Parasitic],
            [Commensal, None, Unclassified],
            [Parasitic, Unclassified, Competitive],
        ];
        for (a, row) in v.iter().zip(&expected) {
            for (b, want) in v.iter().zip(row) {
                assert_eq!(classify_pair(*a, *b, 0.05), *want, "({a}, {b})");
            }
        }
    }

    #[test]
    fn threshold_zeroes_small_values() {
        assert_eq!(classify_pair(-0.2, 0.04, 0.05), Relationship::Commensal);
        assert_eq!(classify_pair(0.05, -0.05, 0.05), Relationship::None);
    }

    #[test]
    fn graph_edges_follow_coefficients() {
        // c_01 = 0.4 (keyword 1 presses on 0), c_10 = 0.3
        let c = [1.0, 0.4, 0.0, 0.3, 1.0, 0.0, 0.0, 0.01, 1.0];
        let g = classify_relationships(&c, 3, 0.05).unwrap();
        assert_eq!(g.pair(1, 0).unwrap().kind, Relationship::Competitive);
        assert_eq!(g.pair(1, 2).unwrap().kind, Relationship::None);
        assert_eq!(g.edges.len(), 2);
        assert_eq!(g.top_edges(1)[0].source, 1);
        assert_eq!(g.top_edges(1)[0].target, 0);
    }

    proptest! {
        #[test]
        fn labels_depend_only_on_signs(a in -2.0f64..2.0, b in -2.0f64..2.0, s in 0.1f64..10.0) {
            let eps = 0.05;
            prop_assume!(a.abs() > eps && b.abs() > eps && (a * s).abs() > eps && (b * s).abs() > eps);
            prop_assert_eq!(classify_pair(a, b, eps), classify_pair(a * s, b * s, eps));
            prop_assert_eq!(classify_pair(a, b, eps), classify_pair(b, a, eps));
        }

        #[test]
        fn relabeling_keywords_permutes_the_graph(vals in proptest::collection::vec(-1.0f64..1.0, 9), shift in 0usize..3) {
            let k = 3;
            let mut c = vals.clone();
            for j in 0..k { c[j * k + j] = 1.0; }
            let perm: Vec<usize> = (0..k).map(|j| (j + shift) % k).collect();
            let mut permuted = vec![0.0; 9];
            for a in 0..k {
                for b in 0..k {
                    permuted[perm[a] * k + perm[b]] = c[a * k + b];
                }
            }
            let g = classify_relationships(&c, k, 0.05).unwrap();
            let h = classify_relationships(&permuted, k, 0.05).unwrap();
            for p in &g.pairs {
                prop_assert_eq!(p.kind, h.pair(perm[p.first], perm[p.second]).unwrap().kind);
            }
        }
    }

    fn labels(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn model(groups: usize, t_c: usize) -> FluxCubeModel {
        let l = 2.max(groups);
        let history = ActivityTensor::view(vec![0.1; t_c * l], labels("w", t_c), labels("l", l), labels("k", 1), true).unwrap();
        FluxCubeModel {
            params: Parameters {
                reaction: ReactionParams::initial(l, 1),
                diffusion: DiffusionNet::zeros(3, groups, 1, t_c as f64, 4),
                seasonality: SeasonalityMatrix::filled(4, l, 1, -3.0),
            },
            groups: if groups == 1 { GroupAssignment::single(l) } else { GroupAssignment::singletons(l) },
            history,
            norm: None,
            config: TrainConfig {
                period: 4,
                diffusion: DiffusionMode::Constant,
                ..TrainConfig::default()
            },
            report: None,
            trace: Vec::new(),
        }
    }

    #[test]
    fn single_group_has_no_flows() {
        let s = summarize_flows(&model(1, 8), 0, 8, Aggregation::Full, false).unwrap();
        assert!(s.buckets.is_empty() && s.series.is_empty());
    }

    #[test]
    fn zero_net_gives_zero_flows() {
        let s = summarize_flows(&model(2, 8), 0, 8, Aggregation::Yearly, false).unwrap();
        assert_eq!(s.buckets.len(), 2);
        assert!(s.buckets.iter().flat_map(|b| &b.entries).all(|e| e.mean == 0.0));
    }

    #[test]
    fn constant_intensity_averages_to_itself() {
        let mut m = model(2, 8);
        // entry (dst 1, src 0, k 0) of a 2 x 2 x 1 tensor
        m.params.diffusion.b_o[2] = 0.5;
        let s = summarize_flows(&m, 0, 8, Aggregation::Yearly, false).unwrap();
        let e = s.buckets[0].entries.iter().find(|e| e.source == 0 && e.destination == 1).unwrap();
        assert!((e.mean - 0.5).abs() < 1e-15);
        let series = s.series.iter().find(|x| x.source == 0 && x.destination == 1).unwrap();
        let mean: f64 = series.values[..4].iter().sum::<f64>() / 4.0;
        assert_eq!(mean, e.mean);
    }

    #[test]
    fn flows_past_the_window_need_the_flag() {
        let m = model(2, 8);
        assert!(summarize_flows(&m, 0, 12, Aggregation::Full, false).is_err());
        assert!(summarize_flows(&m, 0, 12, Aggregation::Full, true).unwrap().extrapolated);
    }

    #[test]
    fn fresh_profile_is_near_zero() {
        let p = seasonal_profile(&model(1, 8), "l1", "k0").unwrap();
        assert_eq!(p.phases.len(), 4);
        assert!(p.phases.iter().all(|v| v.value < 0.05));
        assert_eq!(p.phases[2].time_label.as_deref(), Some("w2"));
        assert!(seasonal_profile(&model(1, 8), "nowhere", "k0").is_err());
    }
}
