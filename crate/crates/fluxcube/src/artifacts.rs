//! The four `explain` outputs, labeled with the model's axis names.

use fluxcube_core::clustering::embed;
use fluxcube_core::interpret::{location_graphs, seasonal_profile, summarize_flows, Aggregation, Relationship};
use fluxcube_core::{FluxCubeModel, Result};
use serde::Serialize;

use crate::calendar::{iso_week_label, parse_date};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledPair {
    pub first: String,
    pub second: String,
    pub kind: Relationship,
    pub c_first_second: f64,
    pub c_second_first: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledEdge {
    pub source: String,
    pub target: String,
    pub kind: Relationship,
    pub coefficient: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocationInteractions {
    pub location: String,
    pub group: usize,
    pub pairs: Vec<LabeledPair>,
    pub edges: Vec<LabeledEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interactions {
    pub zero_threshold: f64,
    /// Edge cap per location, strongest first; `None` keeps every edge.
    pub top_k: Option<usize>,
    pub locations: Vec<LocationInteractions>,
}

pub fn interactions(model: &FluxCubeModel, eps: f64, top_k: Option<usize>) -> Result<Interactions> {
    let h = &model.history;
    let kw = h.keyword_labels();
    let graphs = location_graphs(model, eps)?;
    let locations = graphs
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let edges = match top_k {
                Some(n) => g.top_edges(n),
                None => g.edges.clone(),
            };
            LocationInteractions {
                location: h.location_labels()[i].clone(),
                group: model.groups.group_of(i),
                pairs: g
                    .pairs
                    .iter()
                    .map(|p| LabeledPair {
                        first: kw[p.first].clone(),
                        second: kw[p.second].clone(),
                        kind: p.kind,
                        c_first_second: p.c_first_second,
                        c_second_first: p.c_second_first,
                    })
                    .collect(),
                edges: edges
                    .iter()
                    .map(|e| LabeledEdge {
                        source: kw[e.source].clone(),
                        target: kw[e.target].clone(),
                        kind: e.kind,
                        coefficient: e.coefficient,
                        intensity: e.intensity,
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(Interactions {
        zero_threshold: eps,
        top_k,
        locations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowMean {
    pub source: usize,
    pub destination: usize,
    pub keyword: String,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowWindow {
    pub start: usize,
    pub end: usize,
    pub first_label: String,
    pub last_label: String,
    pub flows: Vec<FlowMean>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowTrace {
    pub source: usize,
    pub destination: usize,
    pub keyword: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flows {
    /// Member locations of each group.
    pub groups: Vec<Vec<String>>,
    /// Yearly means of `D^t` over the modeling window.
    pub windows: Vec<FlowWindow>,
    /// `D^t` at every modeled step.
    pub series: Vec<FlowTrace>,
}

pub fn flows(model: &FluxCubeModel) -> Result<Flows> {
    let h = &model.history;
    let kw = h.keyword_labels();
    let labels = h.time_labels();
    let summary = summarize_flows(model, 0, model.modeling_len(), Aggregation::Yearly, false)?;
    let groups = (0..model.group_count())
        .map(|g| model.groups.members(g).into_iter().map(|i| h.location_labels()[i].clone()).collect())
        .collect();
    let windows = summary
        .buckets
        .iter()
        .map(|b| FlowWindow {
            start: b.start,
            end: b.end,
            first_label: labels[b.start].clone(),
            last_label: labels[b.end - 1].clone(),
            flows: b
                .entries
                .iter()
                .map(|e| FlowMean {
                    source: e.source,
                    destination: e.destination,
                    keyword: kw[e.keyword].clone(),
                    mean: e.mean,
                })
                .collect(),
        })
        .collect();
    let series = summary
        .series
        .iter()
        .map(|s| FlowTrace {
            source: s.source,
            destination: s.destination,
            keyword: kw[s.keyword].clone(),
            values: s.values.clone(),
        })
        .collect();
    Ok(Flows { groups, windows, series })
}

/// `phase,week,location,keyword,value` rows. `week` is the ISO week of the
/// first modeled date with that phase, empty for non-date time labels.
pub fn seasonality_rows(model: &FluxCubeModel) -> Result<Vec<[String; 5]>> {
    let h = &model.history;
    let mut profiles = Vec::new();
    for loc in h.location_labels() {
        for kw in h.keyword_labels() {
            profiles.push(seasonal_profile(model, loc, kw)?);
        }
    }
    let period = model.params.seasonality.period;
    let mut rows = Vec::with_capacity(period * profiles.len());
    for phase in 0..period {
        for p in &profiles {
            let v = &p.phases[phase];
            let week = v
                .time_label
                .as_deref()
                .and_then(parse_date)
                .map(iso_week_label)
                .unwrap_or_default();
            rows.push([
                phase.to_string(),
                week,
                p.location.clone(),
                p.keyword.clone(),
                v.value.to_string(),
            ]);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMember {
    pub location: String,
    pub group: usize,
    /// Position in the reaction-parameter embedding; absent for a single
    /// location.
    pub coords: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Groups {
    pub count: usize,
    pub locations: Vec<GroupMember>,
}

pub fn groups(model: &FluxCubeModel) -> Result<Groups> {
    let h = &model.history;
    let coords = if model.locations() >= 2 {
        Some(embed(&model.params.reaction)?.coords)
    } else {
        None
    };
    let locations = h
        .location_labels()
        .iter()
        .enumerate()
        .map(|(i, loc)| GroupMember {
            location: loc.clone(),
            group: model.groups.group_of(i),
            coords: coords.as_ref().map(|c| c[i]),
        })
        .collect();
    Ok(Groups {
        count: model.group_count(),
        locations,
    })
}
