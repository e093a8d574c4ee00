//! Ground-truth generator: runs the model equations forward with an
//! explicit diffusion schedule, bypassing the recurrence.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{forward_step, GroupAssignment, ReactionParams};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{ActivityTensor, CLAMP_CEILING};

/// Magnitude beyond which a trajectory counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 10.0;

/// True inter-group intensities. Every tensor is `d x d x K`, entry
/// `(g, g', k)` being the influence of group `g'` on group `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FlowSchedule {
    None,
    Constant { values: Vec<f64> },
    /// Each segment holds from its `start` until the next segment; zero
    /// before the first.
    Piecewise { segments: Vec<FlowSegment> },
    /// `values` at transitions whose phase is listed, zero elsewhere.
    Periodic { period: usize, phases: Vec<usize>, values: Vec<f64> },
    /// One tensor per transition; zero after the table ends.
    Table { values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSegment {
    pub start: usize,
    pub values: Vec<f64>,
}

impl FlowSchedule {
    /// `D^t`, or `None` when there is no diffusion at all.
    pub fn at(&self, t: usize, len: usize) -> Option<Vec<f64>> {
        match self {
            FlowSchedule::None => None,
            FlowSchedule::Constant { values } => Some(values.clone()),
            FlowSchedule::Piecewise { segments } => Some(
                segments
                    .iter()
                    .rev()
                    .find(|s| s.start <= t)
                    .map_or_else(|| vec![0.0; len], |s| s.values.clone()),
            ),
            FlowSchedule::Periodic { period, phases, values } => Some(if phases.contains(&(t % period)) {
                values.clone()
            } else {
                vec![0.0; len]
            }),
            FlowSchedule::Table { values } => Some(values.get(t).cloned().unwrap_or_else(|| vec![0.0; len])),
        }
    }

    fn tensors(&self) -> Vec<&Vec<f64>> {
        match self {
            FlowSchedule::None => Vec::new(),
            FlowSchedule::Constant { values } => vec![values],
            FlowSchedule::Piecewise { segments } => segments.iter().map(|s| &s.values).collect(),
            FlowSchedule::Periodic { values, .. } => vec![values],
            FlowSchedule::Table { values } => values.iter().collect(),
        }
    }
}

/// Everything needed to generate one synthetic tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub steps: usize,
    pub locations: usize,
    pub keywords: usize,
    pub period: usize,
    /// Group of each location.
    pub groups: Vec<usize>,
    pub group_count: usize,
    /// Growth rates `a`, `L x K`.
    pub growth: Vec<f64>,
    /// Carrying capacities `b`, `L x K`.
    pub capacity: Vec<f64>,
    /// Interaction matrices `L x K x K` with unit diagonal.
    pub interaction: Vec<f64>,
    pub diffusion: FlowSchedule,
    /// Seasonal gains `p x L x K`; empty for none.
    pub seasonal: Vec<f64>,
    /// Standard deviation of the Gaussian noise added at every step.
    pub noise: f64,
    /// First frame, `L x K`.
    pub initial: Vec<f64>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn reaction(&self) -> Result<ReactionParams> {
        ReactionParams::from_values(self.locations, self.keywords, &self.growth, &self.capacity, &self.interaction)
    }

    pub fn assignment(&self) -> Result<GroupAssignment> {
        GroupAssignment::new(self.groups.clone(), self.group_count)
    }

    pub fn validate(&self) -> Result<()> {
        let (l, k, d) = (self.locations, self.keywords, self.group_count);
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.steps < 2 || l == 0 || k == 0 || self.period == 0 {
            return bad("steps must be at least 2 and every axis nonempty".into());
        }
        if self.initial.len() != l * k {
            return bad(format!("initial frame has {} entries, expected {}", self.initial.len(), l * k));
        }
        if self.initial.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("initial values must be finite and nonnegative".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be a nonnegative number".into());
        }
        if !self.seasonal.is_empty() {
            if self.seasonal.len() != self.period * l * k {
                return bad(format!("seasonal gains need {} entries", self.period * l * k));
            }
            if self.seasonal.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                return bad("seasonal gains must be nonnegative".into());
            }
        }
        self.reaction()?;
        self.assignment()?;
        if let FlowSchedule::Periodic { period: 0, .. } = self.diffusion {
            return bad("periodic flow needs a positive period".into());
        }
        for tensor in self.diffusion.tensors() {
            if tensor.len() != d * d * k {
                return bad(format!("diffusion tensors need {} entries", d * d * k));
            }
            if tensor.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return bad("diffusion intensities must be nonnegative".into());
            }
            for g in 0..d {
                for kw in 0..k {
                    if tensor[(g * d + g) * k + kw] != 0.0 {
                        return bad("diffusion within a group must be zero".into());
                    }
                }
            }
        }
        Ok(())
    }

    /// Seasonal gain slice for transition `t`.
    fn gain(&self, t: usize) -> Option<&[f64]> {
        if self.seasonal.is_empty() {
            return None;
        }
        let n = self.locations * self.keywords;
        let phase = t % self.period;
        Some(&self.seasonal[phase * n..(phase + 1) * n])
    }
}

/// Runs `x_{t+1} = clamp(F(x_t, t) + noise)` from the initial frame. Noise
/// enters inside the recursion, so one-step residuals of the true model are
/// exactly the injected Gaussian draws (up to clamping).
pub fn generate(spec: &SynthSpec) -> Result<ActivityTensor> {
    spec.validate()?;
    let reaction = spec.reaction()?;
    let groups = spec.assignment()?;
    let n = spec.locations * spec.keywords;
    let m = spec.group_count * spec.group_count * spec.keywords;
    let mut rng = stream(spec.seed, 0x5e_ed);
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut values = Vec::with_capacity(spec.steps * n);
    values.extend(spec.initial.iter().map(|v| v.clamp(0.0, CLAMP_CEILING)));
    for t in 0..spec.steps - 1 {
        let x = &values[t * n..(t + 1) * n];
        let d = spec.diffusion.at(t, m);
        let next = forward_step(x, &reaction, &groups, d.as_deref(), spec.gain(t));
        let mut frame = Vec::with_capacity(n);
        for v in next {
            if !v.is_finite() || libm::fabs(v) > DIVERGENCE_LIMIT {
                return Err(Error::Divergence { step: t + 1, value: v });
            }
            let noisy = if spec.noise > 0.0 { v + normal.sample(&mut rng) } else { v };
            frame.push(noisy.clamp(0.0, CLAMP_CEILING));
        }
        values.extend(frame);
    }
    ActivityTensor::view(
        values,
        (0..spec.steps).map(|t| format!("{t}")).collect(),
        padded_labels("loc", spec.locations),
        padded_labels("kw", spec.keywords),
        false,
    )
}

/// `prefix` plus a zero-padded index, so lexicographic order is index
/// order.
fn padded_labels(prefix: &str, n: usize) -> Vec<String> {
    let width = format!("{}", n.saturating_sub(1)).len().max(2);
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

/// Scenario names shipped by [`standard_scenarios`].
pub const SCENARIO_NAMES: [&str; 4] = ["logistic-solo", "two-group-flow", "seasonal-spike", "competition-pair"];

/// Default length: eight periods of 52.
pub const SCENARIO_STEPS: usize = 416;

fn unit_interaction(locations: usize, keywords: usize) -> Vec<f64> {
    let mut c = vec![0.0; locations * keywords * keywords];
    for i in 0..locations {
        for j in 0..keywords {
            c[(i * keywords + j) * keywords + j] = 1.0;
        }
    }
    c
}

pub fn logistic_solo(seed: u64) -> SynthSpec {
    SynthSpec {
        name: "logistic-solo".into(),
        steps: SCENARIO_STEPS,
        locations: 1,
        keywords: 1,
        period: 52,
        groups: vec![0],
        group_count: 1,
        growth: vec![0.3],
        capacity: vec![0.8],
        interaction: vec![1.0],
        diffusion: FlowSchedule::None,
        seasonal: Vec::new(),
        noise: 0.005,
        initial: vec![0.01],
        seed,
    }
}

pub fn competition_pair(seed: u64) -> SynthSpec {
    SynthSpec {
        name: "competition-pair".into(),
        steps: SCENARIO_STEPS,
        locations: 1,
        keywords: 2,
        period: 52,
        groups: vec![0],
        group_count: 1,
        growth: vec![0.8, 0.8],
        capacity: vec![0.8, 0.8],
        interaction: vec![1.0, 0.4, 0.4, 1.0],
        diffusion: FlowSchedule::None,
        seasonal: Vec::new(),
        noise: 0.01,
        initial: vec![0.0, 0.0],
        seed,
    }
}

/// Spike gain at this phase in the seasonal scenario.
pub const SPIKE_PHASE: usize = 10;
pub const SPIKE_GAIN: f64 = 0.5;

pub fn seasonal_spike(seed: u64) -> SynthSpec {
    let (l, k, p) = (2, 1, 52);
    let mut seasonal = vec![0.0; p * l * k];
    for s in 0..l * k {
        seasonal[SPIKE_PHASE * l * k + s] = SPIKE_GAIN;
    }
    SynthSpec {
        name: "seasonal-spike".into(),
        steps: SCENARIO_STEPS,
        locations: l,
        keywords: k,
        period: p,
        groups: vec![0, 0],
        group_count: 1,
        growth: vec![0.3, 0.5],
        capacity: vec![0.6, 0.5],
        interaction: unit_interaction(l, k),
        diffusion: FlowSchedule::None,
        seasonal,
        noise: 0.02,
        initial: vec![0.01, 0.01],
        seed,
    }
}

/// Constant intensity with which group 0 feeds keyword 0 of group 1 in
/// the two-group scenario.
pub const FLOW_INTENSITY: f64 = 0.3;

/// Eight locations in two groups. Location 0 alone forms group 0 and runs
/// a cyclic three-keyword competition that settles on a six-step cycle;
/// the other seven grow logistically, carry a seasonal bump and receive a
/// constant share of location 0's keyword 0.
pub fn two_group_flow(seed: u64) -> SynthSpec {
    let (l, k, d, p) = (8, 3, 2, 52);
    let groups: Vec<usize> = (0..l).map(|i| usize::from(i > 0)).collect();
    let mut growth = Vec::new();
    let mut capacity = Vec::new();
    let mut interaction = unit_interaction(l, k);
    let mut seasonal = vec![0.0; p * l * k];
    for (i, g) in groups.iter().enumerate() {
        for j in 0..k {
            if *g == 0 {
                growth.push(2.4);
                capacity.push(0.5);
                interaction[(i * k + j) * k + (j + 1) % k] = 0.2;
                interaction[(i * k + j) * k + (j + 2) % k] = 0.8;
            } else {
                growth.push(0.4 + 0.02 * (i % 4) as f64 + 0.05 * j as f64);
                capacity.push(0.3 + 0.05 * j as f64);
                for phase in 20..28 {
                    let bump = 0.1 * libm::sin(core::f64::consts::PI * (phase - 19) as f64 / 9.0);
                    seasonal[(phase * l + i) * k + j] = bump;
                }
            }
        }
    }
    // everything starts at zero; noise seeds the growth
    let initial = vec![0.0; l * k];
    let mut flow = vec![0.0; d * d * k];
    flow[d * k] = FLOW_INTENSITY;
    SynthSpec {
        name: "two-group-flow".into(),
        steps: SCENARIO_STEPS,
        locations: l,
        keywords: k,
        period: p,
        groups,
        group_count: d,
        growth,
        capacity,
        interaction,
        diffusion: FlowSchedule::Constant { values: flow },
        seasonal,
        noise: 0.002,
        initial,
        seed,
    }
}

/// Looks up a shipped scenario by name.
pub fn scenario(name: &str, seed: u64) -> Option<SynthSpec> {
    match name {
        "logistic-solo" => Some(logistic_solo(seed)),
        "two-group-flow" => Some(two_group_flow(seed)),
        "seasonal-spike" => Some(seasonal_spike(seed)),
        "competition-pair" => Some(competition_pair(seed)),
        _ => None,
    }
}

pub fn standard_scenarios(seed: u64) -> Vec<SynthSpec> {
    SCENARIO_NAMES.iter().filter_map(|n| scenario(n, seed)).collect()
}
