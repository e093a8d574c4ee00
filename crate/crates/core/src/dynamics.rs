//! The state update: Lotka-Volterra reaction per location, recurrent
//! group-to-group diffusion, and a periodic multiplicative seasonal gain.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::CLAMP_CEILING;

/// Number of time features fed to the diffusion recurrence.
pub const TIME_FEATURES: usize = 3;

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Per-location Lotka-Volterra parameters.
///
/// Growth rates and capacities are stored as logarithms so that the exposed
/// values stay strictly positive. The interaction diagonal is fixed at one
/// and never stored: `interaction` holds `L x K x K` entries whose diagonal
/// slots are ignored (kept at zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactionParams {
    pub locations: usize,
    pub keywords: usize,
    pub log_growth: Vec<f64>,
    pub log_capacity: Vec<f64>,
    pub interaction: Vec<f64>,
}

impl ReactionParams {
    /// Growth 0.5, capacity 1.0 and no cross interactions everywhere.
    pub fn initial(locations: usize, keywords: usize) -> Self {
        let n = locations * keywords;
        Self {
            locations,
            keywords,
            log_growth: vec![libm::log(0.5); n],
            log_capacity: vec![0.0; n],
            interaction: vec![0.0; n * keywords],
        }
    }

    /// Builds parameters from exposed values. `interaction` is the full
    /// `L x K x K` array and must carry ones on each diagonal.
    pub fn from_values(
        locations: usize,
        keywords: usize,
        growth: &[f64],
        capacity: &[f64],
        interaction: &[f64],
    ) -> Result<Self> {
        let n = locations * keywords;
        if growth.len() != n || capacity.len() != n || interaction.len() != n * keywords {
            return Err(Error::Shape("reaction parameter lengths do not match L x K".into()));
        }
        if growth.iter().chain(capacity).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("growth rates and capacities must be positive".into()));
        }
        let mut off = interaction.to_vec();
        for i in 0..locations {
            for j in 0..keywords {
                let d = (i * keywords + j) * keywords + j;
                if interaction[d] != 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "interaction diagonal at location {i}, keyword {j} must be 1"
                    )));
                }
                off[d] = 0.0;
            }
        }
        Ok(Self {
            locations,
            keywords,
            log_growth: growth.iter().map(|v| libm::log(*v)).collect(),
            log_capacity: capacity.iter().map(|v| libm::log(*v)).collect(),
            interaction: off,
        })
    }

    pub fn growth(&self, location: usize, keyword: usize) -> f64 {
        libm::exp(self.log_growth[location * self.keywords + keyword])
    }

    pub fn capacity(&self, location: usize, keyword: usize) -> f64 {
        libm::exp(self.log_capacity[location * self.keywords + keyword])
    }

    /// `c_{jj'}`: influence of keyword `from` on keyword `to` at a location.
    pub fn interaction(&self, location: usize, to: usize, from: usize) -> f64 {
        if to == from {
            1.0
        } else {
            self.interaction[(location * self.keywords + to) * self.keywords + from]
        }
    }

    /// The `K x K` interaction matrix of one location, row-major.
    pub fn interaction_matrix(&self, location: usize) -> Vec<f64> {
        let k = self.keywords;
        (0..k * k).map(|idx| self.interaction(location, idx / k, idx % k)).collect()
    }

    /// `[a; b; vec(C)]` for one location, the clustering input.
    pub fn feature_vector(&self, location: usize) -> Vec<f64> {
        let k = self.keywords;
        let mut out = Vec::with_capacity(2 * k + k * k);
        out.extend((0..k).map(|j| self.growth(location, j)));
        out.extend((0..k).map(|j| self.capacity(location, j)));
        out.extend(self.interaction_matrix(location));
        out
    }
}

/// Reaction term for one location: `a_j x_j (1 - sum_j' c_jj' x_j' / b_j)`.
pub fn reaction(x_row: &[f64], params: &ReactionParams, location: usize) -> Vec<f64> {
    let k = params.keywords;
    (0..k)
        .map(|j| {
            let pressure: f64 = (0..k).map(|jj| params.interaction(location, j, jj) * x_row[jj]).sum();
            params.growth(location, j) * x_row[j] * (1.0 - pressure / params.capacity(location, j))
        })
        .collect()
}

/// Assignment of locations to area groups. Every group has at least one
/// member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    group: Vec<usize>,
    count: usize,
}

impl GroupAssignment {
    pub fn new(group: Vec<usize>, count: usize) -> Result<Self> {
        if group.is_empty() || count == 0 {
            return Err(Error::InvalidArgument("empty group assignment".into()));
        }
        let mut used = vec![false; count];
        for (loc, &g) in group.iter().enumerate() {
            if g >= count {
                return Err(Error::InvalidArgument(format!(
                    "location {loc} assigned to group {g} of {count}"
                )));
            }
            used[g] = true;
        }
        if let Some(g) = used.iter().position(|u| !u) {
            return Err(Error::InvalidArgument(format!("group {g} has no members")));
        }
        Ok(Self { group, count })
    }

    /// All locations in one group.
    pub fn single(locations: usize) -> Self {
        Self {
            group: vec![0; locations],
            count: 1,
        }
    }

    pub fn singletons(locations: usize) -> Self {
        Self {
            group: (0..locations).collect(),
            count: locations,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn locations(&self) -> usize {
        self.group.len()
    }

    pub fn group_of(&self, location: usize) -> usize {
        self.group[location]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.group
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        (0..self.group.len()).filter(|&i| self.group[i] == group).collect()
    }

    /// Same partition regardless of label names.
    pub fn same_partition(&self, other: &GroupAssignment) -> bool {
        if self.group.len() != other.group.len() || self.count != other.count {
            return false;
        }
        let mut map = vec![usize::MAX; self.count];
        let mut back = vec![usize::MAX; other.count];
        for (&a, &b) in self.group.iter().zip(&other.group) {
            if map[a] == usize::MAX && back[b] == usize::MAX {
                map[a] = b;
                back[b] = a;
            } else if map[a] != b || back[b] != a {
                return false;
            }
        }
        true
    }
}

/// Mean activity of every group: entry `(g, k)` averages `x[i, k]` over the
/// members `i` of group `g`.
pub fn group_means(x: &[f64], keywords: usize, groups: &GroupAssignment) -> Vec<f64> {
    let d = groups.count();
    let mut sums = vec![0.0; d * keywords];
    let mut sizes = vec![0usize; d];
    for (i, &g) in groups.as_slice().iter().enumerate() {
        sizes[g] += 1;
        for k in 0..keywords {
            sums[g * keywords + k] += x[i * keywords + k];
        }
    }
    for g in 0..d {
        for k in 0..keywords {
            sums[g * keywords + k] /= sizes[g] as f64;
        }
    }
    sums
}

/// Nonnegative seasonal gains `S` (`p x L x K`), stored pre-rectification
/// and exposed through a softplus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalityMatrix {
    pub period: usize,
    pub locations: usize,
    pub keywords: usize,
    pub raw: Vec<f64>,
}

impl SeasonalityMatrix {
    /// Every raw entry set to `raw_init`.
    pub fn filled(period: usize, locations: usize, keywords: usize, raw_init: f64) -> Self {
        Self {
            period,
            locations,
            keywords,
            raw: vec![raw_init; period * locations * keywords],
        }
    }

    pub fn value(&self, phase: usize, location: usize, keyword: usize) -> f64 {
        softplus(self.raw[(phase * self.locations + location) * self.keywords + keyword])
    }

    /// All exposed gains, `p x L x K`.
    pub fn values(&self) -> Vec<f64> {
        self.raw.iter().map(|r| softplus(*r)).collect()
    }
}

/// Elman recurrence emitting the group-level diffusion tensor `D^t`
/// (`d x d x K`, entry `(g, g', k)` is the influence of group `g'` on `g`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionNet {
    pub hidden: usize,
    pub groups: usize,
    pub keywords: usize,
    /// Length of the modeling window; scales the linear time feature.
    pub time_scale: f64,
    /// Seasonal period used by the periodic time features.
    pub period: usize,
    pub w_h: Vec<f64>,
    pub w_x: Vec<f64>,
    pub b_h: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_o: Vec<f64>,
}

impl DiffusionNet {
    /// Weights and biases drawn from `U(-1/sqrt(h), 1/sqrt(h))`.
    pub fn random<R: Rng>(
        hidden: usize,
        groups: usize,
        keywords: usize,
        time_scale: f64,
        period: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / libm::sqrt(hidden as f64);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let m = groups * groups * keywords;
        Self {
            hidden,
            groups,
            keywords,
            time_scale,
            period,
            w_h: draw(hidden * hidden),
            w_x: draw(hidden * TIME_FEATURES),
            b_h: draw(hidden),
            w_o: draw(m * hidden),
            b_o: draw(m),
        }
    }

    /// A net whose every weight and bias is zero.
    pub fn zeros(hidden: usize, groups: usize, keywords: usize, time_scale: f64, period: usize) -> Self {
        let m = groups * groups * keywords;
        Self {
            hidden,
            groups,
            keywords,
            time_scale,
            period,
            w_h: vec![0.0; hidden * hidden],
            w_x: vec![0.0; hidden * TIME_FEATURES],
            b_h: vec![0.0; hidden],
            w_o: vec![0.0; m * hidden],
            b_o: vec![0.0; m],
        }
    }

    /// Entries of one emitted `D^t`.
    pub fn output_len(&self) -> usize {
        self.groups * self.groups * self.keywords
    }

    /// `[t / t_c, sin(2 pi t / p), cos(2 pi t / p)]`.
    pub fn features(&self, t: usize) -> [f64; TIME_FEATURES] {
        let angle = 2.0 * PI * (t % self.period.max(1)) as f64 / self.period.max(1) as f64;
        [t as f64 / self.time_scale, libm::sin(angle), libm::cos(angle)]
    }

    /// 1 off the group diagonal, 0 on it.
    pub fn offdiagonal_mask(&self) -> Vec<f64> {
        diagonal_mask(self.groups, self.keywords)
    }

    fn next_hidden(&self, hidden: &[f64], t: usize) -> Vec<f64> {
        let u = self.features(t);
        let h = self.hidden;
        (0..h)
            .map(|r| {
                let rec: f64 = (0..h).map(|c| self.w_h[r * h + c] * hidden[c]).sum();
                let inp: f64 = (0..TIME_FEATURES).map(|c| self.w_x[r * TIME_FEATURES + c] * u[c]).sum();
                libm::tanh(rec + inp + self.b_h[r])
            })
            .collect()
    }

    fn emit(&self, hidden: &[f64]) -> Vec<f64> {
        let h = self.hidden;
        let mask = self.offdiagonal_mask();
        (0..self.output_len())
            .map(|r| {
                let pre: f64 = (0..h).map(|c| self.w_o[r * h + c] * hidden[c]).sum::<f64>() + self.b_o[r];
                if mask[r] == 0.0 {
                    0.0
                } else {
                    pre.max(0.0)
                }
            })
            .collect()
    }
}

pub(crate) fn diagonal_mask(groups: usize, keywords: usize) -> Vec<f64> {
    let mut mask = vec![1.0; groups * groups * keywords];
    for g in 0..groups {
        for k in 0..keywords {
            mask[(g * groups + g) * keywords + k] = 0.0;
        }
    }
    mask
}

/// How the diffusion term is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionMode {
    /// Time-varying intensities from the recurrence.
    #[default]
    Recurrent,
    /// Time-invariant intensities: the output bias alone.
    Constant,
    /// No diffusion term.
    Disabled,
}

/// Recurrent state of one rollout. The hidden vector starts at zeros before
/// time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    hidden: Vec<f64>,
    next_t: usize,
}

impl DiffusionState {
    pub fn new(net: &DiffusionNet) -> Self {
        Self {
            hidden: vec![0.0; net.hidden],
            next_t: 0,
        }
    }

    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    /// Time index the next call to [`diffusion_step`] will consume.
    pub fn next_t(&self) -> usize {
        self.next_t
    }
}

/// Advances the recurrence by one step and returns `(inflow, D^t)`, where
/// `inflow[g, k] = sum_g' D^t[g, g', k] * y[g', k]` for the group means `y`.
pub fn diffusion_step(
    net: &DiffusionNet,
    mode: DiffusionMode,
    state: &mut DiffusionState,
    group_means: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let d = emit_diffusion(net, mode, state);
    (inflow(&d, group_means, net.groups, net.keywords), d)
}

/// Emits `D^t` for `t = state.next_t()` and advances the state.
pub fn emit_diffusion(net: &DiffusionNet, mode: DiffusionMode, state: &mut DiffusionState) -> Vec<f64> {
    let t = state.next_t;
    state.next_t += 1;
    if net.groups < 2 || mode == DiffusionMode::Disabled {
        return vec![0.0; net.output_len()];
    }
    if mode == DiffusionMode::Constant {
        return net.emit(&vec![0.0; net.hidden]);
    }
    state.hidden = net.next_hidden(&state.hidden, t);
    let d = net.emit(&state.hidden);
    debug_assert!(d.iter().all(|v| *v >= 0.0));
    d
}

/// `sum_g' D[g, g', k] * y[g', k]`.
pub fn inflow(d: &[f64], y: &[f64], groups: usize, keywords: usize) -> Vec<f64> {
    let mut out = vec![0.0; groups * keywords];
    for g in 0..groups {
        for src in 0..groups {
            for k in 0..keywords {
                out[g * keywords + k] += d[(g * groups + src) * keywords + k] * y[src * keywords + k];
            }
        }
    }
    out
}

/// Source of `D^t`, queried with strictly increasing `t`.
pub trait DiffusionSchedule {
    /// Returns `D^t` (`d x d x K`) or `None` when there is no diffusion.
    fn at(&mut self, t: usize) -> Option<Vec<f64>>;
}

/// Replays a trained recurrence. Earlier steps are generated on demand, so
/// the hidden state at `t` is always the one reached from zeros at time 0.
pub struct RecurrentSchedule<'a> {
    net: &'a DiffusionNet,
    mode: DiffusionMode,
    state: DiffusionState,
}

impl<'a> RecurrentSchedule<'a> {
    pub fn new(net: &'a DiffusionNet, mode: DiffusionMode) -> Self {
        Self {
            net,
            mode,
            state: DiffusionState::new(net),
        }
    }
}

impl DiffusionSchedule for RecurrentSchedule<'_> {
    fn at(&mut self, t: usize) -> Option<Vec<f64>> {
        if self.mode == DiffusionMode::Disabled || self.net.groups < 2 {
            return None;
        }
        assert!(t >= self.state.next_t, "diffusion schedule queried backwards in time");
        while self.state.next_t < t {
            emit_diffusion(self.net, self.mode, &mut self.state);
        }
        Some(emit_diffusion(self.net, self.mode, &mut self.state))
    }
}

/// The reaction, grouping and seasonal parts of one step; diffusion is
/// supplied per step.
#[derive(Debug, Clone)]
pub struct Dynamics<'a> {
    pub reaction: &'a ReactionParams,
    pub groups: &'a GroupAssignment,
    /// Exposed seasonal gains `p x L x K` and the period `p`.
    pub seasonal: Option<(&'a [f64], usize)>,
}

impl Dynamics<'_> {
    /// One Euler step `(1 + S[t mod p]) * (x + reaction + inflow)`.
    pub fn step(&self, x: &[f64], t: usize, diffusion: Option<&[f64]>) -> Vec<f64> {
        let gain = self.seasonal.map(|(s, p)| {
            let n = x.len();
            let phase = t % p;
            &s[phase * n..(phase + 1) * n]
        });
        forward_step(x, self.reaction, self.groups, diffusion, gain)
    }
}

/// One-step map for an `L x K` frame. `diffusion` is `D^t`; `seasonal_gain`
/// is the `L x K` slice `S[t mod p]`.
pub fn forward_step(
    x: &[f64],
    reaction_params: &ReactionParams,
    groups: &GroupAssignment,
    diffusion: Option<&[f64]>,
    seasonal_gain: Option<&[f64]>,
) -> Vec<f64> {
    let k = reaction_params.keywords;
    let flow = diffusion.map(|d| inflow(d, &group_means(x, k, groups), groups.count(), k));
    let mut out = Vec::with_capacity(x.len());
    for i in 0..reaction_params.locations {
        let row = &x[i * k..(i + 1) * k];
        let r = reaction(row, reaction_params, i);
        for j in 0..k {
            let mut dxdt = r[j];
            if let Some(f) = &flow {
                dxdt += f[groups.group_of(i) * k + j];
            }
            let base = dxdt + row[j];
            out.push(match seasonal_gain {
                Some(s) => (1.0 + s[i * k + j]) * base,
                None => base,
            });
        }
    }
    out
}

/// Input policy of a rollout.
#[derive(Debug, Clone, Copy)]
pub enum RolloutMode<'a> {
    /// Step `m` consumes `observations[m]` (whole `L x K` frames).
    TeacherForced(&'a [f64]),
    /// Each step consumes the previous prediction clamped to `[0, 1.5]`.
    Autoregressive,
}

/// Runs `steps` one-step predictions starting at global time `offset`.
/// Returns the predictions as `steps` consecutive frames. In autoregressive
/// mode the returned frames are the clamped values fed forward.
pub fn rollout(
    dynamics: &Dynamics,
    schedule: &mut dyn DiffusionSchedule,
    x_init: &[f64],
    steps: usize,
    offset: usize,
    mode: RolloutMode,
) -> Result<Vec<f64>> {
    let n = x_init.len();
    if let RolloutMode::TeacherForced(obs) = mode {
        if obs.len() < steps * n {
            return Err(Error::InvalidArgument(format!(
                "teacher forcing needs {steps} observed frames, found {}",
                obs.len() / n.max(1)
            )));
        }
    }
    let mut out = Vec::with_capacity(steps * n);
    let mut current = x_init.to_vec();
    for m in 0..steps {
        let t = offset + m;
        let input: &[f64] = match mode {
            RolloutMode::TeacherForced(obs) => &obs[m * n..(m + 1) * n],
            RolloutMode::Autoregressive => &current,
        };
        let d = schedule.at(t);
        let mut next = dynamics.step(input, t, d.as_deref());
        if let RolloutMode::Autoregressive = mode {
            for v in next.iter_mut() {
                *v = v.clamp(0.0, CLAMP_CEILING);
            }
        }
        out.extend_from_slice(&next);
        current = next;
    }
    Ok(out)
}
