//! The fitted model: parameters, grouping, the modeling window it was fit
//! on, and training metadata.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    rollout, DiffusionMode, DiffusionNet, DiffusionSchedule, Dynamics, GroupAssignment, ReactionParams,
    RecurrentSchedule, RolloutMode, SeasonalityMatrix,
};
use crate::error::{Error, Result};
use crate::mdl::SelectionStep;
use crate::tensor::{ActivityTensor, NormStats};
use crate::training::{FitReport, TrainConfig};

/// Every trainable quantity, in unconstrained form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub reaction: ReactionParams,
    pub diffusion: DiffusionNet,
    pub seasonality: SeasonalityMatrix,
}

/// Names the parameter blocks seen by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockId {
    LogGrowth,
    LogCapacity,
    Interaction,
    RecurrentWeights,
    InputWeights,
    HiddenBias,
    OutputWeights,
    OutputBias,
    Seasonal,
}

impl BlockId {
    pub const ALL: [BlockId; 9] = [
        BlockId::LogGrowth,
        BlockId::LogCapacity,
        BlockId::Interaction,
        BlockId::RecurrentWeights,
        BlockId::InputWeights,
        BlockId::HiddenBias,
        BlockId::OutputWeights,
        BlockId::OutputBias,
        BlockId::Seasonal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockId::LogGrowth => "log_growth",
            BlockId::LogCapacity => "log_capacity",
            BlockId::Interaction => "interaction",
            BlockId::RecurrentWeights => "w_h",
            BlockId::InputWeights => "w_x",
            BlockId::HiddenBias => "b_h",
            BlockId::OutputWeights => "w_o",
            BlockId::OutputBias => "b_o",
            BlockId::Seasonal => "seasonal_raw",
        }
    }
}

impl Parameters {
    pub fn block(&self, id: BlockId) -> &[f64] {
        match id {
            BlockId::LogGrowth => &self.reaction.log_growth,
            BlockId::LogCapacity => &self.reaction.log_capacity,
            BlockId::Interaction => &self.reaction.interaction,
            BlockId::RecurrentWeights => &self.diffusion.w_h,
            BlockId::InputWeights => &self.diffusion.w_x,
            BlockId::HiddenBias => &self.diffusion.b_h,
            BlockId::OutputWeights => &self.diffusion.w_o,
            BlockId::OutputBias => &self.diffusion.b_o,
            BlockId::Seasonal => &self.seasonality.raw,
        }
    }

    pub fn block_mut(&mut self, id: BlockId) -> &mut [f64] {
        match id {
            BlockId::LogGrowth => &mut self.reaction.log_growth,
            BlockId::LogCapacity => &mut self.reaction.log_capacity,
            BlockId::Interaction => &mut self.reaction.interaction,
            BlockId::RecurrentWeights => &mut self.diffusion.w_h,
            BlockId::InputWeights => &mut self.diffusion.w_x,
            BlockId::HiddenBias => &mut self.diffusion.b_h,
            BlockId::OutputWeights => &mut self.diffusion.w_o,
            BlockId::OutputBias => &mut self.diffusion.b_o,
            BlockId::Seasonal => &mut self.seasonality.raw,
        }
    }

    /// Every block, mutably, in [`BlockId::ALL`] order.
    pub fn blocks_mut(&mut self) -> [(BlockId, &mut [f64]); 9] {
        let Parameters {
            reaction,
            diffusion,
            seasonality,
        } = self;
        [
            (BlockId::LogGrowth, &mut reaction.log_growth[..]),
            (BlockId::LogCapacity, &mut reaction.log_capacity[..]),
            (BlockId::Interaction, &mut reaction.interaction[..]),
            (BlockId::RecurrentWeights, &mut diffusion.w_h[..]),
            (BlockId::InputWeights, &mut diffusion.w_x[..]),
            (BlockId::HiddenBias, &mut diffusion.b_h[..]),
            (BlockId::OutputWeights, &mut diffusion.w_o[..]),
            (BlockId::OutputBias, &mut diffusion.b_o[..]),
            (BlockId::Seasonal, &mut seasonality.raw[..]),
        ]
    }

    /// Blocks that influence the loss under the given configuration, in
    /// [`BlockId::ALL`] order.
    pub fn trainable(&self, diffusion: DiffusionMode, seasonality: bool) -> Vec<BlockId> {
        let mut out = alloc::vec![BlockId::LogGrowth, BlockId::LogCapacity];
        if self.reaction.keywords > 1 {
            out.push(BlockId::Interaction);
        }
        if self.diffusion.groups > 1 {
            match diffusion {
                DiffusionMode::Recurrent => out.extend([
                    BlockId::RecurrentWeights,
                    BlockId::InputWeights,
                    BlockId::HiddenBias,
                    BlockId::OutputWeights,
                    BlockId::OutputBias,
                ]),
                DiffusionMode::Constant => out.push(BlockId::OutputBias),
                DiffusionMode::Disabled => {}
            }
        }
        if seasonality {
            out.push(BlockId::Seasonal);
        }
        out
    }
}

/// A fitted model together with everything needed to forecast from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxCubeModel {
    pub params: Parameters,
    pub groups: GroupAssignment,
    /// Normalized modeling window the model was fit on.
    pub history: ActivityTensor,
    pub norm: Option<NormStats>,
    pub config: TrainConfig,
    pub report: Option<FitReport>,
    /// Group-count selection trace, when the model came out of selection.
    pub trace: Vec<SelectionStep>,
}

impl FluxCubeModel {
    pub fn locations(&self) -> usize {
        self.params.reaction.locations
    }

    pub fn keywords(&self) -> usize {
        self.params.reaction.keywords
    }

    pub fn group_count(&self) -> usize {
        self.groups.count()
    }

    /// Length of the modeling window (`t_c`).
    pub fn modeling_len(&self) -> usize {
        self.history.len_t()
    }

    pub fn diffusion_mode(&self) -> DiffusionMode {
        self.config.diffusion
    }

    /// Exposed seasonal gains, or `None` when seasonality is disabled.
    pub fn seasonal_gains(&self) -> Option<Vec<f64>> {
        self.config.seasonality.then(|| self.params.seasonality.values())
    }

    pub fn schedule(&self) -> RecurrentSchedule<'_> {
        RecurrentSchedule::new(&self.params.diffusion, self.config.diffusion)
    }

    /// `D^t` for every `t` in `[start, end)`.
    pub fn diffusion_series(&self, start: usize, end: usize) -> Vec<Vec<f64>> {
        let mut schedule = self.schedule();
        let zeros = alloc::vec![0.0; self.params.diffusion.output_len()];
        (start..end).map(|t| schedule.at(t).unwrap_or_else(|| zeros.clone())).collect()
    }

    /// Runs `f` with this model's step dynamics.
    pub fn with_dynamics<R>(&self, f: impl FnOnce(&Dynamics) -> R) -> R {
        let gains = self.seasonal_gains();
        let dynamics = Dynamics {
            reaction: &self.params.reaction,
            groups: &self.groups,
            seasonal: gains.as_deref().map(|s| (s, self.params.seasonality.period)),
        };
        f(&dynamics)
    }

    /// Checks that every block agrees with the history's axes. Used on
    /// models that arrive from outside, such as deserialized files.
    pub fn validate(&self) -> Result<()> {
        let (l, k) = (self.history.locations(), self.history.keywords());
        let n = l * k;
        let r = &self.params.reaction;
        let shape = |what: &str| Err(Error::Shape(alloc::format!("{what} does not match {l} locations x {k} keywords")));
        if r.locations != l || r.keywords != k || r.log_growth.len() != n || r.log_capacity.len() != n {
            return shape("reaction parameters");
        }
        if r.interaction.len() != n * k {
            return shape("interaction matrix");
        }
        GroupAssignment::new(self.groups.as_slice().to_vec(), self.groups.count())?;
        if self.groups.locations() != l {
            return shape("group assignment");
        }
        let net = &self.params.diffusion;
        let h = net.hidden;
        let m = net.output_len();
        if net.groups != self.groups.count()
            || net.keywords != k
            || net.w_h.len() != h * h
            || net.w_x.len() != h * crate::dynamics::TIME_FEATURES
            || net.b_h.len() != h
            || net.w_o.len() != m * h
            || net.b_o.len() != m
        {
            return shape("diffusion network");
        }
        let s = &self.params.seasonality;
        if s.locations != l || s.keywords != k || s.period == 0 || s.raw.len() != s.period * n {
            return shape("seasonality matrix");
        }
        if let Some(norm) = &self.norm {
            if norm.min.len() != n || norm.max.len() != n || norm.constant.len() != n {
                return shape("normalization statistics");
            }
        }
        if self.history.len_t() < 1 {
            return Err(Error::Shape("model history is empty".into()));
        }
        let finite = [&r.log_growth, &r.log_capacity, &r.interaction, &net.w_h, &net.w_x, &net.b_h, &net.w_o, &net.b_o, &s.raw];
        if finite.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    fn check_axes(&self, window: &ActivityTensor) -> Result<()> {
        if !window.same_axes(&self.history) {
            return Err(Error::Shape("tensor axes differ from the model's axes".into()));
        }
        Ok(())
    }

    /// Teacher-forced one-step predictions of `x_1 .. x_{T-1}` over a window
    /// that starts at time 0.
    pub fn one_step_predictions(&self, window: &ActivityTensor) -> Result<Vec<f64>> {
        self.check_axes(window)?;
        let steps = window.len_t().saturating_sub(1);
        let values = window.values();
        self.with_dynamics(|dynamics| {
            rollout(
                dynamics,
                &mut self.schedule(),
                window.frame(0),
                steps,
                0,
                RolloutMode::TeacherForced(values),
            )
        })
    }

    /// Observed minus predicted for every teacher-forced step of `window`.
    pub fn residuals(&self, window: &ActivityTensor) -> Result<Vec<f64>> {
        let pred = self.one_step_predictions(window)?;
        let n = window.frame_len();
        Ok(window.values()[n..].iter().zip(&pred).map(|(x, p)| x - p).collect())
    }
}
