//! Loss evaluation on the tape and gradient-descent fitting with early
//! stopping and hidden-size selection.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, clip_global_norm, AdamConfig, AdamState, Block};
use crate::autodiff::{Tape, Var};
use crate::dynamics::{
    diagonal_mask, group_means, DiffusionMode, DiffusionNet, GroupAssignment, ReactionParams, SeasonalityMatrix,
    TIME_FEATURES,
};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::model::{BlockId, FluxCubeModel, Parameters};
use crate::rng::stream;
use crate::tensor::ActivityTensor;

/// Training hyperparameters. Every field has a default, so a partial JSON
/// document is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the diffusion-intensity penalty.
    pub alpha: f64,
    /// Weight of the seasonal-gain penalty.
    pub beta: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Trailing share of the modeling window held out for early stopping.
    pub val_fraction: f64,
    pub hidden_candidates: Vec<usize>,
    pub seed: u64,
    /// Seasonal period in steps.
    pub period: usize,
    pub learning_rate: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    /// Largest group count the selection loop may reach (further capped by
    /// the number of locations).
    pub max_groups: usize,
    pub diffusion: DiffusionMode,
    pub seasonality: bool,
    /// K-means restarts during location clustering.
    pub kmeans_restarts: usize,
    /// Epochs at the start of every fit during which no snapshot is kept and
    /// early stopping is off. Multi-group fits also run with diffusion
    /// switched off for these epochs, so reaction and seasonality settle
    /// before the flow network sees their residuals. Counted against
    /// `max_epochs`.
    pub warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            max_epochs: 2000,
            patience: 100,
            val_fraction: 0.1,
            hidden_candidates: vec![16, 32, 64],
            seed: 0,
            period: 52,
            learning_rate: 0.01,
            clip_norm: 10.0,
            max_groups: 12,
            diffusion: DiffusionMode::Recurrent,
            seasonality: true,
            kmeans_restarts: 50,
            warmup_epochs: 300,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::InvalidArgument("alpha and beta must be nonnegative".into()));
        }
        if !(0.0..0.5).contains(&self.val_fraction) {
            return Err(Error::InvalidArgument("val_fraction must lie in [0, 0.5)".into()));
        }
        if self.hidden_candidates.is_empty() || self.hidden_candidates.contains(&0) {
            return Err(Error::InvalidArgument("hidden_candidates must be nonempty and positive".into()));
        }
        if self.period == 0 {
            return Err(Error::InvalidArgument("period must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument("learning_rate and clip_norm must be positive".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Outcome of one hidden-size candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub hidden: usize,
    pub best_validation_mse: Option<f64>,
    pub epochs: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Training loss (with penalties) of the returned snapshot.
    pub final_training_loss: f64,
    pub best_validation_mse: f64,
    pub epochs_run: usize,
    pub selected_hidden: usize,
    /// Filled in by callers that can read a clock.
    pub wall_time_secs: f64,
    /// Penalties are means over their entries, so `alpha`/`beta` do not
    /// depend on tensor size.
    pub regularizer_scaling: String,
    pub candidates: Vec<CandidateSummary>,
    pub warnings: Vec<String>,
}

/// Index maps and constants for one loss graph. Built once per fit; every
/// epoch reuses them through shared buffers.
struct Plan {
    steps: usize,
    keywords: usize,
    groups: usize,
    inputs: Arc<[f64]>,
    neg_targets: Arc<[f64]>,
    lk_index: Arc<[usize]>,
    c_index: Arc<[usize]>,
    x_repeat: Arc<[f64]>,
    c_offdiag: Arc<[f64]>,
    c_eye: Arc<[f64]>,
    d_index: Arc<[usize]>,
    y_repeat: Arc<[f64]>,
    bias_tile: Arc<[usize]>,
    d_mask: Arc<[f64]>,
    s_index: Arc<[usize]>,
    train_pred: Arc<[usize]>,
    train_d: Arc<[usize]>,
    features: Vec<Arc<[f64]>>,
}

impl Plan {
    fn new(window: &ActivityTensor, groups: &GroupAssignment, net: &DiffusionNet, period: usize, train_steps: usize) -> Self {
        let (l, k, d) = (window.locations(), window.keywords(), groups.count());
        let steps = window.len_t() - 1;
        let frame = l * k;
        let m = d * d * k;
        let inputs: Vec<f64> = window.values()[..steps * frame].to_vec();
        let neg_targets: Vec<f64> = window.values()[frame..].iter().map(|v| -v).collect();

        let mut lk_index = Vec::with_capacity(steps * frame);
        let mut s_index = Vec::with_capacity(steps * frame);
        let mut c_index = Vec::with_capacity(steps * frame * k);
        let mut x_repeat = Vec::with_capacity(steps * frame * k);
        let mut d_index = Vec::new();
        let mut y_repeat = Vec::new();
        for t in 0..steps {
            let x = window.frame(t);
            let y = group_means(x, k, groups);
            let phase = t % period;
            for i in 0..l {
                for j in 0..k {
                    lk_index.push(i * k + j);
                    s_index.push(phase * frame + i * k + j);
                    for jj in 0..k {
                        c_index.push((i * k + j) * k + jj);
                        x_repeat.push(x[i * k + jj]);
                    }
                }
                if d > 1 {
                    let g = groups.group_of(i);
                    for src in 0..d {
                        for kk in 0..k {
                            d_index.push(t * m + (g * d + src) * k + kk);
                            y_repeat.push(y[src * k + kk]);
                        }
                    }
                }
            }
        }
        // d_index walks (t, i, src, k); the chunk sum needs (t, i, k, src)
        if d > 1 {
            let mut idx = Vec::with_capacity(d_index.len());
            let mut rep = Vec::with_capacity(y_repeat.len());
            for t in 0..steps {
                for i in 0..l {
                    let base = (t * l + i) * d * k;
                    for kk in 0..k {
                        for src in 0..d {
                            idx.push(d_index[base + src * k + kk]);
                            rep.push(y_repeat[base + src * k + kk]);
                        }
                    }
                }
            }
            d_index = idx;
            y_repeat = rep;
        }
        let mut c_offdiag = vec![1.0; frame * k];
        let mut c_eye = vec![0.0; frame * k];
        for i in 0..l {
            for j in 0..k {
                c_offdiag[(i * k + j) * k + j] = 0.0;
                c_eye[(i * k + j) * k + j] = 1.0;
            }
        }
        let mask = diagonal_mask(d, k);
        let d_mask: Vec<f64> = (0..steps).flat_map(|_| mask.iter().copied()).collect();
        let bias_tile: Vec<usize> = (0..steps).flat_map(|_| 0..m).collect();
        let features = (0..steps)
            .map(|t| -> Arc<[f64]> { Arc::from(&net.features(t)[..]) })
            .collect();
        Self {
            steps,
            keywords: k,
            groups: d,
            inputs: inputs.into(),
            neg_targets: neg_targets.into(),
            lk_index: lk_index.into(),
            c_index: c_index.into(),
            x_repeat: x_repeat.into(),
            c_offdiag: c_offdiag.into(),
            c_eye: c_eye.into(),
            d_index: d_index.into(),
            y_repeat: y_repeat.into(),
            bias_tile: bias_tile.into(),
            d_mask: d_mask.into(),
            s_index: s_index.into(),
            train_pred: (0..train_steps * frame).collect::<Vec<_>>().into(),
            train_d: (0..train_steps * m).collect::<Vec<_>>().into(),
            features,
        }
    }
}

/// Nodes of interest in one recorded loss graph.
struct LossGraph {
    tape: Tape,
    loss: Var,
    squared_error: Var,
    leaves: Vec<(BlockId, Var)>,
}

/// Records the penalized teacher-forced loss for `params` over `plan`.
fn record(params: &Parameters, plan: &Plan, blocks: &[BlockId], diffusion: DiffusionMode, seasonality: bool, alpha: f64, beta: f64) -> LossGraph {
    let mut tape = Tape::new();
    let leaf = |tape: &mut Tape, id: BlockId| -> Var { tape.input(params.block(id).to_vec()) };
    let mut leaves = Vec::new();
    let mut get = |tape: &mut Tape, id: BlockId| -> Var {
        let v = leaf(tape, id);
        if blocks.contains(&id) {
            leaves.push((id, v));
        }
        v
    };
    let k = plan.keywords;
    let x = &plan.inputs;

    // reaction: a x (1 - (C x) / b)
    let log_a = get(&mut tape, BlockId::LogGrowth);
    let log_b = get(&mut tape, BlockId::LogCapacity);
    let a = tape.exp(log_a);
    let neg_log_b = tape.scale(log_b, -1.0);
    let inv_b = tape.exp(neg_log_b);
    let a_t = tape.gather(a, plan.lk_index.clone());
    let inv_b_t = tape.gather(inv_b, plan.lk_index.clone());
    let pressure = if k > 1 {
        let c_raw = get(&mut tape, BlockId::Interaction);
        let c_off = tape.mul_const(c_raw, plan.c_offdiag.clone());
        let c = tape.add_const(c_off, plan.c_eye.clone());
        let c_t = tape.gather(c, plan.c_index.clone());
        let cx = tape.mul_const(c_t, plan.x_repeat.clone());
        tape.sum_chunks(cx, k)
    } else {
        let ones = tape.input(vec![1.0; plan.inputs.len()]);
        tape.mul_const(ones, x.clone())
    };
    let scaled = tape.mul(pressure, inv_b_t);
    let neg = tape.scale(scaled, -1.0);
    let headroom = tape.offset(neg, 1.0);
    let ax = tape.mul_const(a_t, x.clone());
    let reaction = tape.mul(ax, headroom);
    let mut base = tape.add_const(reaction, x.clone());

    // diffusion: D^t from the recurrence, inflow from group means
    let mut d_all = None;
    if plan.groups > 1 && diffusion != DiffusionMode::Disabled {
        let m = plan.groups * plan.groups * k;
        let raw = match diffusion {
            DiffusionMode::Recurrent => {
                let hidden = params.diffusion.hidden;
                let w_h = get(&mut tape, BlockId::RecurrentWeights);
                let w_x = get(&mut tape, BlockId::InputWeights);
                let b_h = get(&mut tape, BlockId::HiddenBias);
                let w_o = get(&mut tape, BlockId::OutputWeights);
                let b_o = get(&mut tape, BlockId::OutputBias);
                let mut h = tape.input(vec![0.0; hidden]);
                let mut outs = Vec::with_capacity(plan.steps);
                for t in 0..plan.steps {
                    let u = tape.input(plan.features[t].to_vec());
                    let rec = tape.matvec(w_h, h, hidden, hidden);
                    let inp = tape.matvec(w_x, u, hidden, TIME_FEATURES);
                    let pre = tape.add(rec, inp);
                    let pre = tape.add(pre, b_h);
                    h = tape.tanh(pre);
                    let o = tape.matvec(w_o, h, m, hidden);
                    outs.push(tape.add(o, b_o));
                }
                tape.concat(outs)
            }
            _ => {
                let b_o = get(&mut tape, BlockId::OutputBias);
                tape.gather(b_o, plan.bias_tile.clone())
            }
        };
        let rect = tape.relu(raw);
        let d = tape.mul_const(rect, plan.d_mask.clone());
        let d_t = tape.gather(d, plan.d_index.clone());
        let weighted = tape.mul_const(d_t, plan.y_repeat.clone());
        let flow = tape.sum_chunks(weighted, plan.groups);
        base = tape.add(base, flow);
        d_all = Some(d);
    }

    // seasonality: (1 + S[t mod p]) * base
    let mut s_vals = None;
    let pred = if seasonality {
        let s_raw = get(&mut tape, BlockId::Seasonal);
        let s = tape.softplus(s_raw);
        let s_t = tape.gather(s, plan.s_index.clone());
        let gain = tape.offset(s_t, 1.0);
        s_vals = Some(s);
        tape.mul(gain, base)
    } else {
        base
    };

    let err = tape.add_const(pred, plan.neg_targets.clone());
    let squared_error = tape.mul(err, err);
    let train_err = tape.gather(squared_error, plan.train_pred.clone());
    let mut loss = tape.mean(train_err);
    if let Some(d) = d_all {
        if alpha > 0.0 {
            let d_train = tape.gather(d, plan.train_d.clone());
            let d_sq = tape.mul(d_train, d_train);
            let pen = tape.mean(d_sq);
            let pen = tape.scale(pen, alpha);
            loss = tape.add(loss, pen);
        }
    }
    if let Some(s) = s_vals {
        if beta > 0.0 {
            let s_sq = tape.mul(s, s);
            let pen = tape.mean(s_sq);
            let pen = tape.scale(pen, beta);
            loss = tape.add(loss, pen);
        }
    }
    LossGraph {
        tape,
        loss,
        squared_error,
        leaves,
    }
}

fn check_window(params: &Parameters, window: &ActivityTensor, groups: &GroupAssignment) -> Result<()> {
    let r = &params.reaction;
    if window.len_t() < 2 {
        return Err(Error::Shape("window needs at least two time steps".into()));
    }
    if window.locations() != r.locations || window.keywords() != r.keywords {
        return Err(Error::Shape(format!(
            "model is {}x{}, window is {}x{}",
            r.locations,
            r.keywords,
            window.locations(),
            window.keywords()
        )));
    }
    if groups.locations() != r.locations || groups.count() != params.diffusion.groups {
        return Err(Error::Shape("group assignment does not match the model".into()));
    }
    if params.seasonality.locations != r.locations || params.seasonality.keywords != r.keywords {
        return Err(Error::Shape("seasonality shape does not match the model".into()));
    }
    Ok(())
}

/// Penalized loss and its gradient for every trainable block, over all
/// teacher-forced steps of `window`.
pub fn loss_and_gradient(
    params: &Parameters,
    window: &ActivityTensor,
    groups: &GroupAssignment,
    config: &TrainConfig,
) -> Result<(f64, Vec<(BlockId, Vec<f64>)>)> {
    check_window(params, window, groups)?;
    let plan = Plan::new(window, groups, &params.diffusion, params.seasonality.period, window.len_t() - 1);
    let blocks = params.trainable(config.diffusion, config.seasonality);
    let graph = record(params, &plan, &blocks, config.diffusion, config.seasonality, config.alpha, config.beta);
    let loss = graph.tape.scalar(graph.loss);
    let mut grads = graph.tape.backward(graph.loss)?;
    let out = graph.leaves.iter().map(|(id, v)| (*id, grads.take(*v))).collect();
    Ok((loss, out))
}

/// Mean squared one-step teacher-forced error over every `(t, i, j)` plus
/// the mean-scaled diffusion and seasonal penalties.
pub fn loss(model: &FluxCubeModel, window: &ActivityTensor) -> Result<f64> {
    check_window(&model.params, window, &model.groups)?;
    let plan = Plan::new(window, &model.groups, &model.params.diffusion, model.params.seasonality.period, window.len_t() - 1);
    let c = &model.config;
    let graph = record(&model.params, &plan, &[], c.diffusion, c.seasonality, c.alpha, c.beta);
    let value = graph.tape.scalar(graph.loss);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(value)
}

/// Starting point for a fit: growth 0.5, capacity 1, small random cross
/// interactions, uniform recurrent weights and near-zero seasonality.
pub fn initial_parameters<R: Rng>(
    locations: usize,
    keywords: usize,
    groups: usize,
    hidden: usize,
    time_scale: f64,
    period: usize,
    rng: &mut R,
) -> Parameters {
    let mut reaction = ReactionParams::initial(locations, keywords);
    for i in 0..locations {
        for j in 0..keywords {
            for jj in 0..keywords {
                if j != jj {
                    reaction.interaction[(i * keywords + j) * keywords + jj] = rng.random_range(-0.01..0.01);
                }
            }
        }
    }
    Parameters {
        reaction,
        diffusion: DiffusionNet::random(hidden, groups, keywords, time_scale, period, rng),
        seasonality: SeasonalityMatrix::filled(period, locations, keywords, -3.0),
    }
}

/// Result of training one hidden size.
#[derive(Debug, Clone)]
pub struct CandidateFit {
    pub hidden: usize,
    pub params: Parameters,
    pub best_validation_mse: f64,
    pub training_loss: f64,
    pub epochs: usize,
    /// Validation MSE recorded at every epoch.
    pub validation_curve: Vec<f64>,
}

fn validation_split(steps: usize, val_fraction: f64) -> usize {
    if val_fraction <= 0.0 || steps < 2 {
        return 0;
    }
    let n = libm::round(val_fraction * steps as f64) as usize;
    n.clamp(1, steps - 1)
}

/// Trains one hidden size from `params` and keeps the best-validation
/// snapshot.
pub fn train_candidate(
    window: &ActivityTensor,
    groups: &GroupAssignment,
    config: &TrainConfig,
    mut params: Parameters,
) -> Result<CandidateFit> {
    check_window(&params, window, groups)?;
    let steps = window.len_t() - 1;
    let val_steps = validation_split(steps, config.val_fraction);
    let train_steps = steps - val_steps;
    let frame = window.frame_len();
    let plan = Plan::new(window, groups, &params.diffusion, params.seasonality.period, train_steps);
    let hidden = params.diffusion.hidden;
    let score_of = |graph: &LossGraph, loss: f64| -> f64 {
        if val_steps > 0 {
            let sq = graph.tape.value(graph.squared_error);
            sq[train_steps * frame..].iter().sum::<f64>() / (val_steps * frame) as f64
        } else {
            loss
        }
    };
    let mut curve = Vec::new();
    let mut epochs = 0;

    let warmup = config.warmup_epochs.min(config.max_epochs.saturating_sub(1));
    let warm_mode = if groups.count() > 1 { DiffusionMode::Disabled } else { config.diffusion };
    let warm_blocks = params.trainable(warm_mode, config.seasonality);
    let sizes: Vec<usize> = warm_blocks.iter().map(|b| params.block(*b).len()).collect();
    let mut adam = AdamState::new(config.adam(), &sizes);
    for _ in 0..warmup {
        epochs += 1;
        let graph = record(&params, &plan, &warm_blocks, warm_mode, config.seasonality, config.alpha, config.beta);
        let loss = graph.tape.scalar(graph.loss);
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss at epoch {epochs} (hidden {hidden})")));
        }
        curve.push(score_of(&graph, loss));
        descend(&mut params, graph, &warm_blocks, &mut adam, config.clip_norm)?;
    }

    let blocks = params.trainable(config.diffusion, config.seasonality);
    if blocks != warm_blocks {
        let sizes: Vec<usize> = blocks.iter().map(|b| params.block(*b).len()).collect();
        adam = AdamState::new(config.adam(), &sizes);
    }
    let mut best: Option<(f64, f64, Parameters)> = None;
    let mut since_best = 0;
    for _ in warmup..config.max_epochs {
        epochs += 1;
        let graph = record(&params, &plan, &blocks, config.diffusion, config.seasonality, config.alpha, config.beta);
        let loss = graph.tape.scalar(graph.loss);
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss at epoch {epochs} (hidden {hidden})")));
        }
        let score = score_of(&graph, loss);
        curve.push(score);
        if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
            best = Some((score, loss, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
        descend(&mut params, graph, &blocks, &mut adam, config.clip_norm)?;
    }
    let (best_validation_mse, training_loss, params) =
        best.ok_or_else(|| Error::Training("no epochs were run".into()))?;
    Ok(CandidateFit {
        hidden,
        params,
        best_validation_mse,
        training_loss,
        epochs,
        validation_curve: curve,
    })
}

/// One clipped Adam step on `blocks` from the gradient of `graph`.
fn descend(params: &mut Parameters, graph: LossGraph, blocks: &[BlockId], adam: &mut AdamState, clip: f64) -> Result<()> {
    let mut grads = graph.tape.backward(graph.loss)?;
    // gradients in the same order as `blocks_mut`
    let mut flat: Vec<Vec<f64>> = blocks
        .iter()
        .map(|id| {
            let (_, v) = graph.leaves.iter().find(|(b, _)| b == id).expect("every trainable block is a leaf");
            grads.take(*v)
        })
        .collect();
    clip_global_norm(&mut flat, clip);
    let mut adam_blocks: Vec<Block<'_>> = params
        .blocks_mut()
        .into_iter()
        .filter(|(id, _)| blocks.contains(id))
        .map(|(id, values)| Block { name: id.name(), values })
        .collect();
    adam_step(&mut adam_blocks, &flat, adam).map_err(|e| Error::Training(e.to_string()))
}

/// Picks the candidate with the lowest validation MSE; ties go to the
/// earlier candidate. Failed candidates are skipped.
pub fn pick_best(results: Vec<Result<CandidateFit>>) -> (Option<CandidateFit>, Vec<CandidateSummary>) {
    let mut summaries = Vec::new();
    let mut best: Option<CandidateFit> = None;
    for r in results {
        match r {
            Ok(fit) => {
                summaries.push(CandidateSummary {
                    hidden: fit.hidden,
                    best_validation_mse: Some(fit.best_validation_mse),
                    epochs: fit.epochs,
                    error: None,
                });
                if best.as_ref().map_or(true, |b| fit.best_validation_mse < b.best_validation_mse) {
                    best = Some(fit);
                }
            }
            Err(e) => summaries.push(CandidateSummary {
                hidden: 0,
                best_validation_mse: None,
                epochs: 0,
                error: Some(e.to_string()),
            }),
        }
    }
    (best, summaries)
}

/// Fits every hidden-size candidate on the modeling `window` (normalized)
/// and returns the one with the lowest validation MSE.
pub fn fit<E: Executor>(
    window: &ActivityTensor,
    groups: &GroupAssignment,
    config: &TrainConfig,
    exec: &E,
) -> Result<(FluxCubeModel, FitReport)> {
    config.validate()?;
    let (l, k) = (window.locations(), window.keywords());
    if groups.locations() != l {
        return Err(Error::Shape(format!(
            "group assignment covers {} locations, window has {l}",
            groups.locations()
        )));
    }
    let p = config.period;
    if window.len_t() < p + 2 {
        return Err(Error::InvalidArgument(format!(
            "modeling window of {} steps is shorter than period + 2 = {}",
            window.len_t(),
            p + 2
        )));
    }
    let mut warnings = Vec::new();
    if window.len_t() < 2 * p {
        warnings.push(format!(
            "modeling window ({} steps) covers fewer than two seasonal periods",
            window.len_t()
        ));
    }
    let time_scale = window.len_t() as f64;
    let d = groups.count();
    let results = exec.map(config.hidden_candidates.clone(), |hidden| {
        let mut rng = stream(config.seed, ((d as u64) << 32) | hidden as u64);
        let init = initial_parameters(l, k, d, hidden, time_scale, p, &mut rng);
        train_candidate(window, groups, config, init).map_err(|e| match e {
            Error::Training(m) => Error::Training(format!("hidden {hidden}: {m}")),
            other => other,
        })
    });
    let mut errors = Vec::new();
    let results: Vec<Result<CandidateFit>> = results
        .into_iter()
        .zip(&config.hidden_candidates)
        .map(|(r, h)| {
            r.map_err(|e| {
                errors.push((*h, e.clone()));
                e
            })
        })
        .collect();
    let (best, mut summaries) = pick_best(results);
    for (summary, h) in summaries.iter_mut().zip(&config.hidden_candidates) {
        summary.hidden = *h;
    }
    let best = best.ok_or_else(|| {
        let msg = errors
            .iter()
            .map(|(h, e)| format!("hidden {h}: {e}"))
            .collect::<Vec<_>>()
            .join("; ");
        Error::Training(format!("every hidden-size candidate failed ({msg})"))
    })?;
    let report = FitReport {
        final_training_loss: best.training_loss,
        best_validation_mse: best.best_validation_mse,
        epochs_run: best.epochs,
        selected_hidden: best.hidden,
        wall_time_secs: 0.0,
        regularizer_scaling: "mean".into(),
        candidates: summaries,
        warnings,
    };
    let model = FluxCubeModel {
        params: best.params,
        groups: groups.clone(),
        history: window.clone(),
        norm: None,
        config: config.clone(),
        report: Some(report.clone()),
        trace: Vec::new(),
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use alloc::string::String;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn window(values: Vec<f64>, t: usize, l: usize, k: usize) -> ActivityTensor {
        ActivityTensor::view(values, labels("t", t), labels("l", l), labels("k", k), true).unwrap()
    }

    fn model_for(params: Parameters, groups: GroupAssignment, history: ActivityTensor, config: TrainConfig) -> FluxCubeModel {
        FluxCubeModel {
            params,
            groups,
            history,
            norm: None,
            config,
            report: None,
            trace: Vec::new(),
        }
    }

    fn random_instance(seed: u64, t: usize, l: usize, k: usize, d: usize, h: usize) -> (Parameters, ActivityTensor, GroupAssignment) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = initial_parameters(l, k, d, h, t as f64, 5, &mut rng);
        for v in params.reaction.log_growth.iter_mut().chain(params.reaction.log_capacity.iter_mut()) {
            *v = rng.random_range(-1.0..0.5);
        }
        for v in params.reaction.interaction.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        for v in params.diffusion.b_o.iter_mut() {
            *v = rng.random_range(-0.2..0.6);
        }
        for v in params.seasonality.raw.iter_mut() {
            *v = rng.random_range(-3.0..1.0);
        }
        let values = (0..t * l * k).map(|_| rng.random_range(0.05..1.0)).collect();
        let group: Vec<usize> = (0..l).map(|i| i % d).collect();
        (params, window(values, t, l, k), GroupAssignment::new(group, d).unwrap())
    }

    #[test]
    fn tape_loss_matches_plain_dynamics() {
        let (params, w, groups) = random_instance(4, 12, 4, 3, 2, 8);
        let config = TrainConfig {
            period: 5,
            ..TrainConfig::default()
        };
        let model = model_for(params, groups, w.clone(), config.clone());
        let pred = model.one_step_predictions(&w).unwrap();
        let frame = w.frame_len();
        let mse = pred.iter().zip(&w.values()[frame..]).map(|(p, x)| (p - x) * (p - x)).sum::<f64>() / pred.len() as f64;
        let ds = model.diffusion_series(0, 11);
        let d_pen = ds.iter().flatten().map(|v| v * v).sum::<f64>() / (11 * ds[0].len()) as f64;
        let s = model.params.seasonality.values();
        let s_pen = s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
        let expected = mse + config.alpha * d_pen + config.beta * s_pen;
        let got = loss(&model, &w).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected.max(1.0), "{got} vs {expected}");
    }

    #[test]
    fn perfect_predictions_without_penalties_give_zero_loss() {
        // capacity equilibrium with C = I is the identity map
        let l = 2;
        let mut params = initial_parameters(l, 1, 1, 4, 6.0, 3, &mut ChaCha8Rng::seed_from_u64(0));
        params.reaction.log_capacity = vec![libm::log(0.4); l];
        let config = TrainConfig {
            seasonality: false,
            period: 3,
            ..TrainConfig::default()
        };
        let w = window(vec![0.4; 6 * l], 6, l, 1);
        let model = model_for(params, GroupAssignment::single(l), w.clone(), config);
        assert_eq!(loss(&model, &w).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_gives_offset_squared() {
        // near-zero growth makes the one-step map the identity
        let mut params = initial_parameters(1, 1, 1, 4, 5.0, 3, &mut ChaCha8Rng::seed_from_u64(0));
        params.reaction.log_growth = vec![-60.0];
        let config = TrainConfig {
            seasonality: false,
            period: 3,
            ..TrainConfig::default()
        };
        let w = window((0..5).map(|t| 0.1 + 0.1 * t as f64).collect(), 5, 1, 1);
        let model = model_for(params, GroupAssignment::single(1), w.clone(), config);
        assert!((loss(&model, &w).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_ignores_diffusion_magnitude() {
        let (params, w, groups) = random_instance(9, 10, 4, 2, 2, 8);
        let config = TrainConfig {
            alpha: 0.0,
            beta: 0.0,
            period: 5,
            ..TrainConfig::default()
        };
        let base = model_for(params.clone(), groups.clone(), w.clone(), config.clone());
        let mut doubled = params;
        doubled.diffusion.w_o.iter_mut().chain(doubled.diffusion.b_o.iter_mut()).for_each(|v| *v *= 2.0);
        let doubled = model_for(doubled, groups, w.clone(), config);
        let mse = |m: &FluxCubeModel| {
            let p = m.one_step_predictions(&w).unwrap();
            let frame = w.frame_len();
            p.iter().zip(&w.values()[frame..]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64
        };
        assert!((loss(&base, &w).unwrap() - mse(&base)).abs() < 1e-14);
        assert!((loss(&doubled, &w).unwrap() - mse(&doubled)).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (params, w, groups) = random_instance(21, 10, 3, 2, 2, 6);
        let config = TrainConfig {
            period: 5,
            ..TrainConfig::default()
        };
        let (_, grads) = loss_and_gradient(&params, &w, &groups, &config).unwrap();
        for (id, g) in grads {
            let mut numeric = Vec::new();
            for i in 0..g.len() {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    p.block_mut(id)[i] += delta;
                    loss_and_gradient(&p, &w, &groups, &config).unwrap().0
                };
                numeric.push((eval(1e-5) - eval(-1e-5)) / 2e-5);
            }
            let diff = g.iter().zip(&numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
            assert!(diff / scale < 1e-4, "{}: rel err {}", id.name(), diff / scale);
        }
    }

    #[test]
    fn zero_signal_is_fit_to_near_zero_error() {
        let l = 2;
        let w = window(vec![0.0; 20 * l], 20, l, 1);
        let config = TrainConfig {
            period: 4,
            max_epochs: 30,
            hidden_candidates: vec![4],
            ..TrainConfig::default()
        };
        let (model, report) = fit(&w, &GroupAssignment::single(l), &config, &Sequential).unwrap();
        assert!(report.best_validation_mse < 1e-6);
        let pred = model.one_step_predictions(&w).unwrap();
        assert!(pred.iter().all(|p| p.abs() < 1e-3));
    }

    #[test]
    fn failed_candidates_are_skipped() {
        let (params, _, _) = random_instance(1, 10, 2, 1, 1, 4);
        let ok = CandidateFit {
            hidden: 32,
            params,
            best_validation_mse: 0.5,
            training_loss: 0.4,
            epochs: 3,
            validation_curve: vec![0.5],
        };
        let (best, summaries) = pick_best(vec![Err(Error::Training("diverged".into())), Ok(ok)]);
        assert_eq!(best.unwrap().hidden, 32);
        assert!(summaries[0].error.is_some());
        let (none, _) = pick_best(vec![Err(Error::Training("diverged".into()))]);
        assert!(none.is_none());
    }

    #[test]
    fn short_window_is_rejected() {
        let w = window(vec![0.1; 6], 6, 1, 1);
        let config = TrainConfig {
            period: 5,
            ..TrainConfig::default()
        };
        assert!(fit(&w, &GroupAssignment::single(1), &config, &Sequential).is_err());
    }

    #[test]
    fn returned_snapshot_is_no_worse_than_the_first_epoch() {
        let (_, w, groups) = random_instance(5, 24, 4, 2, 2, 4);
        let config = TrainConfig {
            period: 4,
            max_epochs: 40,
            patience: 5,
            hidden_candidates: vec![4],
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let init = initial_parameters(4, 2, 2, 4, 24.0, 4, &mut rng);
        let fit = train_candidate(&w, &groups, &config, init).unwrap();
        assert!(fit.best_validation_mse <= fit.validation_curve[0]);
        assert!(fit.validation_curve.iter().all(|v| fit.best_validation_mse <= *v));
    }
}
