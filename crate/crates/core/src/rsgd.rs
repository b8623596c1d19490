//! Rehearsal-aware SGD: two-stage minibatch sampling, the weighted
//! stochastic gradient, and momentum / weight decay / cosine annealing.

use alloc::{format, vec, vec::Vec};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err};
use crate::nn::Network;
use crate::rehearsal::RehearsalSet;
use crate::scenario::LabeledDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// `lr0 * (1 + cos(pi * epoch / epochs)) / 2`, stepped once per epoch.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsgdConfig {
    /// Share `alpha` of every minibatch comes from the rehearsal set.
    pub alpha: f64,
    /// Total minibatch size `K`.
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub schedule: LrSchedule,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub epochs: usize,
    /// Keep every raw combined gradient in the step trace.
    #[serde(default)]
    pub record_gradients: bool,
}

impl Default for RsgdConfig {
    fn default() -> Self {
        RsgdConfig {
            alpha: 0.5,
            batch_size: 128,
            learning_rate: 0.1,
            schedule: LrSchedule::Cosine,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 30,
            record_gradients: false,
        }
    }
}

impl RsgdConfig {
    /// With `replay`, `alpha * K` must be a whole number strictly between 0
    /// and `K`.
    pub fn validate(&self, replay: bool) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err!("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.momentum >= 0.0 && self.momentum < 1.0) || !(self.weight_decay >= 0.0)
        {
            return Err(config_err!(
                "learning rate must be positive, momentum in [0, 1), weight decay non-negative"
            ));
        }
        if replay {
            if !(self.alpha > 0.0 && self.alpha < 1.0) {
                return Err(config_err!("alpha {} outside (0, 1)", self.alpha));
            }
            let exact = self.alpha * self.batch_size as f64;
            let rounded = libm::round(exact);
            if libm::fabs(exact - rounded) > 1e-9 || rounded < 1.0 || rounded as usize >= self.batch_size {
                return Err(config_err!(
                    "alpha * K = {exact} must be a whole number strictly between 0 and K = {}",
                    self.batch_size
                ));
            }
        }
        Ok(())
    }

    /// `alpha * K`.
    pub fn replay_size(&self) -> usize {
        libm::round(self.alpha * self.batch_size as f64) as usize
    }

    /// `(1 - alpha) * K`.
    pub fn new_size(&self) -> usize {
        self.batch_size - self.replay_size()
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                if self.epochs == 0 {
                    return self.learning_rate;
                }
                let phase = core::f64::consts::PI * epoch as f64 / self.epochs as f64;
                self.learning_rate * (1.0 + libm::cos(phase)) / 2.0
            }
        }
    }

    /// One epoch draws about as many new samples as `D^m` holds.
    pub fn iterations_per_epoch(&self, new_samples: usize, replay: bool) -> usize {
        let per_iter = if replay { self.new_size() } else { self.batch_size };
        new_samples.div_ceil(per_iter).max(1)
    }
}

/// One realisation of the two-stage sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatchDraw {
    /// `(1 - alpha) K` i.i.d. samples of `D^m`.
    pub new: LabeledDataset,
    /// Past classes in ascending order.
    pub classes: Vec<usize>,
    /// Multinomial counts `k_c`, summing to `alpha K`.
    pub counts: Vec<usize>,
    /// `max(k_c, 1)` i.i.d. samples of `R_c` per class; a zero count still
    /// draws one sample that then carries weight zero.
    pub replay: Vec<LabeledDataset>,
    /// `K`.
    pub total: usize,
}

fn gather<R: Rng + ?Sized>(source: &LabeledDataset, count: usize, rng: &mut R) -> LabeledDataset {
    let rows: Vec<usize> = (0..count).map(|_| rng.random_range(0..source.len())).collect();
    source.subset(&rows)
}

/// `Multinomial(n, p)` as `n` independent categorical draws.
pub fn multinomial<R: Rng + ?Sized>(n: usize, probabilities: &[f64], rng: &mut R) -> Result<Vec<usize>> {
    let mut counts = vec![0; probabilities.len()];
    if n == 0 {
        return Ok(counts);
    }
    let dist = WeightedIndex::new(probabilities).map_err(|e| config_err!("invalid class probabilities: {e}"))?;
    for _ in 0..n {
        counts[dist.sample(rng)] += 1;
    }
    Ok(counts)
}

/// Draws `(1 - alpha) K` new samples, then `k ~ Multinomial(alpha K, p)`,
/// then `k_c` samples from each `R_c`, always in that order.
pub fn draw_minibatch<R: Rng + ?Sized>(
    rehearsal: &RehearsalSet,
    new_data: &LabeledDataset,
    cfg: &RsgdConfig,
    rng: &mut R,
) -> Result<MiniBatchDraw> {
    if new_data.is_empty() {
        return Err(shape_err!("no new data to draw from"));
    }
    let new = gather(new_data, cfg.new_size(), rng);
    let dim = new_data.dim();
    let (classes, probabilities): (Vec<usize>, Vec<f64>) = rehearsal.probabilities().into_iter().unzip();
    let counts = if classes.is_empty() {
        Vec::new()
    } else {
        multinomial(cfg.replay_size(), &probabilities, rng)?
    };
    let mut replay = Vec::with_capacity(classes.len());
    for (&c, &k) in classes.iter().zip(&counts) {
        let pool = rehearsal
            .class_dataset(c, dim)
            .ok_or_else(|| shape_err!("rehearsal class {c} has no exemplars"))?;
        replay.push(gather(&pool, k.max(1), rng));
    }
    Ok(MiniBatchDraw {
        new,
        classes,
        counts,
        replay,
        total: cfg.batch_size,
    })
}

fn add_scaled(acc: &mut [f64], weight: f64, g: &[f64]) {
    for (a, &v) in acc.iter_mut().zip(g) {
        *a += weight * v;
    }
}

fn named(term: &str, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{term}: {what}")),
        other => other,
    }
}

/// `sum_c (k_c / K) g(R_c batch) + (1 - alpha) g(new batch)`, accumulated in
/// class order followed by the new-data term.
pub fn combined_gradient(net: &Network, draw: &MiniBatchDraw, cfg: &RsgdConfig) -> Result<Vec<f64>> {
    let mut total = vec![0.0; net.params().len()];
    let k = draw.total as f64;
    for ((&c, &count), batch) in draw.classes.iter().zip(&draw.counts).zip(&draw.replay) {
        if count == 0 {
            continue;
        }
        let (_, g) = net
            .gradient(&batch.as_batch())
            .map_err(|e| named(&format!("rehearsal term of class {c}"), e))?;
        add_scaled(&mut total, count as f64 / k, &g);
    }
    let (_, g) = net
        .gradient(&draw.new.as_batch())
        .map_err(|e| named("new-data term", e))?;
    add_scaled(&mut total, 1.0 - cfg.alpha, &g);
    Ok(total)
}

/// Momentum buffer; a fresh state starts every incremental step.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    velocity: Vec<f64>,
}

impl SgdState {
    pub fn new(len: usize) -> Self {
        SgdState {
            velocity: vec![0.0; len],
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// `v = mu v + (g + wd theta)`, `theta -= lr v`. With `mu = wd = 0` this is
/// exactly `theta -= lr g`.
pub fn apply_update(params: &mut [f64], grad: &[f64], state: &mut SgdState, cfg: &RsgdConfig, lr: f64) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.velocity.len() {
        return Err(shape_err!(
            "update lengths differ: params {}, gradient {}, state {}",
            params.len(),
            grad.len(),
            state.velocity.len()
        ));
    }
    for ((p, &g), v) in params.iter_mut().zip(grad).zip(state.velocity.iter_mut()) {
        let g = g + cfg.weight_decay * *p;
        *v = cfg.momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Observer of selected iterates during [`train_step`]. Hooks see the
/// network read-only and never touch the training generator.
pub trait TrainingHook {
    fn on_checkpoint(&mut self, t: usize, net: &Network) -> Result<()>;
}

/// Hook that ignores every checkpoint.
pub struct NoHook;

impl TrainingHook for NoHook {
    fn on_checkpoint(&mut self, _t: usize, _net: &Network) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub t: usize,
    pub epoch: usize,
    pub lr: f64,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<Vec<f64>>,
}

/// Trains one incremental step.
///
/// Without rehearsal (the first step) each iteration is plain SGD on `K`
/// i.i.d. samples of `new_data`; otherwise it is the two-stage R-SGD draw.
/// `hook` fires before the update of every iterate listed in `checkpoints`
/// and, if listed, at the final iterate `T`.
pub fn train_step<R: Rng + ?Sized>(
    mut net: Network,
    new_data: &LabeledDataset,
    rehearsal: &RehearsalSet,
    cfg: &RsgdConfig,
    checkpoints: &[usize],
    hook: &mut dyn TrainingHook,
    rng: &mut R,
) -> Result<(Network, Vec<StepTrace>)> {
    let replay = !rehearsal.is_empty();
    cfg.validate(replay)?;
    let classes = net.classes();
    if new_data
        .labels()
        .iter()
        .chain(rehearsal.classes().iter())
        .any(|&c| c >= classes)
    {
        return Err(shape_err!(
            "the head of {classes} classes does not cover the step's labels"
        ));
    }
    let per_epoch = cfg.iterations_per_epoch(new_data.len(), replay);
    let iterations = cfg.epochs * per_epoch;
    let mut state = SgdState::new(net.params().len());
    let mut traces = Vec::with_capacity(iterations);

    for t in 0..iterations {
        if checkpoints.binary_search(&t).is_ok() {
            hook.on_checkpoint(t, &net)?;
        }
        let epoch = t / per_epoch;
        let lr = cfg.lr_at_epoch(epoch);
        let grad = if replay {
            let draw = draw_minibatch(rehearsal, new_data, cfg, rng)?;
            combined_gradient(&net, &draw, cfg)?
        } else {
            let batch = gather(new_data, cfg.batch_size, rng);
            net.gradient(&batch.as_batch())?.1
        };
        let grad_norm = libm::sqrt(grad.iter().map(|g| g * g).sum());
        apply_update(net.params_mut(), &grad, &mut state, cfg, lr)?;
        traces.push(StepTrace {
            t,
            epoch,
            lr,
            grad_norm,
            gradient: cfg.record_gradients.then_some(grad),
        });
    }
    if checkpoints.binary_search(&iterations).is_ok() {
        hook.on_checkpoint(iterations, &net)?;
    }
    Ok((net, traces))
}
