//! Interference operator, last-layer bias vectors and the per-class
//! coefficients SIC, CIC, NIC and ALL-NIC aggregated over a training
//! trajectory, plus the LOG-SIM baseline.

use alloc::{collections::BTreeMap, vec::Vec};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err};
use crate::nn::{IndexKind, Network};
use crate::rehearsal::RehearsalSet;
use crate::rsgd::TrainingHook;
use crate::scenario::LabeledDataset;
use crate::{Error, Result};

/// Reference gradients shorter than this make a checkpoint degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Largest model for which full-parameter snapshots are allowed.
pub const FULL_SNAPSHOT_LIMIT: usize = 50_000;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// `-<v, g> / |g|`: the negative scalar projection of `v` onto `reference`.
///
/// Fails with [`Error::DegenerateGradient`] when `|reference| < 1e-12`.
pub fn interf(v: &[f64], reference: &[f64]) -> Result<f64> {
    if v.len() != reference.len() {
        return Err(shape_err!(
            "interference of a {}-vector against a {}-vector",
            v.len(),
            reference.len()
        ));
    }
    let n = norm(reference);
    if !(n >= DEGENERATE_NORM) {
        return Err(Error::DegenerateGradient(n));
    }
    Ok(-dot(v, reference) / n)
}

/// Iterates at which gradients are snapshotted: `t = 0` and the end of
/// every epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointPlan {
    indices: Vec<usize>,
}

impl CheckpointPlan {
    pub fn end_of_epochs(epochs: usize, iterations_per_epoch: usize) -> Self {
        CheckpointPlan {
            indices: (0..=epochs).map(|e| e * iterations_per_epoch).collect(),
        }
    }

    pub fn from_indices(indices: Vec<usize>) -> Result<Self> {
        if indices.first() != Some(&0) || indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err!("checkpoints must start at 0 and increase strictly"));
        }
        Ok(CheckpointPlan { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Datasets the snapshots are evaluated on: per past class its original
/// training data `D_c` and rehearsal subset `R_c`, plus the new data `D^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticData {
    classes: Vec<usize>,
    original: Vec<LabeledDataset>,
    rehearsal: Vec<LabeledDataset>,
    new: LabeledDataset,
}

impl DiagnosticData {
    /// `past_train` must hold every original training sample of the classes
    /// in `rehearsal`.
    pub fn new(past_train: &LabeledDataset, rehearsal: &RehearsalSet, new: LabeledDataset) -> Result<Self> {
        let classes = rehearsal.classes();
        if classes.is_empty() {
            return Err(shape_err!("diagnostics need at least one past class"));
        }
        let dim = new.dim();
        if past_train.dim() != dim {
            return Err(shape_err!(
                "past data has dimension {}, new data {dim}",
                past_train.dim()
            ));
        }
        let mut original = Vec::with_capacity(classes.len());
        let mut held = Vec::with_capacity(classes.len());
        for &c in &classes {
            let d = past_train.class_subset(c);
            if d.is_empty() {
                return Err(shape_err!("no original training data for past class {c}"));
            }
            original.push(d);
            held.push(rehearsal.class_dataset(c, dim).expect("listed class"));
        }
        if new.is_empty() {
            return Err(shape_err!("no new data"));
        }
        Ok(DiagnosticData {
            classes,
            original,
            rehearsal: held,
            new,
        })
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn original(&self, i: usize) -> &LabeledDataset {
        &self.original[i]
    }

    pub fn rehearsal(&self, i: usize) -> &LabeledDataset {
        &self.rehearsal[i]
    }

    pub fn new_data(&self) -> &LabeledDataset {
        &self.new
    }
}

/// Full-parameter gradients of one class; only for small models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullClassGradients {
    pub original: Vec<f64>,
    pub rehearsal: Vec<f64>,
    /// `b_c`.
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGradients {
    pub class: usize,
    /// `grad_L L(D_c)`.
    pub original: Vec<f64>,
    /// `grad_L L(R_c)`.
    pub rehearsal: Vec<f64>,
    /// `b_c^L = grad_L L(R_c) - grad_L L(D_c)`.
    pub bias: Vec<f64>,
    /// `grad_{L_c} L(D_c)`.
    pub original_own: Vec<f64>,
    /// `grad_{L_c} L(D^m)`.
    pub new_own: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full: Option<FullClassGradients>,
}

/// Full-batch gradients at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGradientSnapshot {
    pub t: usize,
    pub classes: Vec<ClassGradients>,
    /// `grad_L L(D^m)`.
    pub new: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_full: Option<Vec<f64>>,
}

impl ClassGradientSnapshot {
    pub fn class(&self, c: usize) -> Result<&ClassGradients> {
        self.classes
            .iter()
            .find(|g| g.class == c)
            .ok_or_else(|| shape_err!("snapshot at t = {} has no class {c}", self.t))
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Computes every gradient the coefficients need at the current iterate.
/// `full` additionally keeps full-parameter gradients.
pub fn snapshot(net: &Network, data: &DiagnosticData, t: usize, full: bool) -> Result<ClassGradientSnapshot> {
    let d = net.params().len();
    if full && d > FULL_SNAPSHOT_LIMIT {
        return Err(config_err!(
            "full-parameter snapshots are limited to {FULL_SNAPSHOT_LIMIT} parameters, model has {d}"
        ));
    }
    let head = net.head().range();
    let offset = head.start;
    // Full mode gathers the head from the full gradient; the head-only path
    // is bit-identical so both modes agree exactly.
    let grads = |set: &LabeledDataset| -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let batch = set.as_batch();
        if full {
            let (_, g) = net.gradient(&batch)?;
            Ok((g[head.clone()].to_vec(), Some(g)))
        } else {
            Ok((net.last_layer_gradient(&batch)?, None))
        }
    };
    let (new, new_full) = grads(&data.new)?;
    let mut classes = Vec::with_capacity(data.classes.len());
    for (i, &c) in data.classes.iter().enumerate() {
        let own = net.index_set(IndexKind::Class(c))?;
        let (original, original_f) = grads(&data.original[i])?;
        let (rehearsal, rehearsal_f) = grads(&data.rehearsal[i])?;
        let bias = sub(&rehearsal, &original);
        let gather = |g: &[f64]| -> Vec<f64> { own.indices().iter().map(|&k| g[k - offset]).collect() };
        let full = match (original_f, rehearsal_f) {
            (Some(o), Some(r)) => Some(FullClassGradients {
                bias: sub(&r, &o),
                original: o,
                rehearsal: r,
            }),
            _ => None,
        };
        classes.push(ClassGradients {
            class: c,
            original_own: gather(&original),
            new_own: gather(&new),
            original,
            rehearsal,
            bias,
            full,
        });
    }
    Ok(ClassGradientSnapshot {
        t,
        classes,
        new,
        new_full,
    })
}

/// Training hook that snapshots at the planned iterates.
pub struct SnapshotRecorder<'a> {
    data: &'a DiagnosticData,
    full: bool,
    snapshots: Vec<ClassGradientSnapshot>,
}

impl<'a> SnapshotRecorder<'a> {
    pub fn new(data: &'a DiagnosticData, full: bool) -> Self {
        SnapshotRecorder {
            data,
            full,
            snapshots: Vec::new(),
        }
    }

    pub fn snapshots(&self) -> &[ClassGradientSnapshot] {
        &self.snapshots
    }

    pub fn into_snapshots(self) -> Vec<ClassGradientSnapshot> {
        self.snapshots
    }
}

impl TrainingHook for SnapshotRecorder<'_> {
    fn on_checkpoint(&mut self, t: usize, net: &Network) -> Result<()> {
        self.snapshots.push(snapshot(net, self.data, t, self.full)?);
        Ok(())
    }
}

/// A trajectory sum and the number of checkpoints skipped as degenerate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Coefficient {
    pub value: f64,
    pub degenerate: usize,
}

/// `sum_t f(snapshot_t)`, where a degenerate reference contributes zero.
fn trajectory<F>(snapshots: &[ClassGradientSnapshot], mut term: F) -> Result<Coefficient>
where
    F: FnMut(&ClassGradientSnapshot) -> Result<f64>,
{
    if snapshots.is_empty() {
        return Err(shape_err!("no snapshots"));
    }
    let mut out = Coefficient::default();
    for s in snapshots {
        match term(s) {
            Ok(v) => out.value += v,
            Err(Error::DegenerateGradient(_)) => out.degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// `SIC_c = alpha p_c sum_t Interf_c^L(b_c^L)`.
pub fn sic(snapshots: &[ClassGradientSnapshot], c: usize, alpha: f64, p_c: f64) -> Result<Coefficient> {
    let mut out = trajectory(snapshots, |s| {
        let g = s.class(c)?;
        interf(&g.bias, &g.original)
    })?;
    out.value *= alpha * p_c;
    Ok(out)
}

/// `CIC_c = sum_{y != c} alpha p_y sum_t Interf_c^L(b_y^L)`.
/// `probabilities` pairs each past class with its rehearsal share.
pub fn cic(
    snapshots: &[ClassGradientSnapshot],
    c: usize,
    alpha: f64,
    probabilities: &[(usize, f64)],
) -> Result<Coefficient> {
    trajectory(snapshots, |s| {
        let reference = &s.class(c)?.original;
        let mut acc = 0.0;
        for &(y, p_y) in probabilities {
            if y == c {
                continue;
            }
            acc += alpha * p_y * interf(&s.class(y)?.bias, reference)?;
        }
        Ok(acc)
    })
}

/// `NIC_c = (1 - alpha) sum_t Interf_c^{L_c}(grad_{L_c} L(D^m))`.
pub fn nic(snapshots: &[ClassGradientSnapshot], c: usize, alpha: f64) -> Result<Coefficient> {
    let mut out = trajectory(snapshots, |s| {
        let g = s.class(c)?;
        interf(&g.new_own, &g.original_own)
    })?;
    out.value *= 1.0 - alpha;
    Ok(out)
}

/// NIC over the whole head `L` instead of `L_c`.
pub fn all_nic(snapshots: &[ClassGradientSnapshot], c: usize, alpha: f64) -> Result<Coefficient> {
    let mut out = trajectory(snapshots, |s| interf(&s.new, &s.class(c)?.original))?;
    out.value *= 1.0 - alpha;
    Ok(out)
}

/// Mean logit of class `c` over `new_data`; evaluate before the step's first
/// update.
pub fn log_sim(net: &Network, new_data: &LabeledDataset, c: usize) -> Result<f64> {
    if c >= net.classes() {
        return Err(shape_err!("class {c} outside a head of {} classes", net.classes()));
    }
    if new_data.is_empty() {
        return Err(shape_err!("no new data"));
    }
    let mut acc = 0.0;
    for i in 0..new_data.len() {
        acc += net.logits(new_data.row(i))?[c];
    }
    Ok(acc / new_data.len() as f64)
}

/// The four weighted interference terms on the full parameter set whose sum
/// is the overall interference `I_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaTerms {
    /// `alpha p_c Interf(b_c)`.
    pub self_bias: f64,
    /// `sum_{y != c} alpha p_y Interf(b_y)`.
    pub cross_bias: f64,
    /// `(1 - alpha) Interf(grad L(D^m))`.
    pub new_data: f64,
    /// `sum_{y != c} alpha p_y Interf(grad L(D_y))`.
    pub cross_class: f64,
}

impl LemmaTerms {
    pub fn total(&self) -> f64 {
        self.self_bias + self.cross_bias + self.new_data + self.cross_class
    }
}

/// Needs a snapshot taken in full-parameter mode.
pub fn lemma_interference_sum(
    snapshot: &ClassGradientSnapshot,
    c: usize,
    alpha: f64,
    probabilities: &[(usize, f64)],
) -> Result<LemmaTerms> {
    let missing = || config_err!("snapshot at t = {} lacks full-parameter gradients", snapshot.t);
    let full = |y: usize| -> Result<&FullClassGradients> { snapshot.class(y)?.full.as_ref().ok_or_else(missing) };
    let own = full(c)?;
    let reference = &own.original;
    let p_c = probabilities
        .iter()
        .find(|(y, _)| *y == c)
        .map(|&(_, p)| p)
        .ok_or_else(|| shape_err!("no probability for class {c}"))?;
    let new = snapshot.new_full.as_ref().ok_or_else(missing)?;
    let mut terms = LemmaTerms {
        self_bias: alpha * p_c * interf(&own.bias, reference)?,
        cross_bias: 0.0,
        new_data: (1.0 - alpha) * interf(new, reference)?,
        cross_class: 0.0,
    };
    for &(y, p_y) in probabilities {
        if y == c {
            continue;
        }
        let other = full(y)?;
        terms.cross_bias += alpha * p_y * interf(&other.bias, reference)?;
        terms.cross_class += alpha * p_y * interf(&other.original, reference)?;
    }
    Ok(terms)
}

/// One row of the coefficient report: a past class at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub step: usize,
    pub class_id: usize,
    pub sic: f64,
    pub cic: f64,
    pub nic: f64,
    pub all_nic: f64,
    pub log_sim: f64,
    /// Checkpoints where either reference gradient (`L` or `L_c`) was
    /// degenerate.
    pub degenerate_checkpoints: usize,
    pub alpha: f64,
    pub p_c: f64,
    pub checkpoints: usize,
}

/// All coefficients of every past class at step `step`. `log_sims` holds the
/// LOG-SIM value of each class, taken before training.
pub fn coefficient_rows(
    step: usize,
    snapshots: &[ClassGradientSnapshot],
    alpha: f64,
    probabilities: &[(usize, f64)],
    log_sims: &BTreeMap<usize, f64>,
) -> Result<Vec<CoefficientRow>> {
    let mut rows = Vec::with_capacity(probabilities.len());
    for &(c, p_c) in probabilities {
        let mut degenerate = 0;
        for s in snapshots {
            let g = s.class(c)?;
            if !(norm(&g.original) >= DEGENERATE_NORM) || !(norm(&g.original_own) >= DEGENERATE_NORM) {
                degenerate += 1;
            }
        }
        let row = CoefficientRow {
            step,
            class_id: c,
            sic: sic(snapshots, c, alpha, p_c)?.value,
            cic: cic(snapshots, c, alpha, probabilities)?.value,
            nic: nic(snapshots, c, alpha)?.value,
            all_nic: all_nic(snapshots, c, alpha)?.value,
            log_sim: *log_sims
                .get(&c)
                .ok_or_else(|| shape_err!("no LOG-SIM value for class {c}"))?,
            degenerate_checkpoints: degenerate,
            alpha,
            p_c,
            checkpoints: snapshots.len(),
        };
        if ![row.sic, row.cic, row.nic, row.all_nic, row.log_sim]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite(alloc::format!(
                "coefficients of class {c} at step {step}"
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}
