//! Class-incremental scenarios, synthetic Gaussian-cluster data and the
//! full-factorial benchmark grid.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err};
use crate::nn::Batch;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Row-major samples with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    split: Split,
}

impl LabeledDataset {
    pub fn new(dim: usize, inputs: Vec<f64>, labels: Vec<usize>, split: Split) -> Result<Self> {
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(shape_err!(
                "{} inputs do not form {} rows of dimension {dim}",
                inputs.len(),
                labels.len()
            ));
        }
        Ok(LabeledDataset {
            dim,
            inputs,
            labels,
            split,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn as_batch(&self) -> Batch<'_> {
        Batch::new(&self.inputs, &self.labels, self.dim).expect("dataset invariants hold")
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &y in &self.labels {
            *counts.entry(y).or_insert(0) += 1;
        }
        counts
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<usize> {
        self.class_counts().into_keys().collect()
    }

    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            dim: self.dim,
            inputs,
            labels,
            split: self.split,
        }
    }

    /// Samples of class `from[i]` relabelled to `to[i]`; other classes dropped.
    /// Row order follows the original dataset.
    pub fn select_relabel(&self, from: &[usize], to: &[usize]) -> LabeledDataset {
        let map: BTreeMap<usize, usize> = from.iter().copied().zip(to.iter().copied()).collect();
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..self.len() {
            if let Some(&y) = map.get(&self.labels[i]) {
                inputs.extend_from_slice(self.row(i));
                labels.push(y);
            }
        }
        LabeledDataset {
            dim: self.dim,
            inputs,
            labels,
            split: self.split,
        }
    }

    /// Only the samples of `class`.
    pub fn class_subset(&self, class: usize) -> LabeledDataset {
        self.subset(&self.indices_of(class))
    }
}

/// Knobs of the Gaussian-cluster generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub input_dim: usize,
    /// Standard deviation of each isotropic cluster.
    pub spread: f64,
    /// Class means are drawn from `U(-separation, separation)^q`.
    pub separation: f64,
    /// Per-class spread multiplier drawn from `U(1 - jitter, 1 + jitter)`.
    #[serde(default)]
    pub spread_jitter: f64,
    /// Each class is a mixture of this many equally weighted blobs whose
    /// centres scatter around the class mean with standard deviation
    /// `mode_scatter`.
    #[serde(default = "one")]
    pub modes_per_class: usize,
    #[serde(default)]
    pub mode_scatter: f64,
}

fn one() -> usize {
    1
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.train_per_class == 0 || self.test_per_class == 0 || self.input_dim == 0 {
            return Err(config_err!("synthetic dataset counts must be positive"));
        }
        if !(self.spread > 0.0) || !(self.separation >= 0.0) || self.modes_per_class == 0 {
            return Err(config_err!("spread must be positive, separation non-negative"));
        }
        if !(0.0..1.0).contains(&self.spread_jitter) || !(self.mode_scatter >= 0.0) {
            return Err(config_err!(
                "spread_jitter must lie in [0, 1), mode_scatter must be non-negative"
            ));
        }
        Ok(())
    }
}

/// Draws a train/test pair from the same per-class distributions.
///
/// Draw order is fixed (per class: mean, spread, mode centres, train rows,
/// test rows) so a seed fully determines the data.
pub fn generate_synthetic<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let q = spec.input_dim;
    let mut train = (Vec::new(), Vec::new());
    let mut test = (Vec::new(), Vec::new());
    for class in 0..spec.classes {
        let mean: Vec<f64> = (0..q)
            .map(|_| {
                if spec.separation > 0.0 {
                    rng.random_range(-spec.separation..spec.separation)
                } else {
                    0.0
                }
            })
            .collect();
        let spread = if spec.spread_jitter > 0.0 {
            spec.spread * rng.random_range(1.0 - spec.spread_jitter..1.0 + spec.spread_jitter)
        } else {
            spec.spread
        };
        let centres: Vec<Vec<f64>> = (0..spec.modes_per_class)
            .map(|_| {
                mean.iter()
                    .map(|&m| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + spec.mode_scatter * z
                    })
                    .collect()
            })
            .collect();
        for (count, (inputs, labels)) in [(spec.train_per_class, &mut train), (spec.test_per_class, &mut test)] {
            for i in 0..count {
                let centre = &centres[i % centres.len()];
                for &m in centre {
                    let z: f64 = StandardNormal.sample(rng);
                    inputs.push(m + spread * z);
                }
                labels.push(class);
            }
        }
    }
    Ok((
        LabeledDataset::new(q, train.0, train.1, Split::Train)?,
        LabeledDataset::new(q, test.0, test.1, Split::Test)?,
    ))
}

/// One incremental step `s_m`. Labels are scenario-local: the classes are
/// numbered in order of introduction, so the head after step `m` covers
/// exactly `0..|Y^{1:m}|`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalStep {
    /// 1-based step index `m`.
    pub index: usize,
    pub classes: Vec<usize>,
    /// Original dataset class id of each entry of `classes`.
    pub source_classes: Vec<usize>,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    steps: Vec<IncrementalStep>,
    dim: usize,
}

impl Scenario {
    /// Validates label-space disjointness, constant input dimension and that
    /// every label belongs to its step.
    pub fn new(steps: Vec<IncrementalStep>) -> Result<Self> {
        let first = steps
            .first()
            .ok_or_else(|| config_err!("a scenario needs at least one step"))?;
        let dim = first.train.dim();
        let mut seen = BTreeSet::new();
        for (i, step) in steps.iter().enumerate() {
            if step.index != i + 1 {
                return Err(config_err!("step {} stored at position {}", step.index, i + 1));
            }
            if step.classes.is_empty() || step.classes.len() != step.source_classes.len() {
                return Err(config_err!(
                    "step {} has an empty or inconsistent label space",
                    step.index
                ));
            }
            if step.train.dim() != dim || step.test.dim() != dim {
                return Err(shape_err!("step {} changes the input dimension", step.index));
            }
            for &c in &step.classes {
                if !seen.insert(c) {
                    return Err(config_err!("class {c} appears in more than one step"));
                }
            }
            let own: BTreeSet<usize> = step.classes.iter().copied().collect();
            for data in [&step.train, &step.test] {
                if let Some(bad) = data.labels().iter().find(|y| !own.contains(y)) {
                    return Err(config_err!("step {} holds a sample of foreign class {bad}", step.index));
                }
                for &c in &step.classes {
                    if !data.labels().contains(&c) {
                        return Err(config_err!(
                            "step {} has no {:?} samples of class {c}",
                            step.index,
                            data.split()
                        ));
                    }
                }
            }
        }
        Ok(Scenario { steps, dim })
    }

    /// Builds a scenario from a sequence of class sets over `train`/`test`.
    pub fn from_sequence(sequence: &[Vec<usize>], train: &LabeledDataset, test: &LabeledDataset) -> Result<Self> {
        let mut next = 0;
        let mut steps = Vec::with_capacity(sequence.len());
        for (i, classes) in sequence.iter().enumerate() {
            let local: Vec<usize> = (next..next + classes.len()).collect();
            next += classes.len();
            steps.push(IncrementalStep {
                index: i + 1,
                classes: local.clone(),
                source_classes: classes.clone(),
                train: train.select_relabel(classes, &local),
                test: test.select_relabel(classes, &local),
            });
        }
        let mut all: Vec<usize> = sequence.iter().flatten().copied().collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return Err(config_err!("class sequence repeats a class: {sequence:?}"));
        }
        Scenario::new(steps)
    }

    pub fn steps(&self) -> &[IncrementalStep] {
        &self.steps
    }

    /// 1-based access.
    pub fn step(&self, m: usize) -> &IncrementalStep {
        &self.steps[m - 1]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `Y^{1:m-1}` in local ids.
    pub fn past_classes(&self, m: usize) -> Vec<usize> {
        self.steps[..m - 1]
            .iter()
            .flat_map(|s| s.classes.iter().copied())
            .collect()
    }

    /// Local id → original dataset class id.
    pub fn source_class(&self, local: usize) -> Option<usize> {
        self.steps
            .iter()
            .flat_map(|s| s.classes.iter().zip(&s.source_classes))
            .find(|(&l, _)| l == local)
            .map(|(_, &src)| src)
    }

    /// Step in which a local class was introduced.
    pub fn introduced_in(&self, local: usize) -> Option<usize> {
        self.steps.iter().find(|s| s.classes.contains(&local)).map(|s| s.index)
    }
}

/// Factor sets of the full-factorial benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFactorGrid {
    pub total_classes: usize,
    /// Percent of all classes introduced per step.
    pub class_percents: Vec<u32>,
    /// Per-class rehearsal retention fractions.
    pub retentions: Vec<f64>,
    /// Empty: seeds are drawn at random from the full `u64` space.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Sequence length for percents that leave room for it.
    #[serde(default = "three")]
    pub steps: usize,
    /// Upper bound on the equalised number of sequences per percent.
    #[serde(default)]
    pub max_sequences_per_percent: Option<usize>,
}

fn three() -> usize {
    3
}

impl BenchmarkFactorGrid {
    /// `(classes per step, steps)` for a percent.
    pub fn partition_shape(&self, percent: u32) -> Result<(usize, usize)> {
        let scaled = self.total_classes * percent as usize;
        if percent == 0 || percent > 100 || scaled % 100 != 0 {
            return Err(config_err!(
                "{percent}% of {} classes is not a whole number of classes",
                self.total_classes
            ));
        }
        let per_step = scaled / 100;
        let steps = self.steps.min(self.total_classes / per_step);
        if steps < 2 {
            return Err(config_err!("{percent}% leaves room for fewer than two steps"));
        }
        Ok((per_step, steps))
    }
}

/// A class sequence: one sorted class set per step.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SequencePlan {
    pub percent: u32,
    pub steps: Vec<Vec<usize>>,
}

/// Number of distinct sequences of `steps` disjoint `per_step`-sized class
/// sets drawn from `total` classes (saturating).
pub fn distinct_sequence_count(total: usize, per_step: usize, steps: usize) -> u128 {
    let mut count: u128 = 1;
    let mut remaining = total;
    for _ in 0..steps {
        if remaining < per_step {
            return 0;
        }
        count = count.saturating_mul(binomial(remaining, per_step));
        remaining -= per_step;
    }
    count
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

fn random_sequence<R: Rng + ?Sized>(total: usize, per_step: usize, steps: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    order
        .chunks(per_step)
        .take(steps)
        .map(|chunk| {
            let mut set = chunk.to_vec();
            set.sort_unstable();
            set
        })
        .collect()
}

/// Samples, for every percent, distinct class sequences uniformly without
/// replacement, equalising the per-percent counts to the smallest population
/// (capped by `max_sequences_per_percent`).
pub fn build_scenarios<R: Rng + ?Sized>(grid: &BenchmarkFactorGrid, rng: &mut R) -> Result<Vec<SequencePlan>> {
    if grid.class_percents.is_empty() {
        return Err(config_err!("grid has no class percents"));
    }
    let mut shapes = Vec::with_capacity(grid.class_percents.len());
    for &p in &grid.class_percents {
        let (per_step, steps) = grid.partition_shape(p)?;
        shapes.push((
            p,
            per_step,
            steps,
            distinct_sequence_count(grid.total_classes, per_step, steps),
        ));
    }
    let smallest = shapes.iter().map(|s| s.3).min().unwrap_or(0);
    let mut target = usize::try_from(smallest).unwrap_or(usize::MAX);
    if let Some(cap) = grid.max_sequences_per_percent {
        target = target.min(cap);
    }
    if target == 0 {
        return Err(config_err!("grid admits no sequences"));
    }

    let mut plans = Vec::new();
    for (percent, per_step, steps, population) in shapes {
        // A random permutation cut into chunks hits every distinct sequence
        // with equal probability, so rejection of duplicates stays uniform.
        // Near-exhaustive requests enumerate instead.
        let picked: Vec<Vec<Vec<usize>>> = if (target as u128) * 2 > population && population <= 1_000_000 {
            let mut all = enumerate_sequences(grid.total_classes, per_step, steps);
            all.shuffle(rng);
            all.truncate(target);
            all
        } else {
            let mut seen = BTreeSet::new();
            let mut picked = Vec::with_capacity(target);
            while picked.len() < target {
                let seq = random_sequence(grid.total_classes, per_step, steps, rng);
                if seen.insert(seq.clone()) {
                    picked.push(seq);
                }
            }
            picked
        };
        plans.extend(picked.into_iter().map(|steps| SequencePlan { percent, steps }));
    }
    Ok(plans)
}

fn enumerate_sequences(total: usize, per_step: usize, steps: usize) -> Vec<Vec<Vec<usize>>> {
    fn combinations(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return alloc::vec![Vec::new()];
        }
        let mut out = Vec::new();
        for i in 0..pool.len() {
            if pool.len() - i < k {
                break;
            }
            for mut rest in combinations(&pool[i + 1..], k - 1) {
                rest.insert(0, pool[i]);
                out.push(rest);
            }
        }
        out
    }
    fn extend(
        pool: &[usize],
        per_step: usize,
        steps: usize,
        prefix: &mut Vec<Vec<usize>>,
        out: &mut Vec<Vec<Vec<usize>>>,
    ) {
        if prefix.len() == steps {
            out.push(prefix.clone());
            return;
        }
        for set in combinations(pool, per_step) {
            let rest: Vec<usize> = pool.iter().copied().filter(|c| !set.contains(c)).collect();
            prefix.push(set);
            extend(&rest, per_step, steps, prefix, out);
            prefix.pop();
        }
    }
    let pool: Vec<usize> = (0..total).collect();
    let mut out = Vec::new();
    extend(&pool, per_step, steps, &mut Vec::new(), &mut out);
    out
}

/// Partitions of the evaluation population: every (percent, retention) pair,
/// each holding `sequences[percent]` candidate sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationDescriptor {
    pub partitions: Vec<(u32, f64)>,
    pub sequences: BTreeMap<u32, usize>,
    pub seeds: Vec<u64>,
}

impl PopulationDescriptor {
    pub fn from_plans(grid: &BenchmarkFactorGrid, plans: &[SequencePlan]) -> Self {
        let mut sequences = BTreeMap::new();
        for plan in plans {
            *sequences.entry(plan.percent).or_insert(0) += 1;
        }
        let partitions = grid
            .class_percents
            .iter()
            .flat_map(|&p| grid.retentions.iter().map(move |&r| (p, r)))
            .collect();
        PopulationDescriptor {
            partitions,
            sequences,
            seeds: grid.seeds.clone(),
        }
    }
}

/// One sampled experiment `(S, p, i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDraw {
    pub partition: usize,
    pub percent: u32,
    pub retention: f64,
    /// Index among the plans of this percent.
    pub sequence: usize,
    pub seed: u64,
}

/// Equal-allocation stratified sampling: `per_partition` i.i.d. draws from
/// each partition.
pub fn stratified_sample<R: Rng + ?Sized>(
    population: &PopulationDescriptor,
    per_partition: usize,
    rng: &mut R,
) -> Result<Vec<ExperimentDraw>> {
    if per_partition == 0 {
        return Err(config_err!("per-partition count must be at least 1"));
    }
    let mut draws = Vec::with_capacity(population.partitions.len() * per_partition);
    for (partition, &(percent, retention)) in population.partitions.iter().enumerate() {
        let available = population.sequences.get(&percent).copied().unwrap_or(0);
        if available == 0 {
            return Err(config_err!("no sequences available for {percent}%"));
        }
        for _ in 0..per_partition {
            let sequence = rng.random_range(0..available);
            let seed = if population.seeds.is_empty() {
                rng.random()
            } else {
                population.seeds[rng.random_range(0..population.seeds.len())]
            };
            draws.push(ExperimentDraw {
                partition,
                percent,
                retention,
                sequence,
                seed,
            });
        }
    }
    Ok(draws)
}
