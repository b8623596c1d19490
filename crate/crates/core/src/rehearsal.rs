//! Rehearsal set and its update policies (class-balanced uniform sampling and
//! nearest-to-mean herding).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::nn::FeatureExtractor;
use crate::scenario::{LabeledDataset, Split};
use crate::Result;

/// A stored sample together with its row index in the training dataset of
/// the step that introduced its class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub provenance: usize,
    pub input: Vec<f64>,
}

/// `R`: per-class exemplar lists keyed by class id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RehearsalSet {
    classes: BTreeMap<usize, Vec<Exemplar>>,
}

impl RehearsalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Total stored samples `|R|`.
    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.classes.keys().copied().collect()
    }

    pub fn class(&self, c: usize) -> Option<&[Exemplar]> {
        self.classes.get(&c).map(Vec::as_slice)
    }

    pub fn class_len(&self, c: usize) -> usize {
        self.classes.get(&c).map_or(0, Vec::len)
    }

    /// `p_c = |R_c| / |R|`, in class order.
    pub fn probabilities(&self) -> Vec<(usize, f64)> {
        let total = self.len() as f64;
        self.classes.iter().map(|(&c, v)| (c, v.len() as f64 / total)).collect()
    }

    /// `R_c` as a dataset.
    pub fn class_dataset(&self, c: usize, dim: usize) -> Option<LabeledDataset> {
        let exemplars = self.classes.get(&c)?;
        let mut inputs = Vec::with_capacity(exemplars.len() * dim);
        for e in exemplars {
            inputs.extend_from_slice(&e.input);
        }
        LabeledDataset::new(dim, inputs, alloc::vec![c; exemplars.len()], Split::Train).ok()
    }

    /// Class → provenance indices, for audit manifests.
    pub fn manifest(&self) -> BTreeMap<usize, Vec<usize>> {
        self.classes
            .iter()
            .map(|(&c, v)| (c, v.iter().map(|e| e.provenance).collect()))
            .collect()
    }

    pub fn insert_class(&mut self, c: usize, exemplars: Vec<Exemplar>) {
        self.classes.insert(c, exemplars);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    #[default]
    ClassBalancedUniform,
    Herding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RehearsalPolicyConfig {
    pub kind: PolicyKind,
    /// Fraction of each class's training samples kept, in `(0, 1]`.
    pub retention: f64,
}

impl RehearsalPolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.retention > 0.0 && self.retention <= 1.0) {
            return Err(config_err!("retention {} outside (0, 1]", self.retention));
        }
        Ok(())
    }

    /// Exemplars kept for a class of `n` training samples.
    pub fn per_class(&self, n: usize) -> usize {
        // The epsilon keeps e.g. 0.2 * 10 from landing just below 2.
        libm::floor(self.retention * n as f64 + 1e-9) as usize
    }
}

/// `R^m := p(R^{m-1}, D^m)`.
///
/// New classes of `new_data` are subsampled to the per-class target; classes
/// already held are kept as-is unless the balanced target shrank, in which
/// case they are subsampled with the same policy. Herding features are taken
/// from `extractor` at call time.
pub fn update_rehearsal<R: Rng + ?Sized>(
    policy: &RehearsalPolicyConfig,
    prev: &RehearsalSet,
    new_data: &LabeledDataset,
    extractor: Option<&dyn FeatureExtractor>,
    rng: &mut R,
) -> Result<RehearsalSet> {
    policy.validate()?;
    if policy.kind == PolicyKind::Herding && extractor.is_none() {
        return Err(config_err!("herding needs a feature extractor"));
    }
    let counts = new_data.class_counts();
    if let Some(c) = counts.keys().find(|c| prev.classes.contains_key(c)) {
        return Err(config_err!("class {c} is already held in the rehearsal set"));
    }
    let mut target = usize::MAX;
    for (&c, &n) in &counts {
        let k = policy.per_class(n);
        if k == 0 {
            return Err(config_err!(
                "retention {} keeps no sample of class {c} ({n} samples)",
                policy.retention
            ));
        }
        target = target.min(k);
    }
    for v in prev.classes.values() {
        target = target.min(v.len());
    }

    let mut next = RehearsalSet::new();
    for (&c, held) in &prev.classes {
        let kept = if held.len() > target {
            let inputs: Vec<&[f64]> = held.iter().map(|e| e.input.as_slice()).collect();
            select(policy.kind, &inputs, target, extractor, rng)
                .into_iter()
                .map(|i| held[i].clone())
                .collect()
        } else {
            held.clone()
        };
        next.classes.insert(c, kept);
    }
    for &c in counts.keys() {
        let rows = new_data.indices_of(c);
        let inputs: Vec<&[f64]> = rows.iter().map(|&i| new_data.row(i)).collect();
        let chosen = select(policy.kind, &inputs, target, extractor, rng);
        let exemplars = chosen
            .into_iter()
            .map(|i| Exemplar {
                provenance: rows[i],
                input: inputs[i].to_vec(),
            })
            .collect();
        next.classes.insert(c, exemplars);
    }
    Ok(next)
}

/// Positions (ascending) of the `k` chosen inputs.
fn select<R: Rng + ?Sized>(
    kind: PolicyKind,
    inputs: &[&[f64]],
    k: usize,
    extractor: Option<&dyn FeatureExtractor>,
    rng: &mut R,
) -> Vec<usize> {
    let mut chosen = match (kind, extractor) {
        (PolicyKind::Herding, Some(fx)) => {
            let features: Vec<Vec<f64>> = inputs.iter().map(|x| fx.extract(x)).collect();
            nearest_to_mean(&features, k)
        }
        _ => index::sample(rng, inputs.len(), k).into_vec(),
    };
    chosen.sort_unstable();
    chosen
}

/// Indices of the `k` features closest (Euclidean) to their mean; ties go to
/// the lower index.
pub fn nearest_to_mean(features: &[Vec<f64>], k: usize) -> Vec<usize> {
    let Some(first) = features.first() else {
        return Vec::new();
    };
    let n = features.len() as f64;
    let mut mean = alloc::vec![0.0; first.len()];
    for f in features {
        for (m, &v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut dist: Vec<(f64, usize)> = features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let sq: f64 = f.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
            (libm::sqrt(sq), i)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dist.into_iter().take(k).map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(classes: &[usize], per_class: usize) -> LabeledDataset {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for &c in classes {
            for i in 0..per_class {
                inputs.extend_from_slice(&[c as f64, i as f64]);
                labels.push(c);
            }
        }
        LabeledDataset::new(2, inputs, labels, Split::Train).unwrap()
    }

    fn uniform(retention: f64) -> RehearsalPolicyConfig {
        RehearsalPolicyConfig {
            kind: PolicyKind::ClassBalancedUniform,
            retention,
        }
    }

    #[test]
    fn keep_all_reproduces_the_classes() {
        let d = data(&[0, 1], 7);
        let r = update_rehearsal(
            &uniform(1.0),
            &RehearsalSet::new(),
            &d,
            None,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        for c in [0, 1] {
            assert_eq!(r.class_dataset(c, 2).unwrap(), d.class_subset(c));
        }
    }

    #[test]
    fn twenty_percent_of_ten_is_two() {
        let d = data(&[0, 1, 2], 10);
        let r = update_rehearsal(
            &uniform(0.2),
            &RehearsalSet::new(),
            &d,
            None,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(r.classes().iter().all(|&c| r.class_len(c) == 2));
        assert_eq!(r.len(), 6);
    }

    #[test]
    fn herding_picks_nearest_to_mean() {
        // Oracle: mean 11/3, distances 11/3, 8/3, 19/3 → rows 1 then 0.
        let features = vec![vec![0.0], vec![1.0], vec![10.0]];
        let mean = 11.0 / 3.0;
        let mut brute: Vec<usize> = (0..3).collect();
        brute.sort_by(|&a, &b| libm::fabs(features[a][0] - mean).total_cmp(&libm::fabs(features[b][0] - mean)));
        assert_eq!(brute[..2], [1, 0]);
        assert_eq!(nearest_to_mean(&features, 2), vec![1, 0]);

        let d = LabeledDataset::new(1, vec![0.0, 1.0, 10.0], vec![4, 4, 4], Split::Train).unwrap();
        let policy = RehearsalPolicyConfig {
            kind: PolicyKind::Herding,
            retention: 0.67,
        };
        let identity = |x: &[f64]| x.to_vec();
        let r = update_rehearsal(
            &policy,
            &RehearsalSet::new(),
            &d,
            Some(&identity),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let kept: Vec<f64> = r.class(4).unwrap().iter().map(|e| e.input[0]).collect();
        assert_eq!(kept, vec![0.0, 1.0]);
    }

    #[test]
    fn errors() {
        let d = data(&[0], 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(update_rehearsal(&uniform(0.05), &RehearsalSet::new(), &d, None, &mut rng).is_err());
        assert!(update_rehearsal(&uniform(0.0), &RehearsalSet::new(), &d, None, &mut rng).is_err());
        let herding = RehearsalPolicyConfig {
            kind: PolicyKind::Herding,
            retention: 0.5,
        };
        assert!(update_rehearsal(&herding, &RehearsalSet::new(), &d, None, &mut rng).is_err());
    }

    #[test]
    fn subset_balance_and_survivors_across_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let steps = [data(&[0, 1], 20), data(&[2, 3], 20), data(&[4, 5], 20)];
        let mut r = RehearsalSet::new();
        for d in &steps {
            let prev = r.clone();
            r = update_rehearsal(&uniform(0.25), &prev, d, None, &mut rng).unwrap();
            let sizes: Vec<usize> = r.classes().iter().map(|&c| r.class_len(c)).collect();
            assert!(sizes.iter().all(|&s| s == sizes[0]));
            for c in prev.classes() {
                assert_eq!(prev.class(c), r.class(c));
            }
            for c in d.classes() {
                for e in r.class(c).unwrap() {
                    assert_eq!(d.label(e.provenance), c);
                    assert_eq!(d.row(e.provenance), e.input.as_slice());
                }
            }
        }
    }

    #[test]
    fn shrinking_target_subsamples_held_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r1 = update_rehearsal(&uniform(0.5), &RehearsalSet::new(), &data(&[0], 20), None, &mut rng).unwrap();
        let r2 = update_rehearsal(&uniform(0.5), &r1, &data(&[1], 8), None, &mut rng).unwrap();
        assert_eq!(r2.class_len(0), 4);
        assert_eq!(r2.class_len(1), 4);
        for e in r2.class(0).unwrap() {
            assert!(r1.class(0).unwrap().contains(e));
        }
    }

    #[test]
    fn fixed_seed_reproduces() {
        let d = data(&[0, 1], 30);
        let a = update_rehearsal(
            &uniform(0.2),
            &RehearsalSet::new(),
            &d,
            None,
            &mut ChaCha8Rng::seed_from_u64(8),
        )
        .unwrap();
        let b = update_rehearsal(
            &uniform(0.2),
            &RehearsalSet::new(),
            &d,
            None,
            &mut ChaCha8Rng::seed_from_u64(8),
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
