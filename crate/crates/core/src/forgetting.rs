//! Per-class test accuracy bookkeeping and the forgetting metrics FG, FG-R
//! and FG-HG.

use alloc::{collections::BTreeMap, vec::Vec};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err};
use crate::nn::Network;
use crate::scenario::LabeledDataset;
use crate::{Error, Result};

/// Share of the class-`c` samples in `test` predicted as `c`.
pub fn class_accuracy(net: &Network, test: &LabeledDataset, c: usize) -> Result<f64> {
    let rows = test.indices_of(c);
    if rows.is_empty() {
        return Err(config_err!("no test samples of class {c}"));
    }
    let mut correct = 0usize;
    for &i in &rows {
        if net.predict(test.row(i))? == c {
            correct += 1;
        }
    }
    Ok(correct as f64 / rows.len() as f64)
}

/// `(A_init - A_m) / A_init`, or `None` when `A_init` is zero.
pub fn fg(a_init: f64, a_m: f64) -> Option<f64> {
    (a_init > 0.0).then(|| (a_init - a_m) / a_init)
}

/// `max - min` of the per-class forgetting.
pub fn fg_range(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(shape_err!("forgetting range needs at least two classes"));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// Mean forgetting of the `floor(n/2)` most forgotten classes minus the mean
/// of the rest. Equal values keep their input order.
pub fn fg_half_gap(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(shape_err!("forgetting half-gap needs at least two classes"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(alloc::string::String::from("forgetting values")));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let split = values.len() / 2;
    // Shifting by the minimum makes equal inputs give exactly zero.
    let floor = values[order[values.len() - 1]];
    let mean = |idx: &[usize]| idx.iter().map(|&i| values[i] - floor).sum::<f64>() / idx.len() as f64;
    Ok(mean(&order[..split]) - mean(&order[split..]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassRecord {
    introduced: usize,
    initial: f64,
    later: BTreeMap<usize, f64>,
}

/// Accuracies of every class: once at the end of the step that introduced
/// it, then at each later step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyLedger {
    classes: BTreeMap<usize, ClassRecord>,
}

/// One exported ledger entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingRow {
    pub step: usize,
    pub class_id: usize,
    pub acc_init: f64,
    pub acc_now: f64,
    /// `None` when the initial accuracy is zero.
    pub fg: Option<f64>,
}

fn check_accuracy(a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) {
        return Err(config_err!("accuracy {a} outside [0, 1]"));
    }
    Ok(())
}

impl AccuracyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_initial(&mut self, class: usize, step: usize, accuracy: f64) -> Result<()> {
        check_accuracy(accuracy)?;
        if self.classes.contains_key(&class) {
            return Err(config_err!("initial accuracy of class {class} already recorded"));
        }
        self.classes.insert(
            class,
            ClassRecord {
                introduced: step,
                initial: accuracy,
                later: BTreeMap::new(),
            },
        );
        Ok(())
    }

    pub fn record(&mut self, class: usize, step: usize, accuracy: f64) -> Result<()> {
        check_accuracy(accuracy)?;
        let rec = self
            .classes
            .get_mut(&class)
            .ok_or_else(|| config_err!("class {class} has no initial accuracy"))?;
        if step <= rec.introduced {
            return Err(config_err!(
                "step {step} does not follow step {} that introduced class {class}",
                rec.introduced
            ));
        }
        rec.later.insert(step, accuracy);
        Ok(())
    }

    pub fn initial(&self, class: usize) -> Option<f64> {
        self.classes.get(&class).map(|r| r.initial)
    }

    pub fn at(&self, class: usize, step: usize) -> Option<f64> {
        self.classes.get(&class)?.later.get(&step).copied()
    }

    pub fn fg(&self, class: usize, step: usize) -> Result<f64> {
        let init = self
            .initial(class)
            .ok_or_else(|| config_err!("unknown class {class}"))?;
        let now = self
            .at(class, step)
            .ok_or_else(|| config_err!("no accuracy of class {class} at step {step}"))?;
        fg(init, now).ok_or(Error::UndefinedForgetting(class))
    }

    /// Entries for every class measured at `step`, by class id.
    pub fn rows(&self, step: usize) -> Vec<ForgettingRow> {
        self.classes
            .iter()
            .filter_map(|(&c, r)| {
                r.later.get(&step).map(|&now| ForgettingRow {
                    step,
                    class_id: c,
                    acc_init: r.initial,
                    acc_now: now,
                    fg: fg(r.initial, now),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, ModelSpec, ParamVector};
    use crate::scenario::Split;
    use alloc::vec;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        libm::fabs(a - b) < 1e-12
    }

    #[test]
    fn fg_examples() {
        assert!(close(fg(0.8, 0.4).unwrap(), 0.5));
        assert_eq!(fg(0.7, 0.7).unwrap(), 0.0);
        assert_eq!(fg(0.5, 1.0).unwrap(), -1.0);
        assert_eq!(fg(0.0, 0.3), None);
    }

    #[test]
    fn range_examples() {
        assert!(close(fg_range(&[0.6, 0.2, 0.4]).unwrap(), 0.4));
        assert_eq!(fg_range(&[0.3, 0.3, 0.3]).unwrap(), 0.0);
        assert!(close(fg_range(&[0.9, -0.1]).unwrap(), 1.0));
        assert!(fg_range(&[0.1]).is_err());
    }

    #[test]
    fn half_gap_examples() {
        assert!(close(fg_half_gap(&[0.8, 0.6, 0.2, 0.0]).unwrap(), 0.6));
        assert_eq!(fg_half_gap(&[0.4; 5]).unwrap(), 0.0);
        assert!(close(fg_half_gap(&[0.9, 0.5, 0.1]).unwrap(), 0.6));
    }

    // Brute force over every subset of size floor(n/2): the top half is the
    // one with the largest sum.
    fn half_gap_exhaustive(v: &[f64]) -> f64 {
        let n = v.len();
        let k = n / 2;
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let top: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| v[i]).sum();
            let rest: f64 = v.iter().sum::<f64>() - top;
            best = best.max(top / k as f64 - rest / (n - k) as f64);
        }
        best
    }

    #[test]
    fn half_gap_matches_exhaustive_rule() {
        for v in [
            vec![0.9, 0.5, 0.1],
            vec![0.3, -0.2, 0.7, 0.7, 0.1],
            vec![0.2, 0.2, 0.5, 0.0, 0.9, 0.4, 0.1],
        ] {
            assert!(libm::fabs(fg_half_gap(&v).unwrap() - half_gap_exhaustive(&v)) < 1e-12);
        }
    }

    fn constant_net(winner: usize) -> Network {
        let spec = ModelSpec::new(1, vec![], Activation::Relu, 3).unwrap();
        let mut p = ParamVector::zeros(&spec);
        let head = p.head().clone();
        p.values_mut()[head.unit_range(winner).end - 1] = 1.0;
        Network::new(spec, p).unwrap()
    }

    #[test]
    fn accuracy_counts() {
        let test = LabeledDataset::new(1, vec![0.0, 1.0, 2.0, 3.0], vec![1, 1, 1, 0], Split::Test).unwrap();
        assert_eq!(class_accuracy(&constant_net(1), &test, 1).unwrap(), 1.0);
        assert_eq!(class_accuracy(&constant_net(2), &test, 1).unwrap(), 0.0);
        assert!(class_accuracy(&constant_net(1), &test, 2).is_err());

        // Logit of class 0 is x, of class 1 is 1.5: x = 2, 3 go to class 0.
        let spec = ModelSpec::new(1, vec![], Activation::Relu, 2).unwrap();
        let p = ParamVector::from_values(&spec, vec![1.0, 0.0, 0.0, 1.5]).unwrap();
        let net = Network::new(spec, p).unwrap();
        let test = LabeledDataset::new(1, vec![2.0, 3.0, 1.0], vec![0, 0, 0], Split::Test).unwrap();
        assert!(close(class_accuracy(&net, &test, 0).unwrap(), 2.0 / 3.0));
    }

    #[test]
    fn ledger_flow() {
        let mut l = AccuracyLedger::new();
        l.record_initial(0, 1, 0.8).unwrap();
        l.record_initial(1, 1, 0.0).unwrap();
        assert!(l.record_initial(0, 2, 0.5).is_err());
        assert!(l.record(0, 1, 0.5).is_err());
        assert!(l.record(0, 2, 1.5).is_err());
        l.record(0, 2, 0.4).unwrap();
        l.record(1, 2, 0.1).unwrap();
        assert!(close(l.fg(0, 2).unwrap(), 0.5));
        assert_eq!(l.fg(1, 2), Err(Error::UndefinedForgetting(1)));
        let rows = l.rows(2);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].fg, None);
        assert!(l.rows(3).is_empty());
    }

    proptest! {
        #[test]
        fn half_gap_bounded_by_range(v in prop::collection::vec(-1.0f64..1.0, 2..12)) {
            prop_assert!(fg_half_gap(&v).unwrap() <= fg_range(&v).unwrap() + 1e-12);
            prop_assert!(fg_half_gap(&v).unwrap() >= -1e-12);
        }

        #[test]
        fn permutation_invariant(v in prop::collection::vec(-1.0f64..1.0, 2..10), seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut w = v.clone();
            w.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(libm::fabs(fg_half_gap(&v).unwrap() - fg_half_gap(&w).unwrap()) < 1e-12);
            prop_assert_eq!(fg_range(&v).unwrap(), fg_range(&w).unwrap());
        }

        #[test]
        fn fg_decreases_in_current_accuracy(init in 0.01f64..1.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(fg(init, hi).unwrap() <= fg(init, lo).unwrap());
            prop_assert!(fg(init, lo).unwrap() <= 1.0);
            prop_assert!(fg(init, 1.0).unwrap() >= 1.0 - 1.0 / init - 1e-12);
        }
    }
}
