//! Controlled re-runs of one step: everything is frozen except the set of
//! new classes, and the across-run rank correlation of NIC and SIC is
//! reported for each past class.
//!
//! The training stream is frozen by seed; when the size of the new dataset
//! changes, the realised draws necessarily differ.

use std::collections::BTreeSet;

use cilab_core::scenario::distinct_sequence_count;
use cilab_core::stats::spearman;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{LabError, LabResult};
use crate::harness::{
    build_scenario, diagnosed_step, first_step, prepare_step, JoinedRow, StepFingerprint, StepReport,
};
use crate::seeds::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlledClass {
    pub class_id: usize,
    /// `None` when fewer than three runs or no rank variation.
    pub rho: Option<f64>,
    pub nic: Vec<f64>,
    pub sic: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlledReport {
    pub step: usize,
    /// New-class set of every run, the base run first.
    pub sets: Vec<Vec<usize>>,
    /// Shared by every run.
    pub fingerprint: StepFingerprint,
    pub classes: Vec<ControlledClass>,
    pub reports: Vec<StepReport>,
}

impl ControlledReport {
    pub fn defined_rhos(&self) -> Vec<f64> {
        self.classes.iter().filter_map(|c| c.rho).collect()
    }
}

fn check_step(base: &ExperimentConfig, step: usize) -> LabResult<()> {
    base.validate()?;
    if step < 2 || step > base.sequence.len() {
        return Err(LabError::Config(format!(
            "step must lie in 2..={}, got {step}",
            base.sequence.len()
        )));
    }
    Ok(())
}

/// Draws `reruns` distinct new-class sets for step `step`, each the size of
/// the base set, from the classes that the base sequence does not use up to
/// and including that step.
pub fn draw_new_class_sets(base: &ExperimentConfig, step: usize, reruns: usize) -> LabResult<Vec<Vec<usize>>> {
    check_step(base, step)?;
    let used: BTreeSet<usize> = base.sequence[..step].iter().flatten().copied().collect();
    let spare: Vec<usize> = (0..base.data.synthetic.classes).filter(|c| !used.contains(c)).collect();
    let size = base.sequence[step - 1].len();
    let available = distinct_sequence_count(spare.len(), size, 1);
    if (reruns as u128) > available {
        return Err(LabError::Config(format!(
            "{} spare classes give {available} distinct sets of {size}, {reruns} needed",
            spare.len()
        )));
    }
    let mut rng = stream(base.seed, Stream::Controlled);
    let mut seen = BTreeSet::new();
    let mut sets = Vec::with_capacity(reruns);
    while sets.len() < reruns {
        let mut set: Vec<usize> = sample(&mut rng, spare.len(), size)
            .into_iter()
            .map(|i| spare[i])
            .collect();
        set.sort_unstable();
        if seen.insert(set.clone()) {
            sets.push(set);
        }
    }
    Ok(sets)
}

/// Runs the base configuration up to `step`, then re-runs `step` once per
/// entry of `sets` from the same frozen state.
pub fn run_controlled_with_sets(
    base: &ExperimentConfig,
    step: usize,
    sets: &[Vec<usize>],
) -> LabResult<ControlledReport> {
    check_step(base, step)?;
    let mut truncated = base.clone();
    truncated.sequence.truncate(step);
    let scenario = build_scenario(&truncated)?;
    let (mut state, _) = first_step(&truncated, &scenario)?;
    for m in 2..step {
        let (net, fp) = prepare_step(&state, &truncated, &scenario, m)?;
        state = diagnosed_step(state, net, fp, &truncated, &scenario, m)?.0;
    }

    let mut all_sets = vec![base.sequence[step - 1].clone()];
    all_sets.extend(sets.iter().cloned());
    let mut reports = Vec::with_capacity(all_sets.len());
    let mut shared: Option<StepFingerprint> = None;
    for set in &all_sets {
        let mut cfg = truncated.clone();
        cfg.sequence[step - 1] = set.clone();
        cfg.validate()?;
        let scenario = build_scenario(&cfg)?;
        let (net, fp) = prepare_step(&state, &cfg, &scenario, step)?;
        match &shared {
            None => shared = Some(fp.clone()),
            Some(s) if *s != fp => {
                return Err(LabError::Config(format!(
                    "frozen factors differ for new-class set {set:?}"
                )));
            }
            Some(_) => {}
        }
        let (_, report, _) = diagnosed_step(state.clone(), net, fp, &cfg, &scenario, step)?;
        reports.push(report);
    }
    let fingerprint = shared.expect("at least the base run");

    let classes = reports[0]
        .rows
        .iter()
        .map(|r| {
            let pick = |f: fn(&JoinedRow) -> f64| -> Vec<f64> {
                reports
                    .iter()
                    .map(|rep| {
                        let row = rep
                            .rows
                            .iter()
                            .find(|x| x.class_id == r.class_id)
                            .expect("same past classes");
                        f(row)
                    })
                    .collect()
            };
            let nic = pick(|x| x.nic);
            let sic = pick(|x| x.sic);
            ControlledClass {
                class_id: r.class_id,
                rho: spearman(&nic, &sic).ok(),
                nic,
                sic,
            }
        })
        .collect();
    Ok(ControlledReport {
        step,
        sets: all_sets,
        fingerprint,
        classes,
        reports,
    })
}

/// The base run plus `reruns` runs with freshly drawn new-class sets.
pub fn run_controlled_nic_sic(base: &ExperimentConfig, step: usize, reruns: usize) -> LabResult<ControlledReport> {
    let sets = draw_new_class_sets(base, step, reruns)?;
    run_controlled_with_sets(base, step, &sets)
}
