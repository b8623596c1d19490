//! Single experiments: step-by-step training with interference diagnostics,
//! forgetting bookkeeping and per-step correlation statistics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use cilab_core::forgetting::{class_accuracy, fg_half_gap, fg_range, AccuracyLedger};
use cilab_core::interference::{
    coefficient_rows, lemma_interference_sum, log_sim, snapshot, CheckpointPlan, DiagnosticData, LemmaTerms,
    SnapshotRecorder,
};
use cilab_core::nn::{FeatureExtractor, ModelSpec, Network};
use cilab_core::rehearsal::{update_rehearsal, RehearsalSet};
use cilab_core::rsgd::{train_step, NoHook, StepTrace};
use cilab_core::scenario::{generate_synthetic, LabeledDataset, Scenario, Split};
use cilab_core::stats::{partial_spearman, spearman};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{LabError, LabResult};
use crate::io::{write_csv, write_json, CoefficientCsvRow, ForgettingCsvRow};
use crate::seeds::{stream, Stream};

/// A past class at one step: its coefficients joined with its forgetting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinedRow {
    /// Dataset class id.
    pub class_id: usize,
    pub sic: f64,
    pub cic: f64,
    pub nic: f64,
    pub all_nic: Option<f64>,
    pub log_sim: Option<f64>,
    pub degenerate_checkpoints: usize,
    pub acc_init: f64,
    pub acc_now: f64,
    pub fg: Option<f64>,
}

/// Marginal and partial Spearman correlation of one coefficient with FG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub coefficient: String,
    pub rho: Option<f64>,
    pub partial: Option<f64>,
}

/// Forgetting spread and coefficient correlations of one step, over the
/// classes with defined forgetting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub fg_range: Option<f64>,
    pub fg_half_gap: Option<f64>,
    pub correlations: Vec<Correlation>,
}

impl StepStats {
    pub fn rho(&self, coefficient: &str) -> Option<f64> {
        self.correlations.iter().find(|c| c.coefficient == coefficient)?.rho
    }

    pub fn partial(&self, coefficient: &str) -> Option<f64> {
        self.correlations.iter().find(|c| c.coefficient == coefficient)?.partial
    }
}

/// Hashes of what a step starts from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFingerprint {
    pub rehearsal_sha256: String,
    pub params_sha256: String,
    pub train_seed: u64,
    pub train_stream: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLemma {
    pub class_id: usize,
    pub terms: Option<LemmaTerms>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub rows: Vec<JoinedRow>,
    pub stats: StepStats,
    pub fingerprint: StepFingerprint,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lemma: Vec<ClassLemma>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub experiment_id: String,
    pub seed: u64,
    pub data_seed: u64,
    /// Steps 2.. (step 1 has no past classes).
    pub steps: Vec<StepReport>,
    /// Optimizer trace of every step, step 1 included.
    pub traces: Vec<Vec<StepTrace>>,
    /// Final rehearsal set: row indices into each class's introducing step.
    pub rehearsal_manifest: BTreeMap<usize, Vec<usize>>,
    pub timing: Vec<StepTiming>,
    pub wall_clock_seconds: f64,
}

impl RunResult {
    pub fn coefficient_csv(&self) -> Vec<CoefficientCsvRow> {
        self.steps
            .iter()
            .flat_map(|s| {
                s.rows.iter().map(|r| CoefficientCsvRow {
                    experiment_id: self.experiment_id.clone(),
                    step: s.step,
                    class_id: r.class_id,
                    sic: r.sic,
                    cic: r.cic,
                    nic: r.nic,
                    all_nic: r.all_nic,
                    log_sim: r.log_sim,
                    degenerate_checkpoints: r.degenerate_checkpoints,
                })
            })
            .collect()
    }

    pub fn forgetting_csv(&self) -> Vec<ForgettingCsvRow> {
        self.steps
            .iter()
            .flat_map(|s| {
                s.rows.iter().map(|r| ForgettingCsvRow {
                    experiment_id: self.experiment_id.clone(),
                    step: s.step,
                    class_id: r.class_id,
                    acc_init: r.acc_init,
                    acc_now: r.acc_now,
                    fg: r.fg,
                })
            })
            .collect()
    }
}

/// Per-step statistics row of `steps.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStatsCsvRow {
    pub experiment_id: String,
    pub step: usize,
    pub classes: usize,
    pub fg_r: Option<f64>,
    pub fg_hg: Option<f64>,
    pub rho_sic: Option<f64>,
    pub rho_cic: Option<f64>,
    pub rho_nic: Option<f64>,
    pub rho_all_nic: Option<f64>,
    pub rho_log_sim: Option<f64>,
    pub rho_p_sic: Option<f64>,
    pub rho_p_cic: Option<f64>,
    pub rho_p_nic: Option<f64>,
    pub rho_p_all_nic: Option<f64>,
    pub rho_p_log_sim: Option<f64>,
}

pub fn step_stats_row(id: &str, step: usize, rows: &[JoinedRow], stats: &StepStats) -> StepStatsCsvRow {
    StepStatsCsvRow {
        experiment_id: id.to_string(),
        step,
        classes: rows.len(),
        fg_r: stats.fg_range,
        fg_hg: stats.fg_half_gap,
        rho_sic: stats.rho("sic"),
        rho_cic: stats.rho("cic"),
        rho_nic: stats.rho("nic"),
        rho_all_nic: stats.rho("all_nic"),
        rho_log_sim: stats.rho("log_sim"),
        rho_p_sic: stats.partial("sic"),
        rho_p_cic: stats.partial("cic"),
        rho_p_nic: stats.partial("nic"),
        rho_p_all_nic: stats.partial("all_nic"),
        rho_p_log_sim: stats.partial("log_sim"),
    }
}

/// Statistics over the rows with defined forgetting. Anything that is not
/// computable (too few classes, ties everywhere, collinear controls) is
/// `None`.
pub fn step_stats(rows: &[JoinedRow]) -> StepStats {
    let kept: Vec<&JoinedRow> = rows.iter().filter(|r| r.fg.is_some()).collect();
    let fg: Vec<f64> = kept.iter().filter_map(|r| r.fg).collect();
    let col = |f: fn(&JoinedRow) -> f64| -> Vec<f64> { kept.iter().map(|r| f(r)).collect() };
    let sic = col(|r| r.sic);
    let cic = col(|r| r.cic);
    let nic = col(|r| r.nic);
    let optional = |f: fn(&JoinedRow) -> Option<f64>| -> Option<Vec<f64>> { kept.iter().map(|r| f(r)).collect() };
    let all_nic = optional(|r| r.all_nic);
    let log_sim = optional(|r| r.log_sim);

    let mut correlations = Vec::new();
    let mut push = |name: &str, x: &[f64], controls: &[&[f64]]| {
        correlations.push(Correlation {
            coefficient: name.to_string(),
            rho: spearman(x, &fg).ok(),
            partial: partial_spearman(x, &fg, controls).ok(),
        });
    };
    push("sic", &sic, &[&cic, &nic]);
    push("cic", &cic, &[&sic, &nic]);
    push("nic", &nic, &[&sic, &cic]);
    if let Some(v) = &all_nic {
        push("all_nic", v, &[&sic, &cic]);
    }
    if let Some(v) = &log_sim {
        push("log_sim", v, &[&sic, &cic, &nic]);
    }
    StepStats {
        fg_range: fg_range(&fg).ok(),
        fg_half_gap: fg_half_gap(&fg).ok(),
        correlations,
    }
}

pub fn fingerprint(rehearsal: &RehearsalSet, net: &Network, seed: u64, step: usize) -> StepFingerprint {
    let mut h = Sha256::new();
    for c in rehearsal.classes() {
        let ex = rehearsal.class(c).unwrap_or_default();
        h.update((c as u64).to_le_bytes());
        h.update((ex.len() as u64).to_le_bytes());
        for e in ex {
            h.update((e.provenance as u64).to_le_bytes());
            for v in &e.input {
                h.update(v.to_le_bytes());
            }
        }
    }
    let rehearsal_sha256 = hex::encode(h.finalize());
    let mut h = Sha256::new();
    for v in net.params().values() {
        h.update(v.to_le_bytes());
    }
    StepFingerprint {
        rehearsal_sha256,
        params_sha256: hex::encode(h.finalize()),
        train_seed: seed,
        train_stream: Stream::Train(step).id(),
    }
}

fn concat(parts: &[LabeledDataset], dim: usize) -> LabResult<LabeledDataset> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for p in parts {
        inputs.extend_from_slice(p.inputs());
        labels.extend_from_slice(p.labels());
    }
    Ok(LabeledDataset::new(dim, inputs, labels, Split::Train)?)
}

/// State carried from one step to the next.
#[derive(Debug, Clone)]
pub(crate) struct RunState {
    pub net: Network,
    pub rehearsal: RehearsalSet,
    pub ledger: AccuracyLedger,
    /// Training sets of the completed steps.
    pub past: Vec<LabeledDataset>,
}

pub(crate) fn build_scenario(cfg: &ExperimentConfig) -> LabResult<Scenario> {
    let (train, test) = generate_synthetic(&cfg.data.synthetic, &mut stream(cfg.data.seed, Stream::Init))?;
    Ok(Scenario::from_sequence(&cfg.sequence, &train, &test)?)
}

fn evaluate(state: &mut RunState, scenario: &Scenario, m: usize) -> LabResult<()> {
    let step = scenario.step(m);
    for &c in &step.classes {
        let acc = class_accuracy(&state.net, &step.test, c)?;
        state.ledger.record_initial(c, m, acc)?;
    }
    for c in scenario.past_classes(m) {
        let introduced = scenario.introduced_in(c).expect("past class");
        let acc = class_accuracy(&state.net, &scenario.step(introduced).test, c)?;
        state.ledger.record(c, m, acc)?;
    }
    Ok(())
}

fn update_memory(state: &mut RunState, cfg: &ExperimentConfig, scenario: &Scenario, m: usize) -> LabResult<()> {
    let step = scenario.step(m);
    let net = &state.net;
    let features = |x: &[f64]| net.features(x).expect("input dimension fixed by the scenario");
    let extractor: &dyn FeatureExtractor = &features;
    let next = update_rehearsal(
        &cfg.rehearsal,
        &state.rehearsal,
        &step.train,
        Some(extractor),
        &mut stream(cfg.seed, Stream::Rehearsal(m)),
    )?;
    state.rehearsal = next;
    state.past.push(step.train.clone());
    Ok(())
}

pub(crate) fn first_step(cfg: &ExperimentConfig, scenario: &Scenario) -> LabResult<(RunState, Vec<StepTrace>)> {
    let step = scenario.step(1);
    let spec = ModelSpec::new(
        scenario.dim(),
        cfg.model.hidden.clone(),
        cfg.model.activation,
        step.classes.len(),
    )?;
    let net = Network::init(spec, &mut stream(cfg.seed, Stream::Init))?;
    let (net, trace) = train_step(
        net,
        &step.train,
        &RehearsalSet::new(),
        &cfg.first_step,
        &[],
        &mut NoHook,
        &mut stream(cfg.seed, Stream::Train(1)),
    )?;
    let mut state = RunState {
        net,
        rehearsal: RehearsalSet::new(),
        ledger: AccuracyLedger::new(),
        past: Vec::new(),
    };
    evaluate(&mut state, scenario, 1)?;
    update_memory(&mut state, cfg, scenario, 1)?;
    Ok((state, trace))
}

/// Expands the head for step `m` and fingerprints the starting point.
pub(crate) fn prepare_step(
    state: &RunState,
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    m: usize,
) -> LabResult<(Network, StepFingerprint)> {
    let new = scenario.step(m).classes.len();
    let net = state.net.expand_head(new, &mut stream(cfg.seed, Stream::Head(m)))?;
    let fp = fingerprint(&state.rehearsal, &net, cfg.seed, m);
    Ok((net, fp))
}

/// Trains step `m >= 2` from `net` (already expanded) with diagnostics.
pub(crate) fn diagnosed_step(
    mut state: RunState,
    net: Network,
    fingerprint: StepFingerprint,
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    m: usize,
) -> LabResult<(RunState, StepReport, Vec<StepTrace>)> {
    let step = scenario.step(m);
    let probabilities = state.rehearsal.probabilities();
    let mut log_sims = BTreeMap::new();
    for &(c, _) in &probabilities {
        let v = if cfg.diagnostics.log_sim {
            log_sim(&net, &step.train, c)?
        } else {
            0.0
        };
        log_sims.insert(c, v);
    }
    let past = concat(&state.past, scenario.dim())?;
    let data = DiagnosticData::new(&past, &state.rehearsal, step.train.clone())?;

    let alpha = cfg.rsgd.alpha;
    let mut lemma = Vec::new();
    if cfg.diagnostics.lemma {
        let snap = snapshot(&net, &data, 0, true)?;
        for &(c, _) in &probabilities {
            lemma.push(ClassLemma {
                class_id: scenario.source_class(c).expect("known class"),
                terms: lemma_interference_sum(&snap, c, alpha, &probabilities).ok(),
            });
        }
    }

    let iters = cfg.rsgd.iterations_per_epoch(step.train.len(), true);
    let plan = CheckpointPlan::end_of_epochs(cfg.rsgd.epochs, iters);
    let mut recorder = SnapshotRecorder::new(&data, false);
    let (net, trace) = train_step(
        net,
        &step.train,
        &state.rehearsal,
        &cfg.rsgd,
        plan.indices(),
        &mut recorder,
        &mut stream(cfg.seed, Stream::Train(m)),
    )?;
    let snaps = recorder.into_snapshots();
    let coeffs = coefficient_rows(m, &snaps, alpha, &probabilities, &log_sims)?;

    state.net = net;
    evaluate(&mut state, scenario, m)?;
    let forgetting: BTreeMap<usize, _> = state.ledger.rows(m).into_iter().map(|r| (r.class_id, r)).collect();
    let mut rows = Vec::with_capacity(coeffs.len());
    for c in coeffs {
        let f = forgetting
            .get(&c.class_id)
            .ok_or_else(|| LabError::Config(format!("class {} missing from the accuracy ledger", c.class_id)))?;
        rows.push(JoinedRow {
            class_id: scenario.source_class(c.class_id).expect("known class"),
            sic: c.sic,
            cic: c.cic,
            nic: c.nic,
            all_nic: cfg.diagnostics.all_nic.then_some(c.all_nic),
            log_sim: cfg.diagnostics.log_sim.then_some(c.log_sim),
            degenerate_checkpoints: c.degenerate_checkpoints,
            acc_init: f.acc_init,
            acc_now: f.acc_now,
            fg: f.fg,
        });
    }
    if rows.len() != forgetting.len() {
        return Err(LabError::Config(format!(
            "step {m}: coefficient and forgetting rows disagree"
        )));
    }
    update_memory(&mut state, cfg, scenario, m)?;
    let stats = step_stats(&rows);
    Ok((
        state,
        StepReport {
            step: m,
            rows,
            stats,
            fingerprint,
            lemma,
        },
        trace,
    ))
}

/// Runs every step of the configured sequence.
pub fn run_experiment(cfg: &ExperimentConfig) -> LabResult<RunResult> {
    cfg.validate()?;
    let started = Instant::now();
    let scenario = build_scenario(cfg)?;
    let t0 = Instant::now();
    let (mut state, trace) = first_step(cfg, &scenario)?;
    let mut traces = vec![trace];
    let mut timing = vec![StepTiming {
        step: 1,
        seconds: t0.elapsed().as_secs_f64(),
    }];
    let mut steps = Vec::new();
    for m in 2..=scenario.len() {
        let t0 = Instant::now();
        let (net, fp) = prepare_step(&state, cfg, &scenario, m)?;
        let (next, report, trace) = diagnosed_step(state, net, fp, cfg, &scenario, m)?;
        state = next;
        log::debug!("{} step {m}: {} past classes", cfg.experiment_id, report.rows.len());
        steps.push(report);
        traces.push(trace);
        timing.push(StepTiming {
            step: m,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(RunResult {
        experiment_id: cfg.experiment_id.clone(),
        seed: cfg.seed,
        data_seed: cfg.data.seed,
        steps,
        traces,
        rehearsal_manifest: state.rehearsal.manifest(),
        timing,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Serialize)]
struct TraceFile<'a> {
    experiment_id: &'a str,
    seed: u64,
    data_seed: u64,
    steps: Vec<TraceStep<'a>>,
}

#[derive(Serialize)]
struct TraceStep<'a> {
    step: usize,
    iterations: Vec<TraceLine>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fingerprint: Option<&'a StepFingerprint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stats: Option<&'a StepStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lemma: Option<&'a [ClassLemma]>,
}

#[derive(Serialize)]
struct TraceLine {
    t: usize,
    epoch: usize,
    lr: f64,
    grad_norm: f64,
}

#[derive(Serialize)]
struct TimingFile<'a> {
    steps: &'a [StepTiming],
    wall_clock_seconds: f64,
}

/// Writes `config.json`, `coefficients.csv`, `forgetting.csv`, `steps.csv`,
/// `trace.json`, `rehearsal.json` and `timing.json` into `dir`. Everything
/// but `timing.json` is a deterministic function of the configuration.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, result: &RunResult) -> LabResult<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut cfg = cfg.clone();
    cfg.output_dir = None;
    write_json(&dir.join("config.json"), &cfg)?;
    write_csv(&dir.join("coefficients.csv"), &result.coefficient_csv())?;
    write_csv(&dir.join("forgetting.csv"), &result.forgetting_csv())?;
    let stats: Vec<StepStatsCsvRow> = result
        .steps
        .iter()
        .map(|s| step_stats_row(&result.experiment_id, s.step, &s.rows, &s.stats))
        .collect();
    write_csv(&dir.join("steps.csv"), &stats)?;
    let trace = TraceFile {
        experiment_id: &result.experiment_id,
        seed: result.seed,
        data_seed: result.data_seed,
        steps: result
            .traces
            .iter()
            .enumerate()
            .map(|(i, tr)| {
                let report = result.steps.iter().find(|s| s.step == i + 1);
                TraceStep {
                    step: i + 1,
                    iterations: tr
                        .iter()
                        .map(|s| TraceLine {
                            t: s.t,
                            epoch: s.epoch,
                            lr: s.lr,
                            grad_norm: s.grad_norm,
                        })
                        .collect(),
                    fingerprint: report.map(|r| &r.fingerprint),
                    stats: report.map(|r| &r.stats),
                    lemma: report.filter(|r| !r.lemma.is_empty()).map(|r| r.lemma.as_slice()),
                }
            })
            .collect(),
    };
    write_json(&dir.join("trace.json"), &trace)?;
    write_json(&dir.join("rehearsal.json"), &result.rehearsal_manifest)?;
    write_json(
        &dir.join("timing.json"),
        &TimingFile {
            steps: &result.timing,
            wall_clock_seconds: result.wall_clock_seconds,
        },
    )?;
    Ok(())
}

/// Runs and writes one experiment. On failure nothing is left in `dir`
/// except a `error.json` record.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> LabResult<RunResult> {
    let outcome = run_experiment(cfg).and_then(|r| write_run(dir, cfg, &r).map(|_| r));
    if let Err(e) = &outcome {
        if dir.exists() {
            let _ = fs::remove_dir_all(dir);
        }
        if fs::create_dir_all(dir).is_ok() {
            let record = serde_json::json!({
                "experiment_id": cfg.experiment_id,
                "error": e.to_string(),
                "exit_code": e.exit_code(),
            });
            let _ = write_json(&dir.join("error.json"), &record);
        }
    }
    outcome
}
