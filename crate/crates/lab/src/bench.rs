//! Benchmark sweeps: stratified sampling of experiments, a bounded worker
//! pool, per-partition summaries with confidence intervals and step-wise
//! leave-one-out evaluation of the ranking models.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cilab_core::scenario::{build_scenarios, stratified_sample, PopulationDescriptor};
use cilab_core::stats::{fit_ranking_model, sample_std, sw_loo, sw_loo_with, CoefficientMatrix, Predictor};
use cilab_core::Error as CoreError;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ci::{mean_ci_t, std_ci_bca, CiMethod};
use crate::config::{BenchConfig, ExperimentConfig};
use crate::error::{LabError, LabResult};
use crate::harness::{run_experiment, run_to_dir, step_stats, JoinedRow, StepStats};
use crate::io::{
    read_csv, read_json, write_csv, write_json, CoefficientCsvRow, ForgettingCsvRow, SummaryCsvRow, SwLooCsvRow,
};
use crate::seeds::{stream, Stream};

pub const POOLED: &str = "pooled";
pub const LEVEL: f64 = 0.95;

/// Per-run quantities entering the summary: one value per metric, the mean
/// over the run's steps where the metric is defined.
pub const METRICS: [&str; 12] = [
    "fg_r",
    "fg_hg",
    "rho_sic",
    "rho_cic",
    "rho_nic",
    "rho_all_nic",
    "rho_log_sim",
    "rho_p_sic",
    "rho_p_cic",
    "rho_p_nic",
    "rho_p_all_nic",
    "rho_p_log_sim",
];

/// What analysis needs from a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDigest {
    pub experiment_id: String,
    pub partition: String,
    pub steps: Vec<StepDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDigest {
    pub step: usize,
    pub rows: Vec<JoinedRow>,
    pub stats: StepStats,
}

impl RunDigest {
    pub fn metric(&self, name: &str) -> Option<f64> {
        let values: Vec<f64> = self.steps.iter().filter_map(|s| step_metric(&s.stats, name)).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn step_metric(stats: &StepStats, name: &str) -> Option<f64> {
    match name {
        "fg_r" => stats.fg_range,
        "fg_hg" => stats.fg_half_gap,
        _ => match name.strip_prefix("rho_p_") {
            Some(c) => stats.partial(c),
            None => stats.rho(name.strip_prefix("rho_")?),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub experiment_id: String,
    pub partition: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// Successful runs, sorted by id.
    pub runs: Vec<RunDigest>,
    pub failures: Vec<RunFailure>,
    pub summary: Vec<SummaryCsvRow>,
    pub sw_loo: Vec<SwLooCsvRow>,
}

impl BenchReport {
    pub fn summary_row(&self, partition: &str, metric: &str) -> Option<&SummaryCsvRow> {
        self.summary
            .iter()
            .find(|r| r.partition == partition && r.metric == metric)
    }
}

pub fn partition_label(percent: u32, retention: f64) -> String {
    format!("p{percent}_r{retention}")
}

/// The sampled experiment configurations of a sweep, sorted by id.
pub fn plan_benchmark(cfg: &BenchConfig) -> LabResult<Vec<ExperimentConfig>> {
    cfg.validate()?;
    let mut rng = stream(cfg.sampling_seed, Stream::Init);
    let plans = build_scenarios(&cfg.grid, &mut rng)?;
    let population = PopulationDescriptor::from_plans(&cfg.grid, &plans);
    let draws = stratified_sample(&population, cfg.per_partition, &mut rng)?;
    let mut by_percent: BTreeMap<u32, Vec<&_>> = BTreeMap::new();
    for p in &plans {
        by_percent.entry(p.percent).or_default().push(p);
    }
    let mut counters: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out: Vec<ExperimentConfig> = draws
        .iter()
        .map(|d| {
            let label = partition_label(d.percent, d.retention);
            let k = counters.entry(d.partition).or_insert(0);
            let id = format!("{label}_{k:03}");
            *k += 1;
            let plan = by_percent[&d.percent][d.sequence];
            let mut e = cfg.template.instantiate(id, plan.steps.clone(), d.retention, d.seed);
            e.partition = Some(label);
            e
        })
        .collect();
    out.sort_by(|a, b| a.experiment_id.cmp(&b.experiment_id));
    Ok(out)
}

pub fn digest(cfg: &ExperimentConfig, steps: impl IntoIterator<Item = (usize, Vec<JoinedRow>)>) -> RunDigest {
    RunDigest {
        experiment_id: cfg.experiment_id.clone(),
        partition: cfg.partition.clone().unwrap_or_else(|| POOLED.to_string()),
        steps: steps
            .into_iter()
            .map(|(step, rows)| {
                let stats = step_stats(&rows);
                StepDigest { step, rows, stats }
            })
            .collect(),
    }
}

/// Runs every configuration on a pool of `jobs` threads (each run
/// single-threaded). Failed runs are excluded from the estimates and
/// counted.
pub fn run_configs(
    configs: &[ExperimentConfig],
    jobs: usize,
    out: Option<&Path>,
) -> LabResult<(Vec<RunDigest>, Vec<RunFailure>)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| LabError::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<RunDigest, RunFailure>> = pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| {
                let result = match out {
                    Some(dir) => run_to_dir(cfg, &dir.join("runs").join(&cfg.experiment_id)),
                    None => run_experiment(cfg),
                };
                match result {
                    Ok(r) => {
                        log::info!("{} done in {:.1}s", cfg.experiment_id, r.wall_clock_seconds);
                        Ok(digest(cfg, r.steps.into_iter().map(|s| (s.step, s.rows))))
                    }
                    Err(e) => {
                        log::warn!("{} failed: {e}", cfg.experiment_id);
                        Err(RunFailure {
                            experiment_id: cfg.experiment_id.clone(),
                            partition: cfg.partition.clone().unwrap_or_else(|| POOLED.to_string()),
                            error: e.to_string(),
                        })
                    }
                }
            })
            .collect()
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(d) => runs.push(d),
            Err(f) => failures.push(f),
        }
    }
    runs.sort_by(|a, b| a.experiment_id.cmp(&b.experiment_id));
    failures.sort_by(|a, b| a.experiment_id.cmp(&b.experiment_id));
    Ok((runs, failures))
}

fn metric_row<R: Rng>(
    partition: &str,
    metric: &str,
    values: &[f64],
    failed: usize,
    resamples: usize,
    rng: &mut R,
) -> LabResult<SummaryCsvRow> {
    let n = values.len();
    let mut row = SummaryCsvRow {
        partition: partition.to_string(),
        metric: metric.to_string(),
        n,
        mean: None,
        mean_lo: None,
        mean_hi: None,
        std: None,
        std_lo: None,
        std_hi: None,
        std_method: String::new(),
        degenerate: n >= 2 && values.iter().all(|&v| v == values[0]),
        failed_runs: failed,
    };
    if n == 0 {
        return Ok(row);
    }
    row.mean = Some(values.iter().sum::<f64>() / n as f64);
    if n >= 2 {
        let t = mean_ci_t(values, LEVEL)?;
        row.mean = Some(t.estimate);
        row.mean_lo = Some(t.lo);
        row.mean_hi = Some(t.hi);
        row.std = Some(sample_std(values));
    }
    if n >= 8 {
        let b = std_ci_bca(values, resamples, LEVEL, rng)?;
        row.std_lo = Some(b.lo);
        row.std_hi = Some(b.hi);
        row.std_method = match b.method {
            CiMethod::Bca => "bca",
            _ => "percentile",
        }
        .to_string();
    }
    Ok(row)
}

/// Mean and standard deviation of every metric per partition and pooled.
/// The output depends only on the set of runs, not on their order.
pub fn summarize(
    runs: &[RunDigest],
    failures: &[RunFailure],
    resamples: usize,
    seed: u64,
) -> LabResult<Vec<SummaryCsvRow>> {
    let mut sorted: Vec<&RunDigest> = runs.iter().collect();
    sorted.sort_by(|a, b| a.experiment_id.cmp(&b.experiment_id));
    let mut groups: BTreeMap<String, Vec<&RunDigest>> = BTreeMap::new();
    for r in &sorted {
        groups.entry(r.partition.clone()).or_default();
    }
    for f in failures {
        groups.entry(f.partition.clone()).or_default();
    }
    for r in &sorted {
        groups.get_mut(&r.partition).expect("inserted").push(r);
    }
    let mut rng = stream(seed, Stream::Bootstrap);
    let mut rows = Vec::new();
    let mut emit =
        |label: &str, members: &[&RunDigest], failed: usize, rows: &mut Vec<SummaryCsvRow>| -> LabResult<()> {
            for metric in METRICS {
                let values: Vec<f64> = members.iter().filter_map(|r| r.metric(metric)).collect();
                if values.is_empty() && (metric.contains("all_nic") || metric.contains("log_sim")) {
                    continue;
                }
                rows.push(metric_row(label, metric, &values, failed, resamples, &mut rng)?);
            }
            Ok(())
        };
    for (label, members) in &groups {
        let failed = failures.iter().filter(|f| &f.partition == label).count();
        emit(label, members, failed, &mut rows)?;
    }
    if groups.len() > 1 || !groups.contains_key(POOLED) {
        emit(POOLED, &sorted, failures.len(), &mut rows)?;
    }
    Ok(rows)
}

/// Steps with at least three classes of defined forgetting.
pub fn coefficient_matrices(runs: &[&RunDigest]) -> Vec<CoefficientMatrix> {
    let mut out = Vec::new();
    for r in runs {
        for s in &r.steps {
            let rows: Vec<&JoinedRow> = s.rows.iter().filter(|x| x.fg.is_some()).collect();
            if rows.len() < 3 {
                continue;
            }
            let col = |f: fn(&JoinedRow) -> f64| rows.iter().map(|x| f(x)).collect::<Vec<f64>>();
            out.push(CoefficientMatrix {
                id: format!("{}/step{}", r.experiment_id, s.step),
                classes: rows.iter().map(|x| x.class_id).collect(),
                sic: col(|x| x.sic),
                cic: col(|x| x.cic),
                nic: col(|x| x.nic),
                all_nic: rows.iter().map(|x| x.all_nic).collect(),
                log_sim: rows.iter().map(|x| x.log_sim).collect(),
                fg: col(|x| x.fg.expect("filtered")),
            });
        }
    }
    out
}

/// Step-wise leave-one-out of the joint model against SIC alone, within
/// each partition. Partitions where a model cannot be fit are skipped.
pub fn sw_loo_table(runs: &[RunDigest]) -> LabResult<Vec<SwLooCsvRow>> {
    let mut groups: BTreeMap<&str, Vec<&RunDigest>> = BTreeMap::new();
    for r in runs {
        groups.entry(r.partition.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    for (label, mut members) in groups {
        members.sort_by(|a, b| a.experiment_id.cmp(&b.experiment_id));
        let pool = coefficient_matrices(&members);
        if pool.len() < 2 {
            continue;
        }
        let mut betas = Vec::new();
        let joint = sw_loo_with(&pool, |rest| {
            let model = fit_ranking_model(rest, &Predictor::JOINT)?;
            betas.push(model.betas.clone());
            Ok(move |s: &CoefficientMatrix| model.predict(s))
        });
        let sic = sw_loo(&pool, &[Predictor::Sic]);
        let (joint, sic) = match (joint, sic) {
            (Ok(j), Ok(s)) => (j, s),
            (Err(e), _) | (_, Err(e)) if matches!(e, CoreError::Collinear(_) | CoreError::Shape(_)) => {
                log::warn!("partition {label}: leave-one-out skipped ({e})");
                continue;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e.into()),
        };
        for ((j, s), b) in joint.iter().zip(&sic).zip(&betas) {
            out.push(SwLooCsvRow {
                pool_id: label.to_string(),
                held_out_step: j.held_out.clone(),
                rho_joint: j.rho,
                rho_sic_only: s.rho,
                mae_joint: j.mae,
                betas: b.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
            });
        }
    }
    Ok(out)
}

/// Writes `summary.csv`, `sw_loo.csv` and `failures.json`.
pub fn write_report(out: &Path, report: &BenchReport) -> LabResult<()> {
    fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    write_csv(&out.join("summary.csv"), &report.summary)?;
    write_csv(&out.join("sw_loo.csv"), &report.sw_loo)?;
    write_json(&out.join("failures.json"), &report.failures)?;
    Ok(())
}

/// Plans, runs and analyses a sweep. Returns the report even when some runs
/// failed; callers decide how to surface [`LabError::PartialFailure`].
pub fn run_benchmark(cfg: &BenchConfig, jobs: usize, out: Option<&Path>) -> LabResult<BenchReport> {
    let configs = plan_benchmark(cfg)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
        write_json(&dir.join("bench.json"), cfg)?;
    }
    log::info!("{} experiments on {} workers", configs.len(), jobs.max(1));
    let (runs, failures) = run_configs(&configs, jobs, out)?;
    let report = BenchReport {
        summary: summarize(&runs, &failures, cfg.bootstrap_resamples, cfg.sampling_seed)?,
        sw_loo: sw_loo_table(&runs)?,
        runs,
        failures,
    };
    if let Some(dir) = out {
        write_report(dir, &report)?;
    }
    Ok(report)
}

/// Rebuilds a run's digest from its directory.
pub fn load_run(dir: &Path) -> LabResult<RunDigest> {
    let cfg: ExperimentConfig = read_json(&dir.join("config.json"))?;
    let coeffs: Vec<CoefficientCsvRow> = read_csv(&dir.join("coefficients.csv"))?;
    let forgetting: Vec<ForgettingCsvRow> = read_csv(&dir.join("forgetting.csv"))?;
    let fg: BTreeMap<(usize, usize), &ForgettingCsvRow> =
        forgetting.iter().map(|f| ((f.step, f.class_id), f)).collect();
    if fg.len() != coeffs.len() {
        return Err(LabError::Config(format!(
            "{}: coefficient and forgetting rows disagree",
            dir.display()
        )));
    }
    let mut steps: BTreeMap<usize, Vec<JoinedRow>> = BTreeMap::new();
    for c in coeffs {
        let f = fg.get(&(c.step, c.class_id)).ok_or_else(|| {
            LabError::Config(format!(
                "{}: no forgetting row for class {} at step {}",
                dir.display(),
                c.class_id,
                c.step
            ))
        })?;
        steps.entry(c.step).or_default().push(JoinedRow {
            class_id: c.class_id,
            sic: c.sic,
            cic: c.cic,
            nic: c.nic,
            all_nic: c.all_nic,
            log_sim: c.log_sim,
            degenerate_checkpoints: c.degenerate_checkpoints,
            acc_init: f.acc_init,
            acc_now: f.acc_now,
            fg: f.fg,
        });
    }
    Ok(digest(&cfg, steps))
}

/// Recomputes the summary and leave-one-out tables of a sweep directory
/// from its per-run CSV files.
pub fn analyze_dir(dir: &Path) -> LabResult<BenchReport> {
    let bench: Option<BenchConfig> = dir
        .join("bench.json")
        .exists()
        .then(|| read_json(&dir.join("bench.json")))
        .transpose()?;
    let runs_dir = dir.join("runs");
    let mut entries: Vec<PathBuf> = fs::read_dir(&runs_dir)
        .map_err(|e| LabError::io(&runs_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for p in entries {
        if p.join("error.json").exists() {
            let record: serde_json::Value = read_json(&p.join("error.json"))?;
            let id = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let partition = read_json::<ExperimentConfig>(&p.join("config.json"))
                .ok()
                .and_then(|c| c.partition)
                .unwrap_or_else(|| id.rsplit_once('_').map(|(l, _)| l.to_string()).unwrap_or_default());
            failures.push(RunFailure {
                experiment_id: id,
                partition,
                error: record["error"].as_str().unwrap_or_default().to_string(),
            });
            continue;
        }
        runs.push(load_run(&p)?);
    }
    let (resamples, seed) = bench.map_or((1000, 0), |b| (b.bootstrap_resamples, b.sampling_seed));
    let report = BenchReport {
        summary: summarize(&runs, &failures, resamples, seed)?,
        sw_loo: sw_loo_table(&runs)?,
        runs,
        failures,
    };
    write_report(dir, &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{single_partition, two_step};

    fn partition_rows<'a>(r: &'a BenchReport, metric: &str) -> Vec<&'a SummaryCsvRow> {
        r.summary
            .iter()
            .filter(|x| x.metric == metric && x.partition != POOLED)
            .collect()
    }

    #[test]
    fn one_partition_three_runs() {
        let r = run_benchmark(&single_partition(3, Vec::new()), 2, None).unwrap();
        assert_eq!(r.runs.len(), 3);
        let rows = partition_rows(&r, "fg_r");
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].partition, "p25_r0.15");
        assert_eq!(rows[0].n, 3);
        assert!(rows[0].mean_lo.is_some() && rows[0].std_lo.is_none());
    }

    #[test]
    fn identical_runs_have_zero_spread() {
        let mut cfg = single_partition(8, vec![5]);
        cfg.grid.max_sequences_per_percent = Some(1);
        let r = run_benchmark(&cfg, 4, None).unwrap();
        let row = partition_rows(&r, "fg_r")[0];
        assert_eq!(row.n, 8);
        assert_eq!(row.std, Some(0.0));
        assert!(row.degenerate);
        assert_eq!(row.std_method, "percentile");
        assert_eq!((row.std_lo, row.std_hi), (Some(0.0), Some(0.0)));
        assert_eq!(row.mean_lo, row.mean_hi);
    }

    #[test]
    fn summary_ignores_completion_order() {
        let r = run_benchmark(&single_partition(4, Vec::new()), 2, None).unwrap();
        let mut reversed = r.runs.clone();
        reversed.reverse();
        assert_eq!(summarize(&reversed, &[], 1000, 2024).unwrap(), r.summary);
    }

    #[test]
    fn failures_are_counted_and_excluded() {
        let mut bad = two_step(0.2);
        bad.experiment_id = "bad".into();
        bad.sequence = vec![vec![0], vec![0]];
        bad.partition = Some("x".into());
        let mut good = two_step(0.2);
        good.partition = Some("x".into());
        let (runs, failures) = run_configs(&[bad, good], 2, None).unwrap();
        assert_eq!((runs.len(), failures.len()), (1, 1));
        let summary = summarize(&runs, &failures, 1000, 1).unwrap();
        let row = summary
            .iter()
            .find(|r| r.partition == "x" && r.metric == "fg_r")
            .unwrap();
        assert_eq!((row.n, row.failed_runs), (1, 1));
    }

    #[test]
    fn analyze_reproduces_the_sweep_tables() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = single_partition(3, Vec::new());
        cfg.grid.class_percents = vec![25, 50];
        let live = run_benchmark(&cfg, 2, Some(dir.path())).unwrap();
        let summary = fs::read(dir.path().join("summary.csv")).unwrap();
        let loo = fs::read(dir.path().join("sw_loo.csv")).unwrap();
        let again = analyze_dir(dir.path()).unwrap();
        assert_eq!(again.runs, live.runs);
        assert_eq!(again.summary, live.summary);
        assert_eq!(fs::read(dir.path().join("summary.csv")).unwrap(), summary);
        assert_eq!(fs::read(dir.path().join("sw_loo.csv")).unwrap(), loo);
    }

    #[test]
    fn metric_names() {
        let stats = StepStats {
            fg_range: Some(0.5),
            fg_half_gap: None,
            correlations: vec![crate::harness::Correlation {
                coefficient: "nic".into(),
                rho: Some(0.1),
                partial: Some(0.2),
            }],
        };
        assert_eq!(step_metric(&stats, "fg_r"), Some(0.5));
        assert_eq!(step_metric(&stats, "rho_nic"), Some(0.1));
        assert_eq!(step_metric(&stats, "rho_p_nic"), Some(0.2));
        assert_eq!(step_metric(&stats, "rho_sic"), None);
        assert_eq!(step_metric(&stats, "other"), None);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn run(i: usize, partition: bool, values: &[(f64, f64)]) -> RunDigest {
        let rows: Vec<JoinedRow> = values
            .iter()
            .enumerate()
            .map(|(c, &(sic, fg))| JoinedRow {
                class_id: c,
                sic,
                cic: -sic,
                nic: sic * sic,
                all_nic: None,
                log_sim: None,
                degenerate_checkpoints: 0,
                acc_init: 1.0,
                acc_now: 1.0 - fg,
                fg: Some(fg),
            })
            .collect();
        let stats = step_stats(&rows);
        RunDigest {
            experiment_id: format!("run{i:03}"),
            partition: if partition { "a" } else { "b" }.into(),
            steps: vec![StepDigest { step: 2, rows, stats }],
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn summary_is_order_free(
            runs in prop::collection::vec(
                (any::<bool>(), prop::collection::vec((-1.0f64..1.0, 0.0f64..1.0), 3..6)),
                2..12,
            ),
            seed in any::<u64>(),
        ) {
            let digests: Vec<RunDigest> = runs.iter().enumerate().map(|(i, (p, v))| run(i, *p, v)).collect();
            let mut shuffled = digests.clone();
            shuffled.rotate_left(seed as usize % digests.len());
            shuffled.swap(0, digests.len() - 1);
            prop_assert_eq!(
                summarize(&digests, &[], 1000, seed).unwrap(),
                summarize(&shuffled, &[], 1000, seed).unwrap()
            );
        }
    }
}
