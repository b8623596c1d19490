use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cilab::bench::{analyze_dir, run_benchmark, BenchReport};
use cilab::config::{BenchConfig, ExperimentConfig};
use cilab::controlled::run_controlled_nic_sic;
use cilab::harness::run_to_dir;
use cilab::io::write_json;
use cilab::{LabError, LabResult};

/// Class-incremental rehearsal experiments with interference diagnostics.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's `output_dir`, then
        /// `runs/<experiment_id>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep a benchmark grid.
    Bench {
        #[arg(long)]
        grid: PathBuf,
        /// Overrides the grid file's per-partition count.
        #[arg(long)]
        per_partition: Option<usize>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run one step with different new-class sets.
    Controlled {
        #[arg(long)]
        base_config: PathBuf,
        #[arg(long)]
        step: usize,
        #[arg(long)]
        reruns: usize,
        /// Also write `controlled.csv` and `controlled.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute summaries from the CSV files of a sweep directory.
    Analyze {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn print_summary(report: &BenchReport) {
    for r in &report.summary {
        if r.metric != "fg_r" && r.metric != "rho_sic" {
            continue;
        }
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:<16} {:<8} n={:<3} mean {} [{}, {}]  std {}",
            r.partition,
            r.metric,
            r.n,
            f(r.mean),
            f(r.mean_lo),
            f(r.mean_hi),
            f(r.std)
        );
    }
    if !report.failures.is_empty() {
        println!("{} runs failed", report.failures.len());
    }
}

fn partial(report: &BenchReport) -> LabResult<()> {
    match report.failures.len() {
        0 => Ok(()),
        failed => Err(LabError::PartialFailure {
            failed,
            total: failed + report.runs.len(),
        }),
    }
}

fn controlled(base: &Path, step: usize, reruns: usize, out: Option<&Path>) -> LabResult<()> {
    let cfg = ExperimentConfig::load(base)?;
    let report = run_controlled_nic_sic(&cfg, step, reruns)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class_id", "rho_nic_sic"])?;
    for c in &report.classes {
        w.write_record([
            c.class_id.to_string(),
            c.rho.map_or_else(String::new, |r| r.to_string()),
        ])?;
    }
    let text =
        String::from_utf8(w.into_inner().map_err(|e| LabError::io("stdout", e.into_error()))?).expect("CSV is UTF-8");
    print!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
        let path = dir.join("controlled.csv");
        std::fs::write(&path, &text).map_err(|e| LabError::io(&path, e))?;
        write_json(&dir.join("controlled.json"), &report)?;
    }
    Ok(())
}

fn execute(cli: Cli) -> LabResult<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| Path::new("runs").join(&cfg.experiment_id));
            let result = run_to_dir(&cfg, &dir)?;
            for s in &result.steps {
                let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
                println!(
                    "step {}: {} past classes, FG-R {}, FG-HG {}, rho(SIC, FG) {}",
                    s.step,
                    s.rows.len(),
                    f(s.stats.fg_range),
                    f(s.stats.fg_half_gap),
                    f(s.stats.rho("sic"))
                );
            }
            println!("wrote {}", dir.display());
            Ok(())
        }
        Command::Bench {
            grid,
            per_partition,
            jobs,
            out,
        } => {
            let mut cfg = BenchConfig::load(&grid)?;
            if let Some(n) = per_partition {
                cfg.per_partition = n;
            }
            let report = run_benchmark(&cfg, jobs, Some(&out))?;
            print_summary(&report);
            partial(&report)
        }
        Command::Controlled {
            base_config,
            step,
            reruns,
            out,
        } => controlled(&base_config, step, reruns, out.as_deref()),
        Command::Analyze { dir } => {
            let report = analyze_dir(&dir)?;
            print_summary(&report);
            partial(&report)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
