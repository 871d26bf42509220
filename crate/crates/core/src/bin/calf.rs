use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use calf_core::agents::AgentKind;
use calf_core::harness::{
    compare_agents, emit_plots, run_experiment, ExperimentConfig, HarnessError, RunOptions, RunSummary,
};
use clap::{Args, Parser, Subcommand};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Parser)]
#[command(name = "calf", version, about = "Critic-as-Lyapunov-function agents on a kinematic cart")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Offset added to every seed in the configuration.
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Directory for CSV, JSON and SVG output.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    parallel: Option<usize>,
}

impl RunFlags {
    fn options(&self) -> RunOptions {
        RunOptions {
            out_dir: Some(self.out_dir.clone()),
            parallel: self.parallel,
            seed_base: self.seed_base,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every (target, seed) pair of a configuration.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run several configurations and print a cost table.
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Run the first configuration once per agent kind instead.
        #[arg(long, value_delimiter = ',')]
        agents: Vec<String>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run a configuration and fail when any audit fails.
    Verify {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Plot a summary written by `simulate`.
    Plot {
        summary: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                HarnessError::Config(_) => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            })
        }
    }
}

fn load(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    ExperimentConfig::from_file(path)
}

fn run(command: Command) -> Result<u8, HarnessError> {
    match command {
        Command::Simulate { config, flags } => {
            let cfg = load(&config)?;
            let summary = run_experiment(&cfg, &flags.options())?;
            print!("{}", compare_agents(std::slice::from_ref(&summary)).to_table());
            println!(
                "reach rate {:.3}, mean fallback fraction {:.3}, constraint violations {}",
                summary.reach_rate, summary.mean_fallback_fraction, summary.constraint_violations
            );
            Ok(0)
        }
        Command::Compare { configs, agents, flags } => {
            let mut cfgs = Vec::new();
            if agents.is_empty() {
                for p in &configs {
                    cfgs.push(load(p)?);
                }
            } else {
                let base = load(&configs[0])?;
                for a in &agents {
                    let kind = AgentKind::parse(a, 16).map_err(|e| calf_core::harness::ConfigError {
                        line: 0,
                        key: "--agents".into(),
                        message: e.to_string(),
                    })?;
                    cfgs.push(ExperimentConfig { agent: kind, ..base.clone() });
                }
            }
            let summaries = cfgs
                .iter()
                .map(|c| run_experiment(c, &flags.options()))
                .collect::<Result<Vec<_>, _>>()?;
            let table = compare_agents(&summaries);
            print!("{}", table.to_table());
            let path = flags.out_dir.join("comparison.json");
            fs::write(&path, serde_json::to_string_pretty(&table)?).map_err(|source| HarnessError::Io { path, source })?;
            Ok(0)
        }
        Command::Verify { config, flags } => {
            let cfg = load(&config)?;
            let summary = run_experiment(&cfg, &flags.options())?;
            Ok(if report_audits(&summary) { 0 } else { EXIT_ACCEPTANCE })
        }
        Command::Plot { summary, out_dir } => {
            let text = fs::read_to_string(&summary).map_err(|source| HarnessError::Io {
                path: summary.clone(),
                source,
            })?;
            let s = RunSummary::from_json(&text)?;
            let csv_dir = summary.parent().map(Path::to_path_buf).unwrap_or_default();
            let dir = out_dir.unwrap_or_else(|| csv_dir.clone());
            for p in emit_plots(&[s], &csv_dir, &dir)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
    }
}

/// Prints one line per audit kind and returns whether all runs passed.
fn report_audits(summary: &RunSummary) -> bool {
    let mut ok = true;
    let kinds = ["reaching", "constraints", "feasibility", "decay", "multistep"];
    for kind in kinds {
        let reports: Vec<_> = summary
            .runs
            .iter()
            .filter_map(|r| match kind {
                "reaching" => Some(&r.audits.reaching),
                "constraints" => r.audits.constraints.as_ref(),
                "feasibility" => r.audits.feasibility.as_ref(),
                "decay" => r.audits.decay.as_ref(),
                _ => r.audits.multistep.as_ref(),
            })
            .collect();
        if reports.is_empty() {
            continue;
        }
        let failed: Vec<_> = summary
            .runs
            .iter()
            .zip(&reports)
            .filter(|(_, a)| !a.passed)
            .map(|(r, a)| format!("t{} s{} ({:.3e})", r.target_index, r.seed, a.margin))
            .collect();
        let status = if failed.is_empty() { "PASS" } else { "FAIL" };
        println!("{status} {kind}: {}/{} runs", reports.len() - failed.len(), reports.len());
        for f in failed.iter().take(5) {
            println!("    {f}");
        }
        ok &= failed.is_empty();
    }
    ok
}
