use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lossforge::config::EpsilonSetting;
use lossforge::formats::{parse_feasible, read_observations, LearnRecord};
use lossforge::report::{read_summary, SummaryRow};
use lossforge::{emit_report, run_scenario, HarnessError, Result, ScenarioConfig};
use lossforge_core::oracle::{optimal_lambda_finite, FiniteBilevelInstance};
use lossforge_core::{default_epsilon, learn_loss, CostParams, Hypercube};

#[derive(Parser)]
#[command(name = "lossforge", version, about = "Learn linear training losses from observed models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report.
    Run {
        config: PathBuf,
        /// Output directory; defaults to `<config stem>_report` next to the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn a loss from observations (JSON lines) and print it as JSON.
    Learn {
        observations: PathBuf,
        /// `lo:hi` per feature, comma separated; a single entry applies to all.
        #[arg(long)]
        feasible: String,
        /// `auto` or a non-negative number.
        #[arg(long, default_value = "auto")]
        epsilon: String,
    },
    /// Reference solvers.
    Oracle {
        #[command(subcommand)]
        which: OracleCommand,
    },
    /// Print the summary table of a report directory.
    Report { dir: PathBuf },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Exact best lambda over a finite observation set.
    Finite {
        observations: PathBuf,
        /// Defaults to `0:1` for every feature.
        #[arg(long)]
        feasible: Option<String>,
    },
}

fn parse_epsilon(text: &str) -> Result<EpsilonSetting> {
    let quoted = format!("e = {}", if text == "auto" { "\"auto\"".to_string() } else { text.to_string() });
    #[derive(serde::Deserialize)]
    struct Wrap {
        e: EpsilonSetting,
    }
    let w: Wrap = toml::from_str(&quoted).map_err(|_| HarnessError::Config(format!("bad epsilon {text:?}")))?;
    if let EpsilonSetting::Fixed(e) = w.e {
        if !(e >= 0.0 && e.is_finite()) {
            return Err(HarnessError::Config(format!("bad epsilon {text:?}")));
        }
    }
    Ok(w.e)
}

fn feasible_for(spec: Option<&str>, k: usize) -> Result<Hypercube> {
    parse_feasible(spec.unwrap_or("0:1"), k)
}

fn print_summary(rows: &[SummaryRow]) {
    println!("{:<24} {:<14} {:>5} {:>5} {:>14} {:>14} {:>14}", "scenario", "algorithm", "step", "seeds", "median_val", "mean_val", "median_test");
    for r in rows {
        println!(
            "{:<24} {:<14} {:>5} {:>5} {:>14.6} {:>14.6} {:>14.6}",
            r.scenario, r.algorithm, r.step, r.seeds, r.median_best_val, r.mean_best_val, r.median_best_test
        );
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ScenarioConfig::load(&config)?;
            let out = out.unwrap_or_else(|| {
                let stem = config.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
                config.with_file_name(format!("{stem}_report"))
            });
            let report = run_scenario(&cfg)?;
            emit_report(&report, &out)?;
            let last: Vec<SummaryRow> = {
                let rows = report.summary();
                let mut keep: Vec<SummaryRow> = Vec::new();
                for r in rows {
                    match keep.last_mut() {
                        Some(k) if k.algorithm == r.algorithm => *k = r,
                        _ => keep.push(r),
                    }
                }
                keep
            };
            print_summary(&last);
            println!("report written to {}", out.display());
            let failures = report.failures();
            for (seed, e) in &failures {
                eprintln!("seed {seed} failed: {e}");
            }
            Ok(if failures.is_empty() { 0 } else { 1 })
        }
        Command::Learn { observations, feasible, epsilon } => {
            let obs = read_observations(&observations)?;
            let k = obs.first().ok_or_else(|| HarnessError::Data("no observations".into()))?.num_features();
            let f = feasible_for(Some(&feasible), k)?;
            let eps = match parse_epsilon(&epsilon)? {
                EpsilonSetting::Fixed(e) => e,
                EpsilonSetting::Named(_) if obs.iter().all(|o| o.gradients().is_some()) => default_epsilon(&obs)?,
                EpsilonSetting::Named(_) => 0.0,
            };
            let result = learn_loss(&obs, &f, &CostParams::with_epsilon(eps)?)?;
            println!("{}", serde_json::to_string_pretty(&LearnRecord::from(&result)).expect("records serialize"));
            Ok(0)
        }
        Command::Oracle { which: OracleCommand::Finite { observations, feasible } } => {
            let obs = read_observations(&observations)?;
            let k = obs.first().ok_or_else(|| HarnessError::Data("no observations".into()))?.num_features();
            let f = feasible_for(feasible.as_deref(), k)?;
            let r = optimal_lambda_finite(&FiniteBilevelInstance::new(obs, f)?)?;
            let out = serde_json::json!({ "lambda": r.lambda, "achieved_ve": r.achieved_ve, "observation": r.observation });
            println!("{}", serde_json::to_string_pretty(&out).expect("json serializes"));
            Ok(0)
        }
        Command::Report { dir } => {
            print_summary(&read_summary(&dir.join("summary.csv"))?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
