//! `degenwave`: runs one experiment from a configuration file and writes
//! `<experiment>_<lambda>.csv` tables plus `report.json`.
//!
//! Exit codes: 0 when every verdict passes, 2 when some verdict fails,
//! 1 on any runtime or configuration error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Parser;
use degenwave::experiments::{parse_config_as, run_experiment, ExperimentKind, ExperimentReport};

#[derive(Parser, Debug)]
#[command(
    name = "degenwave",
    version,
    about = "Degenerating wave packet experiments"
)]
struct Cli {
    /// Experiment: rays, packet_validate, norm_growth, degeneration,
    /// fradiss, hall_growth or nonlinear_demo
    experiment: String,
    /// Configuration file (sectioned key = value)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir` of the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved configuration and exit
    #[arg(long)]
    dry_run: bool,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Also write two-column `.dat` files for plotting
    #[arg(long)]
    plot_data: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let kind: ExperimentKind = cli.experiment.parse()?;
    let mut cfg = parse_config_as(&cli.config, kind)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    let out_dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{kind}_out")));
    if cli.dry_run {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(true);
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    let start = Instant::now();
    let output = run_experiment(&cfg)?;
    output
        .write(&out_dir, cli.plot_data)
        .with_context(|| format!("writing results to {}", out_dir.display()))?;
    print_summary(&output.report);
    println!(
        "wrote {} table(s) and report.json to {} in {:.1} s",
        output.tables.len(),
        out_dir.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(output.report.all_pass)
}

fn bracket(lo: Option<f64>, hi: Option<f64>) -> String {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4e}"));
    format!("[{}, {}]", f(lo), f(hi))
}

fn print_summary(report: &ExperimentReport) {
    for r in &report.runs {
        println!(
            "run lambda={} {} steps={} stop={:?}",
            r.lambda, r.label, r.steps, r.stop
        );
    }
    for m in &report.derived.metrics {
        println!("metric {} ({}) = {:.6e}", m.name, m.scope, m.value);
    }
    for n in &report.derived.notes {
        println!("note {n}");
    }
    for v in &report.derived.verdicts {
        println!(
            "{} {} ({}) = {:.6e} in {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.scope,
            v.value,
            bracket(v.lo, v.hi)
        );
    }
}
