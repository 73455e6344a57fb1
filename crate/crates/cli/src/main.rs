use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cfs_sim::metrics::{export, write_csv, ExportFormat};
use cfs_sim::scenario::{parse_scenario, split_variant, ScenarioConfig};
use cfs_sim::sim::run;
use cfs_sim::sweep::{compare, sweep, Knob, SweepSpec};
use cfs_sim::SimError;
use clap::{Parser, Subcommand};

/// Deterministic simulator for CFS shares/quota, placement, autoscaling and billing.
#[derive(Debug, Parser)]
#[command(name = "cfs-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its report.
    Run {
        /// Scenario file, optionally suffixed with `#variant`.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Find the cheapest knob setting that meets an SLO attainment target.
    Sweep {
        #[arg(long)]
        scenario: String,
        /// One of clim, creq, cputhresh, t-cong.
        #[arg(long)]
        knob: Knob,
        /// Comma-separated ascending values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long)]
        slo_target: f64,
        #[arg(long)]
        deployment: Option<String>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write sweep.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run two scenarios side by side.
    Compare {
        a: String,
        b: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(spec: &str, variant: Option<&str>, seed: Option<u64>) -> Result<ScenarioConfig, SimError> {
    let (path, suffix) = split_variant(spec);
    let variant = match (variant, suffix) {
        (Some(_), Some(_)) => return Err(SimError::config(format!("{spec}: variant given twice"))),
        (v, s) => v.or(s),
    };
    let mut cfg = parse_scenario(Path::new(path), variant)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.3}"))
}

fn execute(cli: Cli) -> Result<(), SimError> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            format,
            variant,
        } => {
            let cfg = load(&scenario, variant.as_deref(), seed)?;
            let report = run(&cfg)?;
            export(&report, format, &out)?;
            for d in &report.deployments {
                let s = &d.summary;
                println!(
                    "{}: p99 {} ms, attainment {}, creq-s {:.1}, throttles {}, actions {}",
                    s.deployment,
                    fmt_opt(s.p99_ms),
                    fmt_opt(s.slo_attainment),
                    s.creq_seconds,
                    s.throttle_events,
                    d.actions
                );
            }
            Ok(())
        }
        Command::Sweep {
            scenario,
            knob,
            grid,
            slo_target,
            deployment,
            variant,
            seed,
            out,
        } => {
            let cfg = load(&scenario, variant.as_deref(), seed)?;
            let spec = SweepSpec {
                knob,
                grid,
                slo_target,
                deployment,
            };
            let report = sweep(&cfg, &spec)?;
            println!("deployment {} knob {}", report.deployment, report.knob);
            for (i, p) in report.points.iter().enumerate() {
                let mark = if report.best == Some(i) {
                    " <- best"
                } else {
                    ""
                };
                println!(
                    "{:>10} creq-s {:>12.1} attainment {} p99 {}{mark}",
                    p.value,
                    p.creq_seconds,
                    fmt_opt(p.slo_attainment),
                    fmt_opt(p.p99_ms)
                );
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| SimError::io(&dir, e))?;
                write_csv(&dir.join("sweep.csv"), &report.points)?;
            }
            match report.best_point() {
                Some(_) => Ok(()),
                None => Err(SimError::SweepInfeasible { target: slo_target }),
            }
        }
        Command::Compare { a, b, out } => {
            let ca = load(&a, None, None)?;
            let cb = load(&b, None, None)?;
            let cmp = compare(&ca, &cb)?;
            std::fs::create_dir_all(&out).map_err(|e| SimError::io(&out, e))?;
            write_csv(&out.join("compare.csv"), &cmp.rows)?;
            export(&cmp.a, ExportFormat::Csv, &out.join("a"))?;
            export(&cmp.b, ExportFormat::Csv, &out.join("b"))?;
            for r in &cmp.rows {
                println!(
                    "{}: p99 {} | {} ms, creq-s {} | {}, actions {:?} | {:?}",
                    r.deployment,
                    fmt_opt(r.p99_ms_a),
                    fmt_opt(r.p99_ms_b),
                    fmt_opt(r.creq_seconds_a),
                    fmt_opt(r.creq_seconds_b),
                    r.actions_a,
                    r.actions_b
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            // usage errors are configuration errors; help and version are not errors
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
