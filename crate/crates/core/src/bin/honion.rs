use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use honion_core::collector::{self, parse_collector_log, CollectorConfig, ParseMode};
use honion_core::detector::DetectorConfig;
use honion_core::pipeline::{self, MethodChoice, DETECTION_FILE};
use honion_core::planner::{required_honions_strict, CoveragePlan};
use honion_core::records::{read_json, write_json, write_jsonl};
use honion_core::report::ReportFormat;
use honion_core::simulator::{run_simulation, SimulationConfig};

#[derive(Parser)]
#[command(name = "honion", version, about = "Honion deployment planning, simulation and snooper detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Greedy,
    Exact,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Honions needed to cover a fraction of the HSDir ring
    Plan {
        #[arg(long)]
        hsdirs: u64,
        #[arg(long)]
        coverage: f64,
        /// Round up instead of to the nearest integer
        #[arg(long)]
        strict: bool,
    },
    /// Run a simulation and write its artifacts to a directory
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the attribution graph from placements.jsonl and visits.jsonl
    BuildGraph {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to the input directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find the smallest relay set explaining every visit
    Detect {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value = "exact")]
        method: MethodArg,
        /// Defaults to detection.json next to the graph
        #[arg(long)]
        out: Option<PathBuf>,
        /// Leave runtimes out so that output is reproducible
        #[arg(long)]
        no_timings: bool,
        /// Largest component (in HSDirs) solved exactly
        #[arg(long, default_value_t = 40)]
        cap: usize,
        /// Fail instead of falling back to greedy above the cap
        #[arg(long)]
        no_fallback: bool,
    },
    /// Write report tables for a run directory
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        /// Defaults to <in>/report
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve honion listeners and log every request
    Collect {
        #[arg(long)]
        config: PathBuf,
    },
    /// Convert a collector log into visits.jsonl
    ParseLog {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip malformed lines instead of failing
        #[arg(long)]
        skip_malformed: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan {
            hsdirs,
            coverage,
            strict,
        } => {
            let mut plan = CoveragePlan::new(hsdirs, coverage)?;
            if strict {
                plan.honions_required = required_honions_strict(hsdirs, coverage)?;
                plan.predicted_coverage = honion_core::planner::coverage_probability(hsdirs, plan.honions_required)?;
            }
            println!("{}", serde_json::to_string_pretty(&plan)?);
        }
        Command::Simulate { config, out } => {
            let cfg: SimulationConfig = read_json(&config)?;
            let output = run_simulation(&cfg)?;
            output.write_to_dir(&out)?;
            log::info!(
                "{} honions, {} placements, {} visits",
                output.honions.len(),
                output.placements.len(),
                output.visits.len()
            );
        }
        Command::BuildGraph { input, out } => {
            let out = out.unwrap_or_else(|| input.clone());
            let g = pipeline::build_graph_files(&input, &out)?;
            log::info!(
                "{} hsdirs, {} instances, {} edges",
                g.hsdirs().len(),
                g.instances().len(),
                g.edge_count()
            );
        }
        Command::Detect {
            graph,
            method,
            out,
            no_timings,
            cap,
            no_fallback,
        } => {
            let g = pipeline::load_graph(&graph)?;
            let choice = match method {
                MethodArg::Greedy => MethodChoice::Greedy,
                MethodArg::Exact => MethodChoice::Exact,
                MethodArg::Both => MethodChoice::Both,
            };
            let cfg = DetectorConfig {
                component_cap: cap,
                allow_fallback: !no_fallback,
            };
            let report = pipeline::detect(&g, choice, &cfg, !no_timings)?;
            let out = out.unwrap_or_else(|| graph.with_file_name(DETECTION_FILE));
            write_json(&out, &report)?;
            for r in &report.results {
                println!(
                    "{:?}: {} relays (lower bound {}, optimal {})",
                    r.method,
                    r.size(),
                    r.lower_bound,
                    r.proven_optimal
                );
            }
        }
        Command::Report { input, format, out } => {
            let out = out.unwrap_or_else(|| input.join("report"));
            let format = match format {
                FormatArg::Csv => ReportFormat::Csv,
                FormatArg::Json => ReportFormat::Json,
            };
            for p in pipeline::report_run(&input, format, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Collect { config } => {
            let cfg: CollectorConfig = read_json(&config)?;
            collector::serve(&cfg)?;
        }
        Command::ParseLog {
            log,
            out,
            skip_malformed,
        } => {
            let mode = if skip_malformed { ParseMode::Skip } else { ParseMode::Strict };
            let parsed = parse_collector_log(&log, mode)?;
            for (line, msg) in &parsed.errors {
                log::warn!("{}:{line}: skipped: {msg}", log.display());
            }
            write_jsonl(&out, &parsed.visits)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
