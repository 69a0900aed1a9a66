//! Experiment CLI: config-driven runs and sweeps, combinatorial
//! verification, throughput estimates, and topology export.

mod config;
mod runner;
mod verify;

use clap::{Parser, Subcommand};
use config::{load_config, Profile};
use flitsim::analysis::estimate_curve;
use flitsim::topology::{build_complete_graph, embed_service, export_topology, ServiceKind};
use serde::Deserialize;
use std::path::PathBuf;
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("deadlock detected: {0}")]
    Deadlock(String),
    #[error("verification reported FAIL")]
    VerifyFailed,
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Invariant(_) | CliError::VerifyFailed => 3,
            CliError::Deadlock(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "flitsim",
    about = "Flit-level full-mesh network simulator and verification toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a single point of a config (first routing/pattern/load unless
    /// overridden) and print its CSV row.
    Run {
        #[arg(long)]
        config: String,
        /// Profile within a figure bundle: full or ci.
        #[arg(long, default_value = "full")]
        profile: String,
        #[arg(long)]
        routing: Option<String>,
        #[arg(long)]
        pattern: Option<String>,
        #[arg(long)]
        load: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a per-packet delivery trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run every (routing, pattern, load, seed) point of a config.
    Sweep {
        #[arg(long)]
        config: String,
        #[arg(long, default_value = "full")]
        profile: String,
        /// Override the config's seed count.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an exact property over a switch-count range, e.g.
    /// `verify theorem1 3..64` or `verify cdg:unrestricted 4`.
    Verify {
        subject: String,
        range: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form saturation estimates per service family and size.
    Estimate {
        /// JSON file with {"services": [...], "sizes": [...]}.
        #[arg(long)]
        config: Option<String>,
        /// Service kind; bare "hyperx" auto-factors each size.
        #[arg(long)]
        service: Option<String>,
        /// Size range A..B (inclusive) or single N.
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a full-mesh topology (and optional embedding) as JSON.
    ExportTopology {
        #[arg(long)]
        switches: usize,
        #[arg(long, default_value_t = 1)]
        servers_per_switch: usize,
        #[arg(long)]
        service: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_profile(s: &str) -> Result<Profile, CliError> {
    s.parse().map_err(CliError::Config)
}

/// "hyperx" without dims means factor each size near-square.
fn parse_service_family(s: &str) -> Result<ServiceKind, CliError> {
    if s == "hyperx" {
        return Ok(ServiceKind::HyperX(Vec::new()));
    }
    s.parse()
        .map_err(|e: flitsim::topology::TopologyError| CliError::Config(e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateCfg {
    services: Vec<String>,
    sizes: Vec<usize>,
}

fn cmd_run(
    config: String,
    profile: String,
    routing: Option<String>,
    pattern: Option<String>,
    load: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    trace: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg = load_config(&config, parse_profile(&profile)?)?;
    if let Some(r) = routing {
        cfg.routings = vec![r];
    } else {
        cfg.routings.truncate(1);
    }
    if let Some(p) = pattern {
        cfg.patterns = vec![p];
    } else {
        cfg.patterns.truncate(1);
    }
    if let Some(l) = load {
        if let config::ModeCfg::Bernoulli { loads } = &mut cfg.mode {
            *loads = vec![l];
        }
    } else if let config::ModeCfg::Bernoulli { loads } = &mut cfg.mode {
        loads.truncate(1);
    }
    cfg.seeds = 1;
    config::validate(&cfg)?;
    let mut jobs = runner::expand_jobs(&cfg)?;
    let mut job = jobs.remove(0);
    job.seed = seed.unwrap_or(1);
    let mut trace_rows = Vec::new();
    let record = runner::execute_job(&cfg, &job, trace.is_some().then_some(&mut trace_rows))?;
    emit(out.as_ref(), &runner::rows_to_csv(std::slice::from_ref(&record)))?;
    if let Some(path) = trace {
        emit(Some(&path), &runner::trace_to_csv(&trace_rows))?;
    }
    Ok(())
}

fn cmd_sweep(
    config: String,
    profile: String,
    seeds: Option<u64>,
    workers: usize,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg = load_config(&config, parse_profile(&profile)?)?;
    if let Some(s) = seeds {
        cfg.seeds = s;
        config::validate(&cfg)?;
    }
    let jobs = runner::expand_jobs(&cfg)?;
    let rows = runner::run_jobs(&cfg, &jobs, workers)?;
    emit(out.as_ref(), &runner::rows_to_csv(&rows))
}

fn cmd_verify(subject: String, range: String, out: Option<PathBuf>) -> Result<(), CliError> {
    let subject = verify::parse_subject(&subject)?;
    let range = verify::parse_range(&range)?;
    let mut report = String::new();
    let all_pass = verify::run_verify(&subject, range, &mut report)?;
    emit(out.as_ref(), &report)?;
    if all_pass {
        Ok(())
    } else {
        Err(CliError::VerifyFailed)
    }
}

fn cmd_estimate(
    config: Option<String>,
    service: Option<String>,
    sizes: Option<String>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let (services, size_list): (Vec<String>, Vec<usize>) = match (config, service, sizes) {
        (Some(path), None, None) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("cannot read {path}: {e}")))?;
            let cfg: EstimateCfg = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{path}: {e}")))?;
            (cfg.services, cfg.sizes)
        }
        (None, Some(service), Some(sizes)) => {
            let range = verify::parse_range(&sizes)?;
            (vec![service], range.collect())
        }
        _ => {
            return Err(CliError::Config(
                "estimate needs either --config or both --service and --sizes".into(),
            ))
        }
    };
    let mut csv = String::from("service,n,p,estimate\n");
    for name in &services {
        let kind = parse_service_family(name)?;
        for pt in estimate_curve(&kind, size_list.iter().copied()) {
            csv.push_str(&format!("{},{},{},{}\n", pt.kind, pt.n, pt.p, pt.estimate));
        }
    }
    emit(out.as_ref(), &csv)
}

fn cmd_export(
    switches: usize,
    servers_per_switch: usize,
    service: Option<String>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let fm = build_complete_graph(switches, servers_per_switch)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let emb = service
        .map(|s| -> Result<_, CliError> {
            let kind = parse_service_family(&s)?;
            embed_service(&fm, &kind).map_err(|e| CliError::Config(e.to_string()))
        })
        .transpose()?;
    let export = export_topology(&fm, emb.as_ref());
    let text = serde_json::to_string_pretty(&export)
        .map_err(|e| CliError::Io(e.to_string()))?;
    emit(out.as_ref(), &(text + "\n"))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Run { config, profile, routing, pattern, load, seed, out, trace } => {
            cmd_run(config, profile, routing, pattern, load, seed, out, trace)
        }
        Cmd::Sweep { config, profile, seeds, workers, out } => {
            cmd_sweep(config, profile, seeds, workers, out)
        }
        Cmd::Verify { subject, range, out } => cmd_verify(subject, range, out),
        Cmd::Estimate { config, service, sizes, out } => {
            cmd_estimate(config, service, sizes, out)
        }
        Cmd::ExportTopology { switches, servers_per_switch, service, out } => {
            cmd_export(switches, servers_per_switch, service, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
