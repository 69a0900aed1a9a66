//! Sweep expansion and deterministic parallel execution.

use crate::config::{
    build_network, config_hash, routing_service, ExperimentConfig, ModeCfg,
};
use crate::CliError;
use flitsim::engine::{seed_rngs, Engine, EngineError, EngineOptions, StopRule, TraceRow};
use flitsim::metrics::RunRecord;
use flitsim::routing::{build_router, RoutingSpec};
use flitsim::traffic::{build_traffic, ModeSpec, PatternSpec};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// One simulation point of a sweep.
#[derive(Debug, Clone)]
pub struct Job {
    pub routing: RoutingSpec,
    pub pattern: PatternSpec,
    /// Offered Bernoulli load; None for run-to-completion modes.
    pub load: Option<f64>,
    pub seed: u64,
}

impl Job {
    pub fn describe(&self) -> String {
        match self.load {
            Some(l) => format!(
                "routing={} pattern={} load={} seed={}",
                self.routing, self.pattern, l, self.seed
            ),
            None => format!(
                "routing={} pattern={} seed={}",
                self.routing, self.pattern, self.seed
            ),
        }
    }
}

/// The canonical job grid: routing-major, then pattern, load, seed.
pub fn expand_jobs(cfg: &ExperimentConfig) -> Result<Vec<Job>, CliError> {
    let mut jobs = Vec::new();
    for routing in &cfg.routings {
        let routing: RoutingSpec = routing
            .parse()
            .map_err(|e| CliError::Config(format!("routing {routing:?}: {e}")))?;
        for pattern in &cfg.patterns {
            let pattern: PatternSpec = pattern
                .parse()
                .map_err(|e| CliError::Config(format!("pattern {pattern:?}: {e}")))?;
            let finite =
                matches!(pattern, PatternSpec::Kernel { .. })
                    || matches!(cfg.mode, ModeCfg::FixedBurst { .. });
            let loads: Vec<Option<f64>> = if finite {
                vec![None]
            } else {
                match &cfg.mode {
                    ModeCfg::Bernoulli { loads } => loads.iter().copied().map(Some).collect(),
                    ModeCfg::FixedBurst { .. } => vec![None],
                }
            };
            for load in loads {
                for seed in 1..=cfg.seeds {
                    jobs.push(Job {
                        routing: routing.clone(),
                        pattern: pattern.clone(),
                        load,
                        seed,
                    });
                }
            }
        }
    }
    Ok(jobs)
}

fn engine_failure(job: &Job, e: EngineError) -> CliError {
    let what = format!("{} failed: {e}", job.describe());
    match e {
        EngineError::Deadlock { .. } => CliError::Deadlock(what),
        _ => CliError::Invariant(what),
    }
}

/// Run one point; optionally collect the per-packet trace.
pub fn execute_job(
    cfg: &ExperimentConfig,
    job: &Job,
    trace_out: Option<&mut Vec<TraceRow>>,
) -> Result<RunRecord, CliError> {
    let service = routing_service(&job.routing);
    let net = build_network(&cfg.topology, service.as_ref())?;
    let router = build_router(&job.routing, net.clone())
        .map_err(|e| CliError::Config(format!("{}: {e}", job.describe())))?;
    let mode = match job.load {
        Some(load) => ModeSpec::Bernoulli { load },
        None => match &cfg.mode {
            ModeCfg::FixedBurst { packets_per_server } => {
                ModeSpec::FixedBurst { packets_per_server: *packets_per_server }
            }
            // Kernel patterns drive themselves; the mode is a placeholder.
            ModeCfg::Bernoulli { .. } => ModeSpec::FixedBurst { packets_per_server: 0 },
        },
    };
    let (mut traffic_rng, alloc_rng, route_rng) = seed_rngs(job.seed);
    let traffic = build_traffic(&job.pattern, &mode, &net, &(&cfg.kernel).into(), &mut traffic_rng)
        .map_err(|e| CliError::Config(format!("{}: {e}", job.describe())))?;
    let stop = match job.load {
        Some(_) => StopRule::Cycles {
            total: cfg.warmup() + cfg.measure_cycles,
            warmup: cfg.warmup(),
        },
        None => StopRule::ToCompletion { max_cycles: cfg.max_cycles },
    };
    let opts = EngineOptions { trace: trace_out.is_some(), ..EngineOptions::default() };
    let engine = Engine::new(
        net,
        router,
        traffic,
        traffic_rng,
        alloc_rng,
        route_rng,
        opts,
        Engine::window_of(&stop),
    );
    let out = engine.run(stop).map_err(|e| engine_failure(job, e))?;
    if let Some(rows) = trace_out {
        *rows = out.trace;
    }
    let m = &out.metrics;
    let split = m.utilization_split();
    Ok(RunRecord {
        config_hash: format!("{:016x}", config_hash(cfg)),
        seed: job.seed,
        routing: job.routing.to_string(),
        pattern: job.pattern.to_string(),
        offered: job.load.unwrap_or(1.0),
        accepted: m.accepted(),
        mean_latency: m.mean_latency(),
        p99: m.percentile(0.99),
        p999: m.percentile(0.999),
        p9999: m.percentile(0.9999),
        jain: m.jain().unwrap_or(f64::NAN),
        hops: m.hop_distribution(),
        util_main: split.main,
        util_service: split.service,
        cycles_to_finish: out.cycles_to_finish,
    })
}

/// Execute a job list on `workers` threads. Results keep job order; the
/// lowest-indexed failure wins so reruns report deterministically.
pub fn run_jobs(
    cfg: &ExperimentConfig,
    jobs: &[Job],
    workers: usize,
) -> Result<Vec<RunRecord>, CliError> {
    let workers = workers.clamp(1, jobs.len().max(1));
    if workers == 1 {
        return jobs.iter().map(|j| execute_job(cfg, j, None)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunRecord, CliError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let res = execute_job(cfg, &jobs[i], None);
                slots.lock().unwrap()[i] = Some(res);
            });
        }
    });
    let mut rows = Vec::with_capacity(jobs.len());
    for slot in slots.into_inner().unwrap() {
        rows.push(slot.expect("every job ran")?);
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[RunRecord]) -> String {
    let mut out = String::from(flitsim::metrics::CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("src_server,dst_server,birth,delivered,hops\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.src_server, r.dst_server, r.birth, r.delivered, r.hops
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(routings: &[&str], patterns: &[&str], loads: &[f64], seeds: u64) -> ExperimentConfig {
        serde_json::from_value(serde_json::json!({
            "name": "tiny",
            "topology": { "kind": "full_mesh", "switches": 4, "servers_per_switch": 2 },
            "routings": routings,
            "patterns": patterns,
            "mode": { "bernoulli": { "loads": loads } },
            "measure_cycles": 600,
            "warmup_cycles": 200,
            "max_cycles": 200000,
            "seeds": seeds
        }))
        .unwrap()
    }

    #[test]
    fn job_grid_is_routing_major_and_kernels_self_drive() {
        let cfg = tiny(
            &["min", "valiant"],
            &["uniform", "kernel(allreduce,linear)"],
            &[0.1, 0.2],
            2,
        );
        let jobs = expand_jobs(&cfg).unwrap();
        // Per routing: 2 loads x 2 seeds for uniform, then 2 seeds for the
        // kernel, which carries no load axis.
        assert_eq!(jobs.len(), 2 * (4 + 2));
        assert!(jobs[..6].iter().all(|j| j.routing.to_string() == "min"));
        assert_eq!(
            jobs[..4].iter().map(|j| (j.load.unwrap(), j.seed)).collect::<Vec<_>>(),
            vec![(0.1, 1), (0.1, 2), (0.2, 1), (0.2, 2)]
        );
        assert!(jobs[4].load.is_none() && jobs[5].load.is_none());
        assert_eq!((jobs[4].seed, jobs[5].seed), (1, 2));
    }

    #[test]
    fn fixed_burst_runs_ignore_the_load_axis() {
        let mut cfg = tiny(&["min"], &["shift"], &[0.5], 1);
        cfg.mode = ModeCfg::FixedBurst { packets_per_server: 3 };
        let jobs = expand_jobs(&cfg).unwrap();
        assert_eq!(jobs.len(), 1);
        assert!(jobs[0].load.is_none());
        let row = execute_job(&cfg, &jobs[0], None).unwrap();
        assert!(row.cycles_to_finish.unwrap() > 0, "burst runs report completion time");
    }

    #[test]
    fn identical_seeds_reproduce_identical_rows() {
        let cfg = tiny(&["ugal"], &["uniform"], &[0.4], 1);
        let jobs = expand_jobs(&cfg).unwrap();
        let a = execute_job(&cfg, &jobs[0], None).unwrap();
        let b = execute_job(&cfg, &jobs[0], None).unwrap();
        assert_eq!(a.csv_row(), b.csv_row());
    }

    #[test]
    fn worker_pool_matches_serial_results() {
        let cfg = tiny(&["min", "valiant"], &["uniform"], &[0.2, 0.4], 1);
        let jobs = expand_jobs(&cfg).unwrap();
        let serial = run_jobs(&cfg, &jobs, 1).unwrap();
        let pooled = run_jobs(&cfg, &jobs, 3).unwrap();
        assert_eq!(rows_to_csv(&serial), rows_to_csv(&pooled));
    }

    #[test]
    fn csv_starts_with_the_header_and_keeps_row_order() {
        let cfg = tiny(&["min"], &["uniform"], &[0.1, 0.3], 1);
        let jobs = expand_jobs(&cfg).unwrap();
        let rows = run_jobs(&cfg, &jobs, 1).unwrap();
        let csv = rows_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(flitsim::metrics::CSV_HEADER));
        let offered: Vec<&str> =
            lines.map(|l| l.split(',').nth(4).unwrap()).collect();
        assert_eq!(offered, vec!["0.1", "0.3"]);
    }

    #[test]
    fn traces_follow_delivered_packets() {
        let cfg = tiny(&["min"], &["uniform"], &[0.3], 1);
        let jobs = expand_jobs(&cfg).unwrap();
        let mut trace = Vec::new();
        execute_job(&cfg, &jobs[0], Some(&mut trace)).unwrap();
        assert!(!trace.is_empty());
        let csv = trace_to_csv(&trace);
        assert!(csv.starts_with("src_server,dst_server,birth,delivered,hops\n"));
        assert_eq!(csv.lines().count(), trace.len() + 1);
        for row in &trace {
            assert!(row.delivered > row.birth, "delivery follows birth");
            assert!(row.hops <= 2, "two-hop fabric");
        }
    }
}
