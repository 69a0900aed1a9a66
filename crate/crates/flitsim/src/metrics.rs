//! Run measurement: throughput, latency, hops, fairness, link utilization.
//!
//! One [`MetricsAccumulator`] per run collects events inside a measurement
//! window of cycles. Throughput and link busy fractions count events whose
//! cycle falls in the window; latency and hop samples belong to packets born
//! inside it, so warmup traffic never skews the tail statistics.

use crate::topology::ArcClass;
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("fairness is undefined for an all-zero load vector")]
    AllZeroLoads,
}

/// Jain fairness of nonnegative per-server loads: (sum x)^2 / (n * sum x^2),
/// 1.0 for perfect equity, 1/n when a single server carries everything.
pub fn jain_index(xs: &[f64]) -> Result<f64, MetricsError> {
    let sum: f64 = xs.iter().sum();
    let sq: f64 = xs.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        return Err(MetricsError::AllZeroLoads);
    }
    Ok(sum * sum / (xs.len() as f64 * sq))
}

/// Nearest-rank percentile of unsorted samples.
pub fn latency_percentile(samples: &[u64], p: f64) -> u64 {
    debug_assert!(!samples.is_empty());
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Mean busy fraction per arc class. `service` is absent when the network
/// has no service arcs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilizationSplit {
    pub main: f64,
    pub service: Option<f64>,
}

/// Per-run event collector.
pub struct MetricsAccumulator {
    window: Range<u64>,
    injected_flits: Vec<u64>,
    delivered_flits: Vec<u64>,
    latency_samples: Vec<u64>,
    hop_buckets: [u64; 5],
    arc_busy: Vec<u64>,
    arc_is_service: Vec<bool>,
}

impl MetricsAccumulator {
    pub fn new(servers: usize, arc_classes: &[ArcClass], window: Range<u64>) -> Self {
        assert!(window.end > window.start, "empty measurement window");
        MetricsAccumulator {
            window,
            injected_flits: vec![0; servers],
            delivered_flits: vec![0; servers],
            latency_samples: Vec::new(),
            hop_buckets: [0; 5],
            arc_busy: vec![0; arc_classes.len()],
            arc_is_service: arc_classes.iter().map(|&c| c == ArcClass::Service).collect(),
        }
    }

    fn in_window(&self, cycle: u64) -> bool {
        self.window.contains(&cycle)
    }

    pub fn measured_cycles(&self) -> u64 {
        self.window.end - self.window.start
    }

    /// Shrink the window end, e.g. to the cycle a finite run completed, so
    /// per-cycle rates divide by time actually simulated.
    pub fn truncate_window(&mut self, end: u64) {
        assert!(end > self.window.start, "window would be empty");
        self.window.end = self.window.end.min(end);
    }

    /// One flit left `server`'s source queue into the network at `cycle`.
    pub fn record_injection(&mut self, server: usize, cycle: u64) {
        if self.in_window(cycle) {
            self.injected_flits[server] += 1;
        }
    }

    /// A whole packet finished ejecting at `dst_server`. Throughput counts it
    /// by delivery time; latency and hops count it by birth time.
    pub fn record_delivery(
        &mut self,
        dst_server: usize,
        birth: u64,
        now: u64,
        hops: usize,
        flits: u64,
    ) {
        if self.in_window(now) {
            self.delivered_flits[dst_server] += flits;
            self.hop_buckets[hops.min(4)] += 1;
        }
        if self.in_window(birth) {
            self.latency_samples.push(now - birth);
        }
    }

    /// One flit crossed `arc` during `cycle`.
    pub fn record_arc_busy(&mut self, arc: usize, cycle: u64) {
        if self.in_window(cycle) {
            self.arc_busy[arc] += 1;
        }
    }

    /// Accepted load in flits per server per cycle, in [0, 1].
    pub fn accepted(&self) -> f64 {
        let total: u64 = self.delivered_flits.iter().sum();
        total as f64 / (self.delivered_flits.len() as f64 * self.measured_cycles() as f64)
    }

    /// Jain fairness over injected flits per server.
    pub fn jain(&self) -> Result<f64, MetricsError> {
        let xs: Vec<f64> = self.injected_flits.iter().map(|&x| x as f64).collect();
        jain_index(&xs)
    }

    /// Relative hop frequency; bucket 0 is same-switch delivery, bucket 4
    /// pools every count of four or more. All zeros before any delivery.
    pub fn hop_distribution(&self) -> [f64; 5] {
        let total: u64 = self.hop_buckets.iter().sum();
        if total == 0 {
            return [0.0; 5];
        }
        let mut out = [0.0; 5];
        for (o, &b) in out.iter_mut().zip(&self.hop_buckets) {
            *o = b as f64 / total as f64;
        }
        out
    }

    pub fn mean_latency(&self) -> f64 {
        if self.latency_samples.is_empty() {
            return 0.0;
        }
        self.latency_samples.iter().sum::<u64>() as f64 / self.latency_samples.len() as f64
    }

    pub fn percentile(&self, p: f64) -> u64 {
        if self.latency_samples.is_empty() {
            return 0;
        }
        latency_percentile(&self.latency_samples, p)
    }

    pub fn latency_samples(&self) -> &[u64] {
        &self.latency_samples
    }

    pub fn utilization_split(&self) -> UtilizationSplit {
        let cycles = self.measured_cycles() as f64;
        let mut sums = [0u64; 2];
        let mut counts = [0usize; 2];
        for (busy, &svc) in self.arc_busy.iter().zip(&self.arc_is_service) {
            let side = svc as usize;
            sums[side] += busy;
            counts[side] += 1;
        }
        let frac = |side: usize| sums[side] as f64 / (counts[side] as f64 * cycles);
        UtilizationSplit {
            main: if counts[0] == 0 { 0.0 } else { frac(0) },
            service: (counts[1] > 0).then(|| frac(1)),
        }
    }
}

/// One result row of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub routing: String,
    pub pattern: String,
    pub offered: f64,
    pub accepted: f64,
    pub mean_latency: f64,
    pub p99: u64,
    pub p999: u64,
    pub p9999: u64,
    pub jain: f64,
    pub hops: [f64; 5],
    pub util_main: f64,
    pub util_service: Option<f64>,
    pub cycles_to_finish: Option<u64>,
}

pub const CSV_HEADER: &str = "config_hash,seed,routing,pattern,offered,accepted,mean_latency,\
p99,p999,p9999,jain,hops_0,hops_1,hops_2,hops_3,hops_4,util_main,util_service,cycles_to_finish";

impl RunRecord {
    /// One CSV line, no trailing newline. Optional fields render empty.
    pub fn csv_row(&self) -> String {
        let opt_u = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        let opt_f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.config_hash,
            self.seed,
            self.routing,
            self.pattern,
            self.offered,
            self.accepted,
            self.mean_latency,
            self.p99,
            self.p999,
            self.p9999,
            self.jain,
            self.hops[0],
            self.hops[1],
            self.hops[2],
            self.hops[3],
            self.hops[4],
            self.util_main,
            opt_f(self.util_service),
            opt_u(self.cycles_to_finish),
        )
    }
}
