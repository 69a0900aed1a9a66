//! Traffic patterns, generation modes, and application-kernel drivers.
//!
//! A [`TrafficSource`] feeds the engine packet births and is told about every
//! delivery, which lets kernel drivers run their per-process phase barriers.
//! Synthetic patterns map source to destination statically or statistically;
//! kernels walk a phase schedule where a process enters its next phase only
//! after all of its current-phase sends are delivered and all expected
//! receives have arrived.

use crate::topology::{near_square_factors, Network};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::RngCore;
use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Flits per packet; a logical message of k packets emits k births.
pub const FLITS_PER_PACKET: u32 = 16;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("unknown traffic pattern `{0}`")]
    UnknownPattern(String),
    #[error("allreduce needs a power-of-two process count, got {0}")]
    AllreduceNotPowerOfTwo(usize),
    #[error("pattern `{pattern}` needs at least {needed} servers, network has {actual}")]
    TooFewServers { pattern: String, needed: usize, actual: usize },
}

/// Application kernel communication shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelName {
    All2All,
    Stencil2d,
    Stencil3d,
    Fft3d,
    Allreduce,
}

impl fmt::Display for KernelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelName::All2All => "all2all",
            KernelName::Stencil2d => "stencil2d",
            KernelName::Stencil3d => "stencil3d",
            KernelName::Fft3d => "fft3d",
            KernelName::Allreduce => "allreduce",
        })
    }
}

/// Process-to-server assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mapping {
    /// Process p runs on server p.
    Linear,
    /// A seeded uniform permutation of servers.
    Random,
}

impl fmt::Display for Mapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mapping::Linear => "linear",
            Mapping::Random => "random",
        })
    }
}

/// Named traffic pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternSpec {
    /// Fresh uniform destination over all other servers per message.
    Uniform,
    /// Random switch permutation without fixed points; destination server
    /// uniform within the mapped switch.
    Rsp,
    /// One uniform destination server drawn per source at setup.
    FixedRandom,
    /// Destination switch = source switch + 1 (mod n).
    Shift,
    /// Destination switch = -(source switch) - 1 (mod n).
    Complement,
    /// Phase-structured application kernel.
    Kernel { name: KernelName, mapping: Mapping },
}

impl fmt::Display for PatternSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatternSpec::Uniform => write!(f, "uniform"),
            PatternSpec::Rsp => write!(f, "rsp"),
            PatternSpec::FixedRandom => write!(f, "fixed_random"),
            PatternSpec::Shift => write!(f, "shift"),
            PatternSpec::Complement => write!(f, "complement"),
            PatternSpec::Kernel { name, mapping } => write!(f, "kernel({name},{mapping})"),
        }
    }
}

impl FromStr for PatternSpec {
    type Err = TrafficError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || TrafficError::UnknownPattern(s.into());
        match s {
            "uniform" => return Ok(PatternSpec::Uniform),
            "rsp" => return Ok(PatternSpec::Rsp),
            "fixed_random" => return Ok(PatternSpec::FixedRandom),
            "shift" => return Ok(PatternSpec::Shift),
            "complement" => return Ok(PatternSpec::Complement),
            _ => {}
        }
        let inner = s
            .strip_prefix("kernel(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let (name, mapping) = inner.split_once(',').ok_or_else(bad)?;
        let name = match name.trim() {
            "all2all" => KernelName::All2All,
            "stencil2d" => KernelName::Stencil2d,
            "stencil3d" => KernelName::Stencil3d,
            "fft3d" => KernelName::Fft3d,
            "allreduce" => KernelName::Allreduce,
            _ => return Err(bad()),
        };
        let mapping = match mapping.trim() {
            "linear" => Mapping::Linear,
            "random" => Mapping::Random,
            _ => return Err(bad()),
        };
        Ok(PatternSpec::Kernel { name, mapping })
    }
}

/// How packet births are scheduled for the synthetic patterns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeSpec {
    /// Per server per cycle, inject one packet with probability
    /// load / flits-per-packet, so `load` is in flits per server per cycle.
    Bernoulli { load: f64 },
    /// Every server emits a fixed packet budget as fast as it can drain.
    FixedBurst { packets_per_server: u32 },
}

/// Tuning for kernel drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelParams {
    /// Full schedule repetitions.
    pub iterations: u32,
    /// Packets per logical message (all kernels except allreduce).
    pub message_packets: u32,
    /// Allreduce vector size in packets; step sizes halve and double from it.
    pub allreduce_base: u32,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams { iterations: 1, message_packets: 1, allreduce_base: 64 }
    }
}

/// A traffic generator driving one run.
pub trait TrafficSource {
    /// Emit this cycle's packet births as (source server, destination server).
    fn generate(&mut self, cycle: u64, rng: &mut dyn RngCore, sink: &mut dyn FnMut(u32, u32));

    /// A packet from `src_server` to `dst_server` finished ejecting.
    fn on_delivered(&mut self, src_server: u32, dst_server: u32, cycle: u64);

    /// All traffic emitted and every emitted packet delivered. Open-ended
    /// sources never finish.
    fn finished(&self) -> bool;

    /// Whether the source has a finite schedule worth running to completion.
    fn is_finite(&self) -> bool;
}

/// Destination map for the synthetic patterns.
enum DestMap {
    Uniform,
    /// Destination switch per source switch.
    SwitchMap(Vec<u32>),
    /// Destination server per source server.
    ServerMap(Vec<u32>),
}

struct SyntheticTraffic {
    servers: u32,
    servers_per_switch: u32,
    map: DestMap,
    mode: ModeSpec,
    /// Packets still to emit per server (burst mode).
    remaining: Vec<u32>,
    emitted: u64,
    delivered: u64,
}

impl SyntheticTraffic {
    fn destination(&self, src: u32, rng: &mut dyn RngCore) -> u32 {
        let sps = self.servers_per_switch;
        match &self.map {
            DestMap::Uniform => {
                let d = rng.gen_range(0..self.servers - 1);
                if d >= src {
                    d + 1
                } else {
                    d
                }
            }
            DestMap::SwitchMap(switches) => {
                let dst_switch = switches[(src / sps) as usize];
                dst_switch * sps + rng.gen_range(0..sps)
            }
            DestMap::ServerMap(servers) => servers[src as usize],
        }
    }
}

impl TrafficSource for SyntheticTraffic {
    fn generate(&mut self, _cycle: u64, rng: &mut dyn RngCore, sink: &mut dyn FnMut(u32, u32)) {
        match self.mode {
            ModeSpec::Bernoulli { load } => {
                let p = load / FLITS_PER_PACKET as f64;
                for src in 0..self.servers {
                    if rng.gen::<f64>() < p {
                        let dst = self.destination(src, rng);
                        self.emitted += 1;
                        sink(src, dst);
                    }
                }
            }
            ModeSpec::FixedBurst { .. } => {
                // Drip one packet per server per cycle; the source queue
                // drains slower than that, so the burst is never starved.
                for src in 0..self.servers {
                    if self.remaining[src as usize] > 0 {
                        self.remaining[src as usize] -= 1;
                        let dst = self.destination(src, rng);
                        self.emitted += 1;
                        sink(src, dst);
                    }
                }
            }
        }
    }

    fn on_delivered(&mut self, _src: u32, _dst: u32, _cycle: u64) {
        self.delivered += 1;
    }

    fn finished(&self) -> bool {
        match self.mode {
            ModeSpec::Bernoulli { .. } => false,
            ModeSpec::FixedBurst { .. } => {
                self.remaining.iter().all(|&r| r == 0) && self.delivered == self.emitted
            }
        }
    }

    fn is_finite(&self) -> bool {
        matches!(self.mode, ModeSpec::FixedBurst { .. })
    }
}

/// Sample a switch permutation with no fixed point by redrawing until valid.
fn sample_derangement(n: usize, rng: &mut dyn RngCore) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..n as u32).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &v)| v != i as u32) {
            return perm;
        }
    }
}

/// Kernel communication schedule: per (process, phase) send lists and the
/// closed-form packet count each process expects to receive.
struct KernelShape {
    name: KernelName,
    processes: usize,
    /// Phases per iteration.
    phases_per_iter: usize,
    iterations: u32,
    message_packets: u32,
    allreduce_base: u32,
    /// Grid factorization for stencils and transposes.
    dims: Vec<usize>,
}

impl KernelShape {
    fn new(name: KernelName, processes: usize, params: &KernelParams) -> Result<Self, TrafficError> {
        let dims = match name {
            KernelName::Stencil2d | KernelName::Fft3d => near_square_factors(processes, 2),
            KernelName::Stencil3d => near_square_factors(processes, 3),
            _ => Vec::new(),
        };
        if name == KernelName::Allreduce && !processes.is_power_of_two() {
            return Err(TrafficError::AllreduceNotPowerOfTwo(processes));
        }
        let phases_per_iter = match name {
            KernelName::All2All => processes - 1,
            KernelName::Stencil2d | KernelName::Stencil3d => 1,
            KernelName::Fft3d => 2,
            KernelName::Allreduce => 2 * processes.trailing_zeros() as usize,
        };
        Ok(KernelShape {
            name,
            processes,
            phases_per_iter,
            iterations: params.iterations,
            message_packets: params.message_packets,
            allreduce_base: params.allreduce_base,
            dims,
        })
    }

    fn total_phases(&self) -> usize {
        self.phases_per_iter * self.iterations as usize
    }

    /// Allreduce step shape: (partner distance, packets) for a phase index
    /// within one iteration. Halving distances and sizes through the
    /// scatter-reduce, mirrored back up through the all-gather.
    fn allreduce_step(&self, phase: usize) -> (usize, u32) {
        let l = self.processes.trailing_zeros() as usize;
        if phase < l {
            let dist = 1usize << (l - 1 - phase);
            let size = (self.allreduce_base >> (phase + 1)).max(1);
            (dist, size)
        } else {
            let j = phase - l;
            let dist = 1usize << j;
            let size = (self.allreduce_base >> (l - j)).max(1);
            (dist, size)
        }
    }

    /// Send list of `p` in `phase` (absolute), as (destination process,
    /// packets).
    fn sends(&self, p: usize, phase: usize, out: &mut Vec<(usize, u32)>) {
        out.clear();
        let phase = phase % self.phases_per_iter;
        let n = self.processes;
        let m = self.message_packets;
        match self.name {
            KernelName::All2All => {
                out.push(((p + phase + 1) % n, m));
            }
            KernelName::Stencil2d => {
                let (g0, g1) = (self.dims[0], self.dims[1]);
                let (r, c) = (p / g1, p % g1);
                for dr in [g0 - 1, 0, 1] {
                    for dc in [g1 - 1, 0, 1] {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        out.push((((r + dr) % g0) * g1 + (c + dc) % g1, m));
                    }
                }
            }
            KernelName::Stencil3d => {
                let (g0, g1, g2) = (self.dims[0], self.dims[1], self.dims[2]);
                let (x, rest) = (p % g2, p / g2);
                let (y, z) = (rest % g1, rest / g1);
                for dz in [g0 - 1, 0, 1] {
                    for dy in [g1 - 1, 0, 1] {
                        for dx in [g2 - 1, 0, 1] {
                            if dx == 0 && dy == 0 && dz == 0 {
                                continue;
                            }
                            let q = ((z + dz) % g0 * g1 + (y + dy) % g1) * g2 + (x + dx) % g2;
                            out.push((q, m));
                        }
                    }
                }
            }
            KernelName::Fft3d => {
                let (g0, g1) = (self.dims[0], self.dims[1]);
                let (r, c) = (p / g1, p % g1);
                if phase == 0 {
                    for c2 in 0..g1 {
                        if c2 != c {
                            out.push((r * g1 + c2, m));
                        }
                    }
                } else {
                    for r2 in 0..g0 {
                        if r2 != r {
                            out.push((r2 * g1 + c, m));
                        }
                    }
                }
            }
            KernelName::Allreduce => {
                let (dist, size) = self.allreduce_step(phase);
                out.push((p ^ dist, size));
            }
        }
    }

    /// Packets `p` receives in `phase`; every shape here is symmetric enough
    /// for a closed form.
    fn recv_packets(&self, _p: usize, phase: usize) -> u64 {
        let phase = phase % self.phases_per_iter;
        let m = self.message_packets as u64;
        match self.name {
            KernelName::All2All => m,
            KernelName::Stencil2d => 8 * m,
            KernelName::Stencil3d => 26 * m,
            KernelName::Fft3d => {
                let peers = if phase == 0 { self.dims[1] - 1 } else { self.dims[0] - 1 };
                peers as u64 * m
            }
            KernelName::Allreduce => self.allreduce_step(phase).1 as u64,
        }
    }
}

/// Per-process barrier bookkeeping for a kernel run.
struct KernelTraffic {
    shape: KernelShape,
    /// Process p runs on server mapping[p].
    mapping: Vec<u32>,
    /// Inverse of `mapping`.
    process_of: Vec<u32>,
    phase: Vec<usize>,
    outstanding: Vec<u64>,
    /// Arrived packets bucketed by phase offset from the process's current
    /// phase; senders may run ahead, receivers never do.
    got: Vec<VecDeque<u64>>,
    /// Births waiting for the next generate call.
    send_queue: VecDeque<(u32, u32)>,
    /// Processes not yet past the final phase.
    active: usize,
    emitted: u64,
    delivered: u64,
    /// How many processes completed each phase, and when the last one did.
    phase_done_count: Vec<usize>,
    phase_completion_cycle: Vec<u64>,
}

impl KernelTraffic {
    fn new(
        name: KernelName,
        mapping_kind: Mapping,
        servers: usize,
        params: &KernelParams,
        rng: &mut dyn RngCore,
    ) -> Result<Self, TrafficError> {
        let shape = KernelShape::new(name, servers, params)?;
        let mapping: Vec<u32> = match mapping_kind {
            Mapping::Linear => (0..servers as u32).collect(),
            Mapping::Random => {
                let mut m: Vec<u32> = (0..servers as u32).collect();
                m.shuffle(rng);
                m
            }
        };
        let mut process_of = vec![0u32; servers];
        for (p, &s) in mapping.iter().enumerate() {
            process_of[s as usize] = p as u32;
        }
        let total = shape.total_phases();
        let mut driver = KernelTraffic {
            shape,
            mapping,
            process_of,
            phase: vec![0; servers],
            outstanding: vec![0; servers],
            got: vec![VecDeque::from([0]); servers],
            send_queue: VecDeque::new(),
            active: servers,
            emitted: 0,
            delivered: 0,
            phase_done_count: vec![0; total],
            phase_completion_cycle: vec![0; total],
        };
        let mut buf = Vec::new();
        for p in 0..servers {
            driver.enter_phase(p, &mut buf);
        }
        Ok(driver)
    }

    /// Queue the sends of `p`'s current phase and set its barrier counters.
    fn enter_phase(&mut self, p: usize, buf: &mut Vec<(usize, u32)>) {
        let phase = self.phase[p];
        self.shape.sends(p, phase, buf);
        let src_server = self.mapping[p];
        let mut sent = 0u64;
        for &(dst, packets) in buf.iter() {
            let dst_server = self.mapping[dst];
            for _ in 0..packets {
                self.send_queue.push_back((src_server, dst_server));
            }
            sent += packets as u64;
        }
        self.outstanding[p] = sent;
        self.emitted += sent;
    }

    /// Advance `p` through every phase whose barrier is already met.
    fn try_advance(&mut self, p: usize, cycle: u64, buf: &mut Vec<(usize, u32)>) {
        let total = self.shape.total_phases();
        while self.phase[p] < total
            && self.outstanding[p] == 0
            && self.got[p][0] == self.shape.recv_packets(p, self.phase[p])
        {
            let finished_phase = self.phase[p];
            self.phase_done_count[finished_phase] += 1;
            if self.phase_done_count[finished_phase] == self.shape.processes {
                self.phase_completion_cycle[finished_phase] = cycle;
            }
            self.got[p].pop_front();
            if self.got[p].is_empty() {
                self.got[p].push_back(0);
            }
            self.phase[p] += 1;
            if self.phase[p] == total {
                self.active -= 1;
            } else {
                self.enter_phase(p, buf);
            }
        }
    }

    /// Cycle at which the last process finished each phase; zeros for phases
    /// not yet completed by all.
    #[cfg(test)]
    pub fn phase_completions(&self) -> &[u64] {
        &self.phase_completion_cycle
    }
}

impl TrafficSource for KernelTraffic {
    fn generate(&mut self, _cycle: u64, _rng: &mut dyn RngCore, sink: &mut dyn FnMut(u32, u32)) {
        while let Some((src, dst)) = self.send_queue.pop_front() {
            sink(src, dst);
        }
    }

    fn on_delivered(&mut self, src_server: u32, dst_server: u32, cycle: u64) {
        self.delivered += 1;
        let sp = self.process_of[src_server as usize] as usize;
        let dp = self.process_of[dst_server as usize] as usize;
        // A process never advances while its sends are in flight, so the
        // packet's phase is the sender's current phase.
        let sender_phase = self.phase[sp];
        debug_assert!(sender_phase >= self.phase[dp], "receivers never run ahead");
        let offset = sender_phase - self.phase[dp];
        while self.got[dp].len() <= offset {
            self.got[dp].push_back(0);
        }
        self.got[dp][offset] += 1;
        self.outstanding[sp] -= 1;
        let mut buf = Vec::new();
        self.try_advance(sp, cycle, &mut buf);
        self.try_advance(dp, cycle, &mut buf);
    }

    fn finished(&self) -> bool {
        self.active == 0 && self.delivered == self.emitted
    }

    fn is_finite(&self) -> bool {
        true
    }
}

/// Build the traffic source for a run. `mode` drives the synthetic patterns;
/// kernels follow their own schedule and ignore it. The RNG seeds setup-time
/// choices (permutations, mappings) only.
pub fn build_traffic(
    pattern: &PatternSpec,
    mode: &ModeSpec,
    net: &Network,
    params: &KernelParams,
    rng: &mut dyn RngCore,
) -> Result<Box<dyn TrafficSource>, TrafficError> {
    let servers = net.servers();
    let need = |needed: usize| -> Result<(), TrafficError> {
        if servers < needed {
            Err(TrafficError::TooFewServers {
                pattern: pattern.to_string(),
                needed,
                actual: servers,
            })
        } else {
            Ok(())
        }
    };
    let map = match pattern {
        PatternSpec::Uniform => {
            need(2)?;
            DestMap::Uniform
        }
        PatternSpec::Rsp => {
            need(2)?;
            DestMap::SwitchMap(sample_derangement(net.switches(), rng))
        }
        PatternSpec::Shift => {
            need(2)?;
            let n = net.switches() as u32;
            DestMap::SwitchMap((0..n).map(|x| (x + 1) % n).collect())
        }
        PatternSpec::Complement => {
            need(2)?;
            let n = net.switches() as u32;
            DestMap::SwitchMap((0..n).map(|x| n - 1 - x).collect())
        }
        PatternSpec::FixedRandom => {
            need(2)?;
            let picks: Vec<u32> = (0..servers as u32)
                .map(|src| {
                    let d = rng.gen_range(0..servers as u32 - 1);
                    if d >= src {
                        d + 1
                    } else {
                        d
                    }
                })
                .collect();
            DestMap::ServerMap(picks)
        }
        PatternSpec::Kernel { name, mapping } => {
            need(2)?;
            let driver = KernelTraffic::new(*name, *mapping, servers, params, rng)?;
            return Ok(Box::new(driver));
        }
    };
    let remaining = match mode {
        ModeSpec::FixedBurst { packets_per_server } => vec![*packets_per_server; servers],
        ModeSpec::Bernoulli { .. } => Vec::new(),
    };
    Ok(Box::new(SyntheticTraffic {
        servers: servers as u32,
        servers_per_switch: net.servers_per_switch() as u32,
        map,
        mode: *mode,
        remaining,
        emitted: 0,
        delivered: 0,
    }))
}
