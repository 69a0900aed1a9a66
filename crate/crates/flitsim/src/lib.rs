//! Flit-level simulator and verification toolkit for deadlock-free routing on
//! full-mesh (complete-graph) interconnection networks.
//!
//! The crate is organized bottom-up:
//!
//! * [`topology`]: complete-graph switch fabrics and embedded service topologies.
//! * [`ordering`]: link-ordering labellings (sRINR and pluggable alternatives)
//!   plus exact combinatorial counts over allowed ascending-label paths.
//! * [`deadlock`]: channel dependency graph construction, cycle detection, and
//!   escape-path verification by state enumeration.
//! * [`routing`]: the routing-function catalog (minimal, Valiant, UGAL,
//!   WAR-style adaptive, link-ordering, topology-embedded adaptive, and the
//!   two-dimensional HyperX compositions).
//! * [`engine`]: the cycle-driven flit-level simulation core with virtual
//!   channels and credit-based flow control.
//! * [`traffic`]: synthetic traffic patterns and phase-structured collective
//!   kernels.
//! * [`metrics`]: throughput, latency, hop-distribution, fairness, and link
//!   utilization accounting.
//! * [`analysis`]: the analytic saturation-throughput estimator.

pub mod analysis;
pub mod deadlock;
pub mod engine;
pub mod metrics;
pub mod ordering;
pub mod routing;
pub mod topology;
pub mod traffic;
