//! Closed-form saturation estimate for detour routing over an embedded
//! service topology.
//!
//! With `p` the fraction of a switch's links that are main (not claimed by
//! the service embedding), balanced two-hop detouring saturates near
//! `1 / (1 + 1/p)` flits per server per cycle, approaching 1/2 as the
//! service's share of links vanishes.

use crate::topology::{build_complete_graph, embed_service, near_square_factors, Embedding, ServiceKind};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("main-link fraction must lie in (0, 1], got {0}")]
    Domain(f64),
}

/// Estimated saturation throughput in flits per server per cycle.
pub fn estimate_throughput(p: f64) -> Result<f64, AnalysisError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(AnalysisError::Domain(p));
    }
    Ok(1.0 / (1.0 + 1.0 / p))
}

/// Fraction of fabric arcs left as main links by saturating `emb`'s service
/// arcs, counted from the constructed embedding.
pub fn main_link_fraction(emb: &Embedding) -> f64 {
    let n = emb.fm().switches();
    let mut service = 0usize;
    for s in 0..n {
        for d in 0..n {
            if s != d && emb.is_service_arc(s, d) {
                service += 1;
            }
        }
    }
    let total = n * (n - 1);
    (total - service) as f64 / total as f64
}

/// The estimate computed from an already-built embedding.
pub fn estimate_for_embedding(emb: &Embedding) -> f64 {
    estimate_throughput(main_link_fraction(emb)).expect("fraction of a nonempty arc set")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub kind: ServiceKind,
    pub n: usize,
    pub p: f64,
    pub estimate: f64,
}

/// Resolve a service family to concrete dims for an `n`-switch fabric.
fn resolve_kind(kind: &ServiceKind, n: usize) -> ServiceKind {
    match kind {
        ServiceKind::HyperX(d) if d.is_empty() => ServiceKind::HyperX(near_square_factors(n, 2)),
        other => other.clone(),
    }
}

/// Estimates across fabric sizes for one service family. Sizes the family
/// cannot tile (e.g. non-powers of two for the hypercube) are skipped.
pub fn estimate_curve(
    kind: &ServiceKind,
    sizes: impl IntoIterator<Item = usize>,
) -> Vec<CurvePoint> {
    let mut out = Vec::new();
    for n in sizes {
        if n < 3 {
            continue;
        }
        let resolved = resolve_kind(kind, n);
        let Ok(fm) = build_complete_graph(n, 1) else { continue };
        let Ok(emb) = embed_service(&fm, &resolved) else { continue };
        let p = main_link_fraction(&emb);
        out.push(CurvePoint { kind: resolved, n, p, estimate: estimate_for_embedding(&emb) });
    }
    out
}

/// The two-hop rate decomposition bound behind the estimate. `gamma1` is the
/// direct (1-hop) delivery rate per switch in [0, 1]; detour capacity then
/// caps the 2-hop rate, and the total normalizes to the estimate as n grows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaChain {
    /// Cap on the 2-hop rate: ((n-1) - gamma1) / (1 + 1/p).
    pub gamma2_bound: f64,
    /// Cap on the total rate gamma1 + gamma2.
    pub gamma_bound: f64,
    /// gamma_bound / n, the per-server form.
    pub per_server: f64,
    /// The closed-form estimate this converges to.
    pub asymptote: f64,
}

pub fn gamma_chain(p: f64, gamma1: f64, n: usize) -> Result<GammaChain, AnalysisError> {
    let est = estimate_throughput(p)?;
    assert!((0.0..=1.0).contains(&gamma1), "gamma1 is a rate in [0, 1]");
    assert!(n >= 2);
    let gamma2_bound = ((n - 1) as f64 - gamma1) * est;
    let gamma_bound = gamma1 + gamma2_bound;
    Ok(GammaChain {
        gamma2_bound,
        gamma_bound,
        per_server: gamma_bound / n as f64,
        asymptote: est,
    })
}

impl GammaChain {
    /// The chain's conclusion: the per-server rate exceeds the asymptote by
    /// at most 1/n.
    pub fn holds(&self, n: usize) -> bool {
        self.per_server <= self.asymptote + 1.0 / n as f64 + 1e-12
    }
}
