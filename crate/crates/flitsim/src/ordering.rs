//! Link-ordering labellings over complete-graph fabrics.
//!
//! A labelling assigns a positive label to every arc; a route is legal when
//! its labels strictly ascend hop over hop. Ascending labels rule out cyclic
//! buffer wait chains, so legal routes are deadlock-free with a single
//! virtual channel.
//!
//! Counting here is over label-ascending arc chains `i -> k -> j` through a
//! middle switch (`i != k`, `k != j`; `j == i` is permitted). With that
//! convention the rotation labelling below has perfectly fair per-arc
//! utilization, exactly `n - 2` chains crossing every arc.

use std::fmt::Write as _;
use thiserror::Error;

/// Errors from parsing an imported labelling.
#[derive(Debug, Error)]
pub enum OrderingError {
    #[error("line {line}: expected `src dst label`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: label must be at least 1")]
    ZeroLabel { line: usize },
    #[error("line {line}: arc endpoints must differ")]
    SelfLoop { line: usize },
    #[error("line {line}: duplicate arc ({src}, {dst})")]
    DuplicateArc { line: usize, src: usize, dst: usize },
    #[error("labelling incomplete: arc ({src}, {dst}) missing")]
    MissingArc { src: usize, dst: usize },
    #[error("labelling needs at least 2 switches")]
    TooSmall,
}

/// Positive labels on every arc of a complete graph on `n` switches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labelling {
    n: usize,
    labels: Vec<u32>,
}

impl Labelling {
    /// Build from an explicit label function over arcs.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> u32) -> Self {
        assert!(n >= 2);
        let mut labels = vec![0; n * (n - 1)];
        for src in 0..n {
            for dst in 0..n {
                if src != dst {
                    let l = f(src, dst);
                    assert!(l >= 1, "labels are positive");
                    labels[arc_index(n, src, dst)] = l;
                }
            }
        }
        Labelling { n, labels }
    }

    pub fn switches(&self) -> usize {
        self.n
    }

    /// Label of arc `(src, dst)`.
    pub fn label(&self, src: usize, dst: usize) -> u32 {
        self.labels[arc_index(self.n, src, dst)]
    }
}

fn arc_index(n: usize, src: usize, dst: usize) -> usize {
    debug_assert!(src != dst && src < n && dst < n);
    src * (n - 1) + if dst < src { dst } else { dst - 1 }
}

fn arc_endpoints(n: usize, arc: usize) -> (usize, usize) {
    let src = arc / (n - 1);
    let k = arc % (n - 1);
    (src, if k < src { k } else { k + 1 })
}

/// The rotation labelling: arc `(i, j)` gets `(j - i) mod n`.
///
/// Every switch sees each label exactly once on its out-arcs and once on its
/// in-arcs, which is what makes per-arc utilization uniform.
pub fn srinr_labelling(n: usize) -> Labelling {
    Labelling::from_fn(n, |i, j| ((j + n - i) % n) as u32)
}

/// Whether the chain `i -> k -> j` has strictly ascending labels.
///
/// `j == i` is a legal chain through `k`; `i == k` or `k == j` is not a chain.
pub fn allowed_2path(lab: &Labelling, i: usize, k: usize, j: usize) -> bool {
    if i == k || k == j {
        return false;
    }
    lab.label(i, k) < lab.label(k, j)
}

/// Total count of label-ascending two-arc chains.
pub fn count_allowed_paths(lab: &Labelling) -> u64 {
    let n = lab.switches();
    let mut count = 0u64;
    for k in 0..n {
        for i in 0..n {
            if i == k {
                continue;
            }
            for j in 0..n {
                if j != k && lab.label(i, k) < lab.label(k, j) {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Per-arc count of ascending chains crossing each arc, indexed like the
/// fabric's dense arc index.
pub fn arc_utilization(lab: &Labelling) -> Vec<u64> {
    let n = lab.switches();
    let mut util = vec![0u64; n * (n - 1)];
    for k in 0..n {
        for i in 0..n {
            if i == k {
                continue;
            }
            for j in 0..n {
                if j != k && lab.label(i, k) < lab.label(k, j) {
                    util[arc_index(n, i, k)] += 1;
                    util[arc_index(n, k, j)] += 1;
                }
            }
        }
    }
    util
}

/// Switches `k` outside `{a, b}` with an ascending chain `a -> k -> b`.
pub fn intermediates(lab: &Labelling, a: usize, b: usize) -> Vec<usize> {
    debug_assert!(a != b);
    (0..lab.switches())
        .filter(|&k| k != a && k != b && allowed_2path(lab, a, k, b))
        .collect()
}

/// Witness that a labelling is not utilization-fair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FairnessCounterexample {
    /// Some arc's chain count differs from the fair share `n - 2`.
    UnevenArc {
        src: usize,
        dst: usize,
        utilization: u64,
        fair_share: u64,
    },
    /// The chain total differs from `n (n - 1) (n - 2) / 2`.
    WrongTotal { total: u64, expected: u64 },
}

impl std::fmt::Display for FairnessCounterexample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FairnessCounterexample::UnevenArc {
                src,
                dst,
                utilization,
                fair_share,
            } => write!(
                f,
                "arc ({src}, {dst}) carries {utilization} ascending chains, fair share is {fair_share}"
            ),
            FairnessCounterexample::WrongTotal { total, expected } => {
                write!(f, "total ascending chains {total}, fair total is {expected}")
            }
        }
    }
}

/// Check the fair-ordering identities: every arc carries exactly `n - 2`
/// ascending chains and the total is `n (n - 1) (n - 2) / 2`.
pub fn verify_fair_ordering_theorem(lab: &Labelling) -> Result<(), FairnessCounterexample> {
    let n = lab.switches() as u64;
    let util = arc_utilization(lab);
    let fair_share = n - 2;
    for (arc, &u) in util.iter().enumerate() {
        if u != fair_share {
            let (src, dst) = arc_endpoints(lab.switches(), arc);
            return Err(FairnessCounterexample::UnevenArc {
                src,
                dst,
                utilization: u,
                fair_share,
            });
        }
    }
    let total: u64 = util.iter().sum::<u64>() / 2;
    let expected = n * (n - 1) * (n - 2) / 2;
    if total != expected {
        return Err(FairnessCounterexample::WrongTotal { total, expected });
    }
    Ok(())
}

/// Render a labelling as `src dst label` lines sorted by `(src, dst)`.
pub fn export_labelling(lab: &Labelling) -> String {
    let n = lab.switches();
    let mut out = String::new();
    for src in 0..n {
        for dst in 0..n {
            if src != dst {
                writeln!(out, "{src} {dst} {}", lab.label(src, dst)).unwrap();
            }
        }
    }
    out
}

/// Parse a labelling from `src dst label` lines.
///
/// The switch count is one past the largest endpoint mentioned; every arc of
/// that complete graph must be present exactly once.
pub fn import_labelling(text: &str) -> Result<Labelling, OrderingError> {
    let mut triples = Vec::new();
    let mut max_vertex = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut parts = t.split_whitespace();
        let malformed = || OrderingError::Malformed {
            line,
            text: t.to_string(),
        };
        let src: usize = parts.next().ok_or_else(malformed)?.parse().map_err(|_| malformed())?;
        let dst: usize = parts.next().ok_or_else(malformed)?.parse().map_err(|_| malformed())?;
        let label: u32 = parts.next().ok_or_else(malformed)?.parse().map_err(|_| malformed())?;
        if parts.next().is_some() {
            return Err(malformed());
        }
        if src == dst {
            return Err(OrderingError::SelfLoop { line });
        }
        if label == 0 {
            return Err(OrderingError::ZeroLabel { line });
        }
        max_vertex = max_vertex.max(src).max(dst);
        triples.push((line, src, dst, label));
    }
    let n = max_vertex + 1;
    if n < 2 {
        return Err(OrderingError::TooSmall);
    }
    let mut labels = vec![0u32; n * (n - 1)];
    for &(line, src, dst, label) in &triples {
        let slot = &mut labels[arc_index(n, src, dst)];
        if *slot != 0 {
            return Err(OrderingError::DuplicateArc { line, src, dst });
        }
        *slot = label;
    }
    for arc in 0..labels.len() {
        if labels[arc] == 0 {
            let (src, dst) = arc_endpoints(n, arc);
            return Err(OrderingError::MissingArc { src, dst });
        }
    }
    Ok(Labelling { n, labels })
}
