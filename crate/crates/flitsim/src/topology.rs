//! Full-mesh switch fabrics and embedded service topologies.
//!
//! A full mesh `FM_n` is the complete directed graph on `n` switches: every
//! ordered pair `(i, j)` with `i != j` is an arc (a unidirectional link).
//! A service topology is a spanning subgraph with an inherently deadlock-free
//! minimal routing; its arcs are classified `Service` and the remainder stay
//! `Main`.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Errors from topology construction and embedding.
#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("switch count must be at least 2, got {0}")]
    TooFewSwitches(usize),
    #[error("servers per switch must be at least 1")]
    NoServers,
    #[error("service `{kind}` incompatible with {n} switches: {reason}")]
    IncompatibleService {
        kind: String,
        n: usize,
        reason: String,
    },
    #[error("unknown service kind `{0}`")]
    UnknownServiceKind(String),
}

/// Complete-graph switch fabric with `servers_per_switch` endpoints per switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FullMesh {
    n: usize,
    servers_per_switch: usize,
}

impl FullMesh {
    /// Number of switches.
    pub fn switches(&self) -> usize {
        self.n
    }

    /// Number of servers attached per switch.
    pub fn servers_per_switch(&self) -> usize {
        self.servers_per_switch
    }

    /// Total servers in the system.
    pub fn servers(&self) -> usize {
        self.n * self.servers_per_switch
    }

    /// Total directed inter-switch arcs, `n * (n - 1)`.
    pub fn arcs(&self) -> usize {
        self.n * (self.n - 1)
    }

    /// Dense index of arc `(src, dst)` in `0..arcs()`.
    ///
    /// Arcs are grouped by source; destinations skip the source itself.
    pub fn arc_index(&self, src: usize, dst: usize) -> usize {
        debug_assert!(src != dst && src < self.n && dst < self.n);
        src * (self.n - 1) + if dst < src { dst } else { dst - 1 }
    }

    /// Inverse of [`arc_index`](Self::arc_index).
    pub fn arc_endpoints(&self, arc: usize) -> (usize, usize) {
        debug_assert!(arc < self.arcs());
        let src = arc / (self.n - 1);
        let k = arc % (self.n - 1);
        let dst = if k < src { k } else { k + 1 };
        (src, dst)
    }

    /// Switch a server is attached to.
    pub fn switch_of(&self, server: usize) -> usize {
        debug_assert!(server < self.servers());
        server / self.servers_per_switch
    }

    /// Servers attached to a switch, as a contiguous index range.
    pub fn servers_of(&self, switch: usize) -> std::ops::Range<usize> {
        let base = switch * self.servers_per_switch;
        base..base + self.servers_per_switch
    }
}

/// Construct the complete-graph fabric `FM_n`.
pub fn build_complete_graph(
    n: usize,
    servers_per_switch: usize,
) -> Result<FullMesh, TopologyError> {
    if n < 2 {
        return Err(TopologyError::TooFewSwitches(n));
    }
    if servers_per_switch == 0 {
        return Err(TopologyError::NoServers);
    }
    Ok(FullMesh {
        n,
        servers_per_switch,
    })
}

/// Service topology families embeddable in a full mesh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServiceKind {
    /// Line `0 - 1 - ... - (n-1)`; diameter `n - 1`.
    Path,
    /// Multi-dimensional mesh with unit steps and no wraparound.
    /// Empty dims means "factor n into near-equal factors, largest last".
    Mesh(Vec<usize>),
    /// Complete k-ary tree in level order; root 0, parent(i) = (i-1)/k.
    Tree(usize),
    /// Binary hypercube; requires `n` a power of two; neighbors differ in one bit.
    Hypercube,
    /// Cartesian product of complete graphs; neighbors differ in exactly one
    /// coordinate, and one hop fully corrects a coordinate.
    HyperX(Vec<usize>),
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ServiceKind::Path => write!(f, "path"),
            ServiceKind::Mesh(d) if d.is_empty() => write!(f, "mesh"),
            ServiceKind::Mesh(d) => write!(f, "mesh({})", join_dims(d)),
            ServiceKind::Tree(k) => write!(f, "tree({k})"),
            ServiceKind::Hypercube => write!(f, "hypercube"),
            ServiceKind::HyperX(d) => write!(f, "hyperx({})", join_dims(d)),
        }
    }
}

fn join_dims(dims: &[usize]) -> String {
    dims.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl FromStr for ServiceKind {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (head, args) = match s.find('(') {
            Some(open) if s.ends_with(')') => {
                (&s[..open], Some(&s[open + 1..s.len() - 1]))
            }
            None => (s, None),
            _ => return Err(TopologyError::UnknownServiceKind(s.into())),
        };
        let dims = |args: Option<&str>| -> Result<Vec<usize>, TopologyError> {
            match args {
                None | Some("") => Ok(Vec::new()),
                Some(a) => a
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<usize>()
                            .map_err(|_| TopologyError::UnknownServiceKind(s.into()))
                    })
                    .collect(),
            }
        };
        match head {
            "path" => Ok(ServiceKind::Path),
            "mesh" => Ok(ServiceKind::Mesh(dims(args)?)),
            "tree" => {
                let d = dims(args)?;
                if d.len() != 1 || d[0] < 2 {
                    return Err(TopologyError::UnknownServiceKind(s.into()));
                }
                Ok(ServiceKind::Tree(d[0]))
            }
            "hypercube" => Ok(ServiceKind::Hypercube),
            "hyperx" => {
                let d = dims(args)?;
                if d.is_empty() {
                    return Err(TopologyError::UnknownServiceKind(s.into()));
                }
                Ok(ServiceKind::HyperX(d))
            }
            _ => Err(TopologyError::UnknownServiceKind(s.into())),
        }
    }
}

/// Arc classification within an embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArcClass {
    Main,
    Service,
}

/// A service topology embedded in a full mesh.
///
/// Holds the arc classification, the service adjacency, coordinates for the
/// coordinate-based families, and the precomputed strict minimal next-hop
/// table used by escape routing.
#[derive(Debug, Clone)]
pub struct Embedding {
    fm: FullMesh,
    kind: ServiceKind,
    /// Resolved dimension sizes for Mesh and HyperX, factor list otherwise empty.
    dims: Vec<usize>,
    is_service: Vec<bool>,
    service_adj: Vec<Vec<usize>>,
    /// `next[cur * n + dst]`: unique strict minimal next hop, `cur` when `cur == dst`.
    next: Vec<u16>,
    diameter: usize,
}

impl Embedding {
    pub fn fm(&self) -> &FullMesh {
        &self.fm
    }

    pub fn kind(&self) -> &ServiceKind {
        &self.kind
    }

    /// Resolved dimension sizes (Mesh and HyperX only).
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Classification of arc `(src, dst)`.
    pub fn arc_class(&self, src: usize, dst: usize) -> ArcClass {
        if self.is_service[self.fm.arc_index(src, dst)] {
            ArcClass::Service
        } else {
            ArcClass::Main
        }
    }

    pub fn is_service_arc(&self, src: usize, dst: usize) -> bool {
        self.is_service[self.fm.arc_index(src, dst)]
    }

    /// Service-topology neighbors of a switch, ascending.
    pub fn service_neighbors(&self, switch: usize) -> &[usize] {
        &self.service_adj[switch]
    }

    /// Directed service arc count.
    pub fn service_arcs(&self) -> usize {
        self.is_service.iter().filter(|&&s| s).count()
    }

    /// Unique strict minimal next hop within the service topology.
    ///
    /// Coordinate families correct the lowest-indexed mismatched dimension;
    /// the tree walks the unique up/down path; the path walks the line.
    pub fn service_next_hop(&self, cur: usize, dst: usize) -> usize {
        debug_assert!(cur < self.fm.n && dst < self.fm.n);
        self.next[cur * self.fm.n + dst] as usize
    }

    /// Hops of the strict minimal service route from `cur` to `dst`.
    pub fn service_distance(&self, cur: usize, dst: usize) -> usize {
        let mut at = cur;
        let mut hops = 0;
        while at != dst {
            at = self.service_next_hop(at, dst);
            hops += 1;
            debug_assert!(hops <= self.diameter);
        }
        hops
    }

    /// Service-topology diameter under strict minimal routing.
    pub fn diameter(&self) -> usize {
        self.diameter
    }

    /// Mixed-radix coordinates of a switch under the resolved dims,
    /// least-significant dimension first.
    pub fn coords(&self, switch: usize) -> Vec<usize> {
        coords_of(switch, &self.dims)
    }
}

fn coords_of(mut i: usize, dims: &[usize]) -> Vec<usize> {
    let mut c = Vec::with_capacity(dims.len());
    for &d in dims {
        c.push(i % d);
        i /= d;
    }
    c
}

/// Factor `n` into near-equal integer factors, smallest first.
///
/// Used for default mesh dims and for near-square process grids.
pub fn near_square_factors(n: usize, parts: usize) -> Vec<usize> {
    debug_assert!(parts >= 1);
    if parts == 1 {
        return vec![n];
    }
    // Split off the divisor closest to the parts-th root, recurse on the rest.
    let root = (n as f64).powf(1.0 / parts as f64).round() as usize;
    let mut best = 1;
    for d in 1..=n {
        if n % d == 0 && (d as i64 - root as i64).abs() < (best as i64 - root as i64).abs() {
            best = d;
        }
    }
    let mut rest = near_square_factors(n / best, parts - 1);
    let mut out = vec![best];
    out.append(&mut rest);
    out.sort_unstable();
    out
}

fn incompatible(kind: &ServiceKind, n: usize, reason: impl Into<String>) -> TopologyError {
    TopologyError::IncompatibleService {
        kind: kind.to_string(),
        n,
        reason: reason.into(),
    }
}

/// Embed a service topology into the fabric, classifying every arc.
pub fn embed_service(fm: &FullMesh, kind: &ServiceKind) -> Result<Embedding, TopologyError> {
    let n = fm.switches();
    let mut dims: Vec<usize> = Vec::new();
    match kind {
        ServiceKind::Path => {}
        ServiceKind::Mesh(d) => {
            dims = if d.is_empty() {
                near_square_factors(n, 2)
            } else {
                d.clone()
            };
            if dims.iter().product::<usize>() != n {
                return Err(incompatible(kind, n, "dims product must equal switch count"));
            }
            if dims.iter().any(|&d| d < 2) {
                return Err(incompatible(kind, n, "every dim must be at least 2"));
            }
        }
        ServiceKind::Tree(_) => {}
        ServiceKind::Hypercube => {
            if !n.is_power_of_two() {
                return Err(incompatible(kind, n, "switch count must be a power of two"));
            }
            dims = vec![2; n.trailing_zeros() as usize];
        }
        ServiceKind::HyperX(d) => {
            dims = d.clone();
            if dims.iter().product::<usize>() != n {
                return Err(incompatible(kind, n, "dims product must equal switch count"));
            }
            if dims.iter().any(|&d| d < 2) {
                return Err(incompatible(kind, n, "every dim must be at least 2"));
            }
        }
    }

    let mut next = vec![0u16; n * n];
    for cur in 0..n {
        for dst in 0..n {
            let hop = if cur == dst {
                cur
            } else {
                next_hop_of(kind, &dims, cur, dst)
            };
            next[cur * n + dst] = hop as u16;
        }
    }

    let mut is_service = vec![false; fm.arcs()];
    let mut service_adj = vec![Vec::new(); n];
    for cur in 0..n {
        for dst in 0..n {
            if cur == dst {
                continue;
            }
            let hop = next[cur * n + dst] as usize;
            debug_assert!(hop != cur);
            if !is_service[fm.arc_index(cur, hop)] {
                is_service[fm.arc_index(cur, hop)] = true;
                service_adj[cur].push(hop);
            }
        }
    }
    for adj in &mut service_adj {
        adj.sort_unstable();
    }
    // Minimal next hops induce a symmetric arc set for these families.
    for arc in 0..fm.arcs() {
        if is_service[arc] {
            let (s, d) = fm.arc_endpoints(arc);
            debug_assert!(is_service[fm.arc_index(d, s)]);
        }
    }

    let mut emb = Embedding {
        fm: *fm,
        kind: kind.clone(),
        dims,
        is_service,
        service_adj,
        next,
        diameter: 0,
    };
    let mut diameter = 0;
    for cur in 0..n {
        for dst in 0..n {
            // Walk with a hard cap so a broken next-hop table cannot loop.
            let mut at = cur;
            let mut hops = 0;
            while at != dst {
                at = emb.service_next_hop(at, dst);
                hops += 1;
                if hops > n {
                    return Err(incompatible(kind, n, "minimal next-hop walk does not terminate"));
                }
            }
            diameter = diameter.max(hops);
        }
    }
    emb.diameter = diameter;
    Ok(emb)
}

fn next_hop_of(kind: &ServiceKind, dims: &[usize], cur: usize, dst: usize) -> usize {
    match kind {
        ServiceKind::Path => {
            if dst > cur {
                cur + 1
            } else {
                cur - 1
            }
        }
        ServiceKind::Mesh(_) => {
            let (cc, dc) = (coords_of(cur, dims), coords_of(dst, dims));
            let mut stride = 1;
            for (k, &d) in dims.iter().enumerate() {
                if cc[k] != dc[k] {
                    return if dc[k] > cc[k] {
                        cur + stride
                    } else {
                        cur - stride
                    };
                }
                stride *= d;
            }
            unreachable!("cur == dst handled by caller")
        }
        ServiceKind::Tree(k) => {
            // Climb dst toward the root; if cur is an ancestor, descend one
            // level toward dst, otherwise go up.
            let mut d = dst;
            let mut below = dst;
            while d > cur {
                below = d;
                d = (d - 1) / k;
            }
            if d == cur {
                below
            } else {
                (cur - 1) / k
            }
        }
        ServiceKind::Hypercube => cur ^ (1 << (cur ^ dst).trailing_zeros()),
        ServiceKind::HyperX(_) => {
            let (cc, dc) = (coords_of(cur, dims), coords_of(dst, dims));
            let mut stride = 1;
            for (k, &d) in dims.iter().enumerate() {
                if cc[k] != dc[k] {
                    return if dc[k] > cc[k] {
                        cur + (dc[k] - cc[k]) * stride
                    } else {
                        cur - (cc[k] - dc[k]) * stride
                    };
                }
                stride *= d;
            }
            unreachable!("cur == dst handled by caller")
        }
    }
}

/// Fraction of arcs left to the main topology, `main arcs / all arcs`.
pub fn main_degree_ratio(emb: &Embedding) -> f64 {
    let total = emb.fm().arcs();
    (total - emb.service_arcs()) as f64 / total as f64
}

/// Which graph family a network instance models.
#[derive(Debug, Clone)]
pub enum NetworkModel {
    /// A single full mesh, optionally with an embedded service topology.
    FullMesh {
        fm: FullMesh,
        embedding: Option<Embedding>,
    },
    /// Two-dimensional composition: switches on a `dims[0] x dims[1]` grid,
    /// each row and each column forming a full mesh with its own embedded
    /// service topology (`inner[d]` over a mesh of `dims[d]` switches).
    Grid2d {
        dims: [usize; 2],
        inner: [Embedding; 2],
    },
}

/// Engine-facing switch graph: adjacency, dense arc ids, arc classes.
///
/// Arc ids group out-arcs by source switch; for a full mesh they coincide
/// with [`FullMesh::arc_index`].
#[derive(Debug, Clone)]
pub struct Network {
    servers_per_switch: usize,
    adj: Vec<Vec<u32>>,
    arc_base: Vec<u32>,
    class: Vec<ArcClass>,
    model: NetworkModel,
}

impl Network {
    /// Wrap a full mesh, classifying arcs by the embedding when present.
    pub fn full_mesh(fm: FullMesh, embedding: Option<Embedding>) -> Network {
        let n = fm.switches();
        let adj: Vec<Vec<u32>> = (0..n)
            .map(|i| (0..n as u32).filter(|&j| j as usize != i).collect())
            .collect();
        let mut class = vec![ArcClass::Main; fm.arcs()];
        if let Some(e) = &embedding {
            for arc in 0..fm.arcs() {
                let (s, d) = fm.arc_endpoints(arc);
                if e.is_service_arc(s, d) {
                    class[arc] = ArcClass::Service;
                }
            }
        }
        Network {
            servers_per_switch: fm.servers_per_switch(),
            arc_base: arc_bases(&adj),
            adj,
            class,
            model: NetworkModel::FullMesh { fm, embedding },
        }
    }

    /// Build the two-dimensional composition with one service embedding per
    /// dimension. Switch `i` sits at `(i mod d0, i / d0)`; rows vary the
    /// first coordinate.
    pub fn grid2d(
        d0: usize,
        d1: usize,
        servers_per_switch: usize,
        inner_kind: &ServiceKind,
    ) -> Result<Network, TopologyError> {
        let inner0 = embed_service(&build_complete_graph(d0, servers_per_switch)?, inner_kind)?;
        let inner1 = embed_service(&build_complete_graph(d1, servers_per_switch)?, inner_kind)?;
        let n = d0 * d1;
        let mut adj: Vec<Vec<u32>> = Vec::with_capacity(n);
        for i in 0..n {
            let (x, y) = (i % d0, i / d0);
            let mut nb: Vec<u32> = Vec::with_capacity(d0 + d1 - 2);
            for ox in 0..d0 {
                if ox != x {
                    nb.push((y * d0 + ox) as u32);
                }
            }
            for oy in 0..d1 {
                if oy != y {
                    nb.push((oy * d0 + x) as u32);
                }
            }
            nb.sort_unstable();
            adj.push(nb);
        }
        let arc_base = arc_bases(&adj);
        let total = *arc_base.last().unwrap() as usize;
        let mut class = vec![ArcClass::Main; total];
        for i in 0..n {
            let (x, y) = (i % d0, i / d0);
            for (port, &nbr) in adj[i].iter().enumerate() {
                let (nx, ny) = (nbr as usize % d0, nbr as usize / d0);
                let service = if ny == y {
                    inner0.is_service_arc(x, nx)
                } else {
                    inner1.is_service_arc(y, ny)
                };
                if service {
                    class[arc_base[i] as usize + port] = ArcClass::Service;
                }
            }
        }
        Ok(Network {
            servers_per_switch,
            adj,
            arc_base,
            class,
            model: NetworkModel::Grid2d {
                dims: [d0, d1],
                inner: [inner0, inner1],
            },
        })
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn switches(&self) -> usize {
        self.adj.len()
    }

    pub fn servers_per_switch(&self) -> usize {
        self.servers_per_switch
    }

    pub fn servers(&self) -> usize {
        self.adj.len() * self.servers_per_switch
    }

    pub fn switch_of(&self, server: usize) -> usize {
        server / self.servers_per_switch
    }

    /// Out-neighbors of a switch, ascending.
    pub fn neighbors(&self, sw: usize) -> &[u32] {
        &self.adj[sw]
    }

    /// Port index of `nb` in the neighbor list of `sw`.
    pub fn port_of(&self, sw: usize, nb: usize) -> usize {
        self.adj[sw].binary_search(&(nb as u32)).expect("not adjacent")
    }

    pub fn arc_count(&self) -> usize {
        *self.arc_base.last().unwrap() as usize
    }

    /// Dense id of the arc leaving `sw` through `port`.
    pub fn arc_id(&self, sw: usize, port: usize) -> usize {
        debug_assert!(port < self.adj[sw].len());
        self.arc_base[sw] as usize + port
    }

    pub fn arc_endpoints_of(&self, arc: usize) -> (usize, usize) {
        let probe = match self.arc_base.binary_search(&(arc as u32 + 1)) {
            Ok(i) => i,
            Err(i) => i,
        };
        let sw = probe - 1;
        let port = arc - self.arc_base[sw] as usize;
        (sw, self.adj[sw][port] as usize)
    }

    pub fn arc_class_of(&self, arc: usize) -> ArcClass {
        self.class[arc]
    }
}

fn arc_bases(adj: &[Vec<u32>]) -> Vec<u32> {
    let mut base = Vec::with_capacity(adj.len() + 1);
    let mut acc = 0u32;
    for a in adj {
        base.push(acc);
        acc += a.len() as u32;
    }
    base.push(acc);
    base
}

/// Serializable description of a fabric and optional embedding.
#[derive(Debug, Serialize)]
pub struct TopologyExport {
    pub switches: usize,
    pub servers_per_switch: usize,
    pub service_kind: Option<String>,
    /// One entry per arc: `[src, dst, class]` with class `"main"` or `"service"`.
    pub arcs: Vec<(usize, usize, String)>,
}

/// Build the JSON-exportable arc listing.
pub fn export_topology(fm: &FullMesh, emb: Option<&Embedding>) -> TopologyExport {
    let mut arcs = Vec::with_capacity(fm.arcs());
    for a in 0..fm.arcs() {
        let (s, d) = fm.arc_endpoints(a);
        let class = match emb {
            Some(e) if e.is_service_arc(s, d) => "service",
            _ => "main",
        };
        arcs.push((s, d, class.to_string()));
    }
    TopologyExport {
        switches: fm.switches(),
        servers_per_switch: fm.servers_per_switch(),
        service_kind: emb.map(|e| e.kind().to_string()),
        arcs,
    }
}
