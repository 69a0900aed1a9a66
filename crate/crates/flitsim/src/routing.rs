//! Routing-function catalog.
//!
//! Every routing is a [`Router`]: given a packet's position it produces the
//! candidate output options for the current hop. An adaptive set is re-weighed
//! by the engine on every allocation pass (weight = output occupancy * scale
//! + bias, least weight wins, ties broken uniformly at random); a committed
//! set has exactly one option the packet must wait for.
//!
//! Options carry a router-private `next_state` so multi-hop disciplines
//! (committed intermediates, virtual-channel shifts, dimension orders) need no
//! storage beyond one integer per packet.

use crate::ordering::{self, Labelling};
use crate::topology::{Embedding, Network, NetworkModel, ServiceKind};
use rand::Rng;
use rand::RngCore;
use std::cell::Cell;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;
use thiserror::Error;

/// Default bias charged to a candidate whose neighbor is not the target;
/// measured in flits of output occupancy.
pub const DEFAULT_DIRECT_PREFERENCE: u32 = 54;

/// Errors from routing construction or spec parsing.
#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("unknown routing spec `{0}`")]
    UnknownSpec(String),
    #[error("routing `{routing}` needs {requirement}")]
    Unsupported {
        routing: String,
        requirement: String,
    },
    #[error("ordering file `{path}`: {source}")]
    OrderingFile {
        path: String,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("labelling covers {labelled} switches but the network has {actual}")]
    LabellingMismatch { labelled: usize, actual: usize },
}

/// Where a pluggable link ordering comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrderingSource {
    /// The rotation labelling, arc `(i, j)` labeled `(j - i) mod n`.
    Srinr,
    /// A labelling text file of `src dst label` lines.
    File(String),
}

/// Dimension-order policy for the two-dimensional composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimOrder {
    /// Always rows first, one virtual channel.
    Dor,
    /// Per-packet uniform choice of row-first or column-first, one virtual
    /// channel per order.
    O1turn,
}

/// Parsed routing description; resolves to a [`Router`] against a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoutingSpec {
    /// Direct single-hop routing.
    Min,
    /// Two-hop routing via a uniformly random intermediate switch, resampled
    /// until it differs from both endpoints.
    Valiant,
    /// Injection-time choice between the direct hop and one sampled two-hop
    /// detour, comparing occupancy with hop-count multipliers; committed.
    Ugal,
    /// Adaptive injection over every output, direct hop unpenalized, then a
    /// committed direct second hop on the next virtual channel.
    OmniWar,
    /// Ascending-label routing: direct, or one labeled intermediate.
    Ordering(OrderingSource),
    /// Any intermediate with no label restriction; cyclic dependencies, used
    /// as the negative control for deadlock analysis.
    Unrestricted,
    /// Strict minimal routing over the embedded service topology only.
    ServiceDor(ServiceKind),
    /// Topology-embedded adaptive routing: service escape always offered,
    /// main links freely usable on the injection hop.
    Tera { service: ServiceKind, q: u32 },
    /// Per-dimension embedded adaptive routing on the two-dimensional
    /// composition.
    HyperxTera { order: DimOrder, q: u32 },
}

impl fmt::Display for RoutingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoutingSpec::Min => write!(f, "min"),
            RoutingSpec::Valiant => write!(f, "valiant"),
            RoutingSpec::Ugal => write!(f, "ugal"),
            RoutingSpec::OmniWar => write!(f, "omniwar"),
            RoutingSpec::Ordering(OrderingSource::Srinr) => write!(f, "ordering(srinr)"),
            RoutingSpec::Ordering(OrderingSource::File(p)) => write!(f, "ordering(file={p})"),
            RoutingSpec::Unrestricted => write!(f, "unrestricted"),
            RoutingSpec::ServiceDor(k) => write!(f, "service_dor({k})"),
            RoutingSpec::Tera { service, q } => write!(f, "tera(service={service},q={q})"),
            RoutingSpec::HyperxTera { order, q } => {
                let o = match order {
                    DimOrder::Dor => "dor",
                    DimOrder::O1turn => "o1turn",
                };
                write!(f, "hyperx_tera(order={o},q={q})")
            }
        }
    }
}

/// Split `s` on top-level commas, respecting parentheses.
fn split_args(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0usize, 0usize);
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let last = s[start..].trim();
    if !last.is_empty() || !out.is_empty() {
        out.push(last);
    }
    out
}

impl FromStr for RoutingSpec {
    type Err = RoutingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || RoutingError::UnknownSpec(s.into());
        let (head, args) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], Some(&s[open + 1..s.len() - 1])),
            None => (s, None),
            _ => return Err(bad()),
        };
        match (head, args) {
            ("min", None) => Ok(RoutingSpec::Min),
            ("valiant", None) => Ok(RoutingSpec::Valiant),
            ("ugal", None) => Ok(RoutingSpec::Ugal),
            ("omniwar", None) => Ok(RoutingSpec::OmniWar),
            ("unrestricted", None) => Ok(RoutingSpec::Unrestricted),
            ("ordering", Some(a)) => match a.trim() {
                "srinr" => Ok(RoutingSpec::Ordering(OrderingSource::Srinr)),
                other => match other.strip_prefix("file=") {
                    Some(path) if !path.is_empty() => {
                        Ok(RoutingSpec::Ordering(OrderingSource::File(path.into())))
                    }
                    _ => Err(bad()),
                },
            },
            ("service_dor", Some(a)) => {
                let kind: ServiceKind = a.parse().map_err(|_| bad())?;
                Ok(RoutingSpec::ServiceDor(kind))
            }
            ("tera", Some(a)) => {
                let mut service = None;
                let mut q = DEFAULT_DIRECT_PREFERENCE;
                for part in split_args(a) {
                    if let Some(v) = part.strip_prefix("service=") {
                        service = Some(v.parse::<ServiceKind>().map_err(|_| bad())?);
                    } else if let Some(v) = part.strip_prefix("q=") {
                        q = v.parse().map_err(|_| bad())?;
                    } else {
                        return Err(bad());
                    }
                }
                Ok(RoutingSpec::Tera {
                    service: service.ok_or_else(bad)?,
                    q,
                })
            }
            ("hyperx_tera", Some(a)) => {
                let mut order = None;
                let mut q = DEFAULT_DIRECT_PREFERENCE;
                for part in split_args(a) {
                    if let Some(v) = part.strip_prefix("order=") {
                        order = Some(match v {
                            "dor" => DimOrder::Dor,
                            "o1turn" => DimOrder::O1turn,
                            _ => return Err(bad()),
                        });
                    } else if let Some(v) = part.strip_prefix("q=") {
                        q = v.parse().map_err(|_| bad())?;
                    } else {
                        return Err(bad());
                    }
                }
                Ok(RoutingSpec::HyperxTera {
                    order: order.ok_or_else(bad)?,
                    q,
                })
            }
            _ => Err(bad()),
        }
    }
}

/// A packet's routing position: current switch, destination switch, whether
/// it is still at its injection point, and the router-private state.
#[derive(Debug, Clone, Copy)]
pub struct RouteQuery {
    pub cur: u32,
    pub dst_switch: u32,
    pub injecting: bool,
    pub state: u32,
}

/// One candidate output: a port of the current switch, the virtual channel to
/// request, the weight terms, and the packet state after taking it. A
/// candidate's arbitration weight is occupancy * scale + bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteOption {
    pub port: u16,
    pub vc: u8,
    pub scale: u32,
    pub bias: u32,
    pub next_state: u32,
}

/// Whether the candidate set competes adaptively or is a single committed hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteMode {
    Adaptive,
    Committed,
}

/// Occupancy of the current switch's output ports, in flits buffered plus
/// committed.
pub trait OccupancyView {
    fn occupancy(&self, port: usize) -> u32;
}

/// Zero-occupancy view for construction-time and verification callers.
pub struct IdleOutputs;

impl OccupancyView for IdleOutputs {
    fn occupancy(&self, _port: usize) -> u32 {
        0
    }
}

/// A routing function bound to a network.
pub trait Router {
    /// Virtual channels this routing needs on every link.
    fn vcs(&self) -> usize;

    /// Worst-case switch-to-switch hops of any legal route.
    fn max_hops(&self) -> usize;

    /// Candidate outputs for the current hop. Called once per hop when the
    /// packet's head starts arbitration; any sampling happens here.
    fn route(
        &self,
        q: &RouteQuery,
        occ: &dyn OccupancyView,
        rng: &mut dyn RngCore,
        out: &mut Vec<RouteOption>,
    ) -> RouteMode;

    /// Superset of every option [`route`](Self::route) could produce at this
    /// query under any random draw and any occupancy, for dependency-graph
    /// enumeration.
    fn all_options(&self, q: &RouteQuery, out: &mut Vec<RouteOption>);
}

/// Build a router for `spec` against `net`.
pub fn build_router(spec: &RoutingSpec, net: Rc<Network>) -> Result<Box<dyn Router>, RoutingError> {
    let needs_mesh = |requirement: &str| -> Result<(), RoutingError> {
        match net.model() {
            NetworkModel::FullMesh { .. } => Ok(()),
            _ => Err(RoutingError::Unsupported {
                routing: spec.to_string(),
                requirement: requirement.into(),
            }),
        }
    };
    match spec {
        RoutingSpec::Min => {
            needs_mesh("a full-mesh network")?;
            Ok(Box::new(MinRouter { net }))
        }
        RoutingSpec::Valiant => {
            needs_mesh("a full-mesh network")?;
            Ok(Box::new(ValiantRouter { net }))
        }
        RoutingSpec::Ugal => {
            needs_mesh("a full-mesh network")?;
            Ok(Box::new(UgalRouter { net }))
        }
        RoutingSpec::OmniWar => {
            needs_mesh("a full-mesh network")?;
            Ok(Box::new(OmniWarRouter {
                net,
                q: DEFAULT_DIRECT_PREFERENCE,
            }))
        }
        RoutingSpec::Unrestricted => {
            needs_mesh("a full-mesh network")?;
            Ok(Box::new(UnrestrictedRouter {
                net,
                q: DEFAULT_DIRECT_PREFERENCE,
            }))
        }
        RoutingSpec::Ordering(source) => {
            needs_mesh("a full-mesh network")?;
            let lab = match source {
                OrderingSource::Srinr => ordering::srinr_labelling(net.switches()),
                OrderingSource::File(path) => {
                    let text =
                        std::fs::read_to_string(path).map_err(|e| RoutingError::OrderingFile {
                            path: path.clone(),
                            source: Box::new(e),
                        })?;
                    ordering::import_labelling(&text).map_err(|e| RoutingError::OrderingFile {
                        path: path.clone(),
                        source: Box::new(e),
                    })?
                }
            };
            if lab.switches() != net.switches() {
                return Err(RoutingError::LabellingMismatch {
                    labelled: lab.switches(),
                    actual: net.switches(),
                });
            }
            let spray = vec![Cell::new(0); net.switches() * net.switches()];
            Ok(Box::new(OrderingRouter {
                net,
                lab,
                q: DEFAULT_DIRECT_PREFERENCE,
                spray,
            }))
        }
        RoutingSpec::ServiceDor(kind) => {
            needs_mesh("a full-mesh network")?;
            let emb = mesh_embedding(&net, spec, Some(kind))?;
            Ok(Box::new(ServiceDorRouter { net, emb }))
        }
        RoutingSpec::Tera { service, q } => {
            needs_mesh("a full-mesh network")?;
            let emb = mesh_embedding(&net, spec, Some(service))?;
            Ok(Box::new(TeraRouter { net, emb, q: *q }))
        }
        RoutingSpec::HyperxTera { order, q } => match net.model() {
            NetworkModel::Grid2d { .. } => Ok(Box::new(HyperxTeraRouter {
                net,
                order: *order,
                q: *q,
            })),
            _ => Err(RoutingError::Unsupported {
                routing: spec.to_string(),
                requirement: "a two-dimensional grid network".into(),
            }),
        },
    }
}

/// Fetch the mesh embedding, checking it matches the requested service kind.
fn mesh_embedding(
    net: &Network,
    spec: &RoutingSpec,
    want: Option<&ServiceKind>,
) -> Result<Embedding, RoutingError> {
    match net.model() {
        NetworkModel::FullMesh {
            embedding: Some(e), ..
        } => {
            if let Some(k) = want {
                if e.kind() != k {
                    return Err(RoutingError::Unsupported {
                        routing: spec.to_string(),
                        requirement: format!(
                            "an embedded `{k}` service (network has `{}`)",
                            e.kind()
                        ),
                    });
                }
            }
            Ok(e.clone())
        }
        _ => Err(RoutingError::Unsupported {
            routing: spec.to_string(),
            requirement: "an embedded service topology".into(),
        }),
    }
}

fn opt(net: &Network, cur: usize, nb: usize, vc: u8, bias: u32, next_state: u32) -> RouteOption {
    RouteOption {
        port: net.port_of(cur, nb) as u16,
        vc,
        scale: 1,
        bias,
        next_state,
    }
}

struct MinRouter {
    net: Rc<Network>,
}

impl Router for MinRouter {
    fn vcs(&self) -> usize {
        1
    }

    fn max_hops(&self) -> usize {
        1
    }

    fn route(
        &self,
        q: &RouteQuery,
        _occ: &dyn OccupancyView,
        _rng: &mut dyn RngCore,
        out: &mut Vec<RouteOption>,
    ) -> RouteMode {
        out.push(opt(&self.net, q.cur as usize, q.dst_switch as usize, 0, 0, 0));
        RouteMode::Committed
    }

    fn all_options(&self, q: &RouteQuery, out: &mut Vec<RouteOption>) {
        out.push(opt(&self.net, q.cur as usize, q.dst_switch as usize, 0, 0, 0));
    }
}

/// Second-hop marker for the two-hop committed disciplines.
const SECOND_HOP: u32 = 1;

struct ValiantRouter {
    net: Rc<Network>,
}

impl Router for ValiantRouter {
    fn vcs(&self) -> usize {
        2
    }

    fn max_hops(&self) -> usize {
        2
    }

    fn route(
        &self,
        q: &RouteQuery,
        _occ: &dyn OccupancyView,
        rng: &mut dyn RngCore,
        out: &mut Vec<RouteOption>,
    ) -> RouteMode {
        let (cur, dst) = (q.cur as usize, q.dst_switch as usize);
        if q.state == SECOND_HOP {
            out.push(opt(&self.net, cur, dst, 1, 0, SECOND_HOP));
            return RouteMode::Committed;
        }
        // The intermediate is drawn over every switch. Degenerate draws
        // collapse to the direct link: sampling the source skips the detour
        // leg (the remaining hop rides the second-leg VC), sampling the
        // destination ends the walk on arrival. Without them the direct
        // links sit idle under switch permutations.
        let mid = rng.gen_range(0..self.net.switches());
        out.push(if mid == cur {
            opt(&self.net, cur, dst, 1, 0, SECOND_HOP)
        } else if mid == dst {
            opt(&self.net, cur, dst, 0, 0, SECOND_HOP)
        } else {
            opt(&self.net, cur, mid, 0, 0, SECOND_HOP)
        });
        RouteMode::Committed
    }

    fn all_options(&self, q: &RouteQuery, out: &mut Vec<RouteOption>) {
        let (cur, dst) = (q.cur as usize, q.dst_switch as usize);
        if q.state == SECOND_HOP {
            out.push(opt(&self.net, cur, dst, 1, 0, SECOND_HOP));
            return;
        }
        for m in 0..self.net.switches() {
            if m != cur && m != dst {
                out.push(opt(&self.net, cur, m, 0, 0, SECOND_HOP));
            }
        }
        out.push(opt(&self.net, cur, dst, 0, 0, SECOND_HOP));
        out.push(opt(&self.net, cur, dst, 1, 0, SECOND_HOP));
    }
}

struct UgalRouter {
    net: Rc<Network>,
}

impl Router for UgalRouter {
    fn vcs(&self) -> usize {
        2
    }

    fn max_hops(&self) -> usize {
        2
    }

    fn route(
        &self,
        q: &RouteQuery,
        _occ: &dyn OccupancyView,
        rng: &mut dyn RngCore,
        out: &mut Vec<RouteOption>,
    ) -> RouteMode {
        let (cur, dst) = (q.cur as usize, q.dst_switch as usize);
        if q.state == SECOND_HOP {
            out.push(opt(&self.net, cur, dst, 1, 0, SECOND_HOP));
            return RouteMode::Committed;
        }
        let n = self.net.switches();
        if n < 3 {
            out.push(opt(&self.net, cur, dst, 0, 0, 0));
            return RouteMode::Committed;
        }
        // One detour candidate is drawn per packet; endpoint draws take the
        // minimal route outright. The minimal hop wins while its occupancy
        // stays within twice the detour's, re-read at every arbitration.
        // Doubling both sides and adding one to the detour keeps that rule
        // exact in integers with the tie going to the minimal hop.
        let mid = rng.gen_range(0..n);
        if mid == cur || mid == dst {
            out.push(opt(&self.net, cur, dst, 0, 0, 0));
            return RouteMode::Committed;
        }
        let mut direct = opt(&self.net, cur, dst, 0, 0, 0);
        direct.scale = 2;
        let mut detour = opt(&self.net, cur, mid, 0, 1, SECOND_HOP);
        detour.scale = 4;
        out.push(direct);
        out.push(detour);
        RouteMode::Adaptive
    }

    fn all_options(&self, q: &RouteQuery, out: &mut Vec<RouteOption>) {
        let (cur, dst) = (q.cur as usize, q.dst_switch as usize);
        if q.state == SECOND_HOP {
            out.push(opt(&self.net, cur, dst, 1, 0, SECOND_HOP));
            return;
        }
        let mut direct = opt(&self.net, cur, dst, 0, 0, 0);
        direct.scale = 2;
        out.push(direct);
        for m in 0..self.net.switches() {
            if m != cur && m != dst {
                let mut detour = opt(&self.net, cur, m, 0, 1, SECOND_HOP);
                detour.scale = 4;
                out.push(detour);
            }
        }
    }
}

struct OmniWarRouter {
    net: Rc<Network>,
    q: u32,
}

impl Router for OmniWarRouter {
    fn vcs(&self) -> usize {
        2
    }

    fn max_hops(&self) -> usize {
        2
    }

    fn route(
        &self,
        q: &RouteQuery,
        _occ: &dyn OccupancyView,
        _rng: &mut dyn RngCore,
        out: &mut Vec<RouteOption>,
    ) -> RouteMode {
        self.all_options(q, out);
        if q.state == SECOND_HOP {
            RouteMode::Committed
        } else {
            RouteMode::Adaptive
        }
    }

    fn all_options(&self, q: &RouteQuery, out: &mut Vec<RouteOption>) {
        let (cur, dst) = (q.cur as usize, q.dst_switch as usize);
        if q.state == SECOND_HOP {
            out.push(opt(&self.net, cur, dst, 1, 0, SECOND_HOP));
            return;
        }
        for m in 0..self.net.switches() {
            if m == cur {
                continue;
            }
            let (bias, next) = if m == dst { (0, 0) } else { (self.q, SECOND_HOP) };
            out.push(opt(&self.net, cur, m, 0, bias, next));
        }
    }
}

struct OrderingRouter {
    net: Rc<Network>,
    lab: Labelling,
    q: u32,
    /// Per-pair round-robin cursor into the allowed-intermediate list.
    spray: Vec<Cell<u32>>,
}

impl Router for OrderingRouter {
    fn vcs(&self) -> usize {
        1
    }

    fn max_hops(&self) -> usize {
        2
    }

    fn route(
        &self,
        q: &RouteQuery,
        _occ: &dyn OccupancyView,
        rng: &mut dyn RngCore,
        out: &mut Vec<RouteOption>,
    ) -> RouteMode {
        let (cur, dst) = (q.cur as usize, q.dst_switch as usize);
        if q.state == SECOND_HOP {
            out.push(opt(&self.net, cur, dst, 0, 0, SECOND_HOP));
            return RouteMode::Committed;
        }
        // Arbitration weighs the direct hop against one label-ascending
        // detour per packet, so detour flow spreads evenly over the allowed
        // intermediates instead of pooling on whichever queue is momentarily
        // shortest. A per-pair round-robin cursor keeps the spread exact;
        // a random draw leaves detour links idle at critical load.
        let _ = rng;
        out.push(opt(&self.net, cur, dst, 0, 0, 0));
        let mids = ordering::intermediates(&self.lab, cur, dst);
        if !mids.is_empty() {
            let cursor = &self.spray[cur * self.net.switches() + dst];
            let k = mids[cursor.get() as usize % mids.len()];
            cursor.set(cursor.get().wrapping_add(1));
            out.push(opt(&self.net, cur, k, 0, self.q, SECOND_HOP));
        }
        RouteMode::Adaptive
    }

    fn all_options(&self, q: &RouteQuery, out: &mut Vec<RouteOption>) {
        let (cur, dst) = (q.cur as usize, q.dst_switch as usize);
        if q.state == SECOND_HOP {
            out.push(opt(&self.net, cur, dst, 0, 0, SECOND_HOP));
            return;
        }
        out.push(opt(&self.net, cur, dst, 0, 0, 0));
        for k in ordering::intermediates(&self.lab, cur, dst) {
            out.push(opt(&self.net, cur, k, 0, self.q, SECOND_HOP));
        }
    }
}

struct UnrestrictedRouter {
    net: Rc<Network>,
    q: u32,
}

impl Router for UnrestrictedRouter {
    fn vcs(&self) -> usize {
        1
    }

    fn max_hops(&self) -> usize {
        2
    }

    fn route(
        &self,
        q: &RouteQuery,
        _occ: &dyn OccupancyView,
        _rng: &mut dyn RngCore,
        out: &mut Vec<RouteOption>,
    ) -> RouteMode {
        self.all_options(q, out);
        if q.state == SECOND_HOP {
            RouteMode::Committed
        } else {
            RouteMode::Adaptive
        }
    }

    fn all_options(&self, q: &RouteQuery, out: &mut Vec<RouteOption>) {
        let (cur, dst) = (q.cur as usize, q.dst_switch as usize);
        if q.state == SECOND_HOP {
            out.push(opt(&self.net, cur, dst, 0, 0, SECOND_HOP));
            return;
        }
        for m in 0..self.net.switches() {
            if m == cur {
                continue;
            }
            let (bias, next) = if m == dst { (0, 0) } else { (self.q, SECOND_HOP) };
            out.push(opt(&self.net, cur, m, 0, bias, next));
        }
    }
}

struct ServiceDorRouter {
    net: Rc<Network>,
    emb: Embedding,
}

impl Router for ServiceDorRouter {
    fn vcs(&self) -> usize {
        1
    }

    fn max_hops(&self) -> usize {
        self.emb.diameter()
    }

    fn route(
        &self,
        q: &RouteQuery,
        _occ: &dyn OccupancyView,
        _rng: &mut dyn RngCore,
        out: &mut Vec<RouteOption>,
    ) -> RouteMode {
        self.all_options(q, out);
        RouteMode::Committed
    }

    fn all_options(&self, q: &RouteQuery, out: &mut Vec<RouteOption>) {
        let (cur, dst) = (q.cur as usize, q.dst_switch as usize);
        let hop = self.emb.service_next_hop(cur, dst);
        out.push(opt(&self.net, cur, hop, 0, 0, 0));
    }
}

struct TeraRouter {
    net: Rc<Network>,
    emb: Embedding,
    q: u32,
}

impl Router for TeraRouter {
    fn vcs(&self) -> usize {
        1
    }

    fn max_hops(&self) -> usize {
        1 + self.emb.diameter()
    }

    fn route(
        &self,
        q: &RouteQuery,
        _occ: &dyn OccupancyView,
        _rng: &mut dyn RngCore,
        out: &mut Vec<RouteOption>,
    ) -> RouteMode {
        self.all_options(q, out);
        RouteMode::Adaptive
    }

    fn all_options(&self, q: &RouteQuery, out: &mut Vec<RouteOption>) {
        let (cur, dst) = (q.cur as usize, q.dst_switch as usize);
        let service = self.emb.service_next_hop(cur, dst);
        let bias = |nb: usize| if nb == dst { 0 } else { self.q };
        if q.injecting {
            // Any main-topology neighbor, plus the service escape hop.
            for m in 0..self.net.switches() {
                if m != cur && !self.emb.is_service_arc(cur, m) {
                    out.push(opt(&self.net, cur, m, 0, bias(m), 0));
                }
            }
            out.push(opt(&self.net, cur, service, 0, bias(service), 0));
        } else {
            // Direct completion or the service escape hop.
            out.push(opt(&self.net, cur, service, 0, bias(service), 0));
            if service != dst {
                out.push(opt(&self.net, cur, dst, 0, 0, 0));
            }
        }
    }
}

/// State layout for the two-dimensional composition: bits 0..2 hold the
/// dimension order (0 unset, 1 row-first, 2 column-first), bit 2 marks that
/// the packet already hopped within its current dimension.
const ORDER_XY: u32 = 1;
const ORDER_YX: u32 = 2;
const IN_DIM: u32 = 4;

struct HyperxTeraRouter {
    net: Rc<Network>,
    order: DimOrder,
    q: u32,
}

impl HyperxTeraRouter {
    fn grid(&self) -> (&[usize; 2], &[Embedding; 2]) {
        match self.net.model() {
            NetworkModel::Grid2d { dims, inner } => (dims, inner),
            _ => unreachable!("checked at construction"),
        }
    }

    fn push_dim_options(
        &self,
        q: &RouteQuery,
        order_bits: u32,
        vc: u8,
        out: &mut Vec<RouteOption>,
    ) {
        let (dims, inner) = self.grid();
        let (cur, dst) = (q.cur as usize, q.dst_switch as usize);
        let (cx, cy) = (cur % dims[0], cur / dims[0]);
        let (dx, dy) = (dst % dims[0], dst / dims[0]);
        // First mismatched dimension in this order is corrected now.
        let row_first = order_bits == ORDER_XY;
        let dim = if row_first {
            if cx != dx { 0 } else { 1 }
        } else if cy != dy {
            1
        } else {
            0
        };
        let (local, target) = if dim == 0 { (cx, dx) } else { (cy, dy) };
        debug_assert!(local != target);
        let emb = &inner[dim];
        let global = |k: usize| if dim == 0 { cy * dims[0] + k } else { k * dims[0] + cx };
        let fresh = q.state & IN_DIM == 0;
        let service = emb.service_next_hop(local, target);
        let state_after = |k: usize| {
            order_bits | if k == target { 0 } else { IN_DIM }
        };
        let bias = |k: usize| if k == target { 0 } else { self.q };
        if fresh {
            for k in 0..dims[dim] {
                if k != local && !emb.is_service_arc(local, k) {
                    out.push(opt(&self.net, cur, global(k), vc, bias(k), state_after(k)));
                }
            }
            out.push(opt(
                &self.net,
                cur,
                global(service),
                vc,
                bias(service),
                state_after(service),
            ));
        } else {
            out.push(opt(
                &self.net,
                cur,
                global(service),
                vc,
                bias(service),
                state_after(service),
            ));
            if service != target {
                out.push(opt(&self.net, cur, global(target), vc, 0, state_after(target)));
            }
        }
    }
}

impl Router for HyperxTeraRouter {
    fn vcs(&self) -> usize {
        match self.order {
            DimOrder::Dor => 1,
            DimOrder::O1turn => 2,
        }
    }

    fn max_hops(&self) -> usize {
        let (_, inner) = self.grid();
        (1 + inner[0].diameter()) + (1 + inner[1].diameter())
    }

    fn route(
        &self,
        q: &RouteQuery,
        _occ: &dyn OccupancyView,
        rng: &mut dyn RngCore,
        out: &mut Vec<RouteOption>,
    ) -> RouteMode {
        // An uncommitted packet weighs both orders' first hops at once; the
        // winning output's successor state commits the dimension order, so
        // the choice tracks first-dimension occupancy rather than a coin
        // flip. Each order keeps its own channel either way.
        let _ = rng;
        self.all_options(q, out);
        RouteMode::Adaptive
    }

    fn all_options(&self, q: &RouteQuery, out: &mut Vec<RouteOption>) {
        match (self.order, q.state & 3) {
            (DimOrder::Dor, _) => self.push_dim_options(q, ORDER_XY, 0, out),
            (DimOrder::O1turn, 0) => {
                self.push_dim_options(q, ORDER_XY, 0, out);
                self.push_dim_options(q, ORDER_YX, 1, out);
            }
            (DimOrder::O1turn, ORDER_YX) => self.push_dim_options(q, ORDER_YX, 1, out),
            (DimOrder::O1turn, _) => self.push_dim_options(q, ORDER_XY, 0, out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_complete_graph, embed_service};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mesh_net(n: usize, service: Option<ServiceKind>) -> Rc<Network> {
        let fm = build_complete_graph(n, 8).unwrap();
        let emb = service.map(|k| embed_service(&fm, &k).unwrap());
        Rc::new(Network::full_mesh(fm, emb))
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn neighbor(net: &Network, cur: usize, o: &RouteOption) -> usize {
        net.neighbors(cur)[o.port as usize] as usize
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in [
            "min",
            "valiant",
            "ugal",
            "omniwar",
            "unrestricted",
            "ordering(srinr)",
            "ordering(file=/tmp/lab.txt)",
            "service_dor(hypercube)",
            "tera(service=hyperx(4,4,4),q=54)",
            "tera(service=path,q=10)",
            "hyperx_tera(order=dor,q=54)",
            "hyperx_tera(order=o1turn,q=54)",
        ] {
            let spec: RoutingSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        // q defaults when omitted.
        let t: RoutingSpec = "tera(service=hypercube)".parse().unwrap();
        assert_eq!(
            t,
            RoutingSpec::Tera {
                service: ServiceKind::Hypercube,
                q: DEFAULT_DIRECT_PREFERENCE
            }
        );
        let h: RoutingSpec = "hyperx_tera(order=o1turn)".parse().unwrap();
        assert!(matches!(h, RoutingSpec::HyperxTera { q: 54, .. }));
        assert!("ring".parse::<RoutingSpec>().is_err());
        assert!("tera(q=3)".parse::<RoutingSpec>().is_err());
        assert!("ordering(file=)".parse::<RoutingSpec>().is_err());
    }

    #[test]
    fn min_is_a_single_committed_hop() {
        let net = mesh_net(8, None);
        let r = build_router(&RoutingSpec::Min, net.clone()).unwrap();
        assert_eq!(r.vcs(), 1);
        assert_eq!(r.max_hops(), 1);
        let mut out = Vec::new();
        let q = RouteQuery { cur: 2, dst_switch: 5, injecting: true, state: 0 };
        let mode = r.route(&q, &IdleOutputs, &mut rng(), &mut out);
        assert_eq!(mode, RouteMode::Committed);
        assert_eq!(out.len(), 1);
        assert_eq!(neighbor(&net, 2, &out[0]), 5);
        assert_eq!(out[0].vc, 0);
    }

    #[test]
    fn valiant_sampling_covers_all_switches_and_shifts_vc() {
        let net = mesh_net(8, None);
        let r = build_router(&RoutingSpec::Valiant, net.clone()).unwrap();
        assert_eq!(r.vcs(), 2);
        let mut rng = rng();
        let mut seen = std::collections::HashSet::new();
        let mut one_hop_by_vc = [0usize; 2];
        for _ in 0..800 {
            let mut out = Vec::new();
            let q = RouteQuery { cur: 1, dst_switch: 6, injecting: true, state: 0 };
            assert_eq!(r.route(&q, &IdleOutputs, &mut rng, &mut out), RouteMode::Committed);
            assert_eq!(out.len(), 1);
            assert_eq!(out[0].next_state, SECOND_HOP);
            let mid = neighbor(&net, 1, &out[0]);
            if mid == 6 {
                // An endpoint draw rides the direct link in one hop, on the
                // second-leg VC when the source itself was drawn.
                one_hop_by_vc[out[0].vc as usize] += 1;
                continue;
            }
            assert_eq!(out[0].vc, 0);
            seen.insert(mid);
            let mut second = Vec::new();
            let q2 = RouteQuery {
                cur: mid as u32,
                dst_switch: 6,
                injecting: false,
                state: out[0].next_state,
            };
            assert_eq!(r.route(&q2, &IdleOutputs, &mut rng, &mut second), RouteMode::Committed);
            assert_eq!(neighbor(&net, mid, &second[0]), 6);
            assert_eq!(second[0].vc, 1);
        }
        assert_eq!(seen.len(), 6, "every proper intermediate gets sampled");
        assert!(one_hop_by_vc[0] > 0 && one_hop_by_vc[1] > 0, "both endpoint draws occur");
        let one_hop = one_hop_by_vc[0] + one_hop_by_vc[1];
        assert!((120..280).contains(&one_hop), "2-in-8 draws go direct, got {one_hop}");
        let mut all = Vec::new();
        r.all_options(
            &RouteQuery { cur: 1, dst_switch: 6, injecting: true, state: 0 },
            &mut all,
        );
        assert_eq!(all.len(), 8, "six detours plus the two direct degenerations");
    }

    #[test]
    fn ugal_emits_a_scaled_pair_that_keeps_ties_direct() {
        let net = mesh_net(8, None);
        let r = build_router(&RoutingSpec::Ugal, net.clone()).unwrap();
        let q = RouteQuery { cur: 0, dst_switch: 1, injecting: true, state: 0 };
        let mut rng = rng();
        let weigh = |o: &RouteOption, occ: u32| o.scale as u64 * occ as u64 + o.bias as u64;
        let (mut pairs, mut endpoint_draws) = (0, 0);
        for _ in 0..200 {
            let mut out = Vec::new();
            match r.route(&q, &IdleOutputs, &mut rng, &mut out) {
                RouteMode::Committed => {
                    // Endpoint draws take the minimal route outright.
                    endpoint_draws += 1;
                    assert_eq!(out.len(), 1);
                    assert_eq!(neighbor(&net, 0, &out[0]), 1);
                    assert_eq!((out[0].vc, out[0].next_state), (0, 0));
                }
                RouteMode::Adaptive => {
                    pairs += 1;
                    assert_eq!(out.len(), 2);
                    let (direct, detour) = (out[0], out[1]);
                    assert_eq!(neighbor(&net, 0, &direct), 1);
                    assert_eq!((direct.scale, direct.bias, direct.next_state), (2, 0, 0));
                    let mid = neighbor(&net, 0, &detour);
                    assert!(mid != 0 && mid != 1, "proper draws name a third switch");
                    assert_eq!((detour.scale, detour.bias, detour.next_state), (4, 1, SECOND_HOP));
                    // The integer encoding reproduces the selection rule
                    // exactly: minimal holds at occupancy <= twice the
                    // detour's, with no expressible tie.
                    assert!(weigh(&direct, 2) < weigh(&detour, 1), "2 <= 2*1 keeps minimal");
                    assert!(weigh(&direct, 3) > weigh(&detour, 1), "3 > 2*1 diverts");
                    assert!(weigh(&direct, 0) < weigh(&detour, 0), "idle network stays minimal");
                }
            }
        }
        assert!(pairs > 0 && endpoint_draws > 0);
        // The committed second hop rides the next virtual channel.
        let mut second = Vec::new();
        let q2 = RouteQuery { cur: 3, dst_switch: 1, injecting: false, state: SECOND_HOP };
        assert_eq!(r.route(&q2, &IdleOutputs, &mut rng, &mut second), RouteMode::Committed);
        assert_eq!(neighbor(&net, 3, &second[0]), 1);
        assert_eq!(second[0].vc, 1);
    }

    #[test]
    fn omniwar_offers_every_port_then_commits_direct() {
        let net = mesh_net(8, None);
        let r = build_router(&RoutingSpec::OmniWar, net.clone()).unwrap();
        assert_eq!(r.vcs(), 2);
        assert_eq!(r.max_hops(), 2);
        let mut out = Vec::new();
        let q = RouteQuery { cur: 3, dst_switch: 0, injecting: true, state: 0 };
        assert_eq!(r.route(&q, &IdleOutputs, &mut rng(), &mut out), RouteMode::Adaptive);
        assert_eq!(out.len(), 7);
        for o in &out {
            let nb = neighbor(&net, 3, o);
            assert_eq!(o.vc, 0);
            if nb == 0 {
                assert_eq!(o.bias, 0, "direct hop is unpenalized");
                assert_eq!(o.next_state, 0);
            } else {
                assert_eq!(o.bias, DEFAULT_DIRECT_PREFERENCE);
                assert_eq!(o.next_state, SECOND_HOP);
            }
        }
        let mut second = Vec::new();
        let q2 = RouteQuery { cur: 5, dst_switch: 0, injecting: false, state: SECOND_HOP };
        assert_eq!(r.route(&q2, &IdleOutputs, &mut rng(), &mut second), RouteMode::Committed);
        assert_eq!(second.len(), 1);
        assert_eq!(neighbor(&net, 5, &second[0]), 0);
        assert_eq!(second[0].vc, 1);
    }

    #[test]
    fn ordering_router_cycles_one_labelled_detour_against_direct() {
        let net = mesh_net(8, None);
        let r = build_router(&RoutingSpec::Ordering(OrderingSource::Srinr), net.clone()).unwrap();
        assert_eq!(r.vcs(), 1);
        let lab = ordering::srinr_labelling(8);
        let mut rng = rng();
        for cur in 0..8u32 {
            for dst in 0..8u32 {
                if cur == dst {
                    continue;
                }
                let expected = ordering::intermediates(&lab, cur as usize, dst as usize);
                let q = RouteQuery { cur, dst_switch: dst, injecting: true, state: 0 };
                // The full candidate set backs the verification walks.
                let mut all = Vec::new();
                r.all_options(&q, &mut all);
                let mids: Vec<usize> = all
                    .iter()
                    .map(|o| neighbor(&net, cur as usize, o))
                    .filter(|&m| m != dst as usize)
                    .collect();
                assert_eq!(mids, expected);
                assert_eq!(all.len(), expected.len() + 1);
                // Direct option carries no bias; detours carry the preference.
                for o in &all {
                    let nb = neighbor(&net, cur as usize, o);
                    assert_eq!(o.bias, if nb == dst as usize { 0 } else { DEFAULT_DIRECT_PREFERENCE });
                }
                // Arbitration weighs direct against one detour per packet,
                // and the per-pair cursor walks the allowed set in order.
                let mut seen = Vec::new();
                for _ in 0..2 * expected.len().max(1) {
                    let mut out = Vec::new();
                    assert_eq!(r.route(&q, &IdleOutputs, &mut rng, &mut out), RouteMode::Adaptive);
                    assert_eq!(neighbor(&net, cur as usize, &out[0]), dst as usize);
                    assert_eq!(out[0].bias, 0);
                    if expected.is_empty() {
                        assert_eq!(out.len(), 1);
                    } else {
                        assert_eq!(out.len(), 2);
                        assert_eq!(out[1].bias, DEFAULT_DIRECT_PREFERENCE);
                        seen.push(neighbor(&net, cur as usize, &out[1]));
                    }
                }
                let mut cycle = expected.clone();
                cycle.extend_from_slice(&expected);
                assert_eq!(seen, cycle, "cursor repeats the allowed set in order");
            }
        }
    }

    #[test]
    fn ordering_router_loads_labelling_files() {
        let net = mesh_net(5, None);
        let path = std::env::temp_dir().join("flitsim_lab_roundtrip.txt");
        std::fs::write(&path, ordering::export_labelling(&ordering::srinr_labelling(5))).unwrap();
        let spec = RoutingSpec::Ordering(OrderingSource::File(path.display().to_string()));
        assert!(build_router(&spec, net).is_ok());
        let small = mesh_net(6, None);
        assert!(matches!(
            build_router(&spec, small),
            Err(RoutingError::LabellingMismatch { labelled: 5, actual: 6 })
        ));
        let missing = RoutingSpec::Ordering(OrderingSource::File("/nonexistent/lab".into()));
        assert!(matches!(
            build_router(&missing, mesh_net(5, None)),
            Err(RoutingError::OrderingFile { .. })
        ));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn tera_always_offers_the_service_escape() {
        let net = mesh_net(16, Some(ServiceKind::Hypercube));
        let spec = RoutingSpec::Tera { service: ServiceKind::Hypercube, q: 54 };
        let r = build_router(&spec, net.clone()).unwrap();
        assert_eq!(r.vcs(), 1);
        assert_eq!(r.max_hops(), 1 + 4);
        let emb = match net.model() {
            NetworkModel::FullMesh { embedding: Some(e), .. } => e.clone(),
            _ => unreachable!(),
        };
        for cur in 0..16u32 {
            for dst in 0..16u32 {
                if cur == dst {
                    continue;
                }
                for injecting in [true, false] {
                    let mut out = Vec::new();
                    let q = RouteQuery { cur, dst_switch: dst, injecting, state: 0 };
                    r.all_options(&q, &mut out);
                    let service_hop = emb.service_next_hop(cur as usize, dst as usize);
                    assert!(
                        out.iter().any(|o| neighbor(&net, cur as usize, o) == service_hop),
                        "service hop offered at ({cur}, {dst}, injecting={injecting})"
                    );
                    assert!(
                        out.iter().any(|o| {
                            let nb = neighbor(&net, cur as usize, o);
                            nb == dst as usize && o.bias == 0
                        }),
                        "unbiased direct option at ({cur}, {dst})"
                    );
                    if injecting {
                        // All 11 main neighbors plus the service hop.
                        assert_eq!(out.len(), 12);
                    } else {
                        assert!(out.len() <= 2);
                    }
                    for o in &out {
                        assert_eq!(o.vc, 0);
                        let nb = neighbor(&net, cur as usize, o);
                        assert_eq!(o.bias, if nb == dst as usize { 0 } else { 54 });
                    }
                }
            }
        }
    }

    #[test]
    fn tera_requires_a_matching_embedding() {
        let bare = mesh_net(16, None);
        let spec = RoutingSpec::Tera { service: ServiceKind::Hypercube, q: 54 };
        assert!(matches!(
            build_router(&spec, bare),
            Err(RoutingError::Unsupported { .. })
        ));
        let other = mesh_net(16, Some(ServiceKind::Path));
        assert!(matches!(
            build_router(&spec, other),
            Err(RoutingError::Unsupported { .. })
        ));
        let grid = Rc::new(Network::grid2d(4, 4, 8, &ServiceKind::Hypercube).unwrap());
        assert!(matches!(
            build_router(&RoutingSpec::Min, grid),
            Err(RoutingError::Unsupported { .. })
        ));
    }

    #[test]
    fn service_dor_walks_the_embedded_route() {
        let net = mesh_net(16, Some(ServiceKind::HyperX(vec![4, 4])));
        let spec = RoutingSpec::ServiceDor(ServiceKind::HyperX(vec![4, 4]));
        let r = build_router(&spec, net.clone()).unwrap();
        assert_eq!(r.max_hops(), 2);
        let mut cur = 0u32;
        let dst = 15u32;
        let mut hops = 0;
        while cur != dst {
            let mut out = Vec::new();
            let q = RouteQuery { cur, dst_switch: dst, injecting: hops == 0, state: 0 };
            assert_eq!(r.route(&q, &IdleOutputs, &mut rng(), &mut out), RouteMode::Committed);
            assert_eq!(out.len(), 1);
            cur = neighbor(&net, cur as usize, &out[0]) as u32;
            hops += 1;
            assert!(hops <= r.max_hops());
        }
        assert_eq!(hops, 2);
    }

    #[test]
    fn unrestricted_router_offers_every_detour() {
        let net = mesh_net(6, None);
        let r = build_router(&RoutingSpec::Unrestricted, net.clone()).unwrap();
        let mut out = Vec::new();
        let q = RouteQuery { cur: 0, dst_switch: 3, injecting: true, state: 0 };
        r.all_options(&q, &mut out);
        assert_eq!(out.len(), 5);
        assert_eq!(r.vcs(), 1);
    }

    #[test]
    fn hyperx_dor_corrects_rows_then_columns() {
        let net = Rc::new(Network::grid2d(4, 4, 8, &ServiceKind::Hypercube).unwrap());
        let spec = RoutingSpec::HyperxTera { order: DimOrder::Dor, q: 54 };
        let r = build_router(&spec, net.clone()).unwrap();
        assert_eq!(r.vcs(), 1);
        assert_eq!(r.max_hops(), 2 * (1 + 2));
        // From (1, 1) to (2, 3): the first hop stays within the row.
        let q = RouteQuery { cur: 5, dst_switch: 14, injecting: true, state: 0 };
        let mut out = Vec::new();
        assert_eq!(r.route(&q, &IdleOutputs, &mut rng(), &mut out), RouteMode::Adaptive);
        for o in &out {
            let nb = neighbor(&net, 5, o);
            assert_eq!(nb / 4, 1, "row-first order moves within the row");
            assert_eq!(o.vc, 0);
        }
        // Row corrected: the next hop moves within the column, state fresh.
        let q2 = RouteQuery { cur: 6, dst_switch: 14, injecting: false, state: ORDER_XY };
        let mut out2 = Vec::new();
        r.route(&q2, &IdleOutputs, &mut rng(), &mut out2);
        for o in &out2 {
            let nb = neighbor(&net, 6, o);
            assert_eq!(nb % 4, 2, "column correction keeps the row coordinate");
        }
        // Destination local index is always a zero-bias candidate.
        assert!(out2.iter().any(|o| neighbor(&net, 6, o) == 14 && o.bias == 0));
    }

    #[test]
    fn hyperx_o1turn_uses_one_channel_per_order() {
        let net = Rc::new(Network::grid2d(4, 4, 8, &ServiceKind::Hypercube).unwrap());
        let spec = RoutingSpec::HyperxTera { order: DimOrder::O1turn, q: 54 };
        let r = build_router(&spec, net.clone()).unwrap();
        assert_eq!(r.vcs(), 2);
        let q = RouteQuery { cur: 5, dst_switch: 14, injecting: true, state: 0 };
        let mut all = Vec::new();
        r.all_options(&q, &mut all);
        assert!(all.iter().any(|o| o.vc == 0) && all.iter().any(|o| o.vc == 1));
        for o in &all {
            let nb = neighbor(&net, 5, o);
            let row_move = nb / 4 == 5 / 4;
            assert_eq!(o.vc == 0, row_move, "row-first rides channel 0");
            assert_eq!(o.next_state & 3, if row_move { ORDER_XY } else { ORDER_YX });
        }
        // Injection offers both orders at once; whichever wins, later hops
        // keep the committed order's channel.
        let mut rng = rng();
        let mut out = Vec::new();
        assert_eq!(r.route(&q, &IdleOutputs, &mut rng, &mut out), RouteMode::Adaptive);
        assert!(out.iter().any(|o| o.vc == 0) && out.iter().any(|o| o.vc == 1));
        for first in &out {
            let next = RouteQuery {
                cur: neighbor(&net, 5, first) as u32,
                dst_switch: 14,
                injecting: false,
                state: first.next_state,
            };
            if next.cur != 14 {
                let mut later = Vec::new();
                r.route(&next, &IdleOutputs, &mut rng, &mut later);
                assert!(!later.is_empty());
                assert!(later.iter().all(|o| o.vc == first.vc), "order keeps its channel");
            }
        }
    }

    #[test]
    fn hyperx_fresh_dimension_entry_offers_main_links() {
        let net = Rc::new(Network::grid2d(8, 8, 8, &ServiceKind::Hypercube).unwrap());
        let spec = RoutingSpec::HyperxTera { order: DimOrder::Dor, q: 54 };
        let r = build_router(&spec, net.clone()).unwrap();
        assert_eq!(r.max_hops(), 8);
        // Fresh in the row dimension: 4 main row peers plus the service hop.
        let q = RouteQuery { cur: 0, dst_switch: 7, injecting: true, state: 0 };
        let mut out = Vec::new();
        r.all_options(&q, &mut out);
        assert_eq!(out.len(), 5);
        // After one non-correcting hop the candidates shrink to escape+direct.
        let mid = out
            .iter()
            .map(|o| neighbor(&net, 0, o))
            .find(|&nb| nb != 7)
            .unwrap();
        let q2 = RouteQuery {
            cur: mid as u32,
            dst_switch: 7,
            injecting: false,
            state: ORDER_XY | IN_DIM,
        };
        let mut out2 = Vec::new();
        r.all_options(&q2, &mut out2);
        assert!(out2.len() <= 2);
        assert!(out2.iter().any(|o| neighbor(&net, mid, o) == 7));
    }
}
