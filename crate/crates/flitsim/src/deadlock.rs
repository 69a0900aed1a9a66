//! Channel-dependency analysis.
//!
//! Builds the channel dependency graph of a routing function over a network:
//! nodes are (arc, virtual channel) pairs, and an edge u -> v records that a
//! packet holding channel u may request channel v. Acyclicity of this graph
//! rules out routing deadlock. Adaptive candidate sets are over-approximated
//! by including every option the router could emit at every reachable packet
//! state, so the graph is sound for any arbitration.
//!
//! Injection and ejection channels are excluded: they are pure sources and
//! sinks and can never lie on a dependency cycle.

use crate::routing::{RouteOption, Router};
use crate::topology::{ArcClass, Embedding, Network};
use std::collections::{HashMap, HashSet, VecDeque};
use thiserror::Error;

/// Errors surfaced while deriving dependencies from a routing function.
#[derive(Debug, Error)]
pub enum DeadlockError {
    #[error("router emitted port {port} at switch {switch}, which has {ports} ports")]
    CandidateOutsideTopology { switch: u32, port: u16, ports: usize },
    #[error("router emitted virtual channel {vc} but declares only {vcs}")]
    CandidateOutsideVcs { vc: u8, vcs: usize },
}

/// One network channel: a directed arc plus a virtual channel index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Channel {
    pub arc: u32,
    pub vc: u8,
}

/// A packet's routing state during enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Query {
    cur: u32,
    dst: u32,
    state: u32,
    injecting: bool,
}

/// Channel dependency graph over every (arc, vc) channel of a network.
pub struct Cdg {
    vcs: usize,
    ends: Vec<(u32, u32)>,
    adj: Vec<Vec<u32>>,
    edge_count: usize,
}

impl Cdg {
    fn channel(&self, node: u32) -> Channel {
        Channel {
            arc: node / self.vcs as u32,
            vc: (node % self.vcs as u32) as u8,
        }
    }

    /// Total channels, including ones no route touches.
    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn vcs(&self) -> usize {
        self.vcs
    }

    /// True iff the graph holds a directed dependency cycle.
    pub fn has_cycle(&self) -> bool {
        self.find_cycle().is_some()
    }

    /// A witness dependency cycle, as the channel sequence around the loop
    /// (the last channel depends on the first), or `None` when acyclic.
    pub fn find_cycle(&self) -> Option<Vec<Channel>> {
        cycle_in(&self.adj).map(|nodes| nodes.into_iter().map(|n| self.channel(n)).collect())
    }

    /// Endpoint switches of a channel's arc.
    pub fn arc_endpoints(&self, c: Channel) -> (u32, u32) {
        self.ends[c.arc as usize]
    }

    /// Edge list as text, one `src dst vc src dst vc` dependency per line.
    pub fn export_text(&self) -> String {
        let mut lines = Vec::with_capacity(self.edge_count);
        for (u, outs) in self.adj.iter().enumerate() {
            let cu = self.channel(u as u32);
            let (s1, d1) = self.ends[cu.arc as usize];
            for &v in outs {
                let cv = self.channel(v);
                let (s2, d2) = self.ends[cv.arc as usize];
                lines.push(format!("{s1} {d1} {} {s2} {d2} {}", cu.vc, cv.vc));
            }
        }
        lines.sort();
        let mut out = lines.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        out
    }
}

/// Directed cycle search over an adjacency list; returns the node cycle.
fn cycle_in(adj: &[Vec<u32>]) -> Option<Vec<u32>> {
    // 0 unvisited, 1 on the current path, 2 finished.
    let mut color = vec![0u8; adj.len()];
    let mut stack: Vec<(u32, usize)> = Vec::new();
    for root in 0..adj.len() as u32 {
        if color[root as usize] != 0 {
            continue;
        }
        color[root as usize] = 1;
        stack.push((root, 0));
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if *next < adj[node as usize].len() {
                let child = adj[node as usize][*next];
                *next += 1;
                match color[child as usize] {
                    0 => {
                        color[child as usize] = 1;
                        stack.push((child, 0));
                    }
                    1 => {
                        let start = stack.iter().position(|&(n, _)| n == child).unwrap();
                        return Some(stack[start..].iter().map(|&(n, _)| n).collect());
                    }
                    _ => {}
                }
            } else {
                color[node as usize] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Validate and fetch the candidate superset for one query.
fn options_of(
    net: &Network,
    router: &dyn Router,
    q: Query,
    buf: &mut Vec<RouteOption>,
) -> Result<(), DeadlockError> {
    buf.clear();
    router.all_options(
        &crate::routing::RouteQuery {
            cur: q.cur,
            dst_switch: q.dst,
            injecting: q.injecting,
            state: q.state,
        },
        buf,
    );
    let ports = net.neighbors(q.cur as usize).len();
    for o in buf.iter() {
        if o.port as usize >= ports {
            return Err(DeadlockError::CandidateOutsideTopology {
                switch: q.cur,
                port: o.port,
                ports,
            });
        }
        if o.vc as usize >= router.vcs() {
            return Err(DeadlockError::CandidateOutsideVcs {
                vc: o.vc,
                vcs: router.vcs(),
            });
        }
    }
    Ok(())
}

/// Walk every packet state the router can reach, invoking `visit` with the
/// query and its candidate set. Successor states follow each non-terminal
/// candidate (one whose next switch is not the destination).
fn for_each_reachable(
    net: &Network,
    router: &dyn Router,
    mut visit: impl FnMut(Query, &[RouteOption]),
) -> Result<(), DeadlockError> {
    let n = net.switches() as u32;
    let mut seen: HashSet<Query> = HashSet::new();
    let mut queue: VecDeque<Query> = VecDeque::new();
    for src in 0..n {
        for dst in 0..n {
            if src != dst {
                let q = Query { cur: src, dst, state: 0, injecting: true };
                seen.insert(q);
                queue.push_back(q);
            }
        }
    }
    let mut buf = Vec::new();
    while let Some(q) = queue.pop_front() {
        options_of(net, router, q, &mut buf)?;
        for o in &buf {
            let nb = net.neighbors(q.cur as usize)[o.port as usize];
            if nb != q.dst {
                let succ = Query { cur: nb, dst: q.dst, state: o.next_state, injecting: false };
                if seen.insert(succ) {
                    queue.push_back(succ);
                }
            }
        }
        visit(q, &buf);
    }
    Ok(())
}

/// Build the channel dependency graph of `router` over `net`.
pub fn build_cdg(net: &Network, router: &dyn Router) -> Result<Cdg, DeadlockError> {
    let vcs = router.vcs();
    let nodes = net.arc_count() * vcs;
    let mut edges: HashSet<(u32, u32)> = HashSet::new();
    // First pass: remember every reachable query's candidates.
    let mut table: HashMap<Query, Vec<(u32, Channel, u32)>> = HashMap::new();
    for_each_reachable(net, router, |q, opts| {
        let row = opts
            .iter()
            .map(|o| {
                let nb = net.neighbors(q.cur as usize)[o.port as usize];
                let arc = net.arc_id(q.cur as usize, o.port as usize) as u32;
                (nb, Channel { arc, vc: o.vc }, o.next_state)
            })
            .collect();
        table.insert(q, row);
    })?;
    // Second pass: a packet holding the channel of one candidate may request
    // any candidate of the state that hop leads to.
    for (q, row) in &table {
        for &(nb, ch, next_state) in row {
            if nb == q.dst {
                continue;
            }
            let succ = Query { cur: nb, dst: q.dst, state: next_state, injecting: false };
            let node_u = ch.arc * vcs as u32 + ch.vc as u32;
            for &(_, ch2, _) in &table[&succ] {
                let node_v = ch2.arc * vcs as u32 + ch2.vc as u32;
                edges.insert((node_u, node_v));
            }
        }
    }
    let mut adj = vec![Vec::new(); nodes];
    for &(u, v) in &edges {
        adj[u as usize].push(v);
    }
    for outs in &mut adj {
        outs.sort_unstable();
    }
    let ends = (0..net.arc_count())
        .map(|a| {
            let (s, d) = net.arc_endpoints_of(a);
            (s as u32, d as u32)
        })
        .collect();
    Ok(Cdg { vcs, ends, adj, edge_count: edges.len() })
}

/// Escape verification for a routing with a designated service arc set: every
/// reachable in-network state must offer at least one service-arc candidate,
/// and the dependencies incurred while riding only service arcs must be
/// acyclic. Together these give Duato-style deadlock freedom regardless of
/// how the remaining adaptive candidates are used.
fn verify_escape_with(
    net: &Network,
    router: &dyn Router,
    is_service: impl Fn(u32, u32) -> bool,
) -> bool {
    let vcs = router.vcs() as u32;
    let mut table: HashMap<Query, Vec<(u32, u32, u32)>> = HashMap::new();
    let mut escape_ok = true;
    let walk = for_each_reachable(net, router, |q, opts| {
        let row: Vec<(u32, u32, u32)> = opts
            .iter()
            .map(|o| {
                let nb = net.neighbors(q.cur as usize)[o.port as usize];
                let arc = net.arc_id(q.cur as usize, o.port as usize) as u32;
                (nb, arc * vcs + o.vc as u32, o.next_state)
            })
            .collect();
        if !q.injecting && !row.iter().any(|&(nb, _, _)| is_service(q.cur, nb)) {
            escape_ok = false;
        }
        table.insert(q, row);
    });
    if walk.is_err() || !escape_ok {
        return false;
    }
    // Service sub-graph: dependencies between consecutive service-arc hops.
    let mut edges: HashSet<(u32, u32)> = HashSet::new();
    let mut nodes: HashSet<u32> = HashSet::new();
    for (q, row) in &table {
        for &(nb, node_u, next_state) in row {
            if !is_service(q.cur, nb) {
                continue;
            }
            nodes.insert(node_u);
            if nb == q.dst {
                continue;
            }
            let succ = Query { cur: nb, dst: q.dst, state: next_state, injecting: false };
            for &(nb2, node_v, _) in &table[&succ] {
                if is_service(nb, nb2) {
                    nodes.insert(node_v);
                    edges.insert((node_u, node_v));
                }
            }
        }
    }
    let mut ids: Vec<u32> = nodes.into_iter().collect();
    ids.sort_unstable();
    let index: HashMap<u32, u32> =
        ids.iter().enumerate().map(|(i, &n)| (n, i as u32)).collect();
    let mut adj = vec![Vec::new(); ids.len()];
    for &(u, v) in &edges {
        adj[index[&u] as usize].push(index[&v]);
    }
    cycle_in(&adj).is_none()
}

/// Verify the escape-path argument for a router over `net`, taking the
/// service arc set from the network's arc classes.
pub fn verify_escape(net: &Network, router: &dyn Router) -> bool {
    verify_escape_with(net, router, |sw, nb| {
        let port = net.port_of(sw as usize, nb as usize);
        net.arc_class_of(net.arc_id(sw as usize, port)) == ArcClass::Service
    })
}

/// Worst-case hops of any packet: one adaptive hop plus a full service walk.
pub fn max_hop_bound(emb: &Embedding) -> usize {
    1 + emb.diameter()
}

/// Longest switch-to-switch route the router admits over `net`, by search
/// over its reachable states; `None` when some candidate chain never ends.
pub fn route_hop_bound(net: &Network, router: &dyn Router) -> Option<usize> {
    let mut table: HashMap<Query, Vec<(u32, u32)>> = HashMap::new();
    for_each_reachable(net, router, |q, opts| {
        let row = opts
            .iter()
            .map(|o| {
                let nb = net.neighbors(q.cur as usize)[o.port as usize];
                (nb, o.next_state)
            })
            .collect();
        table.insert(q, row);
    })
    .ok()?;
    // Longest-path memo over the state automaton; a revisit on the current
    // chain means an unbounded walk.
    fn longest(
        q: Query,
        table: &HashMap<Query, Vec<(u32, u32)>>,
        memo: &mut HashMap<Query, usize>,
        on_path: &mut HashSet<Query>,
    ) -> Option<usize> {
        if let Some(&h) = memo.get(&q) {
            return Some(h);
        }
        if !on_path.insert(q) {
            return None;
        }
        let mut best = 0;
        for &(nb, next_state) in &table[&q] {
            let hops = if nb == q.dst {
                1
            } else {
                let succ = Query { cur: nb, dst: q.dst, state: next_state, injecting: false };
                1 + longest(succ, table, memo, on_path)?
            };
            best = best.max(hops);
        }
        on_path.remove(&q);
        memo.insert(q, best);
        Some(best)
    }
    let roots: Vec<Query> = table.keys().copied().filter(|q| q.injecting).collect();
    let mut memo = HashMap::new();
    let mut on_path = HashSet::new();
    let mut best = 0;
    for q in roots {
        best = best.max(longest(q, &table, &mut memo, &mut on_path)?);
    }
    Some(best)
}
