//! Candidate path discovery, action masks and the greedy baselines.
//!
//! All path searches run over the residual graph: links whose channel budget
//! is exhausted are invisible. Edge weights are unit (hop count) and ties are
//! broken by the lexicographically smallest node sequence.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::demand::{DemandSet, RequestId};
use crate::entanglement::{attempt_path, feasible, AttemptResult, NetworkState, Path, PhysParams};
use crate::topology::{EdgeId, NodeId};
use crate::{Error, Result};

/// Nodes and links excluded from a search, on top of exhausted links.
struct Blocked {
    nodes: Vec<bool>,
    edges: Vec<bool>,
}

impl Blocked {
    fn none(state: &NetworkState) -> Self {
        Blocked {
            nodes: vec![false; state.topology().node_count()],
            edges: vec![false; state.topology().edge_count()],
        }
    }
}

fn usable(state: &NetworkState, blocked: &Blocked, edge: EdgeId, to: NodeId) -> bool {
    state.channels(edge) >= 1 && !blocked.edges[edge] && !blocked.nodes[to.0]
}

/// Lexicographically smallest minimum-hop path, or `None` if unreachable.
fn lexmin_shortest(
    state: &NetworkState,
    src: NodeId,
    dst: NodeId,
    blocked: &Blocked,
) -> Option<Path> {
    let topo = state.topology();
    if blocked.nodes[src.0] || blocked.nodes[dst.0] {
        return None;
    }
    // hop distance to dst, then walk greedily from src through the smallest
    // neighbour that gets one hop closer
    let mut dist = vec![usize::MAX; topo.node_count()];
    dist[dst.0] = 0;
    let mut queue = VecDeque::from([dst]);
    while let Some(v) = queue.pop_front() {
        if v == src {
            break;
        }
        for &(w, e) in topo.incident(v).expect("node in range") {
            if dist[w.0] == usize::MAX && usable(state, blocked, e, w) {
                dist[w.0] = dist[v.0] + 1;
                queue.push_back(w);
            }
        }
    }
    if dist[src.0] == usize::MAX {
        return None;
    }
    let mut nodes = vec![src];
    let mut edges = Vec::with_capacity(dist[src.0]);
    let mut cur = src;
    while cur != dst {
        let &(next, e) = topo
            .incident(cur)
            .expect("node in range")
            .iter()
            .find(|&&(w, e)| {
                dist[w.0] != usize::MAX
                    && dist[w.0] + 1 == dist[cur.0]
                    && usable(state, blocked, e, w)
            })
            .expect("bfs layer has a predecessor");
        nodes.push(next);
        edges.push(e);
        cur = next;
    }
    Some(Path::from_parts(nodes, edges))
}

fn check_endpoints(state: &NetworkState, src: NodeId, dst: NodeId) -> Result<()> {
    for n in [src, dst] {
        if !state.topology().contains(n) {
            return Err(Error::UnknownNode(n.0));
        }
    }
    if src == dst {
        return Err(Error::Argument(format!(
            "source and destination are both {src}"
        )));
    }
    Ok(())
}

/// Minimum-hop path over links with residual channel capacity.
pub fn shortest_path(state: &NetworkState, src: NodeId, dst: NodeId) -> Result<Option<Path>> {
    check_endpoints(state, src, dst)?;
    Ok(lexmin_shortest(state, src, dst, &Blocked::none(state)))
}

/// Up to `k` loopless paths in `(hops, node sequence)` order (Yen's algorithm).
pub fn k_shortest_paths(
    state: &NetworkState,
    src: NodeId,
    dst: NodeId,
    k: usize,
) -> Result<Vec<Path>> {
    check_endpoints(state, src, dst)?;
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let mut blocked = Blocked::none(state);
    let Some(first) = lexmin_shortest(state, src, dst, &blocked) else {
        return Ok(Vec::new());
    };
    let mut found = vec![first];
    let mut candidates: BTreeSet<(usize, Path)> = BTreeSet::new();

    while found.len() < k {
        let prev = found.last().expect("at least one path").clone();
        for j in 0..prev.hops() {
            let spur = prev.nodes()[j];
            let root = &prev.nodes()[..=j];
            blocked.nodes.fill(false);
            blocked.edges.fill(false);
            for p in &found {
                if p.nodes().len() > j + 1 && &p.nodes()[..=j] == root {
                    blocked.edges[p.edges()[j]] = true;
                }
            }
            for n in &root[..j] {
                blocked.nodes[n.0] = true;
            }
            if let Some(tail) = lexmin_shortest(state, spur, dst, &blocked) {
                let mut nodes = root[..j].to_vec();
                nodes.extend_from_slice(tail.nodes());
                let mut edges = prev.edges()[..j].to_vec();
                edges.extend_from_slice(tail.edges());
                let path = Path::from_parts(nodes, edges);
                if !found.contains(&path) {
                    candidates.insert((path.hops(), path));
                }
            }
        }
        match candidates.pop_first() {
            Some((_, p)) => found.push(p),
            None => break,
        }
    }
    Ok(found)
}

/// Per request slot: its candidate paths (empty for requests no longer pending).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    k: usize,
    slots: Vec<Vec<Path>>,
}

impl CandidateSet {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn slots(&self) -> usize {
        self.slots.len()
    }

    pub fn paths(&self, slot: usize) -> &[Path] {
        self.slots.get(slot).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn get(&self, slot: usize, path: usize) -> Option<&Path> {
        self.slots.get(slot)?.get(path)
    }
}

/// Recomputes the `k` candidates of every pending request over the residual graph.
pub fn candidate_set(state: &NetworkState, demands: &DemandSet, k: usize) -> Result<CandidateSet> {
    let slots = demands
        .requests()
        .iter()
        .map(|r| {
            if r.is_pending() {
                k_shortest_paths(state, r.src, r.dst, k)
            } else {
                Ok(Vec::new())
            }
        })
        .collect::<Result<_>>()?;
    Ok(CandidateSet { k, slots })
}

/// Validity of each action `slot * k + path`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMask {
    k: usize,
    bits: Vec<bool>,
}

impl ActionMask {
    pub fn new(slots: usize, k: usize) -> Self {
        ActionMask {
            k,
            bits: vec![false; slots * k],
        }
    }

    pub fn from_bits(k: usize, bits: Vec<bool>) -> Self {
        assert!(
            k > 0 && bits.len().is_multiple_of(k),
            "mask length must be a multiple of k"
        );
        ActionMask { k, bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_valid(&self, action: usize) -> bool {
        self.bits.get(action).copied().unwrap_or(false)
    }

    pub fn get(&self, slot: usize, path: usize) -> bool {
        path < self.k && self.is_valid(slot * self.k + path)
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    pub fn valid_actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn decode(&self, action: usize) -> (usize, usize) {
        (action / self.k, action % self.k)
    }

    pub fn encode(&self, slot: usize, path: usize) -> usize {
        slot * self.k + path
    }
}

/// Marks `(slot, path)` valid iff the request is pending and the path is feasible.
pub fn build_action_mask(
    state: &NetworkState,
    demands: &DemandSet,
    candidates: &CandidateSet,
    params: &PhysParams,
) -> ActionMask {
    let k = candidates.k();
    let mut mask = ActionMask::new(demands.len(), k);
    for r in demands.requests().iter().filter(|r| r.is_pending()) {
        for (j, path) in candidates.paths(r.id).iter().enumerate().take(k) {
            mask.bits[r.id * k + j] = feasible(state, path, params);
        }
    }
    mask
}

/// One committed baseline attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledAttempt {
    pub request: RequestId,
    pub path: Path,
    pub result: AttemptResult,
}

fn greedy_pass<R: Rng + ?Sized>(
    order: &[RequestId],
    state: &mut NetworkState,
    demands: &mut DemandSet,
    params: &PhysParams,
    rng: &mut R,
) -> Result<Vec<ScheduledAttempt>> {
    let mut schedule = Vec::new();
    for &id in order {
        let req = demands.get(id).expect("order lists known ids").clone();
        if !req.is_pending() {
            continue;
        }
        let Some(path) = shortest_path(state, req.src, req.dst)? else {
            continue;
        };
        if !feasible(state, &path, params) {
            continue;
        }
        let result = attempt_path(state, &path, params, rng)?;
        if result.success {
            demands.resolve(id)?;
        }
        schedule.push(ScheduledAttempt {
            request: id,
            path,
            result,
        });
    }
    Ok(schedule)
}

/// One greedy pass over pending requests in id order, each on its current
/// shortest path when that path is feasible.
pub fn policy_shortest<R: Rng + ?Sized>(
    state: &mut NetworkState,
    demands: &mut DemandSet,
    params: &PhysParams,
    rng: &mut R,
) -> Result<Vec<ScheduledAttempt>> {
    let order: Vec<_> = demands.pending().iter().map(|r| r.id).collect();
    greedy_pass(&order, state, demands, params, rng)
}

/// As [`policy_shortest`], but pending requests are visited in a uniformly
/// random order.
pub fn policy_random<R: Rng + ?Sized>(
    state: &mut NetworkState,
    demands: &mut DemandSet,
    params: &PhysParams,
    rng: &mut R,
) -> Result<Vec<ScheduledAttempt>> {
    let mut order: Vec<_> = demands.pending().iter().map(|r| r.id).collect();
    order.shuffle(rng);
    greedy_pass(&order, state, demands, params, rng)
}
