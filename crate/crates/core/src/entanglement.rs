//! Residual resources and the stochastic entanglement attempt model.
//!
//! Delivering an ebit over an `h`-hop path needs one successful generation per
//! link (probability `p_e` each) and one successful swap at each of the
//! `h - 1` intermediate repeaters (probability `q_v` each). A successful
//! delivery costs 1 qubit at each endpoint, 2 at each intermediate and one
//! channel unit per link. A failed attempt costs nothing.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::topology::{EdgeId, NodeId, Topology};
use crate::{Error, Result};

/// Physical-layer parameters shared by every link and repeater.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    /// Ebit generation success probability per link.
    pub p_e: f64,
    /// Swap success probability per intermediate node.
    pub q_v: f64,
    /// Minimum end-to-end fidelity a delivery must reach.
    pub f_min: f64,
}

impl Default for PhysParams {
    fn default() -> Self {
        PhysParams {
            p_e: 0.9,
            q_v: 0.9,
            f_min: 0.85,
        }
    }
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.p_e) {
            return Err(Error::config("p_e", format!("{} outside [0, 1]", self.p_e)));
        }
        if !unit(self.q_v) {
            return Err(Error::config("q_v", format!("{} outside [0, 1]", self.q_v)));
        }
        if !unit(self.f_min) {
            return Err(Error::config(
                "f_min",
                format!("{} outside [0, 1]", self.f_min),
            ));
        }
        Ok(())
    }

    /// Closed-form probability that an `hops`-hop attempt succeeds.
    pub fn success_probability(&self, hops: usize) -> f64 {
        self.p_e.powi(hops as i32) * self.q_v.powi(hops.saturating_sub(1) as i32)
    }
}

/// A simple path through the topology, with its edge ids resolved.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Path {
    nodes: Vec<NodeId>,
    #[serde(skip)]
    edges: Vec<EdgeId>,
}

impl Path {
    pub fn new(topology: &Topology, nodes: Vec<NodeId>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidPath("a path needs at least two nodes".into()));
        }
        let mut seen = vec![false; topology.node_count()];
        for &n in &nodes {
            if !topology.contains(n) {
                return Err(Error::UnknownNode(n.0));
            }
            if std::mem::replace(&mut seen[n.0], true) {
                return Err(Error::InvalidPath(format!("node {n} repeats")));
            }
        }
        let edges = nodes
            .windows(2)
            .map(|w| {
                topology.edge_between(w[0], w[1]).ok_or_else(|| {
                    Error::InvalidPath(format!("{} and {} are not adjacent", w[0], w[1]))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Path { nodes, edges })
    }

    /// Builds a path from node indices; test and fixture convenience.
    pub fn from_indices(topology: &Topology, nodes: &[usize]) -> Result<Self> {
        Path::new(topology, nodes.iter().copied().map(NodeId).collect())
    }

    pub(crate) fn from_parts(nodes: Vec<NodeId>, edges: Vec<EdgeId>) -> Self {
        debug_assert_eq!(nodes.len(), edges.len() + 1);
        Path { nodes, edges }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeId] {
        &self.edges
    }

    pub fn hops(&self) -> usize {
        self.edges.len()
    }

    pub fn src(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn dst(&self) -> NodeId {
        *self.nodes.last().expect("non-empty path")
    }

    pub fn intermediates(&self) -> &[NodeId] {
        &self.nodes[1..self.nodes.len() - 1]
    }

    /// Qubits each node on the path must spend: 1 at the ends, 2 in between.
    pub fn node_costs(&self) -> impl Iterator<Item = (NodeId, u32)> + '_ {
        let last = self.nodes.len() - 1;
        self.nodes
            .iter()
            .enumerate()
            .map(move |(i, &n)| (n, if i == 0 || i == last { 1 } else { 2 }))
    }

    fn check_in(&self, topology: &Topology) -> Result<()> {
        let ok = self.edges.len() + 1 == self.nodes.len()
            && self.nodes.iter().all(|&n| topology.contains(n))
            && self.edges.iter().zip(self.nodes.windows(2)).all(|(&e, w)| {
                e < topology.edge_count() && topology.edge_between(w[0], w[1]) == Some(e)
            });
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidPath(format!(
                "path {:?} does not belong to this topology",
                self.nodes
            )))
        }
    }
}

/// Qubits consumed by a successful delivery over `path`: `2 * hops`.
pub fn qubit_cost(path: &Path) -> u32 {
    path.node_costs().map(|(_, c)| c).sum()
}

/// Mutable residual-resource ledger for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    topology: Arc<Topology>,
    residual_qubits: Vec<u32>,
    residual_channels: Vec<u32>,
}

impl NetworkState {
    /// A fresh ledger with every resource at full capacity.
    pub fn new(topology: Arc<Topology>) -> Self {
        let residual_qubits = topology.nodes().iter().map(|n| n.qubits).collect();
        let residual_channels = topology.edges().iter().map(|e| e.capacity).collect();
        NetworkState {
            topology,
            residual_qubits,
            residual_channels,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn topology_arc(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn residual_qubits(&self) -> &[u32] {
        &self.residual_qubits
    }

    pub fn residual_channels(&self) -> &[u32] {
        &self.residual_channels
    }

    pub fn qubits(&self, node: NodeId) -> u32 {
        self.residual_qubits[node.0]
    }

    pub fn channels(&self, edge: EdgeId) -> u32 {
        self.residual_channels[edge]
    }

    /// Overrides one node's residual qubits, clamped to its capacity.
    pub fn set_qubits(&mut self, node: NodeId, value: u32) {
        self.residual_qubits[node.0] = value.min(self.topology.qubit_capacity(node));
    }

    /// Overrides one edge's residual channel units, clamped to its capacity.
    pub fn set_channels(&mut self, edge: EdgeId, value: u32) {
        self.residual_channels[edge] = value.min(self.topology.edge(edge).capacity);
    }

    pub fn total_qubits_used(&self) -> u64 {
        self.topology
            .nodes()
            .iter()
            .zip(&self.residual_qubits)
            .map(|(n, &r)| u64::from(n.qubits - r))
            .sum()
    }

    pub fn total_channels_used(&self) -> u64 {
        self.topology
            .edges()
            .iter()
            .zip(&self.residual_channels)
            .map(|(e, &r)| u64::from(e.capacity - r))
            .sum()
    }
}

/// End-to-end fidelity of `path`: the product of its link fidelities.
pub fn path_fidelity(state: &NetworkState, path: &Path) -> Result<f64> {
    path.check_in(state.topology())?;
    Ok(fidelity_of(state.topology(), path))
}

fn fidelity_of(topology: &Topology, path: &Path) -> f64 {
    path.edges()
        .iter()
        .map(|&e| topology.edge(e).fidelity)
        .product()
}

/// True iff the residual resources can pay for `path` and its fidelity meets `f_min`.
pub fn feasible(state: &NetworkState, path: &Path, params: &PhysParams) -> bool {
    if path.check_in(state.topology()).is_err() {
        return false;
    }
    path.node_costs().all(|(n, c)| state.qubits(n) >= c)
        && path.edges().iter().all(|&e| state.channels(e) >= 1)
        && fidelity_of(state.topology(), path) >= params.f_min
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureStage {
    None,
    Generation,
    Swap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttemptResult {
    pub success: bool,
    pub realized_fidelity: f64,
    pub qubits_consumed: u32,
    pub channels_consumed: u32,
    pub failure_stage: FailureStage,
}

/// Runs one delivery attempt over `path` and commits its resources on success.
///
/// Draws one uniform per link (in path order) and then one per intermediate
/// node (in path order), always the full `2h - 1` draws, so the random stream
/// advances identically whether or not an early draw fails.
pub fn attempt_path<R: Rng + ?Sized>(
    state: &mut NetworkState,
    path: &Path,
    params: &PhysParams,
    rng: &mut R,
) -> Result<AttemptResult> {
    if !feasible(state, path, params) {
        return Err(Error::Contract(format!(
            "attempt on infeasible path {:?}",
            path.nodes()
        )));
    }
    let generated = path
        .edges()
        .iter()
        .map(|_| rng.random::<f64>() < params.p_e)
        .fold(true, |acc, ok| acc & ok);
    let swapped = path
        .intermediates()
        .iter()
        .map(|_| rng.random::<f64>() < params.q_v)
        .fold(true, |acc, ok| acc & ok);

    let failure_stage = match (generated, swapped) {
        (false, _) => FailureStage::Generation,
        (true, false) => FailureStage::Swap,
        (true, true) => FailureStage::None,
    };
    if failure_stage != FailureStage::None {
        return Ok(AttemptResult {
            success: false,
            realized_fidelity: 0.0,
            qubits_consumed: 0,
            channels_consumed: 0,
            failure_stage,
        });
    }

    for (n, c) in path.node_costs() {
        state.residual_qubits[n.0] -= c;
    }
    for &e in path.edges() {
        state.residual_channels[e] -= 1;
    }
    Ok(AttemptResult {
        success: true,
        realized_fidelity: fidelity_of(state.topology(), path),
        qubits_consumed: qubit_cost(path),
        channels_consumed: path.hops() as u32,
        failure_stage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::topology::{grid_topology, Edge, Node, TopologyConfig};

    /// Line graph 0 - 1 - ... - (n-1) with the given link fidelities.
    fn line(fidelities: &[f64], qubits: u32) -> Arc<Topology> {
        let nodes = (0..=fidelities.len())
            .map(|i| Node {
                id: NodeId(i),
                qubits,
            })
            .collect();
        let edges = fidelities
            .iter()
            .enumerate()
            .map(|(i, &f)| Edge {
                u: NodeId(i),
                v: NodeId(i + 1),
                capacity: 30,
                fidelity: f,
            })
            .collect();
        Arc::new(Topology::new(nodes, edges).unwrap())
    }

    fn full_path(t: &Topology) -> Path {
        Path::new(t, (0..t.node_count()).map(NodeId).collect()).unwrap()
    }

    #[test]
    fn fidelity_is_product_of_links() {
        let t = line(&[0.8], 4);
        let s = NetworkState::new(t.clone());
        assert_eq!(path_fidelity(&s, &full_path(&t)).unwrap(), 0.8);

        let t = line(&[0.9, 0.9], 4);
        let s = NetworkState::new(t.clone());
        assert!((path_fidelity(&s, &full_path(&t)).unwrap() - 0.81).abs() < 1e-15);

        let t = line(&[0.95, 0.95, 0.95], 4);
        let s = NetworkState::new(t.clone());
        assert!((path_fidelity(&s, &full_path(&t)).unwrap() - 0.857375).abs() < 1e-15);
    }

    #[test]
    fn foreign_path_is_rejected() {
        let big = grid_topology(&TopologyConfig::grid(3, 3), 0).unwrap();
        let p = Path::from_indices(&big, &[0, 3, 6]).unwrap();
        let s = NetworkState::new(line(&[0.9], 4));
        assert!(matches!(path_fidelity(&s, &p), Err(Error::InvalidPath(_))));
        assert!(!feasible(&s, &p, &PhysParams::default()));
    }

    #[test]
    fn path_construction_errors() {
        let t = grid_topology(&TopologyConfig::grid(3, 3), 0).unwrap();
        assert!(Path::from_indices(&t, &[0]).is_err());
        assert!(Path::from_indices(&t, &[0, 4]).is_err());
        assert!(Path::from_indices(&t, &[0, 1, 0]).is_err());
        assert!(Path::from_indices(&t, &[0, 9]).is_err());
    }

    #[test]
    fn qubit_cost_is_two_per_hop() {
        let t = grid_topology(&TopologyConfig::grid(1, 6), 0).unwrap();
        for (nodes, expected) in [
            (&[0, 1][..], 2),
            (&[0, 1, 2, 3][..], 6),
            (&[0, 1, 2, 3, 4, 5][..], 10),
        ] {
            let p = Path::from_indices(&t, nodes).unwrap();
            let by_node: u32 = p
                .nodes()
                .iter()
                .enumerate()
                .map(|(i, _)| if i == 0 || i == nodes.len() - 1 { 1 } else { 2 })
                .sum();
            assert_eq!(qubit_cost(&p), expected);
            assert_eq!(by_node, expected);
            assert_eq!(qubit_cost(&p), 2 * p.hops() as u32);
        }
    }

    #[test]
    fn feasibility_checks() {
        let t = line(&[0.95, 0.95], 4);
        let p = full_path(&t);
        let mut s = NetworkState::new(t);
        let mut params = PhysParams::default();
        assert!(feasible(&s, &p, &params), "0.9025 >= 0.85");
        params.f_min = 0.95;
        assert!(!feasible(&s, &p, &params), "0.9025 < 0.95");
        params.f_min = 0.85;
        s.set_qubits(NodeId(1), 1);
        assert!(!feasible(&s, &p, &params), "intermediate needs 2");
        s.set_qubits(NodeId(1), 2);
        s.set_qubits(NodeId(0), 0);
        assert!(!feasible(&s, &p, &params), "endpoint needs 1");
        s.set_qubits(NodeId(0), 1);
        assert!(feasible(&s, &p, &params));
        s.set_channels(1, 0);
        assert!(!feasible(&s, &p, &params), "link exhausted");
    }

    #[test]
    fn certain_success_consumes_two_per_hop() {
        let t = line(&[1.0, 1.0, 1.0], 4);
        let p = full_path(&t);
        let mut s = NetworkState::new(t);
        let params = PhysParams {
            p_e: 1.0,
            q_v: 1.0,
            f_min: 0.85,
        };
        let r = attempt_path(&mut s, &p, &params, &mut seed::rng(0)).unwrap();
        assert!(r.success);
        assert_eq!(r.failure_stage, FailureStage::None);
        assert_eq!(r.qubits_consumed, 6);
        assert_eq!(r.channels_consumed, 3);
        assert_eq!(r.realized_fidelity, 1.0);
        assert_eq!(s.residual_qubits(), &[3, 2, 2, 3]);
        assert_eq!(s.residual_channels(), &[29, 29, 29]);
        assert_eq!(s.total_qubits_used(), 6);
        assert_eq!(s.total_channels_used(), 3);
    }

    #[test]
    fn certain_failure_is_atomic() {
        let t = line(&[0.95, 0.95], 4);
        let p = full_path(&t);
        let mut s = NetworkState::new(t);
        let before = s.clone();
        let gen_fail = PhysParams {
            p_e: 0.0,
            q_v: 1.0,
            f_min: 0.85,
        };
        let r = attempt_path(&mut s, &p, &gen_fail, &mut seed::rng(1)).unwrap();
        assert!(!r.success);
        assert_eq!(r.failure_stage, FailureStage::Generation);
        assert_eq!((r.qubits_consumed, r.channels_consumed), (0, 0));
        assert_eq!(s, before);

        let swap_fail = PhysParams {
            p_e: 1.0,
            q_v: 0.0,
            f_min: 0.85,
        };
        let r = attempt_path(&mut s, &p, &swap_fail, &mut seed::rng(1)).unwrap();
        assert_eq!(r.failure_stage, FailureStage::Swap);
        assert_eq!(s, before);
    }

    #[test]
    fn infeasible_attempt_is_a_contract_violation() {
        let t = line(&[0.7, 0.9], 4);
        let p = full_path(&t);
        let mut s = NetworkState::new(t);
        let err = attempt_path(&mut s, &p, &PhysParams::default(), &mut seed::rng(0));
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn two_hop_success_rate() {
        let t = line(&[1.0, 1.0], 1_000_000);
        let p = full_path(&t);
        let params = PhysParams {
            p_e: 0.9,
            q_v: 0.9,
            f_min: 0.85,
        };
        let mut rng = seed::rng(42);
        let trials = 100_000;
        let mut hits = 0;
        for _ in 0..trials {
            // fresh ledger each time so capacities never bind
            let mut s = NetworkState::new(t.clone());
            hits += attempt_path(&mut s, &p, &params, &mut rng).unwrap().success as usize;
        }
        let rate = hits as f64 / trials as f64;
        assert!((params.success_probability(2) - 0.729).abs() < 1e-15);
        assert!((rate - 0.729).abs() <= 0.01, "rate {rate}");
    }
}
