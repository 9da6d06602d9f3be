//! Static network graph and the grid generator.

use std::fmt;
use std::path::Path as FsPath;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

/// Dense node index in `[0, N)`. Grid nodes are numbered row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Position of an edge in [`Topology::edges`].
pub type EdgeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    /// Quantum memory units available per episode.
    pub qubits: u32,
}

/// Undirected quantum channel. Stored with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    /// Ebit generations available per episode.
    pub capacity: u32,
    pub fidelity: f64,
}

impl Edge {
    pub fn other(&self, node: NodeId) -> Option<NodeId> {
        if node == self.u {
            Some(self.v)
        } else if node == self.v {
            Some(self.u)
        } else {
            None
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TopologyDoc {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

/// Immutable undirected graph with per-node qubit and per-edge channel capacities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyDoc", into = "TopologyDoc")]
pub struct Topology {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    /// Per node: `(neighbor, edge)` sorted by neighbor index.
    adjacency: Vec<Vec<(NodeId, EdgeId)>>,
}

impl From<Topology> for TopologyDoc {
    fn from(t: Topology) -> Self {
        TopologyDoc {
            nodes: t.nodes,
            edges: t.edges,
        }
    }
}

impl TryFrom<TopologyDoc> for Topology {
    type Error = Error;

    fn try_from(doc: TopologyDoc) -> Result<Self> {
        Topology::new(doc.nodes, doc.edges)
    }
}

impl Topology {
    /// Builds a topology, validating ids, self-loops, duplicates and fidelities.
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id.0 != i {
                return Err(Error::config(
                    "nodes",
                    format!(
                        "node ids must be dense and ordered, found {} at {i}",
                        n.id.0
                    ),
                ));
            }
        }
        let n = nodes.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut edges = edges;
        for (id, e) in edges.iter_mut().enumerate() {
            if e.u.0 >= n || e.v.0 >= n {
                return Err(Error::UnknownNode(e.u.0.max(e.v.0)));
            }
            if e.u == e.v {
                return Err(Error::config("edges", format!("self-loop at {}", e.u)));
            }
            if !(e.fidelity > 0.0 && e.fidelity <= 1.0) {
                return Err(Error::config(
                    "edges",
                    format!("fidelity {} outside (0, 1]", e.fidelity),
                ));
            }
            if e.u > e.v {
                std::mem::swap(&mut e.u, &mut e.v);
            }
            adjacency[e.u.0].push((e.v, id));
            adjacency[e.v.0].push((e.u, id));
        }
        for (node, list) in adjacency.iter_mut().enumerate() {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::config(
                    "edges",
                    format!("parallel edges at node {node}"),
                ));
            }
        }
        Ok(Topology {
            nodes,
            edges,
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id]
    }

    pub fn qubit_capacity(&self, node: NodeId) -> u32 {
        self.nodes[node.0].qubits
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.0 < self.nodes.len()
    }

    /// Neighbours of `node` in ascending index order.
    pub fn neighbors(&self, node: NodeId) -> Result<Vec<NodeId>> {
        Ok(self.incident(node)?.iter().map(|&(v, _)| v).collect())
    }

    /// `(neighbor, edge)` pairs of `node`, ascending by neighbor.
    pub fn incident(&self, node: NodeId) -> Result<&[(NodeId, EdgeId)]> {
        self.adjacency
            .get(node.0)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownNode(node.0))
    }

    pub fn edge_between(&self, a: NodeId, b: NodeId) -> Option<EdgeId> {
        let list = self.adjacency.get(a.0)?;
        list.binary_search_by_key(&b, |&(v, _)| v)
            .ok()
            .map(|i| list[i].1)
    }

    pub fn max_qubit_capacity(&self) -> u32 {
        self.nodes.iter().map(|n| n.qubits).max().unwrap_or(0)
    }

    pub fn max_channel_capacity(&self) -> u32 {
        self.edges.iter().map(|e| e.capacity).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("<topology>", e))
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }
}

/// Grid generator parameters. All ranges are closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub rows: usize,
    pub cols: usize,
    pub qubit_capacity_range: (u32, u32),
    pub channel_capacity_range: (u32, u32),
    pub fidelity_range: (f64, f64),
}

impl TopologyConfig {
    pub fn grid(rows: usize, cols: usize) -> Self {
        TopologyConfig {
            rows,
            cols,
            qubit_capacity_range: (4, 4),
            channel_capacity_range: (26, 35),
            fidelity_range: (0.70, 0.95),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 {
            return Err(Error::config("rows", "must be positive"));
        }
        if self.cols == 0 {
            return Err(Error::config("cols", "must be positive"));
        }
        if self.rows * self.cols < 2 {
            return Err(Error::config("rows", "grid needs at least two nodes"));
        }
        let (lo, hi) = self.qubit_capacity_range;
        if lo > hi {
            return Err(Error::config(
                "qubit_capacity_range",
                format!("{lo} > {hi}"),
            ));
        }
        let (lo, hi) = self.channel_capacity_range;
        if lo > hi {
            return Err(Error::config(
                "channel_capacity_range",
                format!("{lo} > {hi}"),
            ));
        }
        let (lo, hi) = self.fidelity_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::config(
                "fidelity_range",
                format!("[{lo}, {hi}] must satisfy 0 < lo <= hi <= 1"),
            ));
        }
        Ok(())
    }
}

/// Generates a `rows x cols` grid with sampled capacities and fidelities.
///
/// Node capacities are drawn first in node order, then each edge draws its
/// channel capacity followed by its fidelity. Edges are emitted row-major,
/// right neighbour before down neighbour.
pub fn grid_topology(cfg: &TopologyConfig, seed: u64) -> Result<Topology> {
    cfg.validate()?;
    let mut rng = seed::stream_rng(seed, seed::Stream::Topology, 0);
    let n = cfg.rows * cfg.cols;

    let (qlo, qhi) = cfg.qubit_capacity_range;
    let nodes = (0..n)
        .map(|i| Node {
            id: NodeId(i),
            qubits: rng.random_range(qlo..=qhi),
        })
        .collect();

    let (clo, chi) = cfg.channel_capacity_range;
    let (flo, fhi) = cfg.fidelity_range;
    let mut edges = Vec::with_capacity(2 * n);
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            let here = r * cfg.cols + c;
            let mut right_down = Vec::with_capacity(2);
            if c + 1 < cfg.cols {
                right_down.push(here + 1);
            }
            if r + 1 < cfg.rows {
                right_down.push(here + cfg.cols);
            }
            for there in right_down {
                let capacity = rng.random_range(clo..=chi);
                let fidelity = rng.random_range(flo..=fhi);
                edges.push(Edge {
                    u: NodeId(here),
                    v: NodeId(there),
                    capacity,
                    fidelity,
                });
            }
        }
    }
    Topology::new(nodes, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn enumerate_grid_edges(rows: usize, cols: usize) -> usize {
        let mut count = 0;
        for a in 0..rows * cols {
            for b in a + 1..rows * cols {
                let (ra, ca) = (a / cols, a % cols);
                let (rb, cb) = (b / cols, b % cols);
                if ra.abs_diff(rb) + ca.abs_diff(cb) == 1 {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn five_by_five_has_forty_edges() {
        let t = grid_topology(&TopologyConfig::grid(5, 5), 1).unwrap();
        assert_eq!(t.node_count(), 25);
        assert_eq!(t.edge_count(), 40);
        assert_eq!(enumerate_grid_edges(5, 5), 40);
    }

    #[test]
    fn smallest_grid() {
        let t = grid_topology(&TopologyConfig::grid(1, 2), 0).unwrap();
        assert_eq!(t.node_count(), 2);
        assert_eq!(t.edge_count(), 1);
        assert_eq!(t.neighbors(NodeId(0)).unwrap(), vec![NodeId(1)]);
        assert_eq!(t.neighbors(NodeId(1)).unwrap(), vec![NodeId(0)]);
    }

    #[test]
    fn fixed_qubit_range() {
        let mut cfg = TopologyConfig::grid(7, 7);
        cfg.qubit_capacity_range = (20, 20);
        let t = grid_topology(&cfg, 3).unwrap();
        assert!(t.nodes().iter().all(|n| n.qubits == 20));
    }

    #[test]
    fn corner_and_interior_degree() {
        let t = grid_topology(&TopologyConfig::grid(5, 5), 0).unwrap();
        assert_eq!(t.neighbors(NodeId(0)).unwrap(), vec![NodeId(1), NodeId(5)]);
        assert_eq!(
            t.neighbors(NodeId(12)).unwrap(),
            vec![NodeId(7), NodeId(11), NodeId(13), NodeId(17)]
        );
        assert!(matches!(
            t.neighbors(NodeId(25)),
            Err(Error::UnknownNode(25))
        ));
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let mut cfg = TopologyConfig::grid(1, 1);
        assert!(matches!(
            cfg.validate(),
            Err(Error::Config { field: "rows", .. })
        ));
        cfg = TopologyConfig::grid(0, 3);
        assert!(matches!(
            cfg.validate(),
            Err(Error::Config { field: "rows", .. })
        ));
        cfg = TopologyConfig::grid(2, 2);
        cfg.qubit_capacity_range = (5, 4);
        assert!(matches!(
            grid_topology(&cfg, 0),
            Err(Error::Config {
                field: "qubit_capacity_range",
                ..
            })
        ));
        cfg = TopologyConfig::grid(2, 2);
        cfg.channel_capacity_range = (9, 1);
        assert!(matches!(
            cfg.validate(),
            Err(Error::Config {
                field: "channel_capacity_range",
                ..
            })
        ));
        cfg = TopologyConfig::grid(2, 2);
        cfg.fidelity_range = (0.0, 0.5);
        assert!(matches!(
            cfg.validate(),
            Err(Error::Config {
                field: "fidelity_range",
                ..
            })
        ));
    }

    #[test]
    fn rejects_malformed_graphs() {
        let nodes = vec![
            Node {
                id: NodeId(0),
                qubits: 1,
            },
            Node {
                id: NodeId(1),
                qubits: 1,
            },
        ];
        let e = |u, v| Edge {
            u: NodeId(u),
            v: NodeId(v),
            capacity: 1,
            fidelity: 0.9,
        };
        assert!(Topology::new(nodes.clone(), vec![e(0, 0)]).is_err());
        assert!(Topology::new(nodes.clone(), vec![e(0, 1), e(1, 0)]).is_err());
        assert!(Topology::new(nodes.clone(), vec![e(0, 2)]).is_err());
        let t = Topology::new(nodes, vec![e(1, 0)]).unwrap();
        assert_eq!(t.edge(0).u, NodeId(0));
        assert_eq!(t.edge_between(NodeId(1), NodeId(0)), Some(0));
    }

    #[test]
    fn json_round_trip() {
        let t = grid_topology(&TopologyConfig::grid(3, 4), 11).unwrap();
        let text = t.to_json();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(value["nodes"][0]["id"].is_u64());
        assert!(value["nodes"][0]["qubits"].is_u64());
        assert!(value["edges"][0]["fidelity"].is_f64());
        assert_eq!(Topology::from_json(&text).unwrap(), t);
    }

    #[test]
    fn seeds_change_samples() {
        let cfg = TopologyConfig::grid(5, 5);
        for s in 0..100u64 {
            let a = grid_topology(&cfg, 2 * s).unwrap();
            let b = grid_topology(&cfg, 2 * s + 1).unwrap();
            assert_ne!(a, b);
            assert_eq!(a, grid_topology(&cfg, 2 * s).unwrap());
        }
    }

    proptest! {
        #[test]
        fn grid_counts(rows in 1usize..=10, cols in 1usize..=10, seed in any::<u64>()) {
            prop_assume!(rows * cols >= 2);
            let mut cfg = TopologyConfig::grid(rows, cols);
            cfg.qubit_capacity_range = (4, 6);
            let t = grid_topology(&cfg, seed).unwrap();
            prop_assert_eq!(t.node_count(), rows * cols);
            prop_assert_eq!(t.edge_count(), 2 * rows * cols - rows - cols);
            prop_assert_eq!(t.edge_count(), enumerate_grid_edges(rows, cols));
            for n in t.nodes() {
                prop_assert!((4..=6).contains(&n.qubits));
            }
            for e in t.edges() {
                prop_assert!((26..=35).contains(&e.capacity));
                prop_assert!((0.70..=0.95).contains(&e.fidelity));
                let (a, b) = (e.u.0, e.v.0);
                prop_assert!(b == a + 1 || b == a + cols);
            }
        }
    }
}
