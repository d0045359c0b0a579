//! Pipeline network topology: nodes, pipelines, and gas parameters.
//!
//! A network is a set of numbered nodes connected by pipelines. Source nodes
//! hold a fixed supply pressure; every other node is a sink whose draw comes
//! from a scenario (pure junctions are sinks with an identically-zero draw).
//! Pressure `p` and density `rho` are tied by the isothermal relation
//! `p = c^2 rho`, with `c` the speed of sound in the gas.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::CoreError;

/// Node identifier. Validated networks use ids `1..=n_nodes`.
pub type NodeId = u32;

/// Pascals per bar; file formats speak bar, the model works in SI.
pub const PA_PER_BAR: f64 = 1.0e5;

/// What a node does. Sources hold pressure; sinks draw gas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    /// Supply node pinned at a fixed pressure (bar).
    Source { pressure_bar: f64 },
    /// Demand node (or junction, when its scheduled draw is zero).
    Sink,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
}

impl Node {
    pub fn source(id: NodeId, pressure_bar: f64) -> Self {
        Node { id, kind: NodeKind::Source { pressure_bar } }
    }

    pub fn sink(id: NodeId) -> Self {
        Node { id, kind: NodeKind::Sink }
    }

    pub fn is_source(&self) -> bool {
        matches!(self.kind, NodeKind::Source { .. })
    }
}

/// A pipeline between two nodes, oriented `from -> to` with `from < to`.
/// Mass flow is positive in the `from -> to` direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pipeline {
    pub from: NodeId,
    pub to: NodeId,
    pub length_km: f64,
    pub diameter_m: f64,
}

impl Pipeline {
    pub fn new(from: NodeId, to: NodeId, length_km: f64, diameter_m: f64) -> Self {
        Pipeline { from, to, length_km, diameter_m }
    }

    pub fn length_m(&self) -> f64 {
        self.length_km * 1.0e3
    }

    /// Cross-sectional area `pi d^2 / 4` in m^2.
    pub fn area_m2(&self) -> f64 {
        PI * self.diameter_m * self.diameter_m / 4.0
    }
}

/// A validated pipeline network plus its gas parameters.
///
/// Construction runs every structural check; a value of this type is
/// guaranteed to have unique node ids forming `1..=n_nodes`, ordered pipeline
/// endpoints referencing existing nodes, a connected topology, at least one
/// source, and positive physical parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GasNetwork {
    nodes: Vec<Node>,         // sorted by id; ids are exactly 1..=n
    pipelines: Vec<Pipeline>, // kept in construction order (it fixes state layout)
    sound_speed: f64,         // m/s
    friction: f64,            // Darcy friction factor, shared by all pipelines
}

impl GasNetwork {
    pub fn new(
        mut nodes: Vec<Node>,
        pipelines: Vec<Pipeline>,
        sound_speed_m_per_s: f64,
        friction_factor: f64,
    ) -> Result<Self, CoreError> {
        if !(sound_speed_m_per_s > 0.0) || !sound_speed_m_per_s.is_finite() {
            return Err(CoreError::Validation(format!(
                "sound speed must be positive and finite, got {sound_speed_m_per_s}"
            )));
        }
        if !(friction_factor > 0.0) || !friction_factor.is_finite() {
            return Err(CoreError::Validation(format!(
                "friction factor must be positive and finite, got {friction_factor}"
            )));
        }
        if nodes.is_empty() {
            return Err(CoreError::Validation("network has no nodes".into()));
        }

        nodes.sort_by_key(|n| n.id);
        for (i, node) in nodes.iter().enumerate() {
            let expect = (i + 1) as NodeId;
            if node.id != expect {
                return Err(CoreError::Validation(format!(
                    "node ids must be unique and form 1..={}, found id {} where {} was expected",
                    nodes.len(),
                    node.id,
                    expect
                )));
            }
            if let NodeKind::Source { pressure_bar } = node.kind {
                if !(pressure_bar > 0.0) || !pressure_bar.is_finite() {
                    return Err(CoreError::Validation(format!(
                        "source node {} needs a positive finite pressure, got {pressure_bar} bar",
                        node.id
                    )));
                }
            }
        }

        if !nodes.iter().any(|n| n.is_source()) {
            return Err(CoreError::Validation("network needs at least one source node".into()));
        }

        let n = nodes.len() as NodeId;
        for pipe in &pipelines {
            if pipe.from >= pipe.to {
                return Err(CoreError::Validation(format!(
                    "pipeline endpoints must be ordered from < to, got ({}, {})",
                    pipe.from, pipe.to
                )));
            }
            if pipe.from < 1 || pipe.to > n {
                return Err(CoreError::Validation(format!(
                    "pipeline ({}, {}) references a node outside 1..={}",
                    pipe.from, pipe.to, n
                )));
            }
            if !(pipe.length_km > 0.0) || !pipe.length_km.is_finite() {
                return Err(CoreError::Validation(format!(
                    "pipeline ({}, {}) needs a positive finite length, got {} km",
                    pipe.from, pipe.to, pipe.length_km
                )));
            }
            if !(pipe.diameter_m > 0.0) || !pipe.diameter_m.is_finite() {
                return Err(CoreError::Validation(format!(
                    "pipeline ({}, {}) needs a positive finite diameter, got {} m",
                    pipe.from, pipe.to, pipe.diameter_m
                )));
            }
        }

        let net = GasNetwork { nodes, pipelines, sound_speed: sound_speed_m_per_s, friction: friction_factor };
        net.check_connected()?;
        Ok(net)
    }

    /// Every node must be reachable from node 1 through pipelines (undirected).
    fn check_connected(&self) -> Result<(), CoreError> {
        let n = self.nodes.len();
        if n == 1 {
            return Ok(());
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            let id = (i + 1) as NodeId;
            for p in &self.pipelines {
                let other = if p.from == id {
                    p.to
                } else if p.to == id {
                    p.from
                } else {
                    continue;
                };
                let j = (other - 1) as usize;
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(CoreError::Validation(format!(
                "network is not connected: node {} is unreachable",
                i + 1
            )));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_pipelines(&self) -> usize {
        self.pipelines.len()
    }

    /// Nodes sorted by id (ids are `1..=n_nodes`).
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Pipelines in construction order; the order fixes flow-state layout.
    pub fn pipelines(&self) -> &[Pipeline] {
        &self.pipelines
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    pub fn friction_factor(&self) -> f64 {
        self.friction
    }

    /// Zero-based position of a node id (ids are contiguous after validation).
    pub fn node_index(&self, id: NodeId) -> usize {
        (id - 1) as usize
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[self.node_index(id)]
    }

    pub fn has_node(&self, id: NodeId) -> bool {
        id >= 1 && (id as usize) <= self.nodes.len()
    }

    pub fn is_source(&self, id: NodeId) -> bool {
        self.node(id).is_source()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_source())
    }

    pub fn sinks(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| !n.is_source())
    }

    pub fn n_sources(&self) -> usize {
        self.sources().count()
    }

    /// Fixed supply density of a source node: `rho = p / c^2`.
    pub fn source_density(&self, id: NodeId) -> Option<f64> {
        match self.node(id).kind {
            NodeKind::Source { pressure_bar } => {
                Some(pressure_bar * PA_PER_BAR / (self.sound_speed * self.sound_speed))
            }
            NodeKind::Sink => None,
        }
    }

    /// Convert a pressure in bar to the internal density unit (kg/m^3).
    pub fn pressure_bar_to_density(&self, bar: f64) -> f64 {
        bar * PA_PER_BAR / (self.sound_speed * self.sound_speed)
    }

    /// Convert an internal density (kg/m^3) back to a pressure in bar.
    pub fn density_to_pressure_bar(&self, rho: f64) -> f64 {
        rho * self.sound_speed * self.sound_speed / PA_PER_BAR
    }

    /// Distinct pipe diameters, mostly useful for sanity checks.
    pub fn diameter_set_mm(&self) -> BTreeSet<u64> {
        self.pipelines.iter().map(|p| libm::round(p.diameter_m * 1.0e3) as u64).collect()
    }
}

/// The bundled 30-node, 29-pipeline benchmark network.
///
/// Two supply nodes (1 at 27.8 bar, 2 at 28.5 bar) feed a tree of 28 demand
/// nodes; nine of those are pure junctions once paired with the bundled
/// scenario. Friction factor 0.015, sound speed 340 m/s.
pub fn builtin_benchmark() -> GasNetwork {
    // (from, to, length_km, diameter_m)
    const PIPES: [(NodeId, NodeId, f64, f64); 29] = [
        (1, 3, 5.0, 0.6),
        (3, 4, 3.0, 0.6),
        (4, 5, 4.0, 0.5),
        (5, 6, 6.0, 0.5),
        (6, 7, 7.0, 0.5),
        (2, 7, 2.0, 0.5),
        (3, 8, 3.0, 0.4),
        (8, 9, 5.0, 0.2),
        (8, 10, 7.0, 0.2),
        (9, 11, 5.0, 0.4),
        (4, 12, 4.0, 0.4),
        (12, 13, 8.0, 0.4),
        (13, 14, 10.0, 0.4),
        (14, 15, 9.0, 0.2),
        (15, 16, 10.0, 0.2),
        (14, 17, 4.0, 0.2),
        (5, 18, 10.0, 0.4),
        (18, 20, 3.0, 0.2),
        (20, 21, 7.0, 0.2),
        (18, 19, 2.0, 0.2),
        (6, 22, 10.0, 0.4),
        (22, 23, 6.0, 0.2),
        (23, 24, 7.0, 0.2),
        (23, 25, 4.0, 0.2),
        (25, 26, 9.0, 0.2),
        (26, 27, 4.0, 0.2),
        (7, 28, 2.0, 0.2),
        (28, 29, 7.0, 0.2),
        (28, 30, 5.0, 0.2),
    ];

    let mut nodes = Vec::with_capacity(30);
    nodes.push(Node::source(1, 27.8));
    nodes.push(Node::source(2, 28.5));
    for id in 3..=30 {
        nodes.push(Node::sink(id));
    }
    let pipelines = PIPES.iter().map(|&(f, t, l, d)| Pipeline::new(f, t, l, d)).collect();

    GasNetwork::new(nodes, pipelines, 340.0, 0.015)
        .expect("bundled benchmark network must validate")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> GasNetwork {
        GasNetwork::new(
            vec![Node::source(1, 30.0), Node::sink(2)],
            vec![Pipeline::new(1, 2, 10.0, 0.4)],
            340.0,
            0.015,
        )
        .unwrap()
    }

    #[test]
    fn minimal_network_builds() {
        let net = two_node();
        assert_eq!(net.n_nodes(), 2);
        assert_eq!(net.n_pipelines(), 1);
        assert_eq!(net.n_sources(), 1);
    }

    #[test]
    fn benchmark_matches_published_table() {
        let net = builtin_benchmark();
        assert_eq!(net.n_nodes(), 30);
        assert_eq!(net.n_pipelines(), 29);
        assert_eq!(net.n_sources(), 2);
        assert!(net.is_source(1) && net.is_source(2));

        // spot-checks against the table
        let p13 = net.pipelines().iter().find(|p| p.from == 1 && p.to == 3).unwrap();
        assert_eq!(p13.length_km, 5.0);
        assert_eq!(p13.diameter_m, 0.6);
        let p2830 = net.pipelines().iter().find(|p| p.from == 28 && p.to == 30).unwrap();
        assert_eq!(p2830.length_km, 5.0);
        assert_eq!(p2830.diameter_m, 0.2);

        let diameters = net.diameter_set_mm();
        assert_eq!(diameters.into_iter().collect::<alloc::vec::Vec<_>>(), vec![200, 400, 500, 600]);

        assert_eq!(net.friction_factor(), 0.015);
        assert_eq!(net.sound_speed(), 340.0);
    }

    #[test]
    fn benchmark_source_densities() {
        let net = builtin_benchmark();
        // rho = p / c^2 with c^2 = 115600 m^2/s^2
        let rho1 = net.source_density(1).unwrap();
        assert!((rho1 - 27.8e5 / 115600.0).abs() < 1e-12);
        let rho2 = net.source_density(2).unwrap();
        assert!((rho2 - 28.5e5 / 115600.0).abs() < 1e-12);
        assert_eq!(net.source_density(3), None);
    }

    #[test]
    fn area_follows_diameter() {
        let p = Pipeline::new(1, 2, 1.0, 0.6);
        let expect = core::f64::consts::PI * 0.6 * 0.6 / 4.0;
        assert!((p.area_m2() - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn rejects_unordered_endpoints() {
        let err = GasNetwork::new(
            vec![Node::source(1, 30.0), Node::sink(2)],
            vec![Pipeline::new(2, 1, 10.0, 0.4)],
            340.0,
            0.015,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Validation(ref m) if m.contains("from < to")));
    }

    #[test]
    fn rejects_gap_in_ids() {
        let err = GasNetwork::new(
            vec![Node::source(1, 30.0), Node::sink(3)],
            vec![],
            340.0,
            0.015,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Validation(ref m) if m.contains("1..=")));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let err = GasNetwork::new(
            vec![Node::source(1, 30.0), Node::sink(1)],
            vec![],
            340.0,
            0.015,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Validation(_)));
    }

    #[test]
    fn rejects_disconnected_network() {
        let err = GasNetwork::new(
            vec![Node::source(1, 30.0), Node::sink(2), Node::sink(3)],
            vec![Pipeline::new(1, 2, 10.0, 0.4)],
            340.0,
            0.015,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Validation(ref m) if m.contains("unreachable")));
    }

    #[test]
    fn rejects_missing_source() {
        let err = GasNetwork::new(
            vec![Node::sink(1), Node::sink(2)],
            vec![Pipeline::new(1, 2, 10.0, 0.4)],
            340.0,
            0.015,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Validation(ref m) if m.contains("source")));
    }

    #[test]
    fn rejects_bad_dimensions() {
        for (l, d) in [(0.0, 0.4), (-1.0, 0.4), (10.0, 0.0), (10.0, -0.2)] {
            let err = GasNetwork::new(
                vec![Node::source(1, 30.0), Node::sink(2)],
                vec![Pipeline::new(1, 2, l, d)],
                340.0,
                0.015,
            )
            .unwrap_err();
            assert!(matches!(err, CoreError::Validation(_)));
        }
    }
}
