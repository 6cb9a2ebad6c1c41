//! Network graph: typed nodes, directed edges, sector devices and the
//! node-edge incidence matrix.
//!
//! Validation freezes the global ordering used by every downstream matrix:
//! nodes are ordered storage, junction, compressor plenum (storages carrying
//! electrolyzers first, then those carrying fuel cells); edges are ordered
//! pipes first, then one (duct, throttle) pair per compressor in plenum order.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use crate::components::DeviceKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Storage,
    Junction,
    #[serde(rename = "compressor")]
    CompressorPlenum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Pipe,
    #[serde(rename = "duct")]
    CompressorDuct,
    #[serde(rename = "throttle")]
    CompressorThrottle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDecl {
    pub id: String,
    pub kind: NodeKind,
    /// Pa; used to freeze the mean pressure of incident pipes.
    pub nominal_pressure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeDecl {
    pub id: String,
    pub source: String,
    pub sink: String,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceDecl {
    pub id: String,
    pub kind: DeviceKind,
    pub attached_storage: String,
}

/// Declared network, in user order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkTopology {
    pub nodes: Vec<NodeDecl>,
    pub edges: Vec<EdgeDecl>,
    pub devices: Vec<DeviceDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: &'static str,
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.rule, self.subject, self.message)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub storages: usize,
    pub junctions: usize,
    pub compressors: usize,
    pub electrolyzers: usize,
    pub fuel_cells: usize,
}

impl fmt::Display for Counts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "S={} F={} C={} E={} L={}",
            self.storages, self.junctions, self.compressors, self.electrolyzers, self.fuel_cells
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyReport {
    pub counts: Counts,
    pub violations: Vec<Violation>,
}

impl TopologyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for TopologyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.counts)?;
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Topology with frozen global orderings. Only obtainable through
/// [`NetworkTopology::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedTopology {
    nodes: Vec<NodeDecl>,
    edges: Vec<EdgeDecl>,
    devices: Vec<DeviceDecl>,
    node_index: HashMap<String, usize>,
    edge_index: HashMap<String, usize>,
    counts: Counts,
}

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn push(&mut self, rule: &'static str, subject: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            rule,
            subject: subject.to_string(),
            message: message.into(),
        });
    }
}

impl NetworkTopology {
    fn count(&self) -> Counts {
        let nodes = |k| self.nodes.iter().filter(|n| n.kind == k).count();
        let devices = |k| self.devices.iter().filter(|d| d.kind == k).count();
        Counts {
            storages: nodes(NodeKind::Storage),
            junctions: nodes(NodeKind::Junction),
            compressors: nodes(NodeKind::CompressorPlenum),
            electrolyzers: devices(DeviceKind::Electrolyzer),
            fuel_cells: devices(DeviceKind::FuelCell),
        }
    }

    /// Check all structural conventions; every issue is reported.
    pub fn check(&self) -> TopologyReport {
        let mut c = Checker { violations: Vec::new() };
        let mut kinds: HashMap<&str, NodeKind> = HashMap::new();

        if self.nodes.is_empty() {
            c.push("non-empty", "network", "no nodes declared");
        }
        for n in &self.nodes {
            if kinds.insert(n.id.as_str(), n.kind).is_some() {
                c.push("unique ids", &n.id, "duplicate node id");
            }
            if !(n.nominal_pressure.is_finite() && n.nominal_pressure > 0.0) {
                c.push(
                    "positive nominal pressure",
                    &n.id,
                    format!("nominal_pressure = {} must be > 0", n.nominal_pressure),
                );
            }
        }

        let mut edge_ids = HashSet::new();
        let mut ducts_into: HashMap<&str, Vec<&str>> = HashMap::new();
        let mut throttles_from: HashMap<&str, Vec<&str>> = HashMap::new();
        let mut degree: HashMap<&str, usize> = HashMap::new();
        for e in &self.edges {
            if !edge_ids.insert(e.id.as_str()) || kinds.contains_key(e.id.as_str()) {
                c.push("unique ids", &e.id, "duplicate edge id");
            }
            if e.source == e.sink {
                c.push("no self loops", &e.id, "source equals sink");
            }
            let src = kinds.get(e.source.as_str()).copied();
            let snk = kinds.get(e.sink.as_str()).copied();
            for (end, kind) in [(&e.source, src), (&e.sink, snk)] {
                match kind {
                    None => c.push("resolved reference", &e.id, format!("unknown node `{end}`")),
                    Some(_) => *degree.entry(end.as_str()).or_default() += 1,
                }
            }
            let (Some(src), Some(snk)) = (src, snk) else {
                continue;
            };
            let grid = |k: NodeKind| k != NodeKind::CompressorPlenum;
            match e.kind {
                EdgeKind::Pipe => {
                    if !grid(src) || !grid(snk) {
                        c.push("pipe endpoints", &e.id, "pipes connect storage or junction nodes only");
                    }
                }
                EdgeKind::CompressorDuct => {
                    if snk != NodeKind::CompressorPlenum || !grid(src) {
                        c.push(
                            "compressor pairing",
                            &e.id,
                            "a duct runs from a storage/junction node into a compressor plenum",
                        );
                    } else {
                        ducts_into.entry(e.sink.as_str()).or_default().push(&e.id);
                    }
                }
                EdgeKind::CompressorThrottle => {
                    if src != NodeKind::CompressorPlenum || !grid(snk) {
                        c.push(
                            "compressor pairing",
                            &e.id,
                            "a throttle runs from a compressor plenum into a storage/junction node",
                        );
                    } else {
                        throttles_from.entry(e.source.as_str()).or_default().push(&e.id);
                    }
                }
            }
        }
        for n in self.nodes.iter().filter(|n| n.kind == NodeKind::CompressorPlenum) {
            let ducts = ducts_into.get(n.id.as_str()).map_or(0, Vec::len);
            let throttles = throttles_from.get(n.id.as_str()).map_or(0, Vec::len);
            if ducts != 1 {
                c.push(
                    "compressor pairing",
                    &n.id,
                    format!("plenum needs exactly one incoming duct, found {ducts}"),
                );
            }
            if throttles != 1 {
                c.push(
                    "compressor pairing",
                    &n.id,
                    format!("plenum needs exactly one outgoing throttle, found {throttles}"),
                );
            }
        }
        for n in self.nodes.iter().filter(|n| n.kind == NodeKind::Junction) {
            if degree.get(n.id.as_str()).copied().unwrap_or(0) == 0 {
                c.push("junction degree", &n.id, "junction has no incident edges");
            }
        }

        let mut attached = HashSet::new();
        for d in &self.devices {
            if kinds.contains_key(d.id.as_str()) || edge_ids.contains(d.id.as_str()) {
                c.push("unique ids", &d.id, "device id collides with a node or edge id");
            }
            match kinds.get(d.attached_storage.as_str()) {
                None => c.push(
                    "resolved reference",
                    &d.id,
                    format!("unknown node `{}`", d.attached_storage),
                ),
                Some(NodeKind::Storage) => {
                    if !attached.insert(d.attached_storage.as_str()) {
                        c.push(
                            "dedicated storage",
                            &d.id,
                            format!("storage `{}` already has a device", d.attached_storage),
                        );
                    }
                }
                Some(_) => c.push(
                    "dedicated storage",
                    &d.id,
                    format!("`{}` is not a storage node", d.attached_storage),
                ),
            }
        }
        let mut seen = HashSet::new();
        for d in &self.devices {
            if !seen.insert(d.id.as_str()) {
                c.push("unique ids", &d.id, "duplicate device id");
            }
        }

        if !self.nodes.is_empty() && !self.is_connected() {
            c.push("connected graph", "network", "graph is not connected");
        }

        TopologyReport {
            counts: self.count(),
            violations: c.violations,
        }
    }

    fn is_connected(&self) -> bool {
        let index: HashMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            if let (Some(&a), Some(&b)) = (index.get(e.source.as_str()), index.get(e.sink.as_str())) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Validate and freeze the global ordering.
    pub fn validate(&self) -> Result<ValidatedTopology, TopologyReport> {
        let report = self.check();
        if !report.passed() {
            return Err(report);
        }

        let device_rank = |storage: &str| {
            self.devices
                .iter()
                .filter(|d| d.kind == DeviceKind::Electrolyzer)
                .chain(self.devices.iter().filter(|d| d.kind == DeviceKind::FuelCell))
                .position(|d| d.attached_storage == storage)
        };
        let mut storages: Vec<&NodeDecl> = self.nodes.iter().filter(|n| n.kind == NodeKind::Storage).collect();
        // stable sort: device storages first in device order, the rest as declared
        storages.sort_by_key(|n| device_rank(&n.id).unwrap_or(usize::MAX));
        let mut nodes: Vec<NodeDecl> = storages.into_iter().cloned().collect();
        nodes.extend(self.nodes.iter().filter(|n| n.kind == NodeKind::Junction).cloned());
        let plenums: Vec<&NodeDecl> = self
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::CompressorPlenum)
            .collect();
        nodes.extend(plenums.iter().map(|n| (*n).clone()));

        let mut edges: Vec<EdgeDecl> = self
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::Pipe)
            .cloned()
            .collect();
        for p in &plenums {
            let duct = self
                .edges
                .iter()
                .find(|e| e.kind == EdgeKind::CompressorDuct && e.sink == p.id)
                .expect("validated pairing");
            let throttle = self
                .edges
                .iter()
                .find(|e| e.kind == EdgeKind::CompressorThrottle && e.source == p.id)
                .expect("validated pairing");
            edges.push(duct.clone());
            edges.push(throttle.clone());
        }

        let mut devices: Vec<DeviceDecl> = self
            .devices
            .iter()
            .filter(|d| d.kind == DeviceKind::Electrolyzer)
            .cloned()
            .collect();
        devices.extend(self.devices.iter().filter(|d| d.kind == DeviceKind::FuelCell).cloned());

        let node_index = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        let edge_index = edges.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        Ok(ValidatedTopology {
            nodes,
            edges,
            devices,
            node_index,
            edge_index,
            counts: report.counts,
        })
    }
}

impl ValidatedTopology {
    pub fn nodes(&self) -> &[NodeDecl] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeDecl] {
        &self.edges
    }

    pub fn devices(&self) -> &[DeviceDecl] {
        &self.devices
    }

    pub fn counts(&self) -> Counts {
        self.counts
    }

    /// N
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// M
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// S + F: nodes carrying an exogenous-flow port.
    pub fn grid_node_count(&self) -> usize {
        self.counts.storages + self.counts.junctions
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub fn edge_index(&self, id: &str) -> Option<usize> {
        self.edge_index.get(id).copied()
    }

    pub fn device_index(&self, id: &str) -> Option<usize> {
        self.devices.iter().position(|d| d.id == id)
    }

    /// 0-based column of the duct of compressor `i` (0-based).
    pub fn duct_column(&self, compressor: usize) -> usize {
        self.edges.len() - 2 * self.counts.compressors + 2 * compressor
    }

    /// 0-based column of the throttle of compressor `i` (0-based).
    pub fn throttle_column(&self, compressor: usize) -> usize {
        self.duct_column(compressor) + 1
    }

    /// Edges incident to a node, by global edge index.
    pub fn incident_edges(&self, node: usize) -> Vec<usize> {
        let id = &self.nodes[node].id;
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| &e.source == id || &e.sink == id)
            .map(|(i, _)| i)
            .collect()
    }

    /// Back to a declared topology in canonical order.
    pub fn to_declared(&self) -> NetworkTopology {
        NetworkTopology {
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            devices: self.devices.clone(),
        }
    }

    /// Node-edge incidence matrix: +1 at (sink, edge), -1 at (source, edge).
    pub fn incidence(&self) -> DMatrix<i32> {
        let mut b = DMatrix::zeros(self.nodes.len(), self.edges.len());
        for (j, e) in self.edges.iter().enumerate() {
            b[(self.node_index[&e.source], j)] = -1;
            b[(self.node_index[&e.sink], j)] = 1;
        }
        b
    }
}

/// Incidence matrix of a validated topology.
pub fn build_incidence(topology: &ValidatedTopology) -> DMatrix<i32> {
    topology.incidence()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn node(id: &str, kind: NodeKind) -> NodeDecl {
        NodeDecl {
            id: id.into(),
            kind,
            nominal_pressure: 5e6,
        }
    }

    fn edge(id: &str, source: &str, sink: &str, kind: EdgeKind) -> EdgeDecl {
        EdgeDecl {
            id: id.into(),
            source: source.into(),
            sink: sink.into(),
            kind,
        }
    }

    /// The seven-node example network with one electrolyzer and one fuel cell.
    pub(crate) fn fig1() -> NetworkTopology {
        use EdgeKind::*;
        use NodeKind::*;
        NetworkTopology {
            nodes: vec![
                node("n1", Storage),
                node("n2", Storage),
                node("n3", Storage),
                node("n4", Junction),
                node("n5", Junction),
                node("n6", Junction),
                node("n7", CompressorPlenum),
            ],
            edges: vec![
                edge("e1", "n1", "n4", Pipe),
                edge("e2", "n4", "n5", Pipe),
                edge("e3", "n5", "n2", Pipe),
                edge("e4", "n5", "n6", Pipe),
                edge("e5", "n6", "n7", CompressorDuct),
                edge("e6", "n7", "n3", CompressorThrottle),
            ],
            devices: vec![
                DeviceDecl {
                    id: "ely1".into(),
                    kind: DeviceKind::Electrolyzer,
                    attached_storage: "n1".into(),
                },
                DeviceDecl {
                    id: "fc1".into(),
                    kind: DeviceKind::FuelCell,
                    attached_storage: "n2".into(),
                },
            ],
        }
    }

    #[test]
    fn fig1_counts() {
        let report = fig1().check();
        assert!(report.passed(), "{report}");
        assert_eq!(
            report.counts,
            Counts {
                storages: 3,
                junctions: 3,
                compressors: 1,
                electrolyzers: 1,
                fuel_cells: 1
            }
        );
    }

    #[test]
    fn fig1_incidence() {
        let t = fig1().validate().unwrap();
        let b = build_incidence(&t);
        assert_eq!(b.shape(), (7, 6));
        assert_eq!(b[(t.node_index("n1").unwrap(), 0)], -1);
        assert_eq!(b[(t.node_index("n4").unwrap(), 0)], 1);
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(7, 6, &[
            -1,  0,  0,  0,  0,  0,
             0,  0,  1,  0,  0,  0,
             0,  0,  0,  0,  0,  1,
             1, -1,  0,  0,  0,  0,
             0,  1, -1, -1,  0,  0,
             0,  0,  0,  1, -1,  0,
             0,  0,  0,  0,  1, -1,
        ]);
        assert_eq!(b, expected);
    }

    #[test]
    fn single_edge() {
        let t = NetworkTopology {
            nodes: vec![node("a", NodeKind::Storage), node("b", NodeKind::Storage)],
            edges: vec![edge("e", "a", "b", EdgeKind::Pipe)],
            devices: vec![],
        };
        let b = build_incidence(&t.validate().unwrap());
        assert_eq!(b, DMatrix::from_column_slice(2, 1, &[-1, 1]));
    }

    #[test]
    fn incidence_rank_and_sums() {
        let t = fig1().validate().unwrap();
        let b = build_incidence(&t);
        for j in 0..b.ncols() {
            assert_eq!(b.column(j).sum(), 0);
        }
        for i in 0..b.nrows() {
            let nnz = b.row(i).iter().filter(|&&v| v != 0).count();
            assert_eq!(nnz, t.incident_edges(i).len());
        }
        let rank = b.map(|v| v as f64).rank(1e-9);
        assert_eq!(rank, t.node_count() - 1);
    }

    #[test]
    fn compressor_column_arithmetic() {
        let t = fig1().validate().unwrap();
        let (m, c) = (t.edge_count(), t.counts().compressors);
        for i in 1..=c {
            // 1-based: duct at M-2C+2i-1, throttle at M-2C+2i
            assert_eq!(t.duct_column(i - 1) + 1, m - 2 * c + 2 * i - 1);
            assert_eq!(t.throttle_column(i - 1) + 1, m - 2 * c + 2 * i);
            // output selection q_{M+2(i-C)-1} names the duct flow
            assert_eq!(m + 2 * i - 2 * c - 1, t.duct_column(i - 1) + 1);
            assert_eq!(t.edges()[t.duct_column(i - 1)].kind, EdgeKind::CompressorDuct);
        }
        assert_eq!(t.duct_column(0), 4);
    }

    #[test]
    fn two_ducts_into_one_plenum() {
        let mut t = fig1();
        t.edges.push(edge("e7", "n4", "n7", EdgeKind::CompressorDuct));
        let report = t.check();
        assert!(!report.passed());
        assert!(report
            .violations
            .iter()
            .any(|v| v.subject == "n7" && v.rule == "compressor pairing"));
    }

    #[test]
    fn electrolyzer_on_junction_rejected() {
        let mut t = fig1();
        t.devices[0].attached_storage = "n4".into();
        let report = t.check();
        assert!(report.violations.iter().any(|v| v.rule == "dedicated storage"));
    }

    #[test]
    fn two_devices_on_one_storage_rejected() {
        let mut t = fig1();
        t.devices[1].attached_storage = "n1".into();
        assert!(t.check().violations.iter().any(|v| v.rule == "dedicated storage"));
    }

    #[test]
    fn disconnected_and_bad_pressure_reported_together() {
        let mut t = fig1();
        t.nodes.push(NodeDecl {
            id: "n8".into(),
            kind: NodeKind::Storage,
            nominal_pressure: -1.0,
        });
        let rules: Vec<_> = t.check().violations.iter().map(|v| v.rule).collect();
        assert!(rules.contains(&"connected graph"));
        assert!(rules.contains(&"positive nominal pressure"));
    }

    #[test]
    fn duplicate_ids_and_unknown_refs() {
        let mut t = fig1();
        t.nodes.push(node("n1", NodeKind::Junction));
        t.edges.push(edge("e8", "n1", "nx", EdgeKind::Pipe));
        let rules: Vec<_> = t.check().violations.iter().map(|v| v.rule).collect();
        assert!(rules.contains(&"unique ids"));
        assert!(rules.contains(&"resolved reference"));
    }

    #[test]
    fn device_storages_are_renumbered_first() {
        let mut t = fig1();
        // fuel cell declared first, on the last storage
        t.devices = vec![
            DeviceDecl {
                id: "fc".into(),
                kind: DeviceKind::FuelCell,
                attached_storage: "n3".into(),
            },
            DeviceDecl {
                id: "ely".into(),
                kind: DeviceKind::Electrolyzer,
                attached_storage: "n2".into(),
            },
        ];
        let v = t.validate().unwrap();
        let ids: Vec<_> = v.nodes().iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, ["n2", "n3", "n1", "n4", "n5", "n6", "n7"]);
        let devs: Vec<_> = v.devices().iter().map(|d| d.id.as_str()).collect();
        assert_eq!(devs, ["ely", "fc"]);
    }

    #[test]
    fn compressor_edges_grouped_after_pipes() {
        let mut t = fig1();
        // declare the throttle before the pipes
        let throttle = t.edges.remove(5);
        t.edges.insert(0, throttle);
        let v = t.validate().unwrap();
        let ids: Vec<_> = v.edges().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["e1", "e2", "e3", "e4", "e5", "e6"]);
    }
}
