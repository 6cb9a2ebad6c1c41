//! Interconnection of component blocks into the grid and sector-coupled
//! systems.
//!
//! Node blocks (storage, junction, plenum) and edge blocks (pipe, duct,
//! throttle) are stacked diagonally, then wired through the incidence matrix:
//! the net inflow port of every node receives `B_G q` and the pressure-drop
//! port of every edge receives `-B_Gᵀ p`. That power-conserving wiring becomes
//! the off-diagonal skew block of the interconnection matrix.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::components::{
    make_compressor, make_junction, make_pipe, make_sector_device, make_storage, weymouth_mean_pressure,
    ComponentError, CompressorParams, Constants, PipeParams, SectorDeviceParams, StorageParams,
};
use crate::phcore::{
    BlockDiagonal, ConstantMatrix, Hamiltonian, PhBlock, PhError, SeparableHamiltonian, StateMatrix, SumMatrix,
};
use crate::topology::{DeviceKind, EdgeKind, NodeKind, ValidatedTopology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("block ordering: {0}")]
    Ordering(String),
    #[error("missing parameters for {0}")]
    MissingParams(String),
    #[error("{id}: {source}")]
    Component {
        id: String,
        #[source]
        source: ComponentError,
    },
    #[error("device/storage mismatch: {0}")]
    DeviceMismatch(String),
    #[error(transparent)]
    Structure(#[from] PhError),
}

/// Pipe data as declared; the mean pressure is derived at build time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipeGeometry {
    pub length: f64,
    pub diameter: f64,
    pub area: f64,
    pub darcy_lambda: f64,
    pub incline: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageSpec {
    pub volume: f64,
    pub temperature: f64,
    pub leak_coeff: f64,
}

/// A validated topology with all component parameters attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub name: String,
    pub constants: Constants,
    pub topology: ValidatedTopology,
    pub storages: BTreeMap<String, StorageSpec>,
    pub compressors: BTreeMap<String, CompressorParams>,
    pub pipes: BTreeMap<String, PipeGeometry>,
    pub devices: BTreeMap<String, SectorDeviceParams>,
}

/// All component blocks in global order.
#[derive(Debug, Clone)]
pub struct ComponentBlocks {
    pub nodes: Vec<PhBlock>,
    pub edges: Vec<PhBlock>,
    pub devices: Vec<PhBlock>,
}

impl Network {
    fn wrap(id: &str) -> impl FnOnce(ComponentError) -> AssemblyError + '_ {
        move |source| AssemblyError::Component {
            id: id.to_string(),
            source,
        }
    }

    pub fn storage_params(&self, node: &str) -> Result<StorageParams, AssemblyError> {
        let s = self
            .storages
            .get(node)
            .ok_or_else(|| AssemblyError::MissingParams(node.into()))?;
        Ok(StorageParams {
            volume: s.volume,
            temperature: s.temperature,
            leak_coeff: s.leak_coeff,
            molar_mass: self.constants.molar_mass,
            gas_constant: self.constants.gas_constant,
            rho: self.constants.rho,
        })
    }

    pub fn compressor_params(&self, node: &str) -> Result<&CompressorParams, AssemblyError> {
        self.compressors
            .get(node)
            .ok_or_else(|| AssemblyError::MissingParams(node.into()))
    }

    /// Pipe parameters with the Weymouth mean pressure frozen from the
    /// nominal pressures of the two end nodes.
    pub fn pipe_params(&self, edge: &str) -> Result<PipeParams, AssemblyError> {
        let g = self
            .pipes
            .get(edge)
            .ok_or_else(|| AssemblyError::MissingParams(edge.into()))?;
        let e = &self.topology.edges()[self
            .topology
            .edge_index(edge)
            .ok_or_else(|| AssemblyError::MissingParams(edge.into()))?];
        let nominal = |id: &str| self.topology.nodes()[self.topology.node_index(id).unwrap()].nominal_pressure;
        let mean_pressure = weymouth_mean_pressure(nominal(&e.source), nominal(&e.sink)).map_err(Self::wrap(edge))?;
        Ok(PipeParams {
            area: g.area,
            diameter: g.diameter,
            length: g.length,
            darcy_lambda: g.darcy_lambda,
            incline: g.incline,
            rho: self.constants.rho,
            sound_speed: self.constants.sound_speed,
            mean_pressure,
            gravity: self.constants.gravity,
        })
    }

    /// `(length, area)` of an edge as seen by the junction capacity.
    pub fn edge_length_area(&self, edge: usize) -> Result<(f64, f64), AssemblyError> {
        let e = &self.topology.edges()[edge];
        Ok(match e.kind {
            EdgeKind::Pipe => {
                let g = self
                    .pipes
                    .get(&e.id)
                    .ok_or_else(|| AssemblyError::MissingParams(e.id.clone()))?;
                (g.length, g.area)
            }
            EdgeKind::CompressorDuct => {
                let c = self.compressor_params(&e.sink)?;
                (c.duct_length, c.duct_area)
            }
            EdgeKind::CompressorThrottle => {
                let c = self.compressor_params(&e.source)?;
                (c.outlet_length, c.outlet_area)
            }
        })
    }

    pub fn component_blocks(&self) -> Result<ComponentBlocks, AssemblyError> {
        let topo = &self.topology;
        let mut nodes = Vec::with_capacity(topo.node_count());
        for (i, n) in topo.nodes().iter().enumerate() {
            let block = match n.kind {
                NodeKind::Storage => make_storage(&self.storage_params(&n.id)?).map_err(Self::wrap(&n.id))?,
                NodeKind::Junction => {
                    let incident = topo
                        .incident_edges(i)
                        .into_iter()
                        .map(|e| self.edge_length_area(e))
                        .collect::<Result<Vec<_>, _>>()?;
                    make_junction(&n.id, &incident, self.constants.rho, self.constants.sound_speed)
                        .map_err(Self::wrap(&n.id))?
                }
                NodeKind::CompressorPlenum => {
                    make_compressor(self.compressor_params(&n.id)?)
                        .map_err(Self::wrap(&n.id))?
                        .plenum
                }
            };
            nodes.push(block);
        }
        let mut edges = Vec::with_capacity(topo.edge_count());
        for e in topo.edges() {
            let block = match e.kind {
                EdgeKind::Pipe => make_pipe(&self.pipe_params(&e.id)?).map_err(Self::wrap(&e.id))?,
                EdgeKind::CompressorDuct => {
                    make_compressor(self.compressor_params(&e.sink)?)
                        .map_err(Self::wrap(&e.id))?
                        .duct
                }
                EdgeKind::CompressorThrottle => {
                    make_compressor(self.compressor_params(&e.source)?)
                        .map_err(Self::wrap(&e.id))?
                        .throttle
                }
            };
            edges.push(block);
        }
        let mut devices = Vec::with_capacity(topo.devices().len());
        for d in topo.devices() {
            let params = self
                .devices
                .get(&d.id)
                .ok_or_else(|| AssemblyError::MissingParams(d.id.clone()))?;
            if params.kind != d.kind {
                return Err(AssemblyError::DeviceMismatch(format!(
                    "{}: declared {:?} but parameters describe {:?}",
                    d.id, d.kind, params.kind
                )));
            }
            devices.push(make_sector_device(params).map_err(Self::wrap(&d.id))?);
        }
        Ok(ComponentBlocks { nodes, edges, devices })
    }

    /// Interconnected hydrogen grid without sector devices.
    pub fn grid_system(&self) -> Result<GridSystem, AssemblyError> {
        let blocks = self.component_blocks()?;
        let nodes = stack_nodes(&self.topology, &blocks.nodes)?;
        let edges = stack_edges(&self.topology, &blocks.edges)?;
        interconnect_grid(&nodes, &edges, &self.topology)
    }

    /// Grid with electrolyzers and fuel cells coupled to their storages.
    pub fn coupled_system(&self) -> Result<GridSystem, AssemblyError> {
        let blocks = self.component_blocks()?;
        let nodes = stack_nodes(&self.topology, &blocks.nodes)?;
        let edges = stack_edges(&self.topology, &blocks.edges)?;
        let grid = interconnect_grid(&nodes, &edges, &self.topology)?;
        couple_sector(&grid, &blocks.devices)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateKind {
    Node,
    Edge,
    Device,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelKind {
    /// Electrolyzer/fuel-cell hydrogen flow.
    SectorFlow,
    /// Exogenous injection (+) or demand (-) at a storage or junction.
    ExogenousFlow,
    /// Compressor pressure boost.
    Boost,
}

impl ChannelKind {
    pub fn prefix(&self) -> &'static str {
        match self {
            ChannelKind::SectorFlow => "q_sc",
            ChannelKind::ExogenousFlow => "q_ex",
            ChannelKind::Boost => "dp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSlot {
    pub kind: StateKind,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputChannel {
    pub kind: ChannelKind,
    /// Device, node or compressor id.
    pub target: String,
}

impl InputChannel {
    pub fn label(&self) -> String {
        format!("{}.{}", self.kind.prefix(), self.target)
    }
}

/// Index maps of an assembled system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemLayout {
    pub states: Vec<StateSlot>,
    pub inputs: Vec<InputChannel>,
    pub outputs: Vec<String>,
    pub incidence: DMatrix<i32>,
    /// Sector devices of the topology, whether coupled yet or not.
    pub devices: Vec<DeviceSlot>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceSlot {
    pub id: String,
    pub kind: DeviceKind,
    pub storage: String,
}

impl SystemLayout {
    pub fn state_index(&self, kind: StateKind, id: &str) -> Option<usize> {
        self.states.iter().position(|s| s.kind == kind && s.id == id)
    }

    pub fn input_index(&self, kind: ChannelKind, target: &str) -> Option<usize> {
        self.inputs.iter().position(|c| c.kind == kind && c.target == target)
    }
}

/// An assembled pH system together with its index maps.
#[derive(Debug, Clone)]
pub struct GridSystem {
    pub block: PhBlock,
    pub layout: SystemLayout,
}

impl GridSystem {
    /// State whose co-state (pressures, flows, activation voltages) is `costate`.
    pub fn state_from_costate(&self, costate: &DVector<f64>) -> Result<DVector<f64>, AssemblyError> {
        let w = self
            .block
            .hamiltonian()
            .diagonal_weights()
            .ok_or_else(|| AssemblyError::Ordering("Hamiltonian is not diagonal".into()))?;
        crate::phcore::check_dim("co-state", w.len(), costate.len())?;
        Ok(costate.component_div(&w))
    }
}

fn expect_scalar_block(block: &PhBlock, label: &str, ports: usize, id: &str) -> Result<(), AssemblyError> {
    if block.n() != 1 || block.state_labels()[0] != label || block.m() != ports {
        return Err(AssemblyError::Ordering(format!(
            "{id}: expected a {label} block with 1 state and {ports} port(s), got `{}` with n={} m={}",
            block.state_labels()[0],
            block.n(),
            block.m()
        )));
    }
    if block.feedthrough().iter().any(|&v| v != 0.0) || block.output_offset().iter().any(|&v| v != 0.0) {
        return Err(AssemblyError::Ordering(format!(
            "{id}: grid blocks must not carry feedthrough or output offsets"
        )));
    }
    Ok(())
}

fn hamiltonians(blocks: &[PhBlock]) -> Vec<Arc<dyn Hamiltonian>> {
    blocks.iter().map(|b| b.hamiltonian().clone()).collect()
}

fn interconnections(blocks: &[PhBlock]) -> Vec<Arc<dyn StateMatrix>> {
    blocks.iter().map(|b| b.interconnection().clone()).collect()
}

fn dissipations(blocks: &[PhBlock]) -> Vec<Arc<dyn StateMatrix>> {
    blocks.iter().map(|b| b.dissipation().clone()).collect()
}

fn concat_disturbance(blocks: &[PhBlock]) -> DVector<f64> {
    DVector::from_iterator(
        blocks.iter().map(|b| b.n()).sum(),
        blocks.iter().flat_map(|b| b.disturbance().iter().copied()),
    )
}

/// Diagonal combination of the node blocks. Inputs are
/// `(net inflows of all N nodes, q_ex of the S+F storage/junction nodes)`.
pub fn stack_nodes(topology: &ValidatedTopology, blocks: &[PhBlock]) -> Result<PhBlock, AssemblyError> {
    let n = topology.node_count();
    let grid = topology.grid_node_count();
    if blocks.len() != n {
        return Err(AssemblyError::Ordering(format!(
            "expected {n} node blocks, got {}",
            blocks.len()
        )));
    }
    let mut b = DMatrix::zeros(n, n + grid);
    for (i, (node, block)) in topology.nodes().iter().zip(blocks).enumerate() {
        let (label, ports) = match node.kind {
            NodeKind::Storage => ("storage", 2),
            NodeKind::Junction => ("junction", 2),
            NodeKind::CompressorPlenum => ("plenum", 1),
        };
        expect_scalar_block(block, label, ports, &node.id)?;
        b[(i, i)] = block.input_matrix()[(0, 0)];
        if ports == 2 {
            b[(i, n + i)] = block.input_matrix()[(0, 1)];
        }
    }
    let mut ports: Vec<String> = topology.nodes().iter().map(|v| format!("inflow.{}", v.id)).collect();
    ports.extend(topology.nodes()[..grid].iter().map(|v| format!("q_ex.{}", v.id)));
    Ok(
        PhBlock::builder_arc(Arc::new(SeparableHamiltonian::new(hamiltonians(blocks))), b)
            .interconnection(BlockDiagonal::new(interconnections(blocks)))
            .dissipation(BlockDiagonal::new(dissipations(blocks)))
            .disturbance(concat_disturbance(blocks))
            .state_labels(topology.nodes().iter().map(|v| format!("x.{}", v.id)))
            .port_labels(ports)
            .build()?,
    )
}

/// Diagonal combination of the edge blocks. Inputs are
/// `(pressure drops of all M edges, Δp of the C compressors)`; the boost of
/// compressor `i` enters its duct row only.
pub fn stack_edges(topology: &ValidatedTopology, blocks: &[PhBlock]) -> Result<PhBlock, AssemblyError> {
    let m = topology.edge_count();
    let c = topology.counts().compressors;
    if blocks.len() != m {
        return Err(AssemblyError::Ordering(format!(
            "expected {m} edge blocks, got {}",
            blocks.len()
        )));
    }
    let mut b = DMatrix::zeros(m, m + c);
    for (j, (edge, block)) in topology.edges().iter().zip(blocks).enumerate() {
        let (label, ports) = match edge.kind {
            EdgeKind::Pipe => ("pipe", 1),
            EdgeKind::CompressorDuct => ("duct", 2),
            EdgeKind::CompressorThrottle => ("throttle", 1),
        };
        expect_scalar_block(block, label, ports, &edge.id)?;
        if edge.kind != EdgeKind::Pipe && j < m - 2 * c {
            return Err(AssemblyError::Ordering(format!(
                "{}: compressor edges must follow all pipes",
                edge.id
            )));
        }
        b[(j, j)] = block.input_matrix()[(0, 0)];
        if ports == 2 {
            let k = (j + 2 * c - m) / 2;
            if topology.duct_column(k) != j {
                return Err(AssemblyError::Ordering(format!(
                    "{}: duct is not at the paired column",
                    edge.id
                )));
            }
            b[(j, m + k)] = block.input_matrix()[(0, 1)];
        }
    }
    let mut ports: Vec<String> = topology.edges().iter().map(|e| format!("dp.{}", e.id)).collect();
    ports.extend(compressor_ids(topology).map(|id| format!("boost.{id}")));
    Ok(
        PhBlock::builder_arc(Arc::new(SeparableHamiltonian::new(hamiltonians(blocks))), b)
            .interconnection(BlockDiagonal::new(interconnections(blocks)))
            .dissipation(BlockDiagonal::new(dissipations(blocks)))
            .disturbance(concat_disturbance(blocks))
            .state_labels(topology.edges().iter().map(|e| format!("x.{}", e.id)))
            .port_labels(ports)
            .build()?,
    )
}

fn compressor_ids(topology: &ValidatedTopology) -> impl Iterator<Item = &str> {
    topology
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::CompressorPlenum)
        .map(|n| n.id.as_str())
}

/// Wire the node and edge systems through the incidence matrix.
pub fn interconnect_grid(
    node_sys: &PhBlock,
    edge_sys: &PhBlock,
    topology: &ValidatedTopology,
) -> Result<GridSystem, AssemblyError> {
    let n = topology.node_count();
    let m = topology.edge_count();
    let grid = topology.grid_node_count();
    let c = topology.counts().compressors;
    crate::phcore::check_dim("node system states", n, node_sys.n())?;
    crate::phcore::check_dim("node system inputs", n + grid, node_sys.m())?;
    crate::phcore::check_dim("edge system states", m, edge_sys.n())?;
    crate::phcore::check_dim("edge system inputs", m + c, edge_sys.m())?;

    let incidence = topology.incidence();
    let bg = incidence.map(|v| v as f64);
    let bn1 = node_sys.input_matrix().columns(0, n).into_owned();
    let bn2 = node_sys.input_matrix().columns(n, grid).into_owned();
    let be1 = edge_sys.input_matrix().columns(0, m).into_owned();
    let be2 = edge_sys.input_matrix().columns(m, c).into_owned();

    let coupling = &bn1 * &bg * be1.transpose();
    let mut jc = DMatrix::zeros(n + m, n + m);
    jc.view_mut((0, n), (n, m)).copy_from(&coupling);
    jc.view_mut((n, 0), (m, n)).copy_from(&(-coupling.transpose()));

    let mut b = DMatrix::zeros(n + m, grid + c);
    b.view_mut((0, 0), (n, grid)).copy_from(&bn2);
    b.view_mut((n, grid), (m, c)).copy_from(&be2);

    let mut d = DVector::zeros(n + m);
    d.rows_mut(0, n).copy_from(node_sys.disturbance());
    d.rows_mut(n, m).copy_from(edge_sys.disturbance());

    let interconnection = SumMatrix(vec![
        Arc::new(BlockDiagonal::new(vec![
            node_sys.interconnection().clone(),
            edge_sys.interconnection().clone(),
        ])),
        Arc::new(ConstantMatrix(jc)),
    ]);

    let mut states: Vec<StateSlot> = topology
        .nodes()
        .iter()
        .map(|v| StateSlot {
            kind: StateKind::Node,
            id: v.id.clone(),
        })
        .collect();
    states.extend(topology.edges().iter().map(|e| StateSlot {
        kind: StateKind::Edge,
        id: e.id.clone(),
    }));
    let mut inputs: Vec<InputChannel> = topology.nodes()[..grid]
        .iter()
        .map(|v| InputChannel {
            kind: ChannelKind::ExogenousFlow,
            target: v.id.clone(),
        })
        .collect();
    inputs.extend(compressor_ids(topology).map(|id| InputChannel {
        kind: ChannelKind::Boost,
        target: id.to_string(),
    }));
    let mut outputs: Vec<String> = topology.nodes()[..grid].iter().map(|v| format!("p.{}", v.id)).collect();
    outputs.extend((0..c).map(|k| format!("q.{}", topology.edges()[topology.duct_column(k)].id)));

    let block = PhBlock::builder_arc(
        Arc::new(SeparableHamiltonian::new(vec![
            node_sys.hamiltonian().clone(),
            edge_sys.hamiltonian().clone(),
        ])),
        b,
    )
    .interconnection(interconnection)
    .dissipation(BlockDiagonal::new(vec![
        node_sys.dissipation().clone(),
        edge_sys.dissipation().clone(),
    ]))
    .disturbance(d)
    .state_labels(states.iter().map(|s| format!("x.{}", s.id)))
    .port_labels(inputs.iter().map(InputChannel::label))
    .build()?;

    Ok(GridSystem {
        block,
        layout: SystemLayout {
            states,
            inputs,
            outputs,
            incidence,
            devices: topology
                .devices()
                .iter()
                .map(|d| DeviceSlot {
                    id: d.id.clone(),
                    kind: d.kind,
                    storage: d.attached_storage.clone(),
                })
                .collect(),
        },
    })
}

/// Attach electrolyzers and fuel cells. Device `k` must sit on storage node
/// `k` (the validated ordering guarantees this); its flow replaces that
/// storage's exogenous-flow channel, entering the storage with `+` for
/// electrolyzers and `-` for fuel cells.
pub fn couple_sector(grid: &GridSystem, device_blocks: &[PhBlock]) -> Result<GridSystem, AssemblyError> {
    let devices = &grid.layout.devices;
    let k = device_blocks.len();
    if devices.len() != k {
        return Err(AssemblyError::DeviceMismatch(format!(
            "topology declares {} devices, got {k} blocks",
            devices.len()
        )));
    }
    if k == 0 || grid.layout.states.iter().any(|s| s.kind == StateKind::Device) {
        return Ok(grid.clone());
    }
    let ng = grid.block.n();
    let mg = grid.block.m();
    for (i, dev) in devices.iter().enumerate() {
        let channel = grid.layout.inputs.get(i);
        if channel.is_none_or(|c| c.kind != ChannelKind::ExogenousFlow || c.target != dev.storage) {
            return Err(AssemblyError::DeviceMismatch(format!(
                "{} must be attached to storage node {} of the ordering",
                dev.id,
                i + 1
            )));
        }
    }

    let mut b = DMatrix::zeros(ng + k, mg);
    b.view_mut((0, 0), (ng, mg)).copy_from(grid.block.input_matrix());
    let mut feedthrough = grid.block.feedthrough().clone();
    let mut offset = grid.block.output_offset().clone();
    let mut d = DVector::zeros(ng + k);
    d.rows_mut(0, ng).copy_from(grid.block.disturbance());
    for (i, (block, dev)) in device_blocks.iter().zip(devices).enumerate() {
        if block.n() != 1 || block.m() != 1 || block.state_labels()[0] != "activation" {
            return Err(AssemblyError::Ordering(format!(
                "{}: not a scalar sector-device block",
                dev.id
            )));
        }
        if dev.kind == DeviceKind::FuelCell {
            b.view_mut((0, i), (ng, 1)).neg_mut();
        }
        b[(ng + i, i)] = block.input_matrix()[(0, 0)];
        feedthrough[(i, i)] += block.feedthrough()[(0, 0)];
        offset[i] += block.output_offset()[0];
        d[ng + i] = block.disturbance()[0];
    }

    let mut hams: Vec<Arc<dyn Hamiltonian>> = vec![grid.block.hamiltonian().clone()];
    hams.extend(hamiltonians(device_blocks));
    let mut js: Vec<Arc<dyn StateMatrix>> = vec![grid.block.interconnection().clone()];
    js.extend(interconnections(device_blocks));
    let mut rs: Vec<Arc<dyn StateMatrix>> = vec![grid.block.dissipation().clone()];
    rs.extend(dissipations(device_blocks));

    let mut layout = grid.layout.clone();
    for (i, dev) in devices.iter().enumerate() {
        layout.states.push(StateSlot {
            kind: StateKind::Device,
            id: dev.id.clone(),
        });
        layout.inputs[i] = InputChannel {
            kind: ChannelKind::SectorFlow,
            target: dev.id.clone(),
        };
        layout.outputs[i] = format!("y.{}", dev.id);
    }
    let block = PhBlock::builder_arc(Arc::new(SeparableHamiltonian::new(hams)), b)
        .interconnection(BlockDiagonal::new(js))
        .dissipation(BlockDiagonal::new(rs))
        .feedthrough(feedthrough)
        .output_offset(offset)
        .disturbance(d)
        .state_labels(layout.states.iter().map(|s| format!("x.{}", s.id)))
        .port_labels(layout.inputs.iter().map(InputChannel::label))
        .build()?;
    Ok(GridSystem { block, layout })
}
