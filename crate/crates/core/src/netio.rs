//! Network and scenario files, and result writers.
//!
//! Both file kinds are TOML. A network file has a `name`, an optional
//! `[constants]` table and arrays of `[[node]]`, `[[edge]]` and `[[device]]`
//! tables; see `docs/file-format.md` for the full grammar. All quantities
//! are SI except `constants.molar_mass`, which is given in g/mol.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::analysis::PassivityReport;
use crate::assembly::{GridSystem, Network, PipeGeometry, StateKind, StorageSpec};
use crate::components::{
    CompressorParams, Constants, DeviceKind, NernstInputs, OpenCircuit, PipeParams, SectorDeviceParams, StorageParams,
};
use crate::sim::{InputSignal, Interpolation, Method, RunOptions, Scenario, Trajectory};
use crate::topology::{DeviceDecl, EdgeDecl, EdgeKind, NetworkTopology, NodeDecl, NodeKind};

/// One problem found in an input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based line, when the problem can be pinned to one.
    pub line: Option<usize>,
    pub rule: String,
    pub message: String,
}

#[derive(Debug)]
pub enum NetIoError {
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Invalid {
        origin: String,
        diagnostics: Vec<Diagnostic>,
    },
}

impl fmt::Display for NetIoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetIoError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            NetIoError::Invalid { origin, diagnostics } => {
                for (i, d) in diagnostics.iter().enumerate() {
                    if i > 0 {
                        writeln!(f)?;
                    }
                    match d.line {
                        Some(line) => write!(f, "{origin}:{line}: [{}] {}", d.rule, d.message)?,
                        None => write!(f, "{origin}: [{}] {}", d.rule, d.message)?,
                    }
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for NetIoError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            NetIoError::Io { source, .. } => Some(source),
            NetIoError::Invalid { .. } => None,
        }
    }
}

impl NetIoError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            NetIoError::Invalid { diagnostics, .. } => diagnostics,
            NetIoError::Io { .. } => &[],
        }
    }
}

fn read(path: &Path) -> Result<String, NetIoError> {
    fs::read_to_string(path).map_err(|source| NetIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn syntax_error(text: &str, origin: &str, e: toml::de::Error) -> NetIoError {
    NetIoError::Invalid {
        origin: origin.to_string(),
        diagnostics: vec![Diagnostic {
            line: e.span().map(|s: Range<usize>| line_of(text, s.start)),
            rule: "syntax".into(),
            message: e.message().trim().to_string(),
        }],
    }
}

/// Collects diagnostics with line numbers resolved from byte spans.
struct Diagnostics<'a> {
    text: &'a str,
    items: Vec<Diagnostic>,
}

impl<'a> Diagnostics<'a> {
    fn push(&mut self, span: Option<Range<usize>>, rule: &str, message: String) {
        self.items.push(Diagnostic {
            line: span.map(|s| line_of(self.text, s.start)),
            rule: rule.into(),
            message,
        });
    }

    fn into_result(self, origin: &str) -> Result<(), NetIoError> {
        if self.items.is_empty() {
            Ok(())
        } else {
            Err(NetIoError::Invalid {
                origin: origin.to_string(),
                diagnostics: self.items,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// network files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstants {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sound_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gravity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gas_constant: Option<f64>,
    /// g/mol
    #[serde(default, skip_serializing_if = "Option::is_none")]
    molar_mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    faraday: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    electrons: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    kind: NodeKind,
    nominal_pressure: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    volume: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    leak_coeff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plenum_volume: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sonic_velocity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plenum_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    duct_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    duct_area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    outlet_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    outlet_area: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    id: String,
    kind: EdgeKind,
    from: String,
    to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diameter: Option<f64>,
    /// Defaults to the circular cross-section `πD²/4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    darcy_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    incline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDevice {
    id: String,
    kind: DeviceKind,
    storage: String,
    activation_resistance: f64,
    double_layer_capacitance: f64,
    cell_area: f64,
    cells: u32,
    membrane_thickness: f64,
    membrane_conductivity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    open_circuit_voltage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nernst: Option<NernstInputs>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    name: String,
    #[serde(default)]
    constants: Option<Spanned<RawConstants>>,
    #[serde(default)]
    node: Vec<Spanned<RawNode>>,
    #[serde(default)]
    edge: Vec<Spanned<RawEdge>>,
    #[serde(default)]
    device: Vec<Spanned<RawDevice>>,
}

#[derive(Debug, Serialize)]
struct NetworkOut {
    name: String,
    constants: RawConstants,
    node: Vec<RawNode>,
    edge: Vec<RawEdge>,
    device: Vec<RawDevice>,
}

/// g/mol value whose conversion back to kg/mol reproduces `kg` exactly.
fn grams_per_mol(kg: f64) -> f64 {
    let mut g = kg * 1e3;
    for _ in 0..8 {
        let back = g / 1e3;
        if back == kg {
            break;
        }
        g = if back < kg { g.next_up() } else { g.next_down() };
    }
    g
}

fn resolve_constants(raw: Option<&RawConstants>) -> Constants {
    let d = Constants::default();
    let Some(r) = raw else { return d };
    Constants {
        rho: r.rho.unwrap_or(d.rho),
        sound_speed: r.sound_speed.unwrap_or(d.sound_speed),
        gravity: r.gravity.unwrap_or(d.gravity),
        gas_constant: r.gas_constant.unwrap_or(d.gas_constant),
        molar_mass: r.molar_mass.map_or(d.molar_mass, |g| g / 1e3),
        faraday: r.faraday.unwrap_or(d.faraday),
        electrons: r.electrons.unwrap_or(d.electrons),
    }
}

fn node_fields(n: &RawNode) -> [(&'static str, Option<f64>); 10] {
    [
        ("volume", n.volume),
        ("temperature", n.temperature),
        ("leak_coeff", n.leak_coeff),
        ("plenum_volume", n.plenum_volume),
        ("sonic_velocity", n.sonic_velocity),
        ("plenum_loss", n.plenum_loss),
        ("duct_length", n.duct_length),
        ("duct_area", n.duct_area),
        ("outlet_length", n.outlet_length),
        ("outlet_area", n.outlet_area),
    ]
}

fn kind_fields(kind: NodeKind) -> &'static [&'static str] {
    match kind {
        NodeKind::Storage => &["volume", "temperature", "leak_coeff"],
        NodeKind::Junction => &[],
        NodeKind::CompressorPlenum => &[
            "plenum_volume",
            "sonic_velocity",
            "plenum_loss",
            "duct_length",
            "duct_area",
            "outlet_length",
            "outlet_area",
        ],
    }
}

fn node_kind_name(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Storage => "storage",
        NodeKind::Junction => "junction",
        NodeKind::CompressorPlenum => "compressor",
    }
}

/// Check that a node carries exactly the fields of its kind.
fn node_field_set(n: &RawNode) -> Result<BTreeMap<&'static str, f64>, Vec<String>> {
    let wanted = kind_fields(n.kind);
    let mut values = BTreeMap::new();
    let mut problems = Vec::new();
    for (name, value) in node_fields(n) {
        match (wanted.contains(&name), value) {
            (true, Some(v)) => {
                values.insert(name, v);
            }
            (true, None) => problems.push(format!(
                "node '{}': missing `{name}` required for a {}",
                n.id,
                node_kind_name(n.kind)
            )),
            (false, Some(_)) => problems.push(format!(
                "node '{}': `{name}` does not apply to a {}",
                n.id,
                node_kind_name(n.kind)
            )),
            (false, None) => {}
        }
    }
    if problems.is_empty() {
        Ok(values)
    } else {
        Err(problems)
    }
}

/// Parse and fully validate a network file.
pub fn parse_network(path: &Path) -> Result<Network, NetIoError> {
    let text = read(path)?;
    parse_network_str(&text, &path.display().to_string())
}

/// As [`parse_network`], reading from `text`; `origin` names the source in
/// diagnostics.
pub fn parse_network_str(text: &str, origin: &str) -> Result<Network, NetIoError> {
    let doc: NetworkDoc = toml::from_str(text).map_err(|e| syntax_error(text, origin, e))?;
    let mut diag = Diagnostics {
        text,
        items: Vec::new(),
    };

    let constants = resolve_constants(doc.constants.as_ref().map(|c| c.get_ref()));
    if let Err(e) = constants.validate() {
        diag.push(doc.constants.as_ref().map(|c| c.span()), "physics", e.to_string());
    }

    let mut lines: BTreeMap<String, Range<usize>> = BTreeMap::new();
    let mut topo = NetworkTopology::default();
    let mut storages = BTreeMap::new();
    let mut compressors = BTreeMap::new();
    let mut pipes = BTreeMap::new();
    let mut devices = BTreeMap::new();

    for sn in &doc.node {
        let n = sn.get_ref();
        lines.entry(n.id.clone()).or_insert(sn.span());
        topo.nodes.push(NodeDecl {
            id: n.id.clone(),
            kind: n.kind,
            nominal_pressure: n.nominal_pressure,
        });
        let fields = match node_field_set(n) {
            Ok(f) => f,
            Err(problems) => {
                for p in problems {
                    diag.push(Some(sn.span()), "schema", p);
                }
                continue;
            }
        };
        match n.kind {
            NodeKind::Storage => {
                let spec = StorageSpec {
                    volume: fields["volume"],
                    temperature: fields["temperature"],
                    leak_coeff: fields["leak_coeff"],
                };
                let params = StorageParams {
                    volume: spec.volume,
                    temperature: spec.temperature,
                    leak_coeff: spec.leak_coeff,
                    molar_mass: constants.molar_mass,
                    gas_constant: constants.gas_constant,
                    rho: constants.rho,
                };
                if let Err(e) = params.validate() {
                    diag.push(Some(sn.span()), "physics", format!("node '{}': {e}", n.id));
                }
                storages.insert(n.id.clone(), spec);
            }
            NodeKind::CompressorPlenum => {
                let params = CompressorParams {
                    plenum_volume: fields["plenum_volume"],
                    sonic_velocity: fields["sonic_velocity"],
                    plenum_loss: fields["plenum_loss"],
                    duct_length: fields["duct_length"],
                    duct_area: fields["duct_area"],
                    outlet_length: fields["outlet_length"],
                    outlet_area: fields["outlet_area"],
                    rho: constants.rho,
                };
                if let Err(e) = params.validate() {
                    diag.push(Some(sn.span()), "physics", format!("node '{}': {e}", n.id));
                }
                compressors.insert(n.id.clone(), params);
            }
            NodeKind::Junction => {}
        }
    }

    for se in &doc.edge {
        let e = se.get_ref();
        lines.entry(e.id.clone()).or_insert(se.span());
        topo.edges.push(EdgeDecl {
            id: e.id.clone(),
            source: e.from.clone(),
            sink: e.to.clone(),
            kind: e.kind,
        });
        let pipe_fields = [
            ("length", e.length),
            ("diameter", e.diameter),
            ("area", e.area),
            ("darcy_lambda", e.darcy_lambda),
            ("incline", e.incline),
        ];
        if e.kind != EdgeKind::Pipe {
            for (name, v) in pipe_fields {
                if v.is_some() {
                    diag.push(
                        Some(se.span()),
                        "schema",
                        format!("edge '{}': `{name}` does not apply to a compressor edge", e.id),
                    );
                }
            }
            continue;
        }
        let missing: Vec<_> = pipe_fields
            .iter()
            .filter(|(name, v)| v.is_none() && !matches!(*name, "area" | "incline"))
            .map(|(name, _)| *name)
            .collect();
        if !missing.is_empty() {
            diag.push(
                Some(se.span()),
                "schema",
                format!("edge '{}': missing {}", e.id, missing.join(", ")),
            );
            continue;
        }
        let diameter = e.diameter.unwrap_or_default();
        let geometry = PipeGeometry {
            length: e.length.unwrap_or_default(),
            diameter,
            area: e.area.unwrap_or(std::f64::consts::FRAC_PI_4 * diameter * diameter),
            darcy_lambda: e.darcy_lambda.unwrap_or_default(),
            incline: e.incline.unwrap_or(0.0),
        };
        // the mean pressure is checked through the nodes' nominal pressures
        let probe = PipeParams {
            area: geometry.area,
            diameter: geometry.diameter,
            length: geometry.length,
            darcy_lambda: geometry.darcy_lambda,
            incline: geometry.incline,
            rho: constants.rho,
            sound_speed: constants.sound_speed,
            mean_pressure: 1.0,
            gravity: constants.gravity,
        };
        if let Err(err) = probe.validate() {
            diag.push(Some(se.span()), "physics", format!("edge '{}': {err}", e.id));
        }
        pipes.insert(e.id.clone(), geometry);
    }

    for sd in &doc.device {
        let d = sd.get_ref();
        lines.entry(d.id.clone()).or_insert(sd.span());
        topo.devices.push(DeviceDecl {
            id: d.id.clone(),
            kind: d.kind,
            attached_storage: d.storage.clone(),
        });
        let open_circuit = match (d.open_circuit_voltage, d.nernst) {
            (Some(v), None) => OpenCircuit::Constant(v),
            (None, Some(n)) => OpenCircuit::Nernst(n),
            _ => {
                diag.push(
                    Some(sd.span()),
                    "schema",
                    format!(
                        "device '{}': give exactly one of `open_circuit_voltage` or `[device.nernst]`",
                        d.id
                    ),
                );
                continue;
            }
        };
        let params = SectorDeviceParams {
            kind: d.kind,
            activation_resistance: d.activation_resistance,
            double_layer_capacitance: d.double_layer_capacitance,
            cell_area: d.cell_area,
            cells: d.cells,
            membrane_thickness: d.membrane_thickness,
            membrane_conductivity: d.membrane_conductivity,
            open_circuit,
            constants,
        };
        if let Err(e) = params.validate() {
            diag.push(Some(sd.span()), "physics", format!("device '{}': {e}", d.id));
        }
        devices.insert(d.id.clone(), params);
    }

    let report = topo.check();
    for v in &report.violations {
        diag.push(
            lines.get(&v.subject).cloned(),
            v.rule,
            format!("{}: {}", v.subject, v.message),
        );
    }
    diag.into_result(origin)?;

    let topology = topo.validate().map_err(|r| NetIoError::Invalid {
        origin: origin.to_string(),
        diagnostics: r
            .violations
            .iter()
            .map(|v| Diagnostic {
                line: None,
                rule: v.rule.into(),
                message: v.message.clone(),
            })
            .collect(),
    })?;
    let network = Network {
        name: doc.name,
        constants,
        topology,
        storages,
        compressors,
        pipes,
        devices,
    };
    // remaining checks that need the whole network (junction capacities,
    // Weymouth mean pressures, structure of the assembled system)
    if let Err(e) = network.coupled_system() {
        return Err(NetIoError::Invalid {
            origin: origin.to_string(),
            diagnostics: vec![Diagnostic {
                line: None,
                rule: "assembly".into(),
                message: e.to_string(),
            }],
        });
    }
    Ok(network)
}

/// Canonical text of `network`: declarations in the validated global order,
/// every parameter explicit.
pub fn serialize_network(network: &Network) -> String {
    let c = &network.constants;
    let topo = &network.topology;
    let out = NetworkOut {
        name: network.name.clone(),
        constants: RawConstants {
            rho: Some(c.rho),
            sound_speed: Some(c.sound_speed),
            gravity: Some(c.gravity),
            gas_constant: Some(c.gas_constant),
            molar_mass: Some(grams_per_mol(c.molar_mass)),
            faraday: Some(c.faraday),
            electrons: Some(c.electrons),
        },
        node: topo
            .nodes()
            .iter()
            .map(|n| {
                let mut raw = RawNode {
                    id: n.id.clone(),
                    kind: n.kind,
                    nominal_pressure: n.nominal_pressure,
                    volume: None,
                    temperature: None,
                    leak_coeff: None,
                    plenum_volume: None,
                    sonic_velocity: None,
                    plenum_loss: None,
                    duct_length: None,
                    duct_area: None,
                    outlet_length: None,
                    outlet_area: None,
                };
                if let Some(s) = network.storages.get(&n.id) {
                    raw.volume = Some(s.volume);
                    raw.temperature = Some(s.temperature);
                    raw.leak_coeff = Some(s.leak_coeff);
                }
                if let Some(p) = network.compressors.get(&n.id) {
                    raw.plenum_volume = Some(p.plenum_volume);
                    raw.sonic_velocity = Some(p.sonic_velocity);
                    raw.plenum_loss = Some(p.plenum_loss);
                    raw.duct_length = Some(p.duct_length);
                    raw.duct_area = Some(p.duct_area);
                    raw.outlet_length = Some(p.outlet_length);
                    raw.outlet_area = Some(p.outlet_area);
                }
                raw
            })
            .collect(),
        edge: topo
            .edges()
            .iter()
            .map(|e| {
                let g = network.pipes.get(&e.id);
                RawEdge {
                    id: e.id.clone(),
                    kind: e.kind,
                    from: e.source.clone(),
                    to: e.sink.clone(),
                    length: g.map(|g| g.length),
                    diameter: g.map(|g| g.diameter),
                    area: g.map(|g| g.area),
                    darcy_lambda: g.map(|g| g.darcy_lambda),
                    incline: g.map(|g| g.incline),
                }
            })
            .collect(),
        device: topo
            .devices()
            .iter()
            .filter_map(|d| network.devices.get(&d.id).map(|p| (d, p)))
            .map(|(d, p)| RawDevice {
                id: d.id.clone(),
                kind: d.kind,
                storage: d.attached_storage.clone(),
                activation_resistance: p.activation_resistance,
                double_layer_capacitance: p.double_layer_capacitance,
                cell_area: p.cell_area,
                cells: p.cells,
                membrane_thickness: p.membrane_thickness,
                membrane_conductivity: p.membrane_conductivity,
                open_circuit_voltage: match p.open_circuit {
                    OpenCircuit::Constant(v) => Some(v),
                    OpenCircuit::Nernst(_) => None,
                },
                nernst: match p.open_circuit {
                    OpenCircuit::Nernst(n) => Some(n),
                    OpenCircuit::Constant(_) => None,
                },
            })
            .collect(),
    };
    toml::to_string(&out).expect("network serializes")
}

// ---------------------------------------------------------------------------
// scenario files

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum InitialMode {
    /// Nominal pressures at the nodes, zero flows and voltages.
    #[default]
    Nominal,
    /// All co-states zero.
    Zero,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    #[serde(default)]
    from: InitialMode,
    #[serde(default)]
    pressure: BTreeMap<String, f64>,
    #[serde(default)]
    flow: BTreeMap<String, f64>,
    #[serde(default)]
    voltage: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeries {
    channel: String,
    #[serde(default)]
    value: Option<f64>,
    #[serde(default)]
    times: Option<Vec<f64>>,
    #[serde(default)]
    values: Option<Vec<f64>>,
    #[serde(default)]
    interpolation: Option<Interpolation>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    duration: f64,
    #[serde(default)]
    method: Option<Method>,
    #[serde(default)]
    step: Option<f64>,
    #[serde(default)]
    newton_tol: Option<f64>,
    #[serde(default)]
    max_iter: Option<usize>,
    #[serde(default)]
    interpolation: Interpolation,
    #[serde(default)]
    initial: RawInitial,
    #[serde(default)]
    input: Vec<Spanned<RawSeries>>,
}

/// A scenario resolved against an assembled system.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub method: Method,
    pub options: RunOptions,
    /// Input channels not mentioned in the file (held at zero).
    pub warnings: Vec<String>,
}

pub fn parse_scenario(path: &Path, network: &Network, system: &GridSystem) -> Result<ScenarioSpec, NetIoError> {
    let text = read(path)?;
    parse_scenario_str(&text, &path.display().to_string(), network, system)
}

pub fn parse_scenario_str(
    text: &str,
    origin: &str,
    network: &Network,
    system: &GridSystem,
) -> Result<ScenarioSpec, NetIoError> {
    let doc: ScenarioDoc = toml::from_str(text).map_err(|e| syntax_error(text, origin, e))?;
    let mut diag = Diagnostics {
        text,
        items: Vec::new(),
    };
    let defaults = RunOptions::default();
    let options = RunOptions {
        step: doc.step.unwrap_or(defaults.step),
        newton_tol: doc.newton_tol.unwrap_or(defaults.newton_tol),
        max_iter: doc.max_iter.unwrap_or(defaults.max_iter),
    };
    if !(doc.duration.is_finite() && doc.duration > 0.0) {
        diag.push(
            None,
            "range",
            format!("duration = {} must be finite and > 0", doc.duration),
        );
    }
    if !(options.step.is_finite() && options.step > 0.0) {
        diag.push(None, "range", format!("step = {} must be finite and > 0", options.step));
    }
    if !(options.newton_tol.is_finite() && options.newton_tol > 0.0) || options.max_iter == 0 {
        diag.push(None, "range", "newton_tol must be > 0 and max_iter >= 1".into());
    }

    let layout = &system.layout;
    let topo = &network.topology;
    let mut costate = DVector::zeros(layout.states.len());
    if doc.initial.from == InitialMode::Nominal {
        for (i, slot) in layout.states.iter().enumerate() {
            if slot.kind == StateKind::Node {
                costate[i] = topo.nodes()[topo.node_index(&slot.id).unwrap()].nominal_pressure;
            }
        }
    }
    for (table, kind, values) in [
        ("pressure", StateKind::Node, &doc.initial.pressure),
        ("flow", StateKind::Edge, &doc.initial.flow),
        ("voltage", StateKind::Device, &doc.initial.voltage),
    ] {
        for (id, v) in values {
            match layout.state_index(kind, id) {
                Some(i) if v.is_finite() => costate[i] = *v,
                Some(_) => diag.push(None, "range", format!("initial.{table}.{id} is not finite")),
                None => diag.push(None, "reference", format!("initial.{table}: unknown id '{id}'")),
            }
        }
    }

    let labels: Vec<String> = layout.inputs.iter().map(|c| c.label()).collect();
    let mut signals: Vec<Option<InputSignal>> = vec![None; labels.len()];
    for ss in &doc.input {
        let s = ss.get_ref();
        let Some(k) = labels.iter().position(|l| *l == s.channel) else {
            diag.push(
                Some(ss.span()),
                "reference",
                format!("unknown input channel '{}' (known: {})", s.channel, labels.join(", ")),
            );
            continue;
        };
        if signals[k].is_some() {
            diag.push(
                Some(ss.span()),
                "unique ids",
                format!("channel '{}' given twice", s.channel),
            );
            continue;
        }
        let interpolation = s.interpolation.unwrap_or(doc.interpolation);
        let built = match (&s.value, &s.times, &s.values) {
            (Some(v), None, None) => InputSignal::new(vec![0.0], vec![*v], interpolation),
            (None, Some(t), Some(v)) => {
                if t.first().is_some_and(|&t0| t0 > 0.0) {
                    diag.push(
                        Some(ss.span()),
                        "coverage",
                        format!("channel '{}': series must start at or before t = 0", s.channel),
                    );
                    continue;
                }
                InputSignal::new(t.clone(), v.clone(), interpolation)
            }
            _ => {
                diag.push(
                    Some(ss.span()),
                    "schema",
                    format!("channel '{}': give either `value` or `times` with `values`", s.channel),
                );
                continue;
            }
        };
        match built {
            Ok(sig) => signals[k] = Some(sig),
            Err(e) => diag.push(Some(ss.span()), "series", format!("channel '{}': {e}", s.channel)),
        }
    }
    diag.into_result(origin)?;

    let mut warnings = Vec::new();
    let inputs = signals
        .into_iter()
        .zip(&labels)
        .map(|(s, label)| {
            s.unwrap_or_else(|| {
                warnings.push(format!("input channel '{label}' not given; held at 0"));
                InputSignal::constant(0.0)
            })
        })
        .collect();
    let initial_state = system.state_from_costate(&costate).map_err(|e| NetIoError::Invalid {
        origin: origin.to_string(),
        diagnostics: vec![Diagnostic {
            line: None,
            rule: "assembly".into(),
            message: e.to_string(),
        }],
    })?;
    Ok(ScenarioSpec {
        scenario: Scenario {
            duration: doc.duration,
            initial_state,
            inputs,
        },
        method: doc.method.unwrap_or(Method::Midpoint),
        options,
        warnings,
    })
}

/// Constant input vector keyed by channel label, for steady-state runs.
///
/// The file is a flat table `label = value`; missing channels are zero.
pub fn parse_input_values(text: &str, origin: &str, system: &GridSystem) -> Result<DVector<f64>, NetIoError> {
    let table: BTreeMap<String, Spanned<f64>> = toml::from_str(text).map_err(|e| syntax_error(text, origin, e))?;
    let labels: Vec<String> = system.layout.inputs.iter().map(|c| c.label()).collect();
    let mut u = DVector::zeros(labels.len());
    let mut diag = Diagnostics {
        text,
        items: Vec::new(),
    };
    for (key, v) in &table {
        match labels.iter().position(|l| l == key) {
            Some(k) => u[k] = *v.get_ref(),
            None => diag.push(Some(v.span()), "reference", format!("unknown input channel '{key}'")),
        }
    }
    diag.into_result(origin)?;
    Ok(u)
}

/// Labels of the co-states of `system`: `p.<node>`, `q.<edge>`, `v.<device>`.
pub fn costate_labels(system: &GridSystem) -> Vec<String> {
    system
        .layout
        .states
        .iter()
        .map(|s| {
            let prefix = match s.kind {
                StateKind::Node => "p",
                StateKind::Edge => "q",
                StateKind::Device => "v",
            };
            format!("{prefix}.{}", s.id)
        })
        .collect()
}

/// State whose co-states are given as a flat table `label = value`
/// (labels as in [`costate_labels`]); missing entries are zero.
pub fn parse_costate_values(text: &str, origin: &str, system: &GridSystem) -> Result<DVector<f64>, NetIoError> {
    let table: BTreeMap<String, Spanned<f64>> = toml::from_str(text).map_err(|e| syntax_error(text, origin, e))?;
    let labels = costate_labels(system);
    let mut costate = DVector::zeros(labels.len());
    let mut diag = Diagnostics {
        text,
        items: Vec::new(),
    };
    for (key, v) in &table {
        match labels.iter().position(|l| l == key) {
            Some(k) => costate[k] = *v.get_ref(),
            None => diag.push(Some(v.span()), "reference", format!("unknown co-state '{key}'")),
        }
    }
    diag.into_result(origin)?;
    system.state_from_costate(&costate).map_err(|e| NetIoError::Invalid {
        origin: origin.to_string(),
        diagnostics: vec![Diagnostic {
            line: None,
            rule: "assembly".into(),
            message: e.to_string(),
        }],
    })
}

/// State at the nominal node pressures with zero flows and voltages.
pub fn nominal_state(network: &Network, system: &GridSystem) -> DVector<f64> {
    let topo = &network.topology;
    let costate = DVector::from_iterator(
        system.layout.states.len(),
        system.layout.states.iter().map(|s| match s.kind {
            StateKind::Node => topo.nodes()[topo.node_index(&s.id).unwrap()].nominal_pressure,
            _ => 0.0,
        }),
    );
    system
        .state_from_costate(&costate)
        .expect("assembled systems have diagonal Hamiltonians")
}

// ---------------------------------------------------------------------------
// results

/// Shortest representation that parses back to the same value.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

pub const LEDGER_COLUMNS: [&str; 4] = ["dissipation", "supply", "feedthrough_loss", "disturbance_work"];

pub fn csv_header(trajectory: &Trajectory) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(trajectory.state_labels.iter().cloned());
    h.extend(trajectory.output_labels.iter().cloned());
    h.push("H".into());
    h.extend(LEDGER_COLUMNS.iter().map(|s| s.to_string()));
    h
}

fn csv_rows(trajectory: &Trajectory) -> impl Iterator<Item = Vec<String>> + '_ {
    trajectory.samples.iter().map(|s| {
        let mut row = vec![format_float(s.time)];
        row.extend(s.state.iter().map(|v| format_float(*v)));
        row.extend(s.output.iter().map(|v| format_float(*v)));
        row.push(format_float(s.hamiltonian));
        let l = &s.ledger;
        row.extend(
            [l.dissipation, l.supply, l.feedthrough_loss, l.disturbance_work]
                .iter()
                .map(|v| format_float(*v)),
        );
        row
    })
}

/// The trajectory as CSV text.
pub fn trajectory_csv(trajectory: &Trajectory) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(csv_header(trajectory)).expect("in-memory write");
    for row in csv_rows(trajectory) {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Whitespace-separated columns with a `#` header line, for gnuplot.
pub fn trajectory_columns(trajectory: &Trajectory) -> String {
    let mut out = format!("# {}\n", csv_header(trajectory).join(" "));
    for row in csv_rows(trajectory) {
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Write `trajectory.csv`, optionally `audit.toml` and `trajectory.dat`
/// into `out_dir`; returns the written paths.
pub fn write_results(
    trajectory: &Trajectory,
    report: Option<&PassivityReport>,
    out_dir: &Path,
    gnuplot: bool,
) -> Result<Vec<PathBuf>, NetIoError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| NetIoError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut written = Vec::new();
    let csv_path = out_dir.join("trajectory.csv");
    fs::write(&csv_path, trajectory_csv(trajectory)).map_err(io(&csv_path))?;
    written.push(csv_path);
    if let Some(r) = report {
        let path = out_dir.join("audit.toml");
        fs::write(&path, r.to_toml()).map_err(io(&path))?;
        written.push(path);
    }
    if gnuplot {
        let path = out_dir.join("trajectory.dat");
        fs::write(&path, trajectory_columns(trajectory)).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}
