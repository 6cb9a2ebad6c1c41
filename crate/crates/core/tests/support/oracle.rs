//! Direct implementation of the network balance laws, written against the
//! physical equations rather than the pH matrices. Used as an independent
//! reference for the assembled systems.

#![allow(dead_code)]

use h2ph::assembly::{ChannelKind, Network, StateKind, SystemLayout};
use h2ph::components::{DeviceKind, OpenCircuit};
use h2ph::topology::{EdgeKind, NodeKind};

/// Right-hand side and outputs with per-row term magnitudes.
pub struct Evaluation {
    pub rhs: Vec<f64>,
    pub rhs_scale: Vec<f64>,
    pub output: Vec<f64>,
    pub output_scale: Vec<f64>,
}

/// Relative error of `got` against `want` using the term magnitudes.
pub fn relative_error(got: &[f64], want: &[f64], scale: &[f64]) -> f64 {
    got.iter()
        .zip(want)
        .zip(scale)
        .map(|((g, w), s)| if *s == 0.0 { (g - w).abs() } else { (g - w).abs() / s })
        .fold(0.0, f64::max)
}

/// Weymouth mean pressure in its rational form.
pub fn weymouth_rational(pl: f64, pr: f64) -> f64 {
    2.0 / 3.0 * (pl.powi(3) - pr.powi(3)) / (pl.powi(2) - pr.powi(2))
}

fn weymouth_limit_safe(pl: f64, pr: f64) -> f64 {
    if pl == pr {
        pl
    } else {
        weymouth_rational(pl, pr)
    }
}

fn compressor_of(net: &Network, edge: &str) -> (String, EdgeKind) {
    let topo = &net.topology;
    let e = &topo.edges()[topo.edge_index(edge).unwrap()];
    match e.kind {
        EdgeKind::CompressorDuct => (e.sink.clone(), e.kind),
        EdgeKind::CompressorThrottle => (e.source.clone(), e.kind),
        EdgeKind::Pipe => (String::new(), e.kind),
    }
}

/// `(length, area)` of an edge.
fn edge_geometry(net: &Network, edge: &str) -> (f64, f64) {
    match compressor_of(net, edge) {
        (_, EdgeKind::Pipe) => {
            let g = &net.pipes[edge];
            (g.length, g.area)
        }
        (c, EdgeKind::CompressorDuct) => {
            let p = &net.compressors[&c];
            (p.duct_length, p.duct_area)
        }
        (c, EdgeKind::CompressorThrottle) => {
            let p = &net.compressors[&c];
            (p.outlet_length, p.outlet_area)
        }
    }
}

/// Storage capacity of the co-state of slot `i` (state = scale × co-state).
pub fn state_scale(net: &Network, layout: &SystemLayout, i: usize) -> f64 {
    let k = &net.constants;
    let slot = &layout.states[i];
    let topo = &net.topology;
    match slot.kind {
        StateKind::Node => {
            let node = &topo.nodes()[topo.node_index(&slot.id).unwrap()];
            match node.kind {
                NodeKind::Storage => {
                    let s = &net.storages[&slot.id];
                    k.molar_mass * s.volume / (k.rho * k.gas_constant * s.temperature)
                }
                NodeKind::Junction => topo
                    .edges()
                    .iter()
                    .filter(|e| e.source == slot.id || e.sink == slot.id)
                    .map(|e| {
                        let (l, a) = edge_geometry(net, &e.id);
                        l * a / (2.0 * k.rho * k.sound_speed * k.sound_speed)
                    })
                    .sum(),
                NodeKind::CompressorPlenum => {
                    let c = &net.compressors[&slot.id];
                    c.plenum_volume / (k.rho * c.sonic_velocity * c.sonic_velocity)
                }
            }
        }
        StateKind::Edge => {
            let (l, a) = edge_geometry(net, &slot.id);
            k.rho * l / a
        }
        StateKind::Device => {
            let d = &net.devices[&slot.id];
            d.double_layer_capacitance * d.cell_area / d.cells as f64
        }
    }
}

fn open_circuit(net: &Network, device: &str) -> f64 {
    let d = &net.devices[device];
    let k = &net.constants;
    match d.open_circuit {
        OpenCircuit::Constant(v) => v,
        OpenCircuit::Nernst(n) => {
            let ps = 101_325.0;
            let per_cell = 1.23 - 0.0009 * (n.temperature - 298.15)
                + k.gas_constant * n.temperature / (2.0 * k.faraday)
                    * ((n.p_h2 / ps) / ((n.p_o2 / ps).sqrt() * (n.p_h2o / ps))).ln();
            d.cells as f64 * per_cell
        }
    }
}

/// Evaluate the balance laws at state `x` and input `u`, both in the
/// layout's ordering.
pub fn direct(net: &Network, layout: &SystemLayout, x: &[f64], u: &[f64]) -> Evaluation {
    let k = &net.constants;
    let topo = &net.topology;
    let n = layout.states.len();
    let e: Vec<f64> = (0..n).map(|i| x[i] / state_scale(net, layout, i)).collect();
    let pos = |kind: StateKind, id: &str| layout.state_index(kind, id).unwrap();
    let pressure = |id: &str| e[pos(StateKind::Node, id)];

    // per-row collected terms
    let mut terms: Vec<Vec<f64>> = vec![Vec::new(); n];

    // transport along each edge
    for edge in topo.edges() {
        let row = pos(StateKind::Edge, &edge.id);
        let q = e[row];
        let (pl, pr) = (pressure(&edge.source), pressure(&edge.sink));
        // mass balance at the end nodes
        terms[pos(StateKind::Node, &edge.source)].push(-q);
        terms[pos(StateKind::Node, &edge.sink)].push(q);
        match edge.kind {
            EdgeKind::Pipe => {
                let g = &net.pipes[&edge.id];
                let nominal = |id: &str| topo.nodes()[topo.node_index(id).unwrap()].nominal_pressure;
                let pm = weymouth_limit_safe(nominal(&edge.source), nominal(&edge.sink));
                let lam =
                    g.darcy_lambda * k.sound_speed.powi(2) * k.rho.powi(2) / (2.0 * g.diameter * g.area.powi(2) * pm);
                // (ρ/A) q̇ = (pl - pr)/L - λ̂ q|q| - g sinθ p_M / c², times L
                let t = &mut terms[row];
                t.push(pl);
                t.push(-pr);
                t.push(-g.length * lam * q * q.abs());
                t.push(-g.length * k.gravity * g.incline.sin() * pm / k.sound_speed.powi(2));
            }
            EdgeKind::CompressorDuct => {
                // ρL_c/A_1 q̇_f = p_l - p_plenum + Δp
                terms[row].push(pl);
                terms[row].push(-pr);
            }
            EdgeKind::CompressorThrottle => {
                terms[row].push(pl);
                terms[row].push(-pr);
            }
        }
    }

    // node losses
    for node in topo.nodes() {
        let row = pos(StateKind::Node, &node.id);
        match node.kind {
            NodeKind::Storage => terms[row].push(-net.storages[&node.id].leak_coeff / k.rho * e[row]),
            NodeKind::CompressorPlenum => terms[row].push(-net.compressors[&node.id].plenum_loss / k.rho * e[row]),
            NodeKind::Junction => {}
        }
    }

    // devices: C_a v̇ = -v/R_a + i, i = zρF/M · q_sc
    let to_current = k.electrons * k.rho * k.faraday / k.molar_mass;
    let coupled = layout.states.iter().any(|s| s.kind == StateKind::Device);
    for slot in layout.devices.iter().filter(|_| coupled) {
        let row = pos(StateKind::Device, &slot.id);
        terms[row].push(-e[row] / net.devices[&slot.id].activation_resistance);
    }

    // inputs and outputs
    let mut output = Vec::with_capacity(layout.inputs.len());
    let mut output_scale = Vec::with_capacity(layout.inputs.len());
    for (ch, &v) in layout.inputs.iter().zip(u) {
        match ch.kind {
            ChannelKind::ExogenousFlow => {
                let row = pos(StateKind::Node, &ch.target);
                terms[row].push(v);
                output.push(e[row]);
                output_scale.push(e[row].abs());
            }
            ChannelKind::Boost => {
                let duct = topo
                    .edges()
                    .iter()
                    .find(|ed| ed.kind == EdgeKind::CompressorDuct && ed.sink == ch.target)
                    .unwrap();
                let row = pos(StateKind::Edge, &duct.id);
                terms[row].push(v);
                output.push(e[row]);
                output_scale.push(e[row].abs());
            }
            ChannelKind::SectorFlow => {
                let slot = layout.devices.iter().find(|d| d.id == ch.target).unwrap();
                let d = &net.devices[&slot.id];
                let sign = match slot.kind {
                    DeviceKind::Electrolyzer => 1.0,
                    DeviceKind::FuelCell => -1.0,
                };
                let storage_row = pos(StateKind::Node, &slot.storage);
                let dev_row = pos(StateKind::Device, &slot.id);
                terms[storage_row].push(sign * v);
                terms[dev_row].push(to_current * v);
                // port output: storage pressure seen through the flow sign,
                // activation voltage, Ohmic drop and open-circuit offset
                let ohmic = d.cells as f64 * d.membrane_thickness / (d.membrane_conductivity * d.cell_area);
                let parts = [
                    sign * e[storage_row],
                    to_current * e[dev_row],
                    ohmic * to_current * to_current * v,
                    sign * to_current * open_circuit(net, &slot.id),
                ];
                output.push(parts.iter().sum());
                output_scale.push(parts.iter().map(|p| p.abs()).sum());
            }
        }
    }

    Evaluation {
        rhs: terms.iter().map(|t| t.iter().sum()).collect(),
        rhs_scale: terms.iter().map(|t| t.iter().map(|v| v.abs()).sum()).collect(),
        output,
        output_scale,
    }
}
