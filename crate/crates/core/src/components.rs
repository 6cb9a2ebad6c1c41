//! Component models of the hydrogen network, each as a scalar-state pH block.
//!
//! Every block has a quadratic Hamiltonian `H = ½ x²/s` where `s` is the
//! state scaling between the physical quantity and the state (`x = s·p`,
//! `x = s·q`, `x = s·v`), so the co-state `∇H` is the physical pressure,
//! flow rate or activation voltage.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phcore::{AbsDiagonal, ConstantMatrix, PhBlock, PhError, QuadraticHamiltonian};

/// Cell voltage at standard conditions (V).
pub const STANDARD_CELL_VOLTAGE: f64 = 1.23;
/// Temperature coefficient of the open-circuit voltage (V/K).
pub const OCV_TEMPERATURE_COEFF: f64 = 0.0009;
/// Standard temperature (K).
pub const STANDARD_TEMPERATURE: f64 = 298.15;
/// Standard pressure (Pa).
pub const STANDARD_PRESSURE: f64 = 101_325.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComponentError {
    #[error("{component}: parameter `{field}` = {value} violates {rule}")]
    InvalidParameter {
        component: String,
        field: &'static str,
        value: f64,
        rule: &'static str,
    },
    #[error("junction {0} has no incident edges")]
    IsolatedJunction(String),
    #[error(transparent)]
    Structure(#[from] PhError),
}

/// Shared physical constants. All values SI; defaults describe hydrogen at
/// standard conditions and can be overridden per network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    /// Standard-condition density (kg/m³).
    pub rho: f64,
    /// Speed of sound (m/s).
    pub sound_speed: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
    /// Universal gas constant (J/(mol·K)).
    pub gas_constant: f64,
    /// Molar mass of hydrogen (kg/mol).
    pub molar_mass: f64,
    /// Faraday constant (C/mol).
    pub faraday: f64,
    /// Electrons transferred per hydrogen molecule.
    pub electrons: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            rho: 0.0899,
            sound_speed: 1320.0,
            gravity: 9.81,
            gas_constant: 8.314,
            molar_mass: 2.016e-3,
            faraday: 9.6485e4,
            electrons: 2.0,
        }
    }
}

impl Constants {
    /// `zρF/M`: converts a volumetric hydrogen flow into a current.
    pub fn flow_to_current(&self) -> f64 {
        self.electrons * self.rho * self.faraday / self.molar_mass
    }

    pub fn validate(&self) -> Result<(), ComponentError> {
        let c = Checker::new("constants");
        c.positive("rho", self.rho)?;
        c.positive("sound_speed", self.sound_speed)?;
        c.positive("gravity", self.gravity)?;
        c.positive("gas_constant", self.gas_constant)?;
        c.positive("molar_mass", self.molar_mass)?;
        c.positive("faraday", self.faraday)?;
        c.positive("electrons", self.electrons)
    }
}

struct Checker<'a> {
    component: &'a str,
}

impl<'a> Checker<'a> {
    fn new(component: &'a str) -> Self {
        Self { component }
    }

    fn fail(&self, field: &'static str, value: f64, rule: &'static str) -> ComponentError {
        ComponentError::InvalidParameter {
            component: self.component.to_string(),
            field,
            value,
            rule,
        }
    }

    fn positive(&self, field: &'static str, value: f64) -> Result<(), ComponentError> {
        if value.is_finite() && value > 0.0 {
            Ok(())
        } else {
            Err(self.fail(field, value, "must be finite and > 0"))
        }
    }

    fn nonnegative(&self, field: &'static str, value: f64) -> Result<(), ComponentError> {
        if value.is_finite() && value >= 0.0 {
            Ok(())
        } else {
            Err(self.fail(field, value, "must be finite and >= 0"))
        }
    }
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Weymouth mean pressure of a pipe segment, in the factored form which is
/// finite at `p_l == p_r`.
pub fn weymouth_mean_pressure(p_l: f64, p_r: f64) -> Result<f64, ComponentError> {
    let c = Checker::new("weymouth mean pressure");
    c.positive("p_l", p_l)?;
    c.positive("p_r", p_r)?;
    Ok(2.0 / 3.0 * (p_l + p_r - p_l * p_r / (p_l + p_r)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipeParams {
    pub area: f64,
    pub diameter: f64,
    pub length: f64,
    pub darcy_lambda: f64,
    /// Inclination angle (rad), within [-π/2, π/2].
    pub incline: f64,
    pub rho: f64,
    pub sound_speed: f64,
    /// Mean pressure, frozen at build time.
    pub mean_pressure: f64,
    pub gravity: f64,
}

impl PipeParams {
    pub fn validate(&self) -> Result<(), ComponentError> {
        let c = Checker::new("pipe");
        c.positive("area", self.area)?;
        c.positive("diameter", self.diameter)?;
        c.positive("length", self.length)?;
        c.nonnegative("darcy_lambda", self.darcy_lambda)?;
        if !(self.incline.abs() <= std::f64::consts::FRAC_PI_2) {
            return Err(c.fail("incline", self.incline, "|θ| <= π/2"));
        }
        c.positive("rho", self.rho)?;
        c.positive("sound_speed", self.sound_speed)?;
        c.positive("mean_pressure", self.mean_pressure)?;
        c.positive("gravity", self.gravity)
    }

    /// Friction coefficient `λc²ρ²/(2DA²p_M)`.
    pub fn lambda_hat(&self) -> f64 {
        self.darcy_lambda * self.sound_speed.powi(2) * self.rho.powi(2)
            / (2.0 * self.diameter * self.area.powi(2) * self.mean_pressure)
    }

    /// `x = s·q`.
    pub fn state_scale(&self) -> f64 {
        self.rho * self.length / self.area
    }

    /// Constant gravity term of the flow equation.
    pub fn gravity_disturbance(&self) -> f64 {
        -self.gravity * self.length * self.incline.sin() * self.mean_pressure / self.sound_speed.powi(2)
    }
}

/// Pipe flow block: state `ρL/A·q`, input `p_l - p_r`, output `q`.
pub fn make_pipe(params: &PipeParams) -> Result<PhBlock, ComponentError> {
    params.validate()?;
    let weight = params.area / (params.length * params.rho);
    let friction = params.lambda_hat() * params.length * params.area / (params.length * params.rho);
    Ok(PhBlock::builder(QuadraticHamiltonian::scalar(weight), scalar(1.0))
        .dissipation(AbsDiagonal::scalar_slope(friction))
        .disturbance(DVector::from_element(1, params.gravity_disturbance()))
        .state_labels(["pipe"])
        .port_labels(["dp"])
        .build()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageParams {
    pub volume: f64,
    pub temperature: f64,
    pub leak_coeff: f64,
    pub molar_mass: f64,
    pub gas_constant: f64,
    pub rho: f64,
}

impl StorageParams {
    pub fn validate(&self) -> Result<(), ComponentError> {
        let c = Checker::new("storage");
        c.positive("volume", self.volume)?;
        c.positive("temperature", self.temperature)?;
        c.positive("leak_coeff", self.leak_coeff)?;
        c.positive("molar_mass", self.molar_mass)?;
        c.positive("gas_constant", self.gas_constant)?;
        c.positive("rho", self.rho)
    }

    /// `x = s·p`.
    pub fn state_scale(&self) -> f64 {
        self.molar_mass * self.volume / (self.rho * self.gas_constant * self.temperature)
    }
}

/// Storage block: state `M V/(ρRT)·p`, inputs `(q_in - q_out, q_ex)`,
/// outputs `(p, p)`. The leak enters as `R = r_s/ρ` so that the state
/// equation reproduces the loss term `-r_s p/ρ`.
pub fn make_storage(params: &StorageParams) -> Result<PhBlock, ComponentError> {
    params.validate()?;
    Ok(PhBlock::builder(
        QuadraticHamiltonian::scalar(1.0 / params.state_scale()),
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
    )
    .dissipation(ConstantMatrix::scalar(params.leak_coeff / params.rho))
    .state_labels(["storage"])
    .port_labels(["net_inflow", "q_ex"])
    .build()?)
}

/// Lumped capacity `Σ L A / (2ρc²)` over the incident edges, given as
/// `(length, area)` pairs.
pub fn junction_capacity(incident: &[(f64, f64)], rho: f64, sound_speed: f64) -> f64 {
    incident
        .iter()
        .map(|&(length, area)| length * area / (2.0 * rho * sound_speed.powi(2)))
        .sum()
}

/// Lossless junction block with capacity from its incident edges.
pub fn make_junction(
    node: &str,
    incident: &[(f64, f64)],
    rho: f64,
    sound_speed: f64,
) -> Result<PhBlock, ComponentError> {
    if incident.is_empty() {
        return Err(ComponentError::IsolatedJunction(node.to_string()));
    }
    let c = Checker::new("junction");
    c.positive("rho", rho)?;
    c.positive("sound_speed", sound_speed)?;
    for &(length, area) in incident {
        c.positive("incident length", length)?;
        c.positive("incident area", area)?;
    }
    let capacity = junction_capacity(incident, rho, sound_speed);
    Ok(PhBlock::builder(
        QuadraticHamiltonian::scalar(1.0 / capacity),
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
    )
    .state_labels(["junction"])
    .port_labels(["net_inflow", "q_ex"])
    .build()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressorParams {
    pub plenum_volume: f64,
    pub sonic_velocity: f64,
    pub plenum_loss: f64,
    pub duct_length: f64,
    pub duct_area: f64,
    pub outlet_length: f64,
    pub outlet_area: f64,
    pub rho: f64,
}

impl CompressorParams {
    pub fn validate(&self) -> Result<(), ComponentError> {
        let c = Checker::new("compressor");
        c.positive("plenum_volume", self.plenum_volume)?;
        c.positive("sonic_velocity", self.sonic_velocity)?;
        c.nonnegative("plenum_loss", self.plenum_loss)?;
        c.positive("duct_length", self.duct_length)?;
        c.positive("duct_area", self.duct_area)?;
        c.positive("outlet_length", self.outlet_length)?;
        c.positive("outlet_area", self.outlet_area)?;
        c.positive("rho", self.rho)
    }

    pub fn plenum_scale(&self) -> f64 {
        self.plenum_volume / (self.rho * self.sonic_velocity.powi(2))
    }

    pub fn duct_scale(&self) -> f64 {
        self.rho * self.duct_length / self.duct_area
    }

    pub fn throttle_scale(&self) -> f64 {
        self.rho * self.outlet_length / self.outlet_area
    }
}

/// The three sub-blocks of a compressor station.
#[derive(Debug, Clone)]
pub struct CompressorBlocks {
    /// Plenum pressure, input `q_f - q_m`.
    pub plenum: PhBlock,
    /// Flow towards the plenum, inputs `(p_l - p_i, Δp)`.
    pub duct: PhBlock,
    /// Flow out of the plenum, input `p_i - p_r`.
    pub throttle: PhBlock,
}

pub fn make_compressor(params: &CompressorParams) -> Result<CompressorBlocks, ComponentError> {
    params.validate()?;
    let plenum = PhBlock::builder(QuadraticHamiltonian::scalar(1.0 / params.plenum_scale()), scalar(1.0))
        .dissipation(ConstantMatrix::scalar(params.plenum_loss / params.rho))
        .state_labels(["plenum"])
        .port_labels(["net_inflow"])
        .build()?;
    let duct = PhBlock::builder(
        QuadraticHamiltonian::scalar(1.0 / params.duct_scale()),
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
    )
    .state_labels(["duct"])
    .port_labels(["dp", "boost"])
    .build()?;
    let throttle = PhBlock::builder(QuadraticHamiltonian::scalar(1.0 / params.throttle_scale()), scalar(1.0))
        .state_labels(["throttle"])
        .port_labels(["dp"])
        .build()?;
    Ok(CompressorBlocks { plenum, duct, throttle })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Electrolyzer,
    FuelCell,
}

/// Operating point for the Nernst open-circuit voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NernstInputs {
    /// Stack temperature (K).
    pub temperature: f64,
    /// Partial pressures (Pa); normalized by the standard pressure.
    pub p_h2: f64,
    pub p_o2: f64,
    pub p_h2o: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpenCircuit {
    Constant(f64),
    Nernst(NernstInputs),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorDeviceParams {
    pub kind: DeviceKind,
    pub activation_resistance: f64,
    /// Double-layer capacitance per cell area (F/m²).
    pub double_layer_capacitance: f64,
    pub cell_area: f64,
    pub cells: u32,
    pub membrane_thickness: f64,
    pub membrane_conductivity: f64,
    pub open_circuit: OpenCircuit,
    pub constants: Constants,
}

impl SectorDeviceParams {
    pub fn validate(&self) -> Result<(), ComponentError> {
        let c = Checker::new(match self.kind {
            DeviceKind::Electrolyzer => "electrolyzer",
            DeviceKind::FuelCell => "fuel cell",
        });
        c.positive("activation_resistance", self.activation_resistance)?;
        c.positive("double_layer_capacitance", self.double_layer_capacitance)?;
        c.positive("cell_area", self.cell_area)?;
        if self.cells == 0 {
            return Err(c.fail("cells", 0.0, "must be >= 1"));
        }
        c.positive("membrane_thickness", self.membrane_thickness)?;
        c.positive("membrane_conductivity", self.membrane_conductivity)?;
        self.constants.validate()?;
        c.positive("open_circuit_voltage", self.open_circuit_voltage()?)
    }

    /// Total double-layer capacitance `C_DL A / n_c`.
    pub fn activation_capacitance(&self) -> f64 {
        self.double_layer_capacitance * self.cell_area / self.cells as f64
    }

    /// Stack Ohmic resistance `n_c δ/(σA)`.
    pub fn ohmic_resistance(&self) -> f64 {
        self.cells as f64 * self.membrane_thickness / (self.membrane_conductivity * self.cell_area)
    }

    pub fn open_circuit_voltage(&self) -> Result<f64, ComponentError> {
        match self.open_circuit {
            OpenCircuit::Constant(v) => Ok(v),
            OpenCircuit::Nernst(ref inputs) => {
                nernst_open_circuit(inputs, self.cells, self.constants.gas_constant, self.constants.faraday)
            }
        }
    }

    /// `+1` for electrolyzers, `-1` for fuel cells.
    pub fn sign(&self) -> f64 {
        match self.kind {
            DeviceKind::Electrolyzer => 1.0,
            DeviceKind::FuelCell => -1.0,
        }
    }

    /// Stack current for a hydrogen flow.
    pub fn current(&self, q_sc: f64) -> f64 {
        self.constants.flow_to_current() * q_sc
    }

    /// Terminal voltage for an activation overpotential and a flow.
    pub fn terminal_voltage(&self, v_a: f64, q_sc: f64) -> Result<f64, ComponentError> {
        let v_oc = self.open_circuit_voltage()?;
        let v_oh = self.ohmic_resistance() * self.current(q_sc);
        Ok(match self.kind {
            DeviceKind::Electrolyzer => v_oc + v_a + v_oh,
            DeviceKind::FuelCell => v_oc - v_a - v_oh,
        })
    }
}

/// Nernst open-circuit voltage of a stack of `cells` cells, evaluated once at
/// build time.
pub fn nernst_open_circuit(
    inputs: &NernstInputs,
    cells: u32,
    gas_constant: f64,
    faraday: f64,
) -> Result<f64, ComponentError> {
    let c = Checker::new("nernst");
    c.positive("temperature", inputs.temperature)?;
    c.positive("p_h2", inputs.p_h2)?;
    c.positive("p_o2", inputs.p_o2)?;
    c.positive("p_h2o", inputs.p_h2o)?;
    if cells == 0 {
        return Err(c.fail("cells", 0.0, "must be >= 1"));
    }
    let t = inputs.temperature;
    let ratio = (inputs.p_h2 / STANDARD_PRESSURE)
        / ((inputs.p_o2 / STANDARD_PRESSURE).sqrt() * (inputs.p_h2o / STANDARD_PRESSURE));
    let per_cell = STANDARD_CELL_VOLTAGE - OCV_TEMPERATURE_COEFF * (t - STANDARD_TEMPERATURE)
        + gas_constant * t / (2.0 * faraday) * ratio.ln();
    Ok(cells as f64 * per_cell)
}

/// Electrolyzer or fuel-cell block with feedthrough: state `C_a v_a`,
/// input `q_sc`, output `±zρF/M·v`.
pub fn make_sector_device(params: &SectorDeviceParams) -> Result<PhBlock, ComponentError> {
    params.validate()?;
    let k = params.constants.flow_to_current();
    let v_oc = params.open_circuit_voltage()?;
    Ok(PhBlock::builder(
        QuadraticHamiltonian::scalar(1.0 / params.activation_capacitance()),
        scalar(k),
    )
    .dissipation(ConstantMatrix::scalar(1.0 / params.activation_resistance))
    .feedthrough(scalar(params.ohmic_resistance() * k * k))
    .output_offset(DVector::from_element(1, params.sign() * k * v_oc))
    .state_labels(["activation"])
    .port_labels(["q_sc"])
    .build()?)
}
