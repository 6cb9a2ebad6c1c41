//! Passivity auditing, steady states and matrix export.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{GridSystem, StateKind};
use crate::phcore::{LedgerRow, PhBlock, PhError};
use crate::sim::{Method, Trajectory};

/// Constant of the order-scaled audit tolerance `c·hᵖ·h·P`, where `P` is the
/// ledger magnitude plus the power exchanged between states. Calibrated on
/// the scalar exponential (see the tests below).
pub const AUDIT_CONSTANT: f64 = 1.0;

/// Relative tolerance of the per-step energy balance for the midpoint rule.
pub const MIDPOINT_BALANCE_TOL: f64 = 1e-9;

/// Rounding allowance relative to the stored energy.
const ROUNDING: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("trajectory does not belong to this system: {0}")]
    Mismatch(String),
    #[error("singular Jacobian at iteration {iteration} (condition estimate {condition:e})")]
    SingularJacobian { iteration: usize, condition: f64 },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid solver settings: {0}")]
    Settings(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Dimension(#[from] PhError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnalysisError + '_ {
    move |source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Energy bookkeeping of one step, as audited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepAudit {
    pub t0: f64,
    pub t1: f64,
    pub delta_h: f64,
    /// Step-averaged power terms.
    pub power: LedgerRow,
    /// `ΔH - h·Ḣ` from the ledger.
    pub balance_residual: f64,
    pub balance_tolerance: f64,
    /// `ΔH - h·(passive supply + disturbance work)`; positive values
    /// violate the dissipation inequality.
    pub passivity_margin: f64,
    pub tolerance: f64,
    pub flagged: bool,
}

/// Cumulative integrals of the power terms (J in state units).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Totals {
    pub delta_h: f64,
    pub supply: f64,
    pub passive_supply: f64,
    pub dissipation: f64,
    pub feedthrough_loss: f64,
    pub disturbance_work: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassivityReport {
    pub method: Method,
    pub steps: Vec<StepAudit>,
    pub totals: Totals,
    /// Largest `passivity_margin - tolerance` over all steps; `<= 0` means
    /// no step violates the inequality.
    pub worst_violation: f64,
    /// Largest `|balance_residual| / balance_tolerance`.
    pub worst_balance_ratio: f64,
    /// Largest balance residual relative to the stored energy.
    pub worst_relative_residual: f64,
    pub violations: usize,
}

impl PassivityReport {
    pub fn balance_ok(&self) -> bool {
        self.worst_balance_ratio <= 1.0
    }

    /// No passivity violations and, for the midpoint rule, an exact
    /// per-step energy balance. The RK4 balance only holds asymptotically
    /// (`O(h⁵)` per step) and is reported without gating.
    pub fn passed(&self) -> bool {
        self.violations == 0 && (self.method == Method::Rk4 || self.balance_ok())
    }

    /// Structured-text report with one table per term.
    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct Term {
            name: &'static str,
            value: f64,
            tolerance: f64,
            pass: bool,
        }
        #[derive(Serialize)]
        struct Doc {
            method: &'static str,
            steps: usize,
            violations: usize,
            passed: bool,
            term: Vec<Term>,
        }
        let t = &self.totals;
        let info = |name, value| Term {
            name,
            value,
            tolerance: 0.0,
            pass: true,
        };
        let doc = Doc {
            method: self.method.name(),
            steps: self.steps.len(),
            violations: self.violations,
            passed: self.passed(),
            term: vec![
                info("delta_h", t.delta_h),
                info("supply", t.supply),
                info("passive_supply", t.passive_supply),
                info("dissipation", t.dissipation),
                info("feedthrough_loss", t.feedthrough_loss),
                info("disturbance_work", t.disturbance_work),
                Term {
                    name: "worst_violation",
                    value: self.worst_violation.max(0.0),
                    tolerance: 0.0,
                    pass: self.violations == 0,
                },
                Term {
                    name: "balance_ratio",
                    value: self.worst_balance_ratio,
                    tolerance: 1.0,
                    pass: self.balance_ok(),
                },
            ],
        };
        toml::to_string(&doc).expect("report serializes")
    }
}

/// Audit the energy ledger of `trajectory` against `system`.
///
/// Each step must satisfy `ΔH ≤ h·(yᵀu - y₀ᵀu + ∇Hᵀd)` up to a tolerance
/// that scales with the integrator order; the output offset of sector
/// devices is excluded since it is not a passive port.
pub fn passivity_audit(trajectory: &Trajectory, system: &PhBlock) -> Result<PassivityReport, AnalysisError> {
    let samples = &trajectory.samples;
    if !samples.is_empty() && trajectory.steps.len() + 1 != samples.len() {
        return Err(AnalysisError::Mismatch(format!(
            "{} samples but {} steps",
            samples.len(),
            trajectory.steps.len()
        )));
    }
    if trajectory.state_labels != system.state_labels() {
        return Err(AnalysisError::Mismatch("state labels differ".into()));
    }
    for s in samples {
        if s.state.len() != system.n() || s.input.len() != system.m() {
            return Err(AnalysisError::Mismatch(format!(
                "sample at t={} has n={} m={}, system has n={} m={}",
                s.time,
                s.state.len(),
                s.input.len(),
                system.n(),
                system.m()
            )));
        }
    }
    let order = trajectory.method.order();
    let mut steps = Vec::with_capacity(trajectory.steps.len());
    let mut totals = Totals::default();
    let mut worst_violation = f64::NEG_INFINITY;
    let mut worst_balance_ratio = 0.0_f64;
    let mut worst_relative_residual = 0.0_f64;
    let mut violations = 0;
    for (k, rec) in trajectory.steps.iter().enumerate() {
        let h0 = system.energy(&samples[k].state)?;
        let h1 = system.energy(&samples[k + 1].state)?;
        let delta_h = h1 - h0;
        let h = rec.step();
        let p = rec.power;
        let energy = h0.abs().max(h1.abs());
        let scale = h * (p.magnitude() + rec.exchange);
        let tolerance = AUDIT_CONSTANT * h.powi(order) * scale + ROUNDING * energy;
        let balance_residual = delta_h - h * p.hamiltonian_rate();
        let balance_tolerance = match trajectory.method {
            Method::Midpoint => MIDPOINT_BALANCE_TOL * energy.max(scale),
            Method::Rk4 => tolerance,
        };
        let passivity_margin = delta_h - h * (p.passive_supply() + p.disturbance_work);
        let flagged = passivity_margin > tolerance;
        if flagged {
            violations += 1;
        }
        worst_violation = worst_violation.max(passivity_margin - tolerance);
        worst_balance_ratio = worst_balance_ratio.max(if balance_tolerance > 0.0 {
            balance_residual.abs() / balance_tolerance
        } else if balance_residual == 0.0 {
            0.0
        } else {
            f64::INFINITY
        });
        if energy > 0.0 {
            worst_relative_residual = worst_relative_residual.max(balance_residual.abs() / energy);
        }
        totals.delta_h += delta_h;
        totals.supply += h * p.supply;
        totals.passive_supply += h * p.passive_supply();
        totals.dissipation += h * p.dissipation;
        totals.feedthrough_loss += h * p.feedthrough_loss;
        totals.disturbance_work += h * p.disturbance_work;
        steps.push(StepAudit {
            t0: rec.t0,
            t1: rec.t1,
            delta_h,
            power: p,
            balance_residual,
            balance_tolerance,
            passivity_margin,
            tolerance,
            flagged,
        });
    }
    Ok(PassivityReport {
        method: trajectory.method,
        steps,
        totals,
        worst_violation: if worst_violation.is_finite() {
            worst_violation
        } else {
            0.0
        },
        worst_balance_ratio,
        worst_relative_residual,
        violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
        }
    }
}

/// Maximum number of step halvings in the Newton line search.
pub const MAX_BACKTRACKS: u32 = 20;

/// Condition number above which the Newton matrix counts as singular.
const SINGULAR_CONDITION: f64 = 1e15;

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub state: DVector<f64>,
    pub residual: DVector<f64>,
    /// `‖rhs‖∞`.
    pub residual_norm: f64,
    /// `maxᵢ |rhsᵢ| / max(1, sᵢ)` where `sᵢ` is the sum of the absolute
    /// values of the terms in row `i`.
    pub scaled_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Per-row magnitude of the terms of `rhs(x, u)`.
pub fn row_scales(system: &PhBlock, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, PhError> {
    let grad = system.gradient(x)?;
    let jr = system.interconnection().eval(x) - system.dissipation().eval(x);
    let b = system.input_matrix();
    let d = system.disturbance();
    Ok(DVector::from_fn(system.n(), |i, _| {
        let mut s = d[i].abs();
        for j in 0..system.n() {
            s += (jr[(i, j)] * grad[j]).abs();
        }
        for j in 0..system.m() {
            s += (b[(i, j)] * u[j]).abs();
        }
        s
    }))
}

fn scaled_norm(f: &DVector<f64>, scales: &DVector<f64>) -> f64 {
    f.iter()
        .zip(scales.iter())
        .map(|(v, s)| v.abs() / s.max(1.0))
        .fold(0.0, f64::max)
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve `0 = (J - R)∇H(x) + Bu + d` by damped Newton iteration from `guess`.
///
/// Steps are halved until the squared residual, weighted by the Hessian of
/// the energy, decreases.
///
/// Non-convergence is not an error: the last iterate is returned with
/// `converged == false`.
pub fn steady_state(
    system: &PhBlock,
    u: &DVector<f64>,
    guess: &DVector<f64>,
    options: &SteadyOptions,
) -> Result<SteadyState, AnalysisError> {
    if !(options.tol > 0.0) || options.max_iter == 0 {
        return Err(AnalysisError::Settings(format!(
            "tol={} max_iter={}",
            options.tol, options.max_iter
        )));
    }
    if guess.iter().chain(u.iter()).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite("initial guess or input"));
    }
    let mut x = guess.clone();
    let mut f = system.rhs(&x, u)?;
    // ‖rhs‖² measured in co-state rates (∂²H · ẋ), so that pressure, flow
    // and voltage rows are weighed in their physical units
    let merit = |x: &DVector<f64>, f: &DVector<f64>| (system.hamiltonian().hessian(x) * f).norm_squared();
    let finish = |x: DVector<f64>, f: DVector<f64>, iterations, converged| -> Result<SteadyState, AnalysisError> {
        let scales = row_scales(system, &x, u)?;
        Ok(SteadyState {
            scaled_residual: scaled_norm(&f, &scales),
            residual_norm: f.amax(),
            residual: f,
            state: x,
            iterations,
            converged,
        })
    };
    for iteration in 0..=options.max_iter {
        let scales = row_scales(system, &x, u)?;
        if scaled_norm(&f, &scales) <= options.tol {
            return finish(x, f, iteration, true);
        }
        if iteration == options.max_iter {
            break;
        }
        let jac = system.rhs_jacobian(&x)?;
        let condition = condition_estimate(&jac);
        if !(condition < SINGULAR_CONDITION) {
            return Err(AnalysisError::SingularJacobian { iteration, condition });
        }
        let Some(delta) = jac.lu().solve(&(-&f)) else {
            return Err(AnalysisError::SingularJacobian { iteration, condition });
        };
        let phi = merit(&x, &f);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let trial = &x + &delta * lambda;
            let ft = system.rhs(&trial, u)?;
            if ft.iter().all(|v| v.is_finite()) && merit(&trial, &ft) < phi {
                accepted = Some((trial, ft));
                break;
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((xt, ft)) => {
                x = xt;
                f = ft;
            }
            // no decrease along the Newton direction: stagnated
            None => return finish(x, f, iteration, false),
        }
    }
    finish(x, f, options.max_iter, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    /// One CSV file per matrix plus `manifest.toml` with the index maps.
    Csv,
    /// Everything in a single `manifest.toml`.
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestMatrices {
    interconnection: Vec<Vec<f64>>,
    dissipation: Vec<Vec<f64>>,
    input: Vec<Vec<f64>>,
    feedthrough: Vec<Vec<f64>>,
    disturbance: Vec<f64>,
    output_offset: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    states: Vec<String>,
    state_kinds: Vec<String>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    reference_state: Vec<f64>,
    reference_costate: Vec<f64>,
    incidence: Vec<Vec<i32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    matrices: Option<ManifestMatrices>,
}

/// Matrices of a system frozen at a reference state.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportedSystem {
    pub interconnection: DMatrix<f64>,
    pub dissipation: DMatrix<f64>,
    pub input: DMatrix<f64>,
    pub feedthrough: DMatrix<f64>,
    pub disturbance: DVector<f64>,
    pub output_offset: DVector<f64>,
    pub reference_state: DVector<f64>,
    pub reference_costate: DVector<f64>,
    pub states: Vec<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl ExportedSystem {
    pub fn capture(system: &GridSystem, reference: &DVector<f64>) -> Result<Self, AnalysisError> {
        let b = &system.block;
        crate::phcore::check_dim("reference state", b.n(), reference.len())?;
        Ok(Self {
            interconnection: b.interconnection().eval(reference),
            dissipation: b.dissipation().eval(reference),
            input: b.input_matrix().clone(),
            feedthrough: b.feedthrough().clone(),
            disturbance: b.disturbance().clone(),
            output_offset: b.output_offset().clone(),
            reference_state: reference.clone(),
            reference_costate: b.gradient(reference)?,
            states: b.state_labels().to_vec(),
            inputs: b.port_labels().to_vec(),
            outputs: system.layout.outputs.clone(),
        })
    }

    /// `(J - R)∇H(x₀) + Bu + d` with the frozen matrices.
    pub fn rhs(&self, u: &DVector<f64>) -> DVector<f64> {
        (&self.interconnection - &self.dissipation) * &self.reference_costate + &self.input * u + &self.disturbance
    }
}

const MATRIX_FILES: [&str; 6] = [
    "interconnection.csv",
    "dissipation.csv",
    "input.csv",
    "feedthrough.csv",
    "disturbance.csv",
    "output_offset.csv",
];

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(path: &Path, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>, AnalysisError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(AnalysisError::Format {
            path: path.to_path_buf(),
            message: format!("expected a {nrows}x{ncols} matrix"),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn write_csv(path: &Path, rows: &[Vec<f64>]) -> Result<(), AnalysisError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r.iter().map(|v| format!("{v:?}")))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_csv(path: &Path) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .filter(|f| !f.is_empty())
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| AnalysisError::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        out.push(row);
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> AnalysisError {
    AnalysisError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn column(v: &DVector<f64>) -> Vec<Vec<f64>> {
    v.iter().map(|x| vec![*x]).collect()
}

fn kind_name(k: StateKind) -> &'static str {
    match k {
        StateKind::Node => "node",
        StateKind::Edge => "edge",
        StateKind::Device => "device",
    }
}

/// Write `J`, `R(x₀)`, `B`, `D`, `d` and the output offset of `system`
/// frozen at `reference`, with the index maps, into `dir`.
pub fn export_matrices(
    system: &GridSystem,
    reference: &DVector<f64>,
    format: ExportFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>, AnalysisError> {
    let ex = ExportedSystem::capture(system, reference)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let matrices = ManifestMatrices {
        interconnection: rows(&ex.interconnection),
        dissipation: rows(&ex.dissipation),
        input: rows(&ex.input),
        feedthrough: rows(&ex.feedthrough),
        disturbance: ex.disturbance.iter().copied().collect(),
        output_offset: ex.output_offset.iter().copied().collect(),
    };
    let mut written = Vec::new();
    let embedded = match format {
        ExportFormat::Manifest => Some(matrices),
        ExportFormat::Csv => {
            let data = [
                matrices.interconnection,
                matrices.dissipation,
                matrices.input,
                matrices.feedthrough,
                column(&ex.disturbance),
                column(&ex.output_offset),
            ];
            for (name, m) in MATRIX_FILES.iter().zip(&data) {
                let path = dir.join(name);
                write_csv(&path, m)?;
                written.push(path);
            }
            None
        }
    };
    let manifest = Manifest {
        states: ex.states,
        state_kinds: system
            .layout
            .states
            .iter()
            .map(|s| kind_name(s.kind).to_string())
            .collect(),
        inputs: ex.inputs,
        outputs: ex.outputs,
        reference_state: ex.reference_state.iter().copied().collect(),
        reference_costate: ex.reference_costate.iter().copied().collect(),
        incidence: system
            .layout
            .incidence
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect(),
        matrices: embedded,
    };
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| AnalysisError::Format {
        path: path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&path, text).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

/// Read back a directory written by [`export_matrices`].
pub fn import_matrices(dir: &Path) -> Result<ExportedSystem, AnalysisError> {
    let path = dir.join("manifest.toml");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| AnalysisError::Format {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let n = manifest.states.len();
    let m = manifest.inputs.len();
    let p = manifest.outputs.len();
    let matrices = match manifest.matrices {
        Some(mm) => mm,
        None => {
            let mut data = Vec::new();
            for name in MATRIX_FILES {
                data.push(read_csv(&dir.join(name))?);
            }
            let flat = |rows: &Vec<Vec<f64>>| rows.iter().flatten().copied().collect::<Vec<_>>();
            ManifestMatrices {
                disturbance: flat(&data[4]),
                output_offset: flat(&data[5]),
                interconnection: data[0].clone(),
                dissipation: data[1].clone(),
                input: data[2].clone(),
                feedthrough: data[3].clone(),
            }
        }
    };
    let vector = |v: Vec<f64>, len: usize, what: &str| {
        if v.len() == len {
            Ok(DVector::from_vec(v))
        } else {
            Err(AnalysisError::Format {
                path: dir.to_path_buf(),
                message: format!("{what}: expected {len} entries, got {}", v.len()),
            })
        }
    };
    Ok(ExportedSystem {
        interconnection: from_rows(&path, &matrices.interconnection, n, n)?,
        dissipation: from_rows(&path, &matrices.dissipation, n, n)?,
        input: from_rows(&path, &matrices.input, n, m)?,
        feedthrough: from_rows(&path, &matrices.feedthrough, p, m)?,
        disturbance: vector(matrices.disturbance, n, "disturbance")?,
        output_offset: vector(matrices.output_offset, p, "output offset")?,
        reference_state: vector(manifest.reference_state, n, "reference state")?,
        reference_costate: vector(manifest.reference_costate, n, "reference costate")?,
        states: manifest.states,
        inputs: manifest.inputs,
        outputs: manifest.outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phcore::{ConstantMatrix, QuadraticHamiltonian};
    use crate::sim::{integrate_implicit_midpoint, integrate_rk4, Scenario};
    use std::sync::Arc;

    fn decay() -> PhBlock {
        PhBlock::builder(QuadraticHamiltonian::scalar(1.0), DMatrix::from_element(1, 1, 1.0))
            .dissipation(ConstantMatrix::scalar(1.0))
            .build()
            .unwrap()
    }

    fn one(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    /// Worst `|ΔH - h·Ḣ| / (h^(p+1)·P)` on the scalar exponential.
    fn calibration(method: Method, h: f64) -> f64 {
        let s = Scenario::unforced(1.0, one(1.0), 1);
        let traj = match method {
            Method::Rk4 => integrate_rk4(&decay(), &s, h).unwrap(),
            Method::Midpoint => integrate_implicit_midpoint(&decay(), &s, h, 1e-12, 20).unwrap(),
        };
        traj.steps
            .iter()
            .map(|r| r.balance_residual().abs() / (h.powi(method.order() + 1) * (r.power.magnitude() + r.exchange)))
            .fold(0.0, f64::max)
    }

    #[test]
    fn audit_constant_covers_scalar_exponential() {
        for h in [0.2, 0.1, 0.05, 0.01] {
            let rk = calibration(Method::Rk4, h);
            let mp = calibration(Method::Midpoint, h);
            assert!(rk < AUDIT_CONSTANT / 10.0, "rk4 h={h}: {rk}");
            assert!(mp < AUDIT_CONSTANT / 10.0, "midpoint h={h}: {mp}");
        }
    }

    #[test]
    fn unforced_decay_passes_audit() {
        let s = Scenario::unforced(3.0, one(2.0), 1);
        for traj in [
            integrate_rk4(&decay(), &s, 0.05).unwrap(),
            integrate_implicit_midpoint(&decay(), &s, 0.05, 1e-12, 20).unwrap(),
        ] {
            let rep = passivity_audit(&traj, &decay()).unwrap();
            assert!(rep.passed(), "{:?}", traj.method);
            assert!(rep.totals.delta_h < 0.0);
            assert_eq!(rep.violations, 0);
        }
    }

    #[test]
    fn negated_dissipation_is_flagged() {
        let faulty = decay()
            .with_dissipation(Arc::new(ConstantMatrix::scalar(-1.0)))
            .unwrap();
        let s = Scenario::unforced(1.0, one(1.0), 1);
        let traj = integrate_implicit_midpoint(&faulty, &s, 0.05, 1e-12, 20).unwrap();
        let rep = passivity_audit(&traj, &faulty).unwrap();
        assert_eq!(rep.violations, traj.steps.len());
        assert!(rep.worst_violation > 0.0);
        assert!(!rep.passed());
    }

    #[test]
    fn mismatched_system_rejected() {
        let s = Scenario::unforced(0.1, one(1.0), 1);
        let traj = integrate_rk4(&decay(), &s, 0.05).unwrap();
        let two = PhBlock::builder(QuadraticHamiltonian::diagonal(&[1.0, 1.0]), DMatrix::zeros(2, 1))
            .build()
            .unwrap();
        assert!(matches!(passivity_audit(&traj, &two), Err(AnalysisError::Mismatch(_))));
    }

    #[test]
    fn report_toml_parses() {
        let s = Scenario::unforced(0.2, one(1.0), 1);
        let traj = integrate_rk4(&decay(), &s, 0.05).unwrap();
        let text = passivity_audit(&traj, &decay()).unwrap().to_toml();
        let v: toml::Table = toml::from_str(&text).unwrap();
        assert_eq!(v["method"].as_str(), Some("rk4"));
        let terms = v["term"].as_array().unwrap();
        assert!(terms
            .iter()
            .all(|t| t.get("tolerance").is_some() && t.get("pass").is_some()));
    }

    #[test]
    fn steady_state_of_forced_decay() {
        // 0 = -x + u
        let st = steady_state(&decay(), &one(3.0), &one(0.0), &SteadyOptions::default()).unwrap();
        assert!(st.converged);
        assert_eq!(st.state[0], 3.0);
    }

    #[test]
    fn singular_jacobian_reported() {
        let lossless = PhBlock::builder(QuadraticHamiltonian::scalar(1.0), DMatrix::from_element(1, 1, 1.0))
            .build()
            .unwrap();
        match steady_state(&lossless, &one(1.0), &one(0.0), &SteadyOptions::default()) {
            Err(AnalysisError::SingularJacobian { condition, .. }) => assert!(condition.is_infinite()),
            other => panic!("expected singular Jacobian, got {other:?}"),
        }
    }

    #[test]
    fn iteration_limit_sets_flag() {
        let opts = SteadyOptions {
            tol: 1e-10,
            max_iter: 1,
        };
        // ẋ = -(1 + |x|) x + u needs several Newton steps
        let cubic = PhBlock::builder(QuadraticHamiltonian::scalar(1.0), DMatrix::from_element(1, 1, 1.0))
            .dissipation(crate::phcore::AbsDiagonal::new(one(1.0), one(1.0)))
            .build()
            .unwrap();
        let st = steady_state(&cubic, &one(100.0), &one(0.0), &opts).unwrap();
        assert!(!st.converged);
        assert_eq!(st.iterations, 1);
        let st = steady_state(&cubic, &one(100.0), &one(0.0), &SteadyOptions::default()).unwrap();
        assert!(st.converged);
        assert!(cubic.rhs(&st.state, &one(100.0)).unwrap().amax() <= 1e-10 * 200.0);
    }
}
