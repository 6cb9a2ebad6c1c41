//! Generic port-Hamiltonian systems of the form
//!
//! ```text
//! dx/dt = (J(x) - R(x)) ∇H(x) + B u + d
//!     y = Bᵀ ∇H(x) + D u + y₀
//! ```
//!
//! where `y₀` is a constant output offset (zero for everything except the
//! sector devices). State-dependent matrices are evaluation maps; structural
//! properties are checked on sampled states.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Tolerance for structural checks on constant matrices.
pub const CONSTANT_TOL: f64 = 1e-12;
/// Tolerance for structural checks on sampled state-dependent matrices.
pub const SAMPLED_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension { what: String, expected: usize, got: usize },
}

pub(crate) fn check_dim(what: &str, expected: usize, got: usize) -> Result<(), PhError> {
    if expected == got {
        Ok(())
    } else {
        Err(PhError::Dimension {
            what: what.to_string(),
            expected,
            got,
        })
    }
}

/// Energy function of a block.
pub trait Hamiltonian: fmt::Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn energy(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Diagonal weights `w` when `H(x) = ½ Σ wᵢ xᵢ²`.
    fn diagonal_weights(&self) -> Option<DVector<f64>> {
        None
    }
}

/// `H(x) = ½ xᵀ Q x`.
#[derive(Debug, Clone)]
pub struct QuadraticHamiltonian {
    weight: DMatrix<f64>,
}

impl QuadraticHamiltonian {
    pub fn new(weight: DMatrix<f64>) -> Self {
        assert!(weight.is_square(), "Hamiltonian weight must be square");
        Self { weight }
    }

    pub fn diagonal(weights: &[f64]) -> Self {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(weights)))
    }

    pub fn scalar(weight: f64) -> Self {
        Self::diagonal(&[weight])
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }
}

impl Hamiltonian for QuadraticHamiltonian {
    fn dim(&self) -> usize {
        self.weight.nrows()
    }

    fn energy(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.weight * x))
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weight * x
    }

    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.weight.clone()
    }

    fn diagonal_weights(&self) -> Option<DVector<f64>> {
        let n = self.weight.nrows();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.weight[(i, j)] != 0.0 {
                    return None;
                }
            }
        }
        Some(self.weight.diagonal())
    }
}

/// Sum of Hamiltonians acting on consecutive slices of the state.
#[derive(Debug, Clone)]
pub struct SeparableHamiltonian {
    parts: Vec<Arc<dyn Hamiltonian>>,
    offsets: Vec<usize>,
    dim: usize,
}

impl SeparableHamiltonian {
    pub fn new(parts: Vec<Arc<dyn Hamiltonian>>) -> Self {
        let mut offsets = Vec::with_capacity(parts.len());
        let mut dim = 0;
        for p in &parts {
            offsets.push(dim);
            dim += p.dim();
        }
        Self { parts, offsets, dim }
    }

    pub fn parts(&self) -> &[Arc<dyn Hamiltonian>] {
        &self.parts
    }

    /// Energies of the individual parts at `x`.
    pub fn part_energies(&self, x: &DVector<f64>) -> Vec<f64> {
        self.parts
            .iter()
            .zip(&self.offsets)
            .map(|(p, &o)| p.energy(&x.rows(o, p.dim()).into_owned()))
            .collect()
    }
}

impl Hamiltonian for SeparableHamiltonian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy(&self, x: &DVector<f64>) -> f64 {
        self.part_energies(x).iter().sum()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for (p, &o) in self.parts.iter().zip(&self.offsets) {
            let k = p.dim();
            g.rows_mut(o, k).copy_from(&p.gradient(&x.rows(o, k).into_owned()));
        }
        g
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for (p, &o) in self.parts.iter().zip(&self.offsets) {
            let k = p.dim();
            h.view_mut((o, o), (k, k))
                .copy_from(&p.hessian(&x.rows(o, k).into_owned()));
        }
        h
    }

    fn diagonal_weights(&self) -> Option<DVector<f64>> {
        let mut w = DVector::zeros(self.dim);
        for (p, &o) in self.parts.iter().zip(&self.offsets) {
            w.rows_mut(o, p.dim()).copy_from(&p.diagonal_weights()?);
        }
        Some(w)
    }
}

/// A square matrix that may depend on the state.
pub trait StateMatrix: fmt::Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Jacobian of `x ↦ M(x) v` for fixed `v`, i.e. `Σₖ ∂M/∂xₖ v eₖᵀ`.
    fn product_jacobian(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64>;

    fn is_constant(&self) -> bool;
}

#[derive(Debug, Clone)]
pub struct ConstantMatrix(pub DMatrix<f64>);

impl ConstantMatrix {
    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn scalar(v: f64) -> Self {
        Self(DMatrix::from_element(1, 1, v))
    }
}

impl StateMatrix for ConstantMatrix {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn eval(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.0.clone()
    }

    fn product_jacobian(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }

    fn is_constant(&self) -> bool {
        true
    }
}

/// `diag(baseᵢ + slopeᵢ·|xᵢ|)`: the friction-type dissipation of pipes.
#[derive(Debug, Clone)]
pub struct AbsDiagonal {
    base: DVector<f64>,
    slope: DVector<f64>,
}

impl AbsDiagonal {
    pub fn new(base: DVector<f64>, slope: DVector<f64>) -> Self {
        assert_eq!(base.len(), slope.len());
        Self { base, slope }
    }

    pub fn scalar_slope(slope: f64) -> Self {
        Self::new(DVector::zeros(1), DVector::from_element(1, slope))
    }
}

impl StateMatrix for AbsDiagonal {
    fn dim(&self) -> usize {
        self.base.len()
    }

    fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = DVector::from_fn(self.dim(), |i, _| self.base[i] + self.slope[i] * x[i].abs());
        DMatrix::from_diagonal(&d)
    }

    fn product_jacobian(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        // d|x|/dx is taken as 0 at the origin
        let d = DVector::from_fn(self.dim(), |i, _| self.slope[i] * signum0(x[i]) * v[i]);
        DMatrix::from_diagonal(&d)
    }

    fn is_constant(&self) -> bool {
        self.slope.iter().all(|&s| s == 0.0)
    }
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Block-diagonal combination of state matrices on consecutive state slices.
#[derive(Debug, Clone)]
pub struct BlockDiagonal {
    parts: Vec<Arc<dyn StateMatrix>>,
    offsets: Vec<usize>,
    dim: usize,
}

impl BlockDiagonal {
    pub fn new(parts: Vec<Arc<dyn StateMatrix>>) -> Self {
        let mut offsets = Vec::with_capacity(parts.len());
        let mut dim = 0;
        for p in &parts {
            offsets.push(dim);
            dim += p.dim();
        }
        Self { parts, offsets, dim }
    }

    fn assemble(&self, f: impl Fn(&dyn StateMatrix, usize, usize) -> DMatrix<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (p, &o) in self.parts.iter().zip(&self.offsets) {
            let k = p.dim();
            m.view_mut((o, o), (k, k)).copy_from(&f(p.as_ref(), o, k));
        }
        m
    }
}

impl StateMatrix for BlockDiagonal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.assemble(|p, o, k| p.eval(&x.rows(o, k).into_owned()))
    }

    fn product_jacobian(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        self.assemble(|p, o, k| p.product_jacobian(&x.rows(o, k).into_owned(), &v.rows(o, k).into_owned()))
    }

    fn is_constant(&self) -> bool {
        self.parts.iter().all(|p| p.is_constant())
    }
}

/// Sum of state matrices of equal dimension.
#[derive(Debug, Clone)]
pub struct SumMatrix(pub Vec<Arc<dyn StateMatrix>>);

impl StateMatrix for SumMatrix {
    fn dim(&self) -> usize {
        self.0.first().map_or(0, |m| m.dim())
    }

    fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        self.0.iter().fold(DMatrix::zeros(n, n), |acc, m| acc + m.eval(x))
    }

    fn product_jacobian(&self, x: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        self.0
            .iter()
            .fold(DMatrix::zeros(n, n), |acc, m| acc + m.product_jacobian(x, v))
    }

    fn is_constant(&self) -> bool {
        self.0.iter().all(|m| m.is_constant())
    }
}

/// A port-Hamiltonian system. Immutable once built.
#[derive(Debug, Clone)]
pub struct PhBlock {
    hamiltonian: Arc<dyn Hamiltonian>,
    interconnection: Arc<dyn StateMatrix>,
    dissipation: Arc<dyn StateMatrix>,
    input_matrix: DMatrix<f64>,
    feedthrough: DMatrix<f64>,
    disturbance: DVector<f64>,
    output_offset: DVector<f64>,
    state_labels: Vec<String>,
    port_labels: Vec<String>,
}

/// Builder for [`PhBlock`]; dimensions are checked in [`PhBlockBuilder::build`].
#[derive(Debug)]
pub struct PhBlockBuilder {
    hamiltonian: Arc<dyn Hamiltonian>,
    interconnection: Option<Arc<dyn StateMatrix>>,
    dissipation: Option<Arc<dyn StateMatrix>>,
    input_matrix: DMatrix<f64>,
    feedthrough: Option<DMatrix<f64>>,
    disturbance: Option<DVector<f64>>,
    output_offset: Option<DVector<f64>>,
    state_labels: Option<Vec<String>>,
    port_labels: Option<Vec<String>>,
}

impl PhBlockBuilder {
    pub fn interconnection(mut self, j: impl StateMatrix + 'static) -> Self {
        self.interconnection = Some(Arc::new(j));
        self
    }

    pub fn interconnection_arc(mut self, j: Arc<dyn StateMatrix>) -> Self {
        self.interconnection = Some(j);
        self
    }

    pub fn dissipation(mut self, r: impl StateMatrix + 'static) -> Self {
        self.dissipation = Some(Arc::new(r));
        self
    }

    pub fn dissipation_arc(mut self, r: Arc<dyn StateMatrix>) -> Self {
        self.dissipation = Some(r);
        self
    }

    pub fn feedthrough(mut self, d: DMatrix<f64>) -> Self {
        self.feedthrough = Some(d);
        self
    }

    pub fn disturbance(mut self, d: DVector<f64>) -> Self {
        self.disturbance = Some(d);
        self
    }

    pub fn output_offset(mut self, y0: DVector<f64>) -> Self {
        self.output_offset = Some(y0);
        self
    }

    pub fn state_labels<S: Into<String>>(mut self, labels: impl IntoIterator<Item = S>) -> Self {
        self.state_labels = Some(labels.into_iter().map(Into::into).collect());
        self
    }

    pub fn port_labels<S: Into<String>>(mut self, labels: impl IntoIterator<Item = S>) -> Self {
        self.port_labels = Some(labels.into_iter().map(Into::into).collect());
        self
    }

    pub fn build(self) -> Result<PhBlock, PhError> {
        let n = self.hamiltonian.dim();
        let m = self.input_matrix.ncols();
        check_dim("input matrix rows", n, self.input_matrix.nrows())?;
        let interconnection = self
            .interconnection
            .unwrap_or_else(|| Arc::new(ConstantMatrix::zeros(n)));
        let dissipation = self.dissipation.unwrap_or_else(|| Arc::new(ConstantMatrix::zeros(n)));
        check_dim("interconnection", n, interconnection.dim())?;
        check_dim("dissipation", n, dissipation.dim())?;
        let feedthrough = self.feedthrough.unwrap_or_else(|| DMatrix::zeros(m, m));
        check_dim("feedthrough rows", m, feedthrough.nrows())?;
        check_dim("feedthrough cols", m, feedthrough.ncols())?;
        let disturbance = self.disturbance.unwrap_or_else(|| DVector::zeros(n));
        check_dim("disturbance", n, disturbance.len())?;
        let output_offset = self.output_offset.unwrap_or_else(|| DVector::zeros(m));
        check_dim("output offset", m, output_offset.len())?;
        let state_labels = self
            .state_labels
            .unwrap_or_else(|| (0..n).map(|i| format!("x{i}")).collect());
        check_dim("state labels", n, state_labels.len())?;
        let port_labels = self
            .port_labels
            .unwrap_or_else(|| (0..m).map(|i| format!("u{i}")).collect());
        check_dim("port labels", m, port_labels.len())?;
        Ok(PhBlock {
            hamiltonian: self.hamiltonian,
            interconnection,
            dissipation,
            input_matrix: self.input_matrix,
            feedthrough,
            disturbance,
            output_offset,
            state_labels,
            port_labels,
        })
    }
}

impl PhBlock {
    /// Start a block from its Hamiltonian and input matrix; everything else
    /// defaults to zero.
    pub fn builder(hamiltonian: impl Hamiltonian + 'static, input_matrix: DMatrix<f64>) -> PhBlockBuilder {
        Self::builder_arc(Arc::new(hamiltonian), input_matrix)
    }

    pub fn builder_arc(hamiltonian: Arc<dyn Hamiltonian>, input_matrix: DMatrix<f64>) -> PhBlockBuilder {
        PhBlockBuilder {
            hamiltonian,
            interconnection: None,
            dissipation: None,
            input_matrix,
            feedthrough: None,
            disturbance: None,
            output_offset: None,
            state_labels: None,
            port_labels: None,
        }
    }

    /// Rebuild with a different dissipation map (used for fault injection and
    /// for assembling variants).
    pub fn with_dissipation(&self, r: Arc<dyn StateMatrix>) -> Result<PhBlock, PhError> {
        check_dim("dissipation", self.n(), r.dim())?;
        Ok(PhBlock {
            dissipation: r,
            ..self.clone()
        })
    }

    pub fn with_disturbance(&self, d: DVector<f64>) -> Result<PhBlock, PhError> {
        check_dim("disturbance", self.n(), d.len())?;
        Ok(PhBlock {
            disturbance: d,
            ..self.clone()
        })
    }

    pub fn n(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn m(&self) -> usize {
        self.input_matrix.ncols()
    }

    pub fn hamiltonian(&self) -> &Arc<dyn Hamiltonian> {
        &self.hamiltonian
    }

    pub fn interconnection(&self) -> &Arc<dyn StateMatrix> {
        &self.interconnection
    }

    pub fn dissipation(&self) -> &Arc<dyn StateMatrix> {
        &self.dissipation
    }

    pub fn input_matrix(&self) -> &DMatrix<f64> {
        &self.input_matrix
    }

    pub fn feedthrough(&self) -> &DMatrix<f64> {
        &self.feedthrough
    }

    pub fn disturbance(&self) -> &DVector<f64> {
        &self.disturbance
    }

    pub fn output_offset(&self) -> &DVector<f64> {
        &self.output_offset
    }

    pub fn state_labels(&self) -> &[String] {
        &self.state_labels
    }

    pub fn port_labels(&self) -> &[String] {
        &self.port_labels
    }

    pub fn energy(&self, x: &DVector<f64>) -> Result<f64, PhError> {
        check_dim("state", self.n(), x.len())?;
        Ok(self.hamiltonian.energy(x))
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, PhError> {
        check_dim("state", self.n(), x.len())?;
        Ok(self.hamiltonian.gradient(x))
    }

    fn check_state_input(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), PhError> {
        check_dim("state", self.n(), x.len())?;
        check_dim("input", self.m(), u.len())
    }

    /// `(J(x) - R(x))∇H(x) + Bu + d`.
    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, PhError> {
        self.check_state_input(x, u)?;
        let grad = self.hamiltonian.gradient(x);
        let jr = self.interconnection.eval(x) - self.dissipation.eval(x);
        Ok(jr * grad + &self.input_matrix * u + &self.disturbance)
    }

    /// `Bᵀ∇H(x) + Du + y₀`.
    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, PhError> {
        self.check_state_input(x, u)?;
        let grad = self.hamiltonian.gradient(x);
        Ok(self.input_matrix.tr_mul(&grad) + &self.feedthrough * u + &self.output_offset)
    }

    /// Analytic Jacobian of [`PhBlock::rhs`] with respect to the state.
    pub fn rhs_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, PhError> {
        check_dim("state", self.n(), x.len())?;
        let grad = self.hamiltonian.gradient(x);
        let hess = self.hamiltonian.hessian(x);
        let jr = self.interconnection.eval(x) - self.dissipation.eval(x);
        Ok(jr * hess + self.interconnection.product_jacobian(x, &grad) - self.dissipation.product_jacobian(x, &grad))
    }

    /// Terms of the power balance at `(x, u)`.
    pub fn power_terms(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<LedgerRow, PhError> {
        self.check_state_input(x, u)?;
        let grad = self.hamiltonian.gradient(x);
        let r = self.dissipation.eval(x);
        let y = self.output(x, u)?;
        let d_sym = &self.feedthrough + self.feedthrough.transpose();
        Ok(LedgerRow {
            dissipation: -grad.dot(&(r * &grad)),
            supply: y.dot(u),
            feedthrough_loss: -0.5 * u.dot(&(d_sym * u)),
            disturbance_work: grad.dot(&self.disturbance),
            port_power: grad.dot(&(&self.input_matrix * u)),
            offset_work: self.output_offset.dot(u),
        })
    }

    /// Check the structural conditions of the pH form on `samples`.
    pub fn validate_structure(&self, samples: &[DVector<f64>]) -> StructureReport {
        let mut skew = 0.0_f64;
        let mut r_sym = 0.0_f64;
        let mut r_psd = 0.0_f64;
        let mut h_neg = 0.0_f64;
        let mut dims = 0.0_f64;
        for x in samples {
            if x.len() != self.n() {
                dims = f64::INFINITY;
                continue;
            }
            let j = self.interconnection.eval(x);
            skew = skew.max((&j + j.transpose()).amax());
            let r = self.dissipation.eval(x);
            r_sym = r_sym.max((&r - r.transpose()).amax());
            r_psd = r_psd.max(negative_part(&r));
            h_neg = h_neg.max(-self.hamiltonian.energy(x));
        }
        let d_psd = negative_part(&self.feedthrough);
        let tol = |constant: bool| if constant { CONSTANT_TOL } else { SAMPLED_TOL };
        let mut checks = vec![
            StructureCheck::new("skew-symmetry", skew, tol(self.interconnection.is_constant())),
            StructureCheck::new("dissipation symmetry", r_sym, tol(self.dissipation.is_constant())),
            StructureCheck::new("dissipation PSD", r_psd, tol(self.dissipation.is_constant())),
            StructureCheck::new("feedthrough PSD", d_psd, CONSTANT_TOL),
            StructureCheck::new("hamiltonian nonnegative", h_neg.max(0.0), SAMPLED_TOL),
        ];
        if samples.is_empty() || dims > 0.0 {
            checks.push(StructureCheck::new("sample dimensions", f64::INFINITY, 0.0));
        }
        StructureReport { checks }
    }
}

/// Magnitude of the most negative eigenvalue of the symmetric part of `m`.
fn negative_part(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    let min = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    (-min).max(0.0)
}

/// Power-balance terms at one state.
///
/// `dissipation + port_power + disturbance_work` is the exact rate of change
/// of the Hamiltonian; `supply` is `yᵀu` with the full output, so that
/// `port_power = supply + feedthrough_loss - offset_work`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LedgerRow {
    /// `-∇Hᵀ R ∇H`
    pub dissipation: f64,
    /// `yᵀu`
    pub supply: f64,
    /// `-½ uᵀ(D + Dᵀ)u`
    pub feedthrough_loss: f64,
    /// `∇Hᵀ d`
    pub disturbance_work: f64,
    /// `∇Hᵀ B u`
    pub port_power: f64,
    /// `y₀ᵀ u`
    pub offset_work: f64,
}

impl LedgerRow {
    pub fn hamiltonian_rate(&self) -> f64 {
        self.dissipation + self.port_power + self.disturbance_work
    }

    /// Supply through the passive port, i.e. `yᵀu` without the output offset.
    pub fn passive_supply(&self) -> f64 {
        self.supply - self.offset_work
    }

    /// Sum of absolute values of the terms, used as a scale for tolerances.
    pub fn magnitude(&self) -> f64 {
        self.dissipation.abs()
            + self.supply.abs()
            + self.feedthrough_loss.abs()
            + self.disturbance_work.abs()
            + self.port_power.abs()
            + self.offset_work.abs()
    }

    pub fn scaled(&self, s: f64) -> LedgerRow {
        LedgerRow {
            dissipation: s * self.dissipation,
            supply: s * self.supply,
            feedthrough_loss: s * self.feedthrough_loss,
            disturbance_work: s * self.disturbance_work,
            port_power: s * self.port_power,
            offset_work: s * self.offset_work,
        }
    }

    pub fn add(&self, o: &LedgerRow) -> LedgerRow {
        LedgerRow {
            dissipation: self.dissipation + o.dissipation,
            supply: self.supply + o.supply,
            feedthrough_loss: self.feedthrough_loss + o.feedthrough_loss,
            disturbance_work: self.disturbance_work + o.disturbance_work,
            port_power: self.port_power + o.port_power,
            offset_work: self.offset_work + o.offset_work,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureCheck {
    pub name: &'static str,
    pub worst_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl StructureCheck {
    fn new(name: &'static str, worst_violation: f64, tolerance: f64) -> Self {
        Self {
            name,
            worst_violation,
            tolerance,
            pass: worst_violation <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub checks: Vec<StructureCheck>,
}

impl StructureReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &StructureCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

impl fmt::Display for StructureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<24} {} (worst {:e}, tol {:e})",
                c.name,
                if c.pass { "pass" } else { "FAIL" },
                c.worst_violation,
                c.tolerance
            )?;
        }
        Ok(())
    }
}
