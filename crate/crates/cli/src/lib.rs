//! Command-line front end: validate networks, run scenarios, solve steady
//! states, audit passivity and export matrices.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use h2ph::analysis::{self, ExportFormat, SteadyOptions};
use h2ph::assembly::{GridSystem, Network, StateKind};
use h2ph::netio::{self, NetIoError};
use h2ph::sim::{self, Method, Trajectory};
use nalgebra::DVector;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "H2PH_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "h2ph-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_IO: i32 = 74;

#[derive(Debug, Parser)]
#[command(name = "h2ph", version, about = "Port-Hamiltonian hydrogen network models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Rk4,
    Midpoint,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Rk4 => Method::Rk4,
            MethodArg::Midpoint => Method::Midpoint,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Manifest,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    network: PathBuf,
    scenario: PathBuf,
    /// Override the scenario's integrator.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Override the scenario's step size (s).
    #[arg(long)]
    step: Option<f64>,
    /// Output directory (default: $H2PH_OUT_DIR, else ./h2ph-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a whitespace-separated column file for gnuplot.
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check topology, parameters and pH structure of a network.
    Validate { network: PathBuf },
    /// Integrate a scenario and write the trajectory.
    Simulate(RunArgs),
    /// Solve for the equilibrium under constant inputs.
    SteadyState {
        network: PathBuf,
        /// Flat table `"channel" = value`; missing channels are zero.
        #[arg(long)]
        input_file: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 50)]
        max_iter: usize,
    },
    /// Simulate a scenario and certify the dissipation inequality.
    Audit(RunArgs),
    /// Write J, R, B, D, d and index maps at a reference state.
    Export {
        network: PathBuf,
        /// Flat table `"p.<node>" = value` etc.; default is the zero state.
        #[arg(long)]
        state_file: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failed command: exit status plus message for stderr.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<NetIoError> for Failure {
    fn from(e: NetIoError) -> Self {
        let code = match e {
            NetIoError::Io { .. } => EXIT_IO,
            NetIoError::Invalid { .. } => EXIT_INVALID,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_IO, e.to_string())
    }
}

type Outcome = Result<i32, Failure>;

/// Run the command line `args` (including the program name), writing
/// normal output to `out` and diagnostics to `err`. Returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Validate { network } => validate(&network, out, err),
        Command::Simulate(args) => simulate(&args, false, out, err),
        Command::Audit(args) => simulate(&args, true, out, err),
        Command::SteadyState {
            network,
            input_file,
            tol,
            max_iter,
        } => steady(&network, input_file.as_deref(), SteadyOptions { tol, max_iter }, out),
        Command::Export {
            network,
            state_file,
            format,
            out: dir,
        } => export(&network, state_file.as_deref(), format, dir, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn out_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn load(path: &Path) -> Result<(Network, GridSystem), Failure> {
    let network = netio::parse_network(path)?;
    let system = network
        .coupled_system()
        .map_err(|e| Failure::new(EXIT_INVALID, format!("{}: {e}", path.display())))?;
    Ok((network, system))
}

/// Deterministic probe states: rest, nominal, and nominal with flows and
/// voltages of both signs.
fn probe_states(network: &Network, system: &GridSystem) -> Vec<DVector<f64>> {
    let nominal = netio::nominal_state(network, system);
    let w = system
        .block
        .hamiltonian()
        .diagonal_weights()
        .expect("assembled systems have diagonal Hamiltonians");
    let mut probes = vec![DVector::zeros(nominal.len()), nominal.clone()];
    for (flow, volt) in [(5.0, 1.0), (-5.0, -1.0), (40.0, 0.3)] {
        let mut x = nominal.clone();
        for (i, slot) in system.layout.states.iter().enumerate() {
            match slot.kind {
                StateKind::Edge => x[i] = flow / w[i],
                StateKind::Device => x[i] = volt / w[i],
                StateKind::Node => {}
            }
        }
        probes.push(x);
    }
    probes
}

fn validate(path: &Path, out: &mut dyn Write, _err: &mut dyn Write) -> Outcome {
    let network = netio::parse_network(path)?;
    writeln!(out, "network {}: {}", network.name, network.topology.counts())?;
    let grid = network
        .grid_system()
        .map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
    let coupled = network
        .coupled_system()
        .map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
    let mut ok = true;
    for (name, sys) in [("grid", &grid), ("coupled", &coupled)] {
        let report = sys.block.validate_structure(&probe_states(&network, sys));
        writeln!(
            out,
            "{name} system: {} states, {} inputs, structure {}",
            sys.block.n(),
            sys.block.m(),
            if report.passed() { "ok" } else { "FAILED" }
        )?;
        for line in report.to_string().lines() {
            writeln!(out, "  {line}")?;
        }
        ok &= report.passed();
    }
    Ok(if ok { EXIT_OK } else { EXIT_INVALID })
}

fn simulate(args: &RunArgs, audit: bool, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let (network, system) = load(&args.network)?;
    let mut spec = netio::parse_scenario(&args.scenario, &network, &system)?;
    for w in &spec.warnings {
        writeln!(err, "warning: {w}")?;
    }
    if let Some(m) = args.method {
        spec.method = m.into();
    }
    if let Some(h) = args.step {
        spec.options.step = h;
    }
    let trajectory: Trajectory = sim::run_scenario(&system.block, &spec.scenario, spec.method, &spec.options)
        .map_err(|e| Failure::new(EXIT_NUMERICAL, e.to_string()))?
        .with_output_labels(system.layout.outputs.clone());
    let report = if audit {
        Some(
            analysis::passivity_audit(&trajectory, &system.block)
                .map_err(|e| Failure::new(EXIT_NUMERICAL, e.to_string()))?,
        )
    } else {
        None
    };
    let dir = out_dir(args.out.clone());
    let written = netio::write_results(&trajectory, report.as_ref(), &dir, args.gnuplot)?;
    writeln!(
        out,
        "{}: {} with h = {:?} over {:?} s, {} samples",
        network.name,
        spec.method.name(),
        spec.options.step,
        spec.scenario.duration,
        trajectory.samples.len()
    )?;
    for path in &written {
        if let Some(name) = path.file_name() {
            writeln!(out, "wrote {}", name.to_string_lossy())?;
        }
    }
    match report {
        Some(r) => {
            write!(out, "{}", r.to_toml())?;
            Ok(if r.passed() { EXIT_OK } else { EXIT_INVALID })
        }
        None => Ok(EXIT_OK),
    }
}

fn steady(path: &Path, input_file: Option<&Path>, options: SteadyOptions, out: &mut dyn Write) -> Outcome {
    let (network, system) = load(path)?;
    let u = match input_file {
        Some(f) => {
            let text = fs::read_to_string(f).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", f.display())))?;
            netio::parse_input_values(&text, &f.display().to_string(), &system)?
        }
        None => DVector::zeros(system.block.m()),
    };
    let guess = netio::nominal_state(&network, &system);
    let st = analysis::steady_state(&system.block, &u, &guess, &options)
        .map_err(|e| Failure::new(EXIT_NUMERICAL, e.to_string()))?;
    let costate = system
        .block
        .gradient(&st.state)
        .map_err(|e| Failure::new(EXIT_NUMERICAL, e.to_string()))?;
    writeln!(
        out,
        "{}: {} after {} iterations",
        network.name,
        if st.converged { "converged" } else { "NOT converged" },
        st.iterations
    )?;
    writeln!(
        out,
        "residual: max |rhs| = {:?}, scaled = {:?}",
        st.residual_norm, st.scaled_residual
    )?;
    for (label, v) in netio::costate_labels(&system).iter().zip(costate.iter()) {
        writeln!(out, "{label:<16} {v:?}")?;
    }
    // pressure drop balance of each pipe
    let topo = &network.topology;
    for e in topo.edges().iter().filter(|e| network.pipes.contains_key(&e.id)) {
        let p = network
            .pipe_params(&e.id)
            .map_err(|err| Failure::new(EXIT_INVALID, err.to_string()))?;
        let idx = |kind, id: &str| system.layout.state_index(kind, id).expect("state exists");
        let q = costate[idx(StateKind::Edge, &e.id)];
        let drop = costate[idx(StateKind::Node, &e.source)] - costate[idx(StateKind::Node, &e.sink)];
        let friction = p.lambda_hat() * p.length * q * q.abs();
        writeln!(
            out,
            "pipe {}: p_from - p_to = {:?}, friction lambda_hat*L*q|q| = {:?}, gravity = {:?}",
            e.id,
            drop,
            friction,
            -p.gravity_disturbance()
        )?;
    }
    Ok(if st.converged { EXIT_OK } else { EXIT_NUMERICAL })
}

fn export(
    path: &Path,
    state_file: Option<&Path>,
    format: FormatArg,
    dir: Option<PathBuf>,
    out: &mut dyn Write,
) -> Outcome {
    let (_, system) = load(path)?;
    let reference = match state_file {
        Some(f) => {
            let text = fs::read_to_string(f).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", f.display())))?;
            netio::parse_costate_values(&text, &f.display().to_string(), &system)?
        }
        None => DVector::zeros(system.block.n()),
    };
    let format = match format {
        FormatArg::Csv => ExportFormat::Csv,
        FormatArg::Manifest => ExportFormat::Manifest,
    };
    let dir = out_dir(dir);
    let written = analysis::export_matrices(&system, &reference, format, &dir).map_err(|e| {
        let code = match e {
            analysis::AnalysisError::Io { .. } => EXIT_IO,
            _ => EXIT_NUMERICAL,
        };
        Failure::new(code, e.to_string())
    })?;
    for p in &written {
        if let Some(name) = p.file_name() {
            writeln!(out, "wrote {}", name.to_string_lossy())?;
        }
    }
    Ok(EXIT_OK)
}
