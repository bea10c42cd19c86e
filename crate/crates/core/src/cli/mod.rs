//! The `pqc2` command line.
//!
//! Exit codes: 0 on success, 1 for bad flags or configuration, 2 when
//! something fails at run time, 3 when a scenario ran but an expectation
//! did not hold. Every command validates its inputs completely before it
//! writes a file or opens a socket.

mod bench;
mod config;
mod demo;
mod nodes;
mod pki;
mod scenario;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{AttackSection, Identity, RunConfig, ScriptStep};

/// What went wrong, and therefore which exit code to use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Config(String),
    Runtime(String),
    Expectation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Expectation(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
            CliError::Expectation(m) => write!(f, "expectation failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub(crate) fn config_err(e: impl fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

pub(crate) fn runtime_err(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "pqc2",
    version,
    about = "Post-quantum-ready secure publish/subscribe command and control",
    arg_required_else_help = true,
    after_help = "Set PQC2_LOG to error, warn, info or debug to control logging."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certificate authority and key management.
    #[command(subcommand)]
    Pki(PkiCommand),
    /// Run the message broker.
    Broker(BrokerArgs),
    /// Run the ground station, optionally with the operator console bridge.
    Ground(GroundArgs),
    /// Run the simulated mobile agent.
    Agent(NodeArgs),
    /// Run the geofence monitor.
    Monitor(NodeArgs),
    /// Run the verifying relay.
    Relay(NodeArgs),
    /// Run one attack against a broker.
    Attacker(AttackerArgs),
    /// Run scripted scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Measure signing, throughput and handshake cost.
    Bench(BenchArgs),
    /// Inspect capture files.
    #[command(subcommand)]
    Capture(CaptureCommand),
    /// Generate demonstration assets.
    #[command(subcommand)]
    Demo(DemoCommand),
}

#[derive(Debug, Subcommand)]
pub enum PkiCommand {
    /// Create a self-signed certificate authority in DIR.
    InitCa {
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "hash-merkle")]
        scheme: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 365)]
        days: u64,
    },
    /// Generate a signature key pair.
    Keygen {
        #[arg(long, default_value = "hash-merkle")]
        scheme: String,
        /// Tree depth for hash-merkle keys (2^depth signatures).
        #[arg(long)]
        depth: Option<u8>,
        /// Secret key output file.
        #[arg(long)]
        out: PathBuf,
        /// Public key output file.
        #[arg(long = "pub")]
        public: PathBuf,
    },
    /// Certify a public key with the CA in DIR.
    Issue {
        #[arg(long)]
        ca: PathBuf,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        role: String,
        #[arg(long)]
        pubkey: PathBuf,
        #[arg(long, default_value_t = 365)]
        days: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a certificate against a CA certificate.
    Verify {
        /// CA certificate file, or a CA directory.
        #[arg(long)]
        ca: PathBuf,
        #[arg(long)]
        cert: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct BrokerArgs {
    /// Run configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub authz: Option<PathBuf>,
    #[arg(long)]
    pub ca: Option<PathBuf>,
    #[arg(long)]
    pub cert: Option<PathBuf>,
    #[arg(long)]
    pub key: Option<PathBuf>,
    /// none | app-sig | channel | both
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub capture: Option<PathBuf>,
    #[arg(long)]
    pub event_log: Option<PathBuf>,
    /// Suite configuration file (YAML).
    #[arg(long)]
    pub suites: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Clone, Copy)]
pub enum RunVerb {
    /// Start the node (the default).
    Run,
}

#[derive(Debug, Args)]
pub struct NodeArgs {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub verb: Option<RunVerb>,
}

#[derive(Debug, Args)]
pub struct GroundArgs {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Serve the console websocket bridge on this loopback port.
    #[arg(long, global = true)]
    pub console_port: Option<u16>,
    /// Directory of console static assets to serve alongside the bridge.
    #[arg(long, global = true)]
    pub serve_ui: Option<PathBuf>,
    #[command(subcommand)]
    pub verb: Option<RunVerb>,
}

#[derive(Debug, Args)]
pub struct AttackerArgs {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the attack kind in the configuration.
    #[arg(long, global = true)]
    pub kind: Option<String>,
    /// Overrides the attack count in the configuration.
    #[arg(long, global = true)]
    pub count: Option<usize>,
    /// Write the attack report as JSON to this file.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    #[command(subcommand)]
    pub verb: Option<RunVerb>,
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCommand {
    /// Run a bundled scenario by name, or a scenario file.
    Run {
        scenario: String,
        /// none | app-sig | channel | both; defaults to the scenario's own mode.
        #[arg(long)]
        mode: Option<String>,
        /// Write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// List the bundled scenarios.
    List,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchKind {
    SignVerify,
    Throughput,
    Handshake,
    All,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(value_enum)]
    pub kind: BenchKind,
    /// Output directory for CSV and SVG files.
    #[arg(long)]
    pub out: PathBuf,
    /// Message sizes in bytes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Target rates in Hz, comma separated (throughput).
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<u32>>,
    /// Repetitions per cell (sign-verify defaults to 30, handshake to 20).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Seconds per throughput cell.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    /// Signature schemes, comma separated (sign-verify).
    #[arg(long, value_delimiter = ',')]
    pub schemes: Option<Vec<String>>,
    /// Throughput modes: none, channel, channel/<aead>.
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<String>>,
    /// Handshake suites as sig+kem+aead, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub suites: Option<Vec<String>>,
}

#[derive(Debug, Subcommand)]
pub enum CaptureCommand {
    /// Search a capture for a plaintext needle and its 16-byte windows.
    Scan {
        file: PathBuf,
        #[arg(long, conflicts_with = "hex", required_unless_present = "hex")]
        needle: Option<String>,
        #[arg(long)]
        hex: Option<String>,
        #[arg(long, default_value_t = 16)]
        window: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum DemoCommand {
    /// Write a CA, identities, policy, run configurations and scenarios to DIR.
    Init {
        dir: PathBuf,
        #[arg(long, default_value = "hash-merkle")]
        scheme: String,
        /// Replace existing files.
        #[arg(long)]
        force: bool,
    },
}

fn init_logging(default: &str) {
    let filter = std::env::var("PQC2_LOG").unwrap_or_else(|_| default.to_string());
    let filter = tracing_subscriber::EnvFilter::try_new(&filter).unwrap_or_else(|_| "warn".into());
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime_err)
}

/// Runs one command line and returns its exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            for line in e.to_string().lines() {
                eprintln!("{line}");
            }
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Pki(cmd) => {
            init_logging("warn");
            pki::run(cmd)
        }
        Command::Demo(DemoCommand::Init { dir, scheme, force }) => {
            init_logging("warn");
            demo::init(&dir, &scheme, force)
        }
        Command::Capture(CaptureCommand::Scan { file, needle, hex, window }) => {
            init_logging("warn");
            scenario::capture_scan(&file, needle, hex, window)
        }
        Command::Scenario(ScenarioCommand::List) => {
            scenario::list();
            Ok(())
        }
        Command::Scenario(ScenarioCommand::Run { scenario, mode, report }) => {
            init_logging("warn");
            let spec = scenario::prepare(&scenario, mode.as_deref())?;
            runtime()?.block_on(scenario::run(spec, report))
        }
        Command::Bench(args) => {
            init_logging("warn");
            let plan = bench::plan(&args)?;
            runtime()?.block_on(bench::run(plan))
        }
        Command::Broker(args) => {
            let prepared = nodes::prepare_broker(&args)?;
            init_logging(prepared.log_level());
            runtime()?.block_on(nodes::run_broker(prepared))
        }
        Command::Ground(args) => {
            let mut prepared = nodes::prepare(nodes::NodeKind::Ground, args.config.as_deref())?;
            prepared.override_console(args.console_port, args.serve_ui)?;
            init_logging(prepared.log_level());
            runtime()?.block_on(nodes::run_node(prepared))
        }
        Command::Agent(args) => start(nodes::NodeKind::Agent, args),
        Command::Monitor(args) => start(nodes::NodeKind::Monitor, args),
        Command::Relay(args) => start(nodes::NodeKind::Relay, args),
        Command::Attacker(args) => {
            let prepared = nodes::prepare_attacker(&args)?;
            init_logging(prepared.log_level());
            runtime()?.block_on(nodes::run_attacker(prepared))
        }
    }
}

fn start(kind: nodes::NodeKind, args: NodeArgs) -> Result<(), CliError> {
    let prepared = nodes::prepare(kind, args.config.as_deref())?;
    init_logging(prepared.log_level());
    runtime()?.block_on(nodes::run_node(prepared))
}
