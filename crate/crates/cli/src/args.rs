use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Weak-formulation FBSDE laboratory.
#[derive(Debug, Parser)]
#[command(name = "wfbsde", version)]
pub struct Cli {
    /// Output directory; falls back to the config's `output`, then $WFBSDE_OUT, then ./wfbsde-out
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List catalog problems and control specs
    Catalog,
    /// Solve the decoupling PDE and write the field with its reports
    Solve(SolveArgs),
    /// Simulate a path bundle
    Simulate(SimulateArgs),
    /// Run martingale-problem or nodal checks; exit 1 when a check fails
    Verify(VerifyArgs),
    /// Control experiments and Hamiltonian tables
    #[command(subcommand)]
    Control(ControlCommand),
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// TOML experiment config; explicit flags take precedence over it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Catalog problem id
    #[arg(long)]
    pub problem: Option<String>,
    /// Problem parameter `key=value`, repeatable
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// PDE grid `nt,nx,lo,hi`
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Initial state, comma separated (default: origin)
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Decoupling field file from `solve`
    #[arg(long)]
    pub field: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Bundle file from `simulate`
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Decoupling field file (needed for cross-variation and fk checks)
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Checks to run: mx, my, qv, cross, fk
    #[arg(long, value_delimiter = ',')]
    pub checks: Option<Vec<String>>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Corruption fixture: add `rate·t` to X before checking
    #[arg(long, value_name = "RATE", allow_hyphen_values = true)]
    pub inject_drift: Option<f64>,
    /// Nodal interval at `t,x` instead of bundle checks
    #[arg(long, value_name = "T,X", value_delimiter = ',', allow_hyphen_values = true)]
    pub nodal: Option<Vec<f64>>,
    /// Nodal indices n
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
    pub levels: Vec<usize>,
    /// Value to select inside the nodal interval
    #[arg(long, allow_hyphen_values = true)]
    pub target: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum ControlCommand {
    /// Strong vs weak formulation with a Tsirelson-kernel drift control
    Drift(DriftArgs),
    /// Diffusion control with the Barlow coefficient
    Diffusion(DiffusionArgs),
    /// Probe table of H, H̃ and Ĥ for a control spec
    Hamiltonians(HamiltonianArgs),
}

#[derive(Debug, Args)]
pub struct DriftArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    pub levels: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct DiffusionArgs {
    #[arg(long, default_value_t = 0.75)]
    pub lambda: f64,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    /// HJB grid `nt,nx,lo,hi`
    #[arg(long, default_value = "200,400,-4,4")]
    pub grid: String,
}

#[derive(Debug, Args)]
pub struct HamiltonianArgs {
    /// Control spec id: drift-k, diffusion-barlow, singleton
    #[arg(long)]
    pub problem: String,
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    pub probes: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}
