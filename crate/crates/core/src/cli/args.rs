use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "fgdd", version, about = "Fine-grained bias-variance decomposition of random-feature and NTK regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gaussian moments of an activation.
    Moments {
        #[command(flatten)]
        common: CommonArgs,
        /// Quadrature nodes.
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Asymptotic decomposition, optionally swept along one axis.
    Theory {
        #[command(flatten)]
        common: CommonArgs,
        /// Add the recombined-view columns.
        #[arg(long)]
        views: bool,
        /// Add the training-loss columns.
        #[arg(long)]
        train_loss: bool,
    },
    /// Monte Carlo estimate of the decomposition.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Monte Carlo against theory; exits with 3 if any |z| > 4.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Ensemble test error over a grid of ensemble sizes.
    Ensemble {
        #[command(flatten)]
        common: CommonArgs,
        /// Parameter-ensemble sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        k_p: Vec<usize>,
        /// Data-ensemble sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        k_d: Vec<usize>,
        /// Also estimate each ensemble by Monte Carlo.
        #[arg(long)]
        simulate: bool,
    },
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Moments { common, .. }
            | Command::Theory { common, .. }
            | Command::Simulate { common }
            | Command::Compare { common }
            | Command::Ensemble { common, .. } => common,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Rf,
    Ntk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureModeArg {
    Exact,
    GaussianEquivalent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    #[value(name = "n1_over_m")]
    N1OverM,
    Gamma,
    Snr,
    #[value(name = "sigma_w2")]
    SigmaW2,
}

/// Options shared by every subcommand. Each can also be given in a config
/// file as `key = value`; flags win over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Key-value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// n0/m; defaults to the ratio of --n0 and --m.
    #[arg(long)]
    pub phi: Option<f64>,
    /// n0/n1; defaults to the ratio of --n0 and --n1.
    #[arg(long)]
    pub psi: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Standard deviation of the second-layer weights (NTK).
    #[arg(long)]
    pub sigma_w2: Option<f64>,
    /// Label-noise standard deviation.
    #[arg(long, conflicts_with = "snr")]
    pub sigma_eps: Option<f64>,
    /// Signal-to-noise ratio of the linear teacher; sets sigma_eps.
    #[arg(long)]
    pub snr: Option<f64>,
    /// identity, relu or tanh.
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Remove the initial network output (NTK).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub centering: Option<bool>,
    #[arg(long, value_enum)]
    pub feature_mode: Option<FeatureModeArg>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n0: Option<usize>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub sweep_axis: Option<AxisArg>,
    /// Comma-separated values, or lo:hi:count[:log|linear].
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Output file; stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parser for config files, which accept only the shared options.
#[derive(Debug, Parser)]
#[command(name = "config file", no_binary_name = true, disable_help_flag = true, disable_version_flag = true)]
pub(crate) struct FileArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        CommonArgs { $($f: $hi.$f.clone().or_else(|| $lo.$f.clone()),)* }
    };
}

impl CommonArgs {
    /// Fields set here win; unset fields come from `lower`.
    pub fn over(&self, lower: &CommonArgs) -> CommonArgs {
        overlay!(
            self, lower, config, phi, psi, gamma, sigma_w2, sigma_eps, snr, activation, model, centering,
            feature_mode, m, n0, n1, n_test, replicates, seed, sweep_axis, grid, out
        )
    }
}
