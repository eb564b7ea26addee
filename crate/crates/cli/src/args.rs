use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use deltagraph::grid::{Axis, GridSpec};
use deltagraph::verify::Tolerances;
use deltagraph::weyl::SpectralPoint;

use crate::failure::Failure;

/// Forward and inverse scattering on metric graphs with δ-type vertex couplings.
#[derive(Debug, Parser)]
#[command(name = "deltagraph", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample Σ̂_e on a grid and write a dataset (JSON) plus a CSV export.
    Forward(ForwardArgs),
    /// Recover the couplings from a dataset and the known geometry.
    Invert(InvertArgs),
    /// Run the identity and invariant suites on a seeded fleet or one graph.
    Verify(VerifyArgs),
    /// Contract one edge and write the resulting graph.
    Contract(ContractArgs),
    /// Compare Σ̂_e with the independent plane-wave solver on a real grid.
    Oracle(OracleArgs),
    /// Forward-generate data for a graph, invert it and compare.
    Roundtrip(RoundtripArgs),
}

/// Spectral sampling. Grids are `start:stop:count[:log|:lin]`; points are
/// emitted real axis first, then the k-lines, then the τ axis.
#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Real energies s > 0.
    #[arg(long)]
    pub grid: Option<String>,
    /// τ values; each gives z = −τ².
    #[arg(long = "tau-grid")]
    pub tau_grid: Option<String>,
    /// Re k values on lines k = x + it in the upper half-plane; z = k².
    #[arg(long = "k-grid")]
    pub k_grid: Option<String>,
    /// Im k of each k-line.
    #[arg(long = "k-imag", value_delimiter = ',', default_value = "0.5,1,1.5")]
    pub k_imag: Vec<f64>,
}

impl GridArgs {
    pub fn is_empty(&self) -> bool {
        self.grid.is_none() && self.tau_grid.is_none() && self.k_grid.is_none()
    }

    pub fn points(&self) -> Result<Vec<SpectralPoint>, Failure> {
        let mut points = Vec::new();
        if let Some(text) = &self.grid {
            points.extend(GridSpec::parse(text, Axis::Real)?.points());
        }
        if let Some(text) = &self.k_grid {
            for &t in &self.k_imag {
                points.extend(GridSpec::parse(text, Axis::KLine(t))?.points());
            }
        }
        if let Some(text) = &self.tau_grid {
            points.extend(GridSpec::parse(text, Axis::Tau)?.points());
        }
        Ok(points)
    }

    /// Grids used when none is given: three k-lines plus a short τ axis,
    /// which is enough data to pin every coupling.
    pub fn recovery_default() -> Self {
        Self {
            grid: None,
            tau_grid: Some("0.6:6:10".into()),
            k_grid: Some("0.3:5.9:8".into()),
            k_imag: vec![0.5, 1.0, 1.5],
        }
    }

    /// Grids used by `verify` when none is given.
    pub fn verify_default() -> Self {
        Self {
            grid: Some("0.37:99.3:40".into()),
            tau_grid: Some("0.25:4:6".into()),
            k_grid: Some("0.5:9.5:6".into()),
            k_imag: vec![0.7],
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ToleranceArgs {
    #[arg(long = "tol-identity")]
    pub identity: Option<f64>,
    #[arg(long = "tol-unitarity")]
    pub unitarity: Option<f64>,
    #[arg(long = "tol-oracle")]
    pub oracle: Option<f64>,
    #[arg(long = "tol-weights")]
    pub weights: Option<f64>,
    #[arg(long = "tol-chi-form")]
    pub chi_form: Option<f64>,
    #[arg(long = "tol-adjoint")]
    pub adjoint: Option<f64>,
    #[arg(long = "tol-factorization")]
    pub factorization: Option<f64>,
    #[arg(long = "tol-roundtrip")]
    pub roundtrip: Option<f64>,
}

impl ToleranceArgs {
    pub fn resolve(&self) -> Tolerances {
        let d = Tolerances::default();
        Tolerances {
            identity: self.identity.unwrap_or(d.identity),
            unitarity: self.unitarity.unwrap_or(d.unitarity),
            oracle: self.oracle.unwrap_or(d.oracle),
            weights: self.weights.unwrap_or(d.weights),
            chi_form: self.chi_form.unwrap_or(d.chi_form),
            adjoint: self.adjoint.unwrap_or(d.adjoint),
            factorization: self.factorization.unwrap_or(d.factorization),
            roundtrip: self.roundtrip.unwrap_or(d.roundtrip),
        }
    }
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub grids: GridArgs,
    /// Relative complex Gaussian noise added to every entry.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV path; defaults to the dataset path with a `.csv` extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report JSON path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub recovery: RecoveryArgs,
}

#[derive(Debug, Clone, Args)]
pub struct RecoveryArgs {
    /// Prior box |a| ≤ bound.
    #[arg(long)]
    pub bound: Option<f64>,
    /// Random restarts allowed per start.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Only run the asymptotic start.
    #[arg(long)]
    pub no_multistart: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Check this graph instead of a random fleet.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Also check unitarity of every real-energy sample in this dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Fleet size.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[command(flatten)]
    pub grids: GridArgs,
    #[command(flatten)]
    pub tolerances: ToleranceArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ContractArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub edge: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Real energies; required.
    #[arg(long)]
    pub grid: String,
    #[command(flatten)]
    pub tolerances: ToleranceArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[command(flatten)]
    pub grids: GridArgs,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest acceptable |â − a|.
    #[arg(long = "tol-couplings", default_value_t = 1e-6)]
    pub tol_couplings: f64,
    #[command(flatten)]
    pub recovery: RecoveryArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
