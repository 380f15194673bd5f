use std::path::{Path, PathBuf};

use amerikan::{EvalPoint, MarketParams, OptionKind, OptionSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::CliError;

pub const SEED_ENV: &str = "AMERIKAN_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "amerikan",
    version,
    about = "American option values by lattice, PDE and BSDE methods"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Price one contract and print a JSON record.
    #[command(subcommand)]
    Price(Engine),
    /// Exercise boundary from the obstacle PDE as CSV.
    Boundary(RunArgs),
    /// Per-path Doob–Meyer and explicit K processes as CSV, with a JSON summary.
    Kprocess(RunArgs),
    /// Run the cross-method equivalence suite.
    Validate(ValidateArgs),
}

#[derive(Debug, Subcommand)]
pub enum Engine {
    /// Richardson-extrapolated CRR tree (`--steps` sets the coarse tree).
    Tree(RunArgs),
    /// Finite differences, `--method obstacle|penalized|semilinear`.
    Pde(RunArgs),
    /// Monte Carlo BSDE, `--method snell|driver`.
    Bsde(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Contract, market and numerical settings. Flags override `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub kind: Option<OptionKind>,
    #[arg(long)]
    pub strike: Option<f64>,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub dividend: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub expiry: Option<f64>,
    #[arg(long)]
    pub spot: Option<f64>,
    /// Valuation time `s`, default 0.
    #[arg(long)]
    pub start: Option<f64>,
    #[arg(long)]
    pub method: Option<String>,
    /// Space and time nodes of the PDE grid.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Time steps (tree steps for `price tree`).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overridden by the AMERIKAN_SEED environment variable when set.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Penalty parameter of `--method penalized`.
    #[arg(long)]
    pub penalty: Option<f64>,
    /// JSON file with any of the fields above.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Suite configuration (JSON); the built-in acceptance suite if omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Writes `<out>.json` and `<out>.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// What goes to stdout: the report JSON or the flat CSV.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Also run the refinement studies; a non-monotone study fails the run.
    #[arg(long)]
    pub refinement: bool,
    /// Overridden by the AMERIKAN_SEED environment variable when set.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    kind: Option<OptionKind>,
    strike: Option<f64>,
    rate: Option<f64>,
    dividend: Option<f64>,
    sigma: Option<f64>,
    expiry: Option<f64>,
    spot: Option<f64>,
    start: Option<f64>,
    method: Option<String>,
    grid: Option<usize>,
    paths: Option<usize>,
    steps: Option<usize>,
    seed: Option<u64>,
    penalty: Option<f64>,
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: MarketParams,
    pub spec: OptionSpec,
    pub point: EvalPoint,
    pub method: Option<String>,
    pub grid: Option<usize>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub seed: u64,
    pub penalty: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// `AMERIKAN_SEED` if set, else the given value.
pub fn seed_override(seed: Option<u64>) -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(seed),
    }
}

impl RunArgs {
    pub fn resolve(self) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(path) => serde_json::from_str::<FileConfig>(&read_file(path)?)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
            None => FileConfig::default(),
        };
        fn need<T>(name: &str, flag: Option<T>, file: Option<T>) -> Result<T, CliError> {
            flag.or(file).ok_or_else(|| CliError::Missing(name.to_string()))
        }
        let kind = need("--kind", self.kind, file.kind)?;
        let strike = need("--strike", self.strike, file.strike)?;
        let rate = need("--rate", self.rate, file.rate)?;
        let sigma = need("--sigma", self.sigma, file.sigma)?;
        let expiry = need("--expiry", self.expiry, file.expiry)?;
        let spot = need("--spot", self.spot, file.spot)?;
        let dividend = self.dividend.or(file.dividend).unwrap_or(0.0);
        let start = self.start.or(file.start).unwrap_or(0.0);
        let params = MarketParams::new(rate, dividend, sigma, expiry)?;
        let spec = OptionSpec::new(kind, strike)?;
        let point = EvalPoint::new(start, spot)?;
        point.validate_against(&params)?;
        Ok(RunConfig {
            params,
            spec,
            point,
            method: self.method.or(file.method),
            grid: self.grid.or(file.grid),
            paths: self.paths.or(file.paths),
            steps: self.steps.or(file.steps),
            seed: seed_override(self.seed.or(file.seed))?.unwrap_or(1),
            penalty: self.penalty.or(file.penalty),
            out: self.out,
            format: self.format,
        })
    }
}
