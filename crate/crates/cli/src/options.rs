//! Command-line flags and their `key=value` config-file counterparts.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "plcopula", version, about = "Plackett-Luce copula regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Fit the composite model and write it with a report.
    Fit,
    /// Predictive draws, HPD intervals and density grids for new rows.
    Predict,
    /// Held-out calibration and error summaries.
    Diagnose,
    /// Write a simulated data set with its schema.
    Simulate,
    /// Covariates ordered by sign evidence.
    Rank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MarginalKind {
    Ecdf,
    Bootstrap,
    PolyaTree,
    Dpm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PtBase {
    Gaussian,
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SignArg {
    /// `λ(x) = exp(βᵀx)`
    Positive,
    /// `λ(x) = exp(-βᵀx)`
    Negative,
}

/// Every flag is optional here; defaults are applied where the value is used
/// so that a config file can fill anything left unset on the command line.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Flat `key=value` file; keys are the long flag names.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Training CSV with a header row.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Schema file; inferred from the CSV when absent.
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Response column when no schema is given.
    #[arg(long, global = true)]
    pub response: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Covariate rows to predict at.
    #[arg(long, global = true)]
    pub rows: Option<PathBuf>,
    /// Held-out CSV with responses.
    #[arg(long, global = true)]
    pub heldout: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub marginal: Option<MarginalKind>,
    #[arg(long = "pt-base", global = true, value_enum)]
    pub pt_base: Option<PtBase>,
    #[arg(long = "pt-mean", global = true)]
    pub pt_mean: Option<f64>,
    #[arg(long = "pt-sd", global = true)]
    pub pt_sd: Option<f64>,
    #[arg(long = "pt-depth", global = true)]
    pub pt_depth: Option<u32>,
    /// `c` in `α_m = c·m²`.
    #[arg(long = "pt-alpha", global = true)]
    pub pt_alpha: Option<f64>,

    #[arg(long = "dpm-alpha", global = true)]
    pub dpm_alpha: Option<f64>,
    #[arg(long = "dpm-mu", global = true)]
    pub dpm_mu: Option<f64>,
    #[arg(long = "dpm-kappa", global = true)]
    pub dpm_kappa: Option<f64>,
    #[arg(long = "dpm-nu", global = true)]
    pub dpm_nu: Option<f64>,
    #[arg(long = "dpm-psi", global = true)]
    pub dpm_psi: Option<f64>,
    #[arg(long = "dpm-iter", global = true)]
    pub dpm_iter: Option<usize>,
    #[arg(long = "dpm-burn", global = true)]
    pub dpm_burn: Option<usize>,
    #[arg(long = "dpm-thin", global = true)]
    pub dpm_thin: Option<usize>,

    #[arg(long = "prior-mean", global = true)]
    pub prior_mean: Option<f64>,
    #[arg(long = "prior-var", global = true)]
    pub prior_var: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub sign: Option<SignArg>,
    /// Metropolis refinement draws after the Laplace fit; 0 skips it.
    #[arg(long = "mh-samples", global = true)]
    pub mh_samples: Option<usize>,
    /// Cap on covariate rows kept for the latent mixture.
    #[arg(long = "fx-rows", global = true)]
    pub fx_rows: Option<usize>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Predictive draws per row.
    #[arg(long, global = true)]
    pub draws: Option<usize>,
    /// HPD level.
    #[arg(long, global = true)]
    pub level: Option<f64>,
    #[arg(long = "grid-size", global = true)]
    pub grid_size: Option<usize>,
    /// Coefficient draws averaged in densities and PIT values.
    #[arg(long = "beta-draws", global = true)]
    pub beta_draws: Option<usize>,
    /// Standardize numeric covariates when the schema is inferred.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub standardize: Option<bool>,
    /// Also score a least-squares baseline (needs --data).
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub baseline: Option<bool>,

    /// mixture3, linear-gaussian or census-like.
    #[arg(long, global = true)]
    pub experiment: Option<String>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("config key {key:?}: cannot parse {value:?}")))
}

fn parse_enum<T: ValueEnum>(key: &str, value: &str) -> Result<T, CliError> {
    T::from_str(value, true).map_err(|_| CliError::Config(format!("config key {key:?}: unknown value {value:?}")))
}

impl Options {
    /// Fills unset options from the config file, if any. Flags win.
    pub fn merge_config(&mut self) -> Result<(), CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(());
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{}:{}: expected key=value", path.display(), lineno + 1))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        macro_rules! fill {
            ($field:ident, $parse:expr) => {
                if self.$field.is_none() {
                    self.$field = Some($parse);
                }
            };
        }
        match key {
            "data" => fill!(data, PathBuf::from(value)),
            "schema" => fill!(schema, PathBuf::from(value)),
            "response" => fill!(response, value.to_string()),
            "model" => fill!(model, PathBuf::from(value)),
            "rows" => fill!(rows, PathBuf::from(value)),
            "heldout" => fill!(heldout, PathBuf::from(value)),
            "out" => fill!(out, PathBuf::from(value)),
            "marginal" => fill!(marginal, parse_enum(key, value)?),
            "pt-base" => fill!(pt_base, parse_enum(key, value)?),
            "pt-mean" => fill!(pt_mean, parse(key, value)?),
            "pt-sd" => fill!(pt_sd, parse(key, value)?),
            "pt-depth" => fill!(pt_depth, parse(key, value)?),
            "pt-alpha" => fill!(pt_alpha, parse(key, value)?),
            "dpm-alpha" => fill!(dpm_alpha, parse(key, value)?),
            "dpm-mu" => fill!(dpm_mu, parse(key, value)?),
            "dpm-kappa" => fill!(dpm_kappa, parse(key, value)?),
            "dpm-nu" => fill!(dpm_nu, parse(key, value)?),
            "dpm-psi" => fill!(dpm_psi, parse(key, value)?),
            "dpm-iter" => fill!(dpm_iter, parse(key, value)?),
            "dpm-burn" => fill!(dpm_burn, parse(key, value)?),
            "dpm-thin" => fill!(dpm_thin, parse(key, value)?),
            "prior-mean" => fill!(prior_mean, parse(key, value)?),
            "prior-var" => fill!(prior_var, parse(key, value)?),
            "sign" => fill!(sign, parse_enum(key, value)?),
            "mh-samples" => fill!(mh_samples, parse(key, value)?),
            "fx-rows" => fill!(fx_rows, parse(key, value)?),
            "seed" => fill!(seed, parse(key, value)?),
            "draws" => fill!(draws, parse(key, value)?),
            "level" => fill!(level, parse(key, value)?),
            "grid-size" => fill!(grid_size, parse(key, value)?),
            "beta-draws" => fill!(beta_draws, parse(key, value)?),
            "baseline" => fill!(baseline, parse(key, value)?),
            "standardize" => fill!(standardize, parse(key, value)?),
            "experiment" => fill!(experiment, value.to_string()),
            "n" => fill!(n, parse(key, value)?),
            "config" => return Err(CliError::Config("config files cannot include other config files".into())),
            other => return Err(CliError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
        value.as_ref().ok_or_else(|| CliError::Config(format!("--{flag} is required")))
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        Ok(Self::require(&self.out, "out")?.as_path())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Range checks that do not depend on the data.
    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("pt-sd", self.pt_sd),
            ("pt-alpha", self.pt_alpha),
            ("dpm-alpha", self.dpm_alpha),
            ("dpm-kappa", self.dpm_kappa),
            ("dpm-nu", self.dpm_nu),
            ("dpm-psi", self.dpm_psi),
            ("prior-var", self.prior_var),
        ];
        for (flag, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(CliError::Config(format!("--{flag} must be positive, got {v}")));
                }
            }
        }
        if let Some(l) = self.level {
            if !(l > 0.0 && l < 1.0) {
                return Err(CliError::Config(format!("--level must lie in (0, 1), got {l}")));
            }
        }
        if self.draws == Some(0) || self.beta_draws == Some(0) {
            return Err(CliError::Config("--draws and --beta-draws must be at least 1".into()));
        }
        if let Some(d) = self.pt_depth {
            if !(1..=30).contains(&d) {
                return Err(CliError::Config(format!("--pt-depth must be in 1..=30, got {d}")));
            }
        }
        Ok(())
    }
}
