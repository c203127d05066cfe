//! Flat JSON config files merged with command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every documented key. Config files use the same names as the long flags,
/// with `_` in place of `-`.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Sequence length.
    #[arg(long)]
    pub ell: Option<usize>,
    /// Population size.
    #[arg(long)]
    pub m: Option<usize>,
    /// Per-locus mutation probability.
    #[arg(long)]
    pub q: Option<f64>,
    /// Scaled mutation rate, sets q = a / ell.
    #[arg(long)]
    pub a: Option<f64>,
    /// Selective advantage of the master sequence.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Alphabet size.
    #[arg(long)]
    pub kappa: Option<usize>,
    /// Number of tracked classes beyond the master class.
    #[arg(long = "K")]
    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Events per replica, burn-in included.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long = "burn-in")]
    #[serde(alias = "burn-in")]
    pub burn_in: Option<u64>,
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Events between recorded samples.
    #[arg(long)]
    pub thin: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Result file format: csv or json.
    #[arg(long)]
    pub format: Option<String>,

    /// Largest a on the curve or grid.
    #[arg(long = "a-max")]
    #[serde(alias = "a-max")]
    pub a_max: Option<f64>,
    /// Largest alpha on the phase grid.
    #[arg(long = "alpha-max")]
    #[serde(alias = "alpha-max")]
    pub alpha_max: Option<f64>,
    /// Classes after the master class on the quasispecies curve.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Points on the quasispecies curve.
    #[arg(long)]
    pub points: Option<usize>,
    /// Grid points per axis of the phase diagram.
    #[arg(long)]
    pub grid: Option<usize>,
    /// occupancy or full.
    #[arg(long)]
    pub chain: Option<String>,
    /// Start state: master or exit (simulate), exit, upper or lower (persistence).
    #[arg(long)]
    pub start: Option<String>,
    /// lower or upper.
    #[arg(long)]
    pub theta: Option<String>,
    /// Class analysed by bd-analyze, defaults to K.
    #[arg(long)]
    pub class: Option<usize>,
    /// discovery or persistence.
    #[arg(long)]
    pub which: Option<String>,
    /// Step cap per hitting-time replica.
    #[arg(long)]
    pub cap: Option<u64>,
    /// exact or mc.
    #[arg(long)]
    pub mode: Option<String>,
    /// Renewal cycles in mc mode.
    #[arg(long)]
    pub cycles: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        $(if $top.$f.is_some() { $base.$f = $top.$f.clone(); })*
    };
}

impl Settings {
    /// `self` with every key set in `flags` replaced.
    pub fn overridden_by(mut self, flags: &Settings) -> Settings {
        overlay!(
            self, flags, ell, m, q, a, sigma, kappa, k, seed, steps, burn_in, replicas, thin, output, format,
            a_max, alpha_max, classes, points, grid, chain, start, theta, class, which, cap, mode, cycles
        );
        self
    }
}

/// Parses a config file. An empty or all-blank file is an empty config.
pub fn load_config(path: &Path) -> Result<Settings, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
}

pub fn parse_config(text: &str) -> Result<Settings, String> {
    if text.trim().is_empty() {
        return Ok(Settings::default());
    }
    serde_json::from_str(text).map_err(|e| e.to_string())
}
