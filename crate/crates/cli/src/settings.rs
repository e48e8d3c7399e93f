//! Numerical settings shared by the config file and command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use clap::Args;
use hybrid_restore::noise::GibbsConfig;
use hybrid_restore::pipeline::PipelineConfig;
use serde::Deserialize;

use crate::UsageError;

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PipelineSettings {
    /// Half-width t of the scanning window (side 2t+1)
    #[arg(long)]
    pub window_half_width: Option<usize>,
    /// Lattice spacing between window centres
    #[arg(long)]
    pub stride: Option<usize>,
    /// Family-wise error level for the Holm procedure
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Spread of the tapered bump in the support function
    #[arg(long)]
    pub tau: Option<f64>,
    /// Edge-field level above which edge lines are drawn
    #[arg(long)]
    pub edge_threshold: Option<f64>,
    /// Comma-separated smoothing parameters to search
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub lambda_grid: Option<Vec<f64>>,
    /// Fixed smoothing parameter (skips the search)
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Resolution of the reported partition level
    #[arg(long)]
    pub t_grid_step: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct NoiseSettings {
    /// Gibbs sweeps discarded before sampling
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Sweeps between retained draws
    #[arg(long)]
    pub thinning: Option<usize>,
    /// Number of replicates per multiplier
    #[arg(long)]
    pub replicates: Option<usize>,
}

/// Keys accepted in a config file.
const KNOWN_KEYS: &[&str] = &[
    "window-half-width",
    "stride",
    "alpha",
    "tau",
    "edge-threshold",
    "lambda-grid",
    "lambda",
    "t-grid-step",
    "seed",
    "burn-in",
    "thinning",
    "replicates",
];

#[derive(Debug, Clone, Default)]
pub struct FileSettings {
    pub pipeline: PipelineSettings,
    pub noise: NoiseSettings,
}

pub fn load(path: Option<&Path>) -> Result<FileSettings> {
    let Some(path) = path else {
        return Ok(FileSettings::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    parse(&text).with_context(|| format!("in config file {}", path.display()))
}

pub fn parse(text: &str) -> Result<FileSettings> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| UsageError(e.to_string()))?;
    if let Some(key) = table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(UsageError(format!("unknown config key {key:?}")).into());
    }
    let typed = |e: toml::de::Error| UsageError(e.to_string());
    Ok(FileSettings {
        pipeline: table.clone().try_into().map_err(typed)?,
        noise: table.try_into().map_err(typed)?,
    })
}

impl PipelineSettings {
    /// Defaults, then `file`, then `self`.
    pub fn resolve(&self, file: &PipelineSettings) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone().or(file.$field.clone()) {
                    cfg.$field = v;
                }
            )*};
        }
        take!(window_half_width, stride, alpha, tau, edge_threshold, lambda_grid, t_grid_step, seed);
        cfg.lambda = self.lambda.or(file.lambda);
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

impl NoiseSettings {
    pub fn gibbs(&self, file: &NoiseSettings, seed: u64, multiplier: u32) -> Result<GibbsConfig> {
        let mut cfg = GibbsConfig {
            sample_size_multiplier: multiplier,
            seed,
            ..Default::default()
        };
        if let Some(v) = self.burn_in.or(file.burn_in) {
            cfg.burn_in = v;
        }
        if let Some(v) = self.thinning.or(file.thinning) {
            cfg.thinning = v;
        }
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn replicates(&self, file: &NoiseSettings, default: usize) -> usize {
        self.replicates.or(file.replicates).unwrap_or(default)
    }
}
