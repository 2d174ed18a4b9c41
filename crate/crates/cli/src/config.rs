//! The JSON run configuration and flag overrides.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sgs_core::{DistillConfig, EvalConfig, InitStrategy, Protocol, ToySpec};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdgSettings {
    pub source_domain: usize,
    pub k: usize,
}

impl Default for SdgSettings {
    fn default() -> Self {
        SdgSettings {
            source_domain: 0,
            k: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub s_list: Vec<usize>,
    pub trials: usize,
    /// Phase-noise half-width of the attenuation model; pi is uniform phase.
    pub half_width: f64,
    pub mag_min: f64,
    pub mag_max: f64,
    pub sweep_half_widths: Vec<f64>,
    pub sweep_domains: usize,
    pub sweep_trials: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            s_list: vec![4, 16, 64, 256, 1024],
            trials: 2000,
            half_width: PI,
            mag_min: 1.0,
            mag_max: 1.0,
            sweep_half_widths: vec![0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0, PI],
            sweep_domains: 100_000,
            sweep_trials: 2,
        }
    }
}

/// Everything a subcommand reads; written back out as the resolved config.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the generated toy data when no dataset file is given.
    pub data_seed: u64,
    pub toy: ToySpec,
    pub distill: DistillConfig,
    pub eval: EvalConfig,
    pub protocol: Protocol,
    pub sdg: SdgSettings,
    pub oracle: OracleSettings,
    /// Run the plain distribution-matching loop instead of surgery.
    pub dm_only: bool,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.toy.validate()?;
        self.distill.validate()?;
        self.eval.validate()?;
        if self.sdg.k < 2 {
            return Err(CliError::Usage(format!(
                "k must be >= 2, got {}",
                self.sdg.k
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Short stable tag for output names.
    pub fn tag(&self) -> Result<String, CliError> {
        Ok(sgs_core::eval::config_hash(self)?[..12].to_string())
    }
}

/// Flag values that override the config file when present.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Seed for data generation, distillation and evaluation runs
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "lambda-c")]
    pub lambda_c: Option<f64>,
    #[arg(long = "lambda-d")]
    pub lambda_d: Option<f64>,
    #[arg(long)]
    pub ipc: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_parser = parse_init)]
    pub init: Option<InitStrategy>,
    #[arg(long, value_parser = parse_protocol)]
    pub protocol: Option<Protocol>,
    /// Number of pseudo-domains for the single-source protocol
    #[arg(long)]
    pub k: Option<usize>,
    /// Held-out domains: `all` or a comma list
    #[arg(long)]
    pub targets: Option<String>,
    /// Evaluation runs per target
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Plain distribution matching without surgery
    #[arg(long = "dm-only")]
    pub dm_only: bool,
}

fn parse_init(s: &str) -> Result<InitStrategy, String> {
    match s {
        "noise" => Ok(InitStrategy::Noise),
        "random" => Ok(InitStrategy::Random),
        "uniform" => Ok(InitStrategy::Uniform),
        _ => Err(format!("expected noise, random or uniform, got {s}")),
    }
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    match s.to_ascii_lowercase().as_str() {
        "mdg" => Ok(Protocol::Mdg),
        "sdg" => Ok(Protocol::Sdg),
        "id" => Ok(Protocol::Id),
        _ => Err(format!("expected mdg, sdg or id, got {s}")),
    }
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("cannot parse list item {v:?}")))
        })
        .collect()
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(seed) = self.seed {
            cfg.data_seed = seed;
            cfg.distill.seed = seed;
            cfg.eval.base_seed = seed;
        }
        if let Some(v) = self.lambda_c {
            cfg.distill.lambda_c = v;
        }
        if let Some(v) = self.lambda_d {
            cfg.distill.lambda_d = v;
        }
        if let Some(v) = self.ipc {
            cfg.distill.ipc = v;
        }
        if let Some(v) = self.iters {
            cfg.distill.iterations = v;
        }
        if let Some(v) = self.eta {
            cfg.distill.eta = v;
        }
        if let Some(v) = self.epsilon {
            cfg.distill.epsilon = v;
        }
        if let Some(v) = self.init {
            cfg.distill.init = v;
        }
        if let Some(v) = self.protocol {
            cfg.protocol = v;
        }
        if let Some(v) = self.k {
            cfg.sdg.k = v;
        }
        if let Some(t) = &self.targets {
            cfg.eval.targets = if t == "all" {
                Vec::new()
            } else {
                parse_list(t)?
            };
        }
        if let Some(v) = self.runs {
            cfg.eval.runs = v;
        }
        if let Some(v) = self.epochs {
            cfg.eval.epochs = v;
        }
        if self.dm_only {
            cfg.dm_only = true;
        }
        Ok(())
    }
}
