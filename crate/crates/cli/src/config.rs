//! Run configuration: JSON file, demo presets and flag overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sgmc::io::OutputFormat;
use sgmc::solver::SamplerConfig;

use crate::CliError;

/// Everything needed to reproduce one experiment. Keys are flat; sampler
/// hyperparameters sit next to the model and run settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: Option<String>,
    /// Regression width.
    pub dim: Option<usize>,
    /// Synthetic dataset size.
    pub observations: Option<usize>,
    /// Standard deviation of generated regression inputs.
    pub input_scale: Option<f64>,
    /// Parameters that generate the synthetic data (flattened); model default if absent.
    pub truth: Option<Vec<f64>>,
    /// Initial sample (flattened); model default if absent.
    pub init: Option<Vec<f64>>,
    /// CSV file replacing the synthetic data; columns `y` plus `x0, x1, …` for inputs.
    pub data_csv: Option<PathBuf>,
    pub data_seed: Option<u64>,

    pub sampler: Option<String>,
    #[serde(flatten)]
    pub params: SamplerConfig,

    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub output: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Demo {
    Gaussian,
    Regression,
    Mixture,
}

impl FromStr for Demo {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "gaussian" => Ok(Demo::Gaussian),
            "regression" => Ok(Demo::Regression),
            "mixture" => Ok(Demo::Mixture),
            other => Err(CliError::config(
                "demo",
                format!("unknown demo `{other}`; expected gaussian, regression or mixture"),
            )),
        }
    }
}

impl Demo {
    pub fn config(self) -> RunConfig {
        let base = RunConfig {
            seed: Some(0),
            chains: Some(1),
            ..Default::default()
        };
        match self {
            // conjugate Gaussian mean with a decaying SGLD step
            Demo::Gaussian => RunConfig {
                model: Some("gaussian_mean".into()),
                observations: Some(200),
                sampler: Some("sgld".into()),
                params: SamplerConfig {
                    iterations: Some(100_000),
                    burn_in: Some(20_000),
                    first_step_size: Some(0.01),
                    last_step_size: Some(0.0005),
                    gamma: Some(0.33),
                    batch_size: Some(32),
                    ..Default::default()
                },
                ..base
            },
            // pSGLD on the four-weight regression
            Demo::Regression => RunConfig {
                model: Some("linreg_sigma".into()),
                dim: Some(4),
                observations: Some(1_000),
                input_scale: Some(20.0),
                sampler: Some("psgld".into()),
                params: SamplerConfig {
                    iterations: Some(10_000),
                    burn_in: Some(2_000),
                    selections: Some(1_000),
                    first_step_size: Some(0.05),
                    last_step_size: Some(0.001),
                    gamma: Some(0.33),
                    batch_size: Some(500),
                    ..Default::default()
                },
                ..base
            },
            // replica exchange across the two modes at ±3
            Demo::Mixture => RunConfig {
                model: Some("mixture_1d".into()),
                observations: Some(64),
                sampler: Some("resgld".into()),
                params: SamplerConfig {
                    iterations: Some(100_000),
                    burn_in: Some(1_000),
                    step_size: Some(0.03),
                    batch_size: Some(8),
                    tau_high: Some(10.0),
                    swap_interval: Some(50),
                    ..Default::default()
                },
                ..base
            },
        }
    }
}

/// Keys accepted in a config file.
pub fn known_keys() -> BTreeSet<String> {
    match serde_json::to_value(RunConfig::default()) {
        Ok(serde_json::Value::Object(map)) => map.keys().cloned().collect(),
        _ => BTreeSet::new(),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::config("config", format!("invalid JSON: {e}")))?;
        let serde_json::Value::Object(map) = &value else {
            return Err(CliError::config("config", "expected a JSON object"));
        };
        let known = known_keys();
        if let Some(unknown) = map.keys().find(|k| !known.contains(*k)) {
            return Err(CliError::config(unknown.clone(), "unknown configuration key"));
        }
        serde_json::from_value(value).map_err(|e| CliError::config("config", e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merge(self, over: RunConfig) -> RunConfig {
        let mut base = serde_json::to_value(self).expect("config serializes");
        let top = serde_json::to_value(over).expect("config serializes");
        if let (serde_json::Value::Object(b), serde_json::Value::Object(t)) = (&mut base, top) {
            for (k, v) in t {
                if !v.is_null() {
                    b.insert(k, v);
                }
            }
        }
        serde_json::from_value(base).expect("merged config deserializes")
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn chains(&self) -> usize {
        self.chains.unwrap_or(1)
    }

    pub fn format(&self) -> OutputFormat {
        self.format.unwrap_or(OutputFormat::Jsonl)
    }

    pub fn output(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("sgmc_output"))
    }

    /// Canonical JSON used for the digest and the summary echo.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// File name for one chain's samples.
pub fn samples_file_name(chain: usize, chains: usize, format: OutputFormat) -> String {
    let ext = format.extension().unwrap_or("jsonl");
    if chains == 1 {
        format!("samples.{ext}")
    } else {
        format!("samples_chain{chain}.{ext}")
    }
}
