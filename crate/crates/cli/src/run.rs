//! `sgmc run`: build model, data and sampler from a config and run the chains.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sgmc::data::Dataset;
use sgmc::diagnostics::{effective_sample_size, weighted_moments};
use sgmc::io::{finalize_results, OutputFormat, SampleMetadata, SampleStore};
use sgmc::models::{BuiltinKind, BuiltinModel, LinregSigma};
use sgmc::potential::{LogDensityModel, Potential};
use sgmc::solver::{build_sampler, ChainResult, SamplerBundle, SamplerKind};
use sgmc::{ParameterVector, RandomKey};

use crate::config::{samples_file_name, RunConfig};
use crate::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Model, data and starting point resolved from a config.
pub struct Experiment {
    pub kind: BuiltinKind,
    pub model: Arc<dyn BuiltinModel>,
    pub dataset: Arc<Dataset>,
    pub truth: ParameterVector,
    pub init: ParameterVector,
}

impl std::fmt::Debug for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Experiment")
            .field("model", &self.kind)
            .field("observations", &self.dataset.len())
            .finish()
    }
}

fn input_width(kind: BuiltinKind, dim: usize) -> Option<usize> {
    match kind {
        BuiltinKind::LinregSigma => Some(dim),
        BuiltinKind::Logreg2d => Some(2),
        BuiltinKind::GaussianMean | BuiltinKind::Mixture1d => None,
    }
}

fn load_csv(path: &Path, width: Option<usize>) -> Result<Dataset> {
    let mut columns = vec![("y".to_string(), vec!["y".to_string()])];
    if let Some(d) = width {
        columns.push(("x".to_string(), (0..d).map(|j| format!("x{j}")).collect()));
    }
    Ok(Dataset::from_csv(path, &columns)?)
}

fn vector(model: &dyn BuiltinModel, values: &[f64], field: &str) -> Result<ParameterVector> {
    ParameterVector::structure(Arc::clone(model.layout()), values.to_vec())
        .map_err(|e| CliError::config(field, e.to_string()))
}

impl Experiment {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        let name = config
            .model
            .as_deref()
            .ok_or_else(|| CliError::config("model", "required"))?;
        let kind = BuiltinKind::from_str(name)?;
        let dim = config.dim.unwrap_or(4);
        if dim == 0 {
            return Err(CliError::config("dim", "must be at least 1"));
        }

        let csv = match &config.data_csv {
            Some(path) => Some(load_csv(path, input_width(kind, dim))?),
            None => None,
        };
        let observations = match (&csv, config.observations) {
            (Some(ds), _) => ds.len(),
            (None, Some(n)) if n > 0 => n,
            (None, Some(_)) => return Err(CliError::config("observations", "must be at least 1")),
            (None, None) => return Err(CliError::config("observations", "required unless data_csv is given")),
        };

        let model: Arc<dyn BuiltinModel> = match (kind, config.input_scale) {
            (BuiltinKind::LinregSigma, Some(s)) => Arc::new(
                LinregSigma::new(dim)?
                    .with_input_scale(s)
                    .map_err(|e| CliError::config("input_scale", e.to_string()))?,
            ),
            (_, Some(_)) => return Err(CliError::config("input_scale", format!("not used by {kind}"))),
            _ => kind.build(Some(dim), observations)?,
        };

        let truth = match &config.truth {
            Some(t) => vector(model.as_ref(), t, "truth")?,
            None => model.default_truth(),
        };
        let init = match &config.init {
            Some(t) => vector(model.as_ref(), t, "init")?,
            None => model.default_init(),
        };
        let dataset = match csv {
            Some(ds) => ds,
            None => {
                let key = RandomKey::new(config.data_seed.unwrap_or(config.seed()));
                model.generate(key, observations, &truth)?
            }
        };
        Ok(Self {
            kind,
            model,
            dataset: Arc::new(dataset),
            truth,
            init,
        })
    }

    pub fn potential(&self) -> Result<Potential> {
        let model: Arc<dyn LogDensityModel> = self.model.clone();
        Ok(Potential::new(model, Arc::clone(&self.dataset), self.dataset.len())?)
    }
}

fn sampler_kind(config: &RunConfig) -> Result<SamplerKind> {
    let name = config
        .sampler
        .as_deref()
        .ok_or_else(|| CliError::config("sampler", "required"))?;
    Ok(SamplerKind::from_str(name)?)
}

/// Per-chain random keys; chain `i` sees the same key whatever the chain count.
pub fn chain_keys(seed: u64, chains: usize) -> Vec<RandomKey> {
    let root = RandomKey::new(seed).fold_in(1);
    (0..chains as u64).map(|i| root.fold_in(i)).collect()
}

fn build_chain(config: &RunConfig, exp: &Experiment, kind: SamplerKind, key: RandomKey) -> Result<SamplerBundle> {
    Ok(build_sampler(kind, &config.params, exp.potential()?, &exp.init, key)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub samples_file: String,
    pub sample_count: usize,
    pub acceptance_rate: Option<f64>,
    pub mean_accept_prob: Option<f64>,
    pub rounds: usize,
    pub gradient_evaluations: u64,
    pub runtime_seconds: f64,
    pub error: Option<String>,
}

/// JSON has no NaN/inf; serde writes them as `null`, read back here as NaN.
fn nullable_f64<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Moments of one flattened column over all chains. Non-finite values (a diverged
/// chain) appear as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub name: String,
    #[serde(deserialize_with = "nullable_f64")]
    pub mean: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub std: f64,
    /// Weighted by the step size at which each sample was drawn.
    #[serde(deserialize_with = "nullable_f64")]
    pub weighted_mean: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub weighted_std: f64,
    /// Sum of per-chain effective sample sizes.
    #[serde(deserialize_with = "nullable_f64")]
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub model: String,
    pub sampler: String,
    pub config_digest: String,
    pub config: RunConfig,
    pub sample_count: usize,
    /// Mean over chains of the per-chain acceptance (or swap) rate.
    pub acceptance_rate: Option<f64>,
    pub chains: Vec<ChainSummary>,
    pub variables: Vec<VariableSummary>,
    pub wall_time_seconds: f64,
}

impl RunSummary {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("summary.json");
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::config("summary", format!("{}: {e}", path.display())))
    }

    pub fn variable(&self, name: &str) -> Option<&VariableSummary> {
        self.variables.iter().find(|v| v.name == name)
    }
}

/// Column summaries over a set of chains; `None` when fewer than two samples were kept.
pub fn summarize_columns(stores: &[SampleStore]) -> Result<Option<Vec<VariableSummary>>> {
    let pooled = SampleStore::pooled(stores)?;
    if pooled.sample_count() < 2 {
        return Ok(None);
    }
    let weights = pooled.step_sizes().to_vec();
    let names = pooled.layout().column_names();
    let mut out = Vec::with_capacity(names.len());
    for (j, name) in names.into_iter().enumerate() {
        let x = pooled.column(j);
        let (mean, std) = weighted_moments(&x, None)?;
        let (weighted_mean, weighted_std) = weighted_moments(&x, Some(&weights))?;
        let mut ess = 0.0;
        for s in stores.iter().filter(|s| s.sample_count() >= 2) {
            ess += effective_sample_size(&s.column(j))?;
        }
        out.push(VariableSummary {
            name,
            mean,
            std,
            weighted_mean,
            weighted_std,
            ess,
        });
    }
    Ok(Some(out))
}

fn chain_summary(chain: usize, file: String, r: &ChainResult) -> ChainSummary {
    ChainSummary {
        chain,
        samples_file: file,
        sample_count: r.sample_count,
        acceptance_rate: r.acceptance_rate,
        mean_accept_prob: r.mean_accept_prob,
        rounds: r.rounds,
        gradient_evaluations: r.gradient_evaluations,
        runtime_seconds: r.runtime.as_secs_f64(),
        error: r.error.as_ref().map(ToString::to_string),
    }
}

/// Validate, run every chain and write `samples*.{jsonl,csv}` plus `summary.json`
/// into the output directory.
///
/// A chain that fails numerically keeps the samples collected before the failure;
/// outputs are still written and the error is returned afterwards.
pub fn run_command(config: &RunConfig) -> Result<RunSummary> {
    let started = Instant::now();
    let format = config.format();
    if format == OutputFormat::Memory {
        return Err(CliError::config("format", "expected jsonl or csv"));
    }
    let chains = config.chains();
    if chains == 0 {
        return Err(CliError::config("chains", "must be at least 1"));
    }
    let kind = sampler_kind(config)?;
    let exp = Experiment::from_config(config)?;
    let keys = chain_keys(config.seed(), chains);
    // configuration problems surface before any sampling
    let first = build_chain(config, &exp, kind, keys[0])?;
    let sampler_name = first.solver.name().to_string();
    drop(first);

    let digest = config.digest();
    let metadata = SampleMetadata {
        sampler: sampler_name.clone(),
        seed: config.seed(),
        config_digest: digest.clone(),
    };
    let results: Vec<ChainResult> = keys
        .par_iter()
        .enumerate()
        .map(|(i, &key)| {
            let bundle = build_chain(config, &exp, kind, key)?;
            let store = SampleStore::new(Arc::clone(exp.model.layout()), i, metadata.clone());
            Ok(bundle.run(store)?)
        })
        .collect::<Result<_>>()?;

    let dir = config.output();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut chain_summaries = Vec::with_capacity(chains);
    for (i, r) in results.iter().enumerate() {
        let file = samples_file_name(i, chains, format);
        finalize_results(&r.store, format, Some(&dir.join(&file)))?;
        chain_summaries.push(chain_summary(i, file, r));
    }

    let stores: Vec<SampleStore> = results.iter().map(|r| r.store.clone()).collect();
    let variables = summarize_columns(&stores)?.unwrap_or_default();
    let rates: Vec<f64> = results.iter().filter_map(|r| r.acceptance_rate).collect();
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        model: exp.kind.as_str().to_string(),
        sampler: sampler_name,
        config_digest: digest,
        config: config.clone(),
        sample_count: results.iter().map(|r| r.sample_count).sum(),
        acceptance_rate: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
        chains: chain_summaries,
        variables,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("summary.json"), &summary)?;

    let failed = results
        .into_iter()
        .enumerate()
        .find_map(|(i, r)| r.error.map(|e| (i, e)));
    match failed {
        Some((chain, source)) => Err(CliError::ChainFailed { chain, source }),
        None => Ok(summary),
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
