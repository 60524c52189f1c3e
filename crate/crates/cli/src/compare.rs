//! `sgmc compare`: sampler moments against a closed form, an oracle run or another run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sgmc::diagnostics::weighted_moments;
use sgmc::io::{read_samples, SampleStore};
use sgmc::models::{rwmh_reference, Reference};
use sgmc::RandomKey;

use crate::run::{write_json, Experiment, RunSummary};
use crate::{CliError, Result};

pub const DEFAULT_ORACLE_STEPS: usize = 200_000;
pub const DEFAULT_ORACLE_BURN_IN: usize = 5_000;

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceKind {
    /// The model's closed-form posterior marginals.
    Analytic,
    /// A tuned full-batch random-walk Metropolis run, started at the generating parameters.
    Rwmh { steps: usize, burn_in: usize },
    /// Samples of another run directory.
    Run(PathBuf),
}

impl ReferenceKind {
    pub fn rwmh() -> Self {
        ReferenceKind::Rwmh {
            steps: DEFAULT_ORACLE_STEPS,
            burn_in: DEFAULT_ORACLE_BURN_IN,
        }
    }

    fn label(&self) -> String {
        match self {
            ReferenceKind::Analytic => "analytic".into(),
            ReferenceKind::Rwmh { .. } => "rwmh".into(),
            ReferenceKind::Run(dir) => format!("run:{}", dir.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableComparison {
    pub name: String,
    pub sampler_mean: f64,
    pub sampler_std: f64,
    pub reference_mean: f64,
    pub reference_std: f64,
    /// `|mean_sampler − mean_ref| / std_ref`.
    pub mean_discrepancy: f64,
    /// `std_sampler / std_ref`.
    pub std_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub reference: String,
    /// Whether sampler moments were weighted by step size.
    pub weighted: bool,
    pub sample_count: usize,
    pub variables: Vec<VariableComparison>,
}

impl CompareReport {
    pub fn variable(&self, name: &str) -> Option<&VariableComparison> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "reference: {}  (samples: {}, weighted: {})",
            self.reference, self.sample_count, self.weighted
        );
        let _ = writeln!(
            out,
            "{:<14} {:>12} {:>12} {:>12} {:>12} {:>10} {:>10}",
            "variable", "mean", "std", "ref mean", "ref std", "|Δ|/std", "std ratio"
        );
        for v in &self.variables {
            let _ = writeln!(
                out,
                "{:<14} {:>12.5} {:>12.5} {:>12.5} {:>12.5} {:>10.4} {:>10.4}",
                v.name,
                v.sampler_mean,
                v.sampler_std,
                v.reference_mean,
                v.reference_std,
                v.mean_discrepancy,
                v.std_ratio
            );
        }
        out
    }
}

/// Column names with `(mean, std)` per column.
type Moments = (Vec<String>, Vec<(f64, f64)>);

/// A run's samples as loaded back from disk.
struct LoadedRun {
    summary: RunSummary,
    experiment: Experiment,
    stores: Vec<SampleStore>,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let summary = RunSummary::read(dir)?;
    let experiment = Experiment::from_config(&summary.config)?;
    let format = summary.config.format();
    let layout = Arc::clone(experiment.model.layout());
    let stores = summary
        .chains
        .iter()
        .map(|c| {
            Ok(read_samples(
                &dir.join(&c.samples_file),
                format,
                Arc::clone(&layout),
                c.chain,
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedRun {
        summary,
        experiment,
        stores,
    })
}

impl LoadedRun {
    /// Thinned runs keep uniformly weighted samples; otherwise weight by step size.
    fn weighted(&self) -> bool {
        self.summary.config.params.selections.is_none()
    }

    fn moments(&self) -> Result<Moments> {
        let pooled = SampleStore::pooled(&self.stores)?;
        let weights = pooled.step_sizes().to_vec();
        let names = pooled.layout().column_names();
        let moments = (0..names.len())
            .map(|j| {
                Ok(weighted_moments(
                    &pooled.column(j),
                    self.weighted().then_some(weights.as_slice()),
                )?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((names, moments))
    }

    fn sample_count(&self) -> usize {
        self.stores.iter().map(SampleStore::sample_count).sum()
    }
}

fn discrepancy(delta: f64, reference_std: f64) -> f64 {
    if delta == 0.0 {
        0.0
    } else {
        delta.abs() / reference_std
    }
}

fn ratio(std: f64, reference_std: f64) -> f64 {
    if std == reference_std {
        1.0
    } else {
        std / reference_std
    }
}

/// Compare the run in `run_dir` against `reference` and write `compare_report.json` there.
pub fn compare_command(run_dir: &Path, reference: &ReferenceKind) -> Result<CompareReport> {
    let run = load_run(run_dir)?;
    let (names, sampler) = run.moments()?;
    let exp = &run.experiment;

    let (ref_names, reference_moments): Moments = match reference {
        ReferenceKind::Analytic => match exp.model.reference(&exp.dataset)? {
            Reference::Analytic { mean, std } => (names.clone(), mean.into_iter().zip(std).collect()),
            Reference::OracleOnly => {
                return Err(CliError::config(
                    "reference",
                    format!("{} has no closed-form posterior; use rwmh", exp.kind),
                ))
            }
        },
        &ReferenceKind::Rwmh { steps, burn_in } => {
            let key = RandomKey::new(run.summary.config.seed()).fold_in(2);
            let out = rwmh_reference(
                exp.model.as_ref(),
                &exp.dataset,
                exp.truth.flatten(),
                steps,
                burn_in,
                key,
            )?;
            let moments = (0..names.len())
                .map(|j| Ok(weighted_moments(&out.column(j), None)?))
                .collect::<Result<Vec<_>>>()?;
            (names.clone(), moments)
        }
        ReferenceKind::Run(dir) => {
            let other = load_run(dir)?;
            other.moments()?
        }
    };
    if ref_names != names || reference_moments.len() != names.len() {
        return Err(CliError::config(
            "reference",
            format!("variable mismatch: run has {names:?}, reference has {ref_names:?}"),
        ));
    }

    let variables = names
        .into_iter()
        .zip(sampler)
        .zip(reference_moments)
        .map(|((name, (m, s)), (rm, rs))| VariableComparison {
            name,
            sampler_mean: m,
            sampler_std: s,
            reference_mean: rm,
            reference_std: rs,
            mean_discrepancy: discrepancy(m - rm, rs),
            std_ratio: ratio(s, rs),
        })
        .collect();
    let report = CompareReport {
        schema_version: crate::run::SCHEMA_VERSION,
        reference: reference.label(),
        weighted: run.weighted(),
        sample_count: run.sample_count(),
        variables,
    };
    write_json(&run_dir.join("compare_report.json"), &report)?;
    Ok(report)
}
