use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use sgmc::solver::SamplerConfig;
use sgmc_cli::{compare_command, run_command, CliError, Demo, ReferenceKind, RunConfig};

#[derive(Parser)]
#[command(name = "sgmc", version, about = "Stochastic-gradient MCMC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment and write samples plus summary.json.
    Run(Box<RunArgs>),
    /// Compare a finished run against a reference.
    Compare(CompareArgs),
}

/// Every config key has a flag of the same name (dashes for underscores).
#[derive(Args, Default)]
struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a preset: gaussian, regression or mixture.
    #[arg(long)]
    demo: Option<String>,

    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    observations: Option<usize>,
    #[arg(long)]
    input_scale: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    truth: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    init: Option<Vec<f64>>,
    #[arg(long)]
    data_csv: Option<PathBuf>,
    #[arg(long)]
    data_seed: Option<u64>,

    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    selections: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    first_step_size: Option<f64>,
    #[arg(long)]
    last_step_size: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    target_accept: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// draw_replacement, shuffle or shuffle_in_epochs
    #[arg(long)]
    batch_strategy: Option<String>,
    #[arg(long)]
    cache_count: Option<usize>,
    #[arg(long)]
    exact_gradients: Option<bool>,
    #[arg(long)]
    rms_prop: Option<bool>,
    #[arg(long)]
    rms_decay: Option<f64>,
    #[arg(long)]
    rms_regularizer: Option<f64>,
    #[arg(long)]
    friction: Option<f64>,
    #[arg(long)]
    noise_estimate: Option<f64>,
    #[arg(long)]
    leapfrog_steps: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    obabo_steps: Option<usize>,
    #[arg(long)]
    ou_friction: Option<f64>,
    #[arg(long)]
    tau_high: Option<f64>,
    #[arg(long)]
    swap_interval: Option<usize>,
    #[arg(long)]
    correction_factor: Option<f64>,

    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// jsonl or csv
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    /// Run directory containing summary.json.
    #[arg(long)]
    run: PathBuf,
    /// analytic, rwmh or run
    #[arg(long, default_value = "analytic")]
    reference: String,
    /// Second run directory for `--reference run`.
    #[arg(long)]
    reference_dir: Option<PathBuf>,
    #[arg(long, default_value_t = sgmc_cli::compare::DEFAULT_ORACLE_STEPS)]
    oracle_steps: usize,
    #[arg(long, default_value_t = sgmc_cli::compare::DEFAULT_ORACLE_BURN_IN)]
    oracle_burn_in: usize,
}

fn parse_enum<T: DeserializeOwned>(value: Option<String>, field: &str) -> Result<Option<T>, CliError> {
    value
        .map(|v| serde_json::from_value(serde_json::Value::String(v.clone())))
        .transpose()
        .map_err(|e| CliError::config(field, e.to_string()))
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, CliError> {
        let mut config = match &self.demo {
            Some(name) => name.parse::<Demo>()?.config(),
            None => RunConfig::default(),
        };
        if let Some(path) = &self.config {
            config = config.merge(RunConfig::from_path(path)?);
        }
        let flags = RunConfig {
            model: self.model,
            dim: self.dim,
            observations: self.observations,
            input_scale: self.input_scale,
            truth: self.truth,
            init: self.init,
            data_csv: self.data_csv,
            data_seed: self.data_seed,
            sampler: self.sampler,
            params: SamplerConfig {
                iterations: self.iterations,
                burn_in: self.burn_in,
                selections: self.selections,
                step_size: self.step_size,
                first_step_size: self.first_step_size,
                last_step_size: self.last_step_size,
                gamma: self.gamma,
                target_accept: self.target_accept,
                temperature: self.temperature,
                batch_size: self.batch_size,
                batch_strategy: parse_enum(self.batch_strategy, "batch_strategy")?,
                cache_count: self.cache_count,
                exact_gradients: self.exact_gradients,
                rms_prop: self.rms_prop,
                rms_decay: self.rms_decay,
                rms_regularizer: self.rms_regularizer,
                friction: self.friction,
                noise_estimate: self.noise_estimate,
                leapfrog_steps: self.leapfrog_steps,
                beta: self.beta,
                obabo_steps: self.obabo_steps,
                ou_friction: self.ou_friction,
                tau_high: self.tau_high,
                swap_interval: self.swap_interval,
                correction_factor: self.correction_factor,
            },
            seed: self.seed,
            chains: self.chains,
            output: self.output,
            format: parse_enum(self.format, "format")?,
        };
        Ok(config.merge(flags))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let config = args.into_config()?;
            let summary = run_command(&config)?;
            println!(
                "{} on {}: {} samples in {:.2}s -> {}",
                summary.sampler,
                summary.model,
                summary.sample_count,
                summary.wall_time_seconds,
                config.output().display()
            );
            for v in &summary.variables {
                println!(
                    "  {:<14} mean {:>10.5}  std {:>9.5}  ess {:>9.1}",
                    v.name, v.weighted_mean, v.weighted_std, v.ess
                );
            }
            Ok(())
        }
        Command::Compare(args) => {
            let reference = match args.reference.as_str() {
                "analytic" => ReferenceKind::Analytic,
                "rwmh" => ReferenceKind::Rwmh {
                    steps: args.oracle_steps,
                    burn_in: args.oracle_burn_in,
                },
                "run" => ReferenceKind::Run(
                    args.reference_dir
                        .ok_or_else(|| CliError::config("reference_dir", "required with --reference run"))?,
                ),
                other => return Err(CliError::config("reference", format!("unknown reference `{other}`"))),
            };
            let report = compare_command(&args.run, &reference)?;
            print!("{}", report.table());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
