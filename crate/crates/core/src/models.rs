//! Reference models with analytic gradients, their synthetic-data generators, a
//! full-batch random-walk Metropolis oracle and the posterior-predictive ensemble.

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::params::{Layout, ParameterVector};
use crate::potential::{exact_potential, exact_potential_value, fd_gradient, LogDensityModel};
use crate::random::RandomKey;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// What a sampler run can be checked against.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// Marginal posterior mean and standard deviation per flattened column.
    Analytic { mean: Vec<f64>, std: Vec<f64> },
    /// No closed form; compare against [`rwmh_oracle`].
    OracleOnly,
}

/// A built-in model: log density plus generative process and reference solution.
pub trait BuiltinModel: LogDensityModel {
    fn name(&self) -> &'static str;

    /// Parameters used to generate demo data.
    fn default_truth(&self) -> ParameterVector;

    /// A reasonable starting point for chains.
    fn default_init(&self) -> ParameterVector {
        ParameterVector::zeros(Arc::clone(self.layout()))
    }

    /// Draw `n` observations from the model's generative process at `truth`.
    fn generate(&self, key: RandomKey, n: usize, truth: &ParameterVector) -> Result<Dataset>;

    fn reference(&self, dataset: &Dataset) -> Result<Reference>;

    /// Model output for input `x` (ignored by models without inputs).
    fn predict(&self, theta: &[f64], x: &[f64]) -> f64;
}

fn check_generate(layout: &Layout, n: usize, truth: &ParameterVector) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument(
            "synthetic datasets need at least one observation".into(),
        ));
    }
    if **truth.layout() != *layout {
        return Err(Error::Layout("true parameters do not match the model layout".into()));
    }
    Ok(())
}

fn require_field(dataset: &Dataset, name: &str, row_len: usize) -> Result<()> {
    match dataset.array(name) {
        Some(a) if a.row_len() == row_len => Ok(()),
        Some(a) => Err(Error::Shape(format!(
            "field `{name}` has {} values per row, expected {row_len}",
            a.row_len()
        ))),
        None => Err(Error::Shape(format!("dataset lacks field `{name}`"))),
    }
}

/// `y_i ~ N(θ, 1)` with prior `θ ~ N(0, 10²)`.
#[derive(Debug, Clone)]
pub struct GaussianMean {
    layout: Arc<Layout>,
    prior_std: f64,
}

impl GaussianMean {
    pub fn new() -> Self {
        Self {
            layout: Layout::new([("theta", vec![])]).expect("valid layout"),
            prior_std: 10.0,
        }
    }

    /// Conjugate posterior `(mean, std)` for the given data.
    pub fn posterior(&self, dataset: &Dataset) -> Result<(f64, f64)> {
        require_field(dataset, "y", 1)?;
        let sum: f64 = dataset.observations().map(|o| o.scalar("y")).sum();
        let precision = 1.0 / (self.prior_std * self.prior_std) + dataset.len() as f64;
        Ok((sum / precision, precision.sqrt().recip()))
    }
}

impl Default for GaussianMean {
    fn default() -> Self {
        Self::new()
    }
}

impl LogDensityModel for GaussianMean {
    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn log_likelihood_and_score(&self, theta: &[f64], obs: &Observation<'_>, score: &mut [f64]) -> f64 {
        let r = obs.scalar("y") - theta[0];
        score[0] += r;
        -HALF_LN_2PI - 0.5 * r * r
    }

    fn log_prior_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.prior_std * self.prior_std;
        grad[0] -= theta[0] / v;
        -0.5 * theta[0] * theta[0] / v
    }

    fn check_data(&self, dataset: &Dataset) -> Result<()> {
        require_field(dataset, "y", 1)
    }
}

impl BuiltinModel for GaussianMean {
    fn name(&self) -> &'static str {
        "gaussian_mean"
    }

    fn default_truth(&self) -> ParameterVector {
        ParameterVector::structure(Arc::clone(&self.layout), vec![1.5]).expect("valid")
    }

    fn generate(&self, key: RandomKey, n: usize, truth: &ParameterVector) -> Result<Dataset> {
        check_generate(&self.layout, n, truth)?;
        let theta = truth.flatten()[0];
        let y = key.normal_vec(n, 1.0)?.into_iter().map(|e| theta + e).collect();
        Dataset::from_arrays([("y", vec![n], y)])
    }

    fn reference(&self, dataset: &Dataset) -> Result<Reference> {
        let (mean, std) = self.posterior(dataset)?;
        Ok(Reference::Analytic {
            mean: vec![mean],
            std: vec![std],
        })
    }

    fn predict(&self, theta: &[f64], _x: &[f64]) -> f64 {
        theta[0]
    }
}

/// `y = x·w + σ ε` with `σ = exp(log_sigma)`, a flat prior on `w` and the
/// exponential(1) prior on `σ`, i.e. `log p = −σ` up to a constant.
#[derive(Debug, Clone)]
pub struct LinregSigma {
    layout: Arc<Layout>,
    dim: usize,
    input_scale: f64,
}

impl LinregSigma {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("linear regression needs at least one weight".into()));
        }
        Ok(Self {
            layout: Layout::new([("w", vec![dim]), ("log_sigma", vec![])])?,
            dim,
            input_scale: 1.0,
        })
    }

    /// Generated inputs are drawn from `N(0, scale²)`.
    pub fn with_input_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Argument(format!("input scale must be positive, got {scale}")));
        }
        self.input_scale = scale;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl LogDensityModel for LinregSigma {
    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn log_likelihood_and_score(&self, theta: &[f64], obs: &Observation<'_>, score: &mut [f64]) -> f64 {
        let d = self.dim;
        let (w, log_sigma) = (&theta[..d], theta[d]);
        let x = obs.get("x");
        let r = obs.scalar("y") - dot(x, w);
        let inv_var = (-2.0 * log_sigma).exp();
        for i in 0..d {
            score[i] += r * x[i] * inv_var;
        }
        score[d] += -1.0 + r * r * inv_var;
        -HALF_LN_2PI - log_sigma - 0.5 * r * r * inv_var
    }

    fn log_prior_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let sigma = theta[self.dim].exp();
        grad[self.dim] -= sigma;
        -sigma
    }

    fn check_data(&self, dataset: &Dataset) -> Result<()> {
        require_field(dataset, "x", self.dim)?;
        require_field(dataset, "y", 1)
    }
}

impl BuiltinModel for LinregSigma {
    fn name(&self) -> &'static str {
        "linreg_sigma"
    }

    fn default_truth(&self) -> ParameterVector {
        let pattern = [0.5, -1.0, 0.25, 1.0];
        let mut values: Vec<f64> = (0..self.dim).map(|i| pattern[i % pattern.len()]).collect();
        values.push(0.5f64.ln());
        ParameterVector::structure(Arc::clone(&self.layout), values).expect("valid")
    }

    fn generate(&self, key: RandomKey, n: usize, truth: &ParameterVector) -> Result<Dataset> {
        check_generate(&self.layout, n, truth)?;
        let d = self.dim;
        let t = truth.flatten();
        let sigma = t[d].exp();
        let x = key.fold_in(0).normal_vec(n * d, self.input_scale)?;
        let noise = key.fold_in(1).normal_vec(n, sigma)?;
        let y = (0..n)
            .map(|i| dot(&x[i * d..(i + 1) * d], &t[..d]) + noise[i])
            .collect();
        Dataset::from_arrays([("x", vec![n, d], x), ("y", vec![n], y)])
    }

    fn reference(&self, _dataset: &Dataset) -> Result<Reference> {
        Ok(Reference::OracleOnly)
    }

    fn predict(&self, theta: &[f64], x: &[f64]) -> f64 {
        dot(x, &theta[..self.dim])
    }
}

/// Bernoulli observations with a logistic link on two features; prior `w ~ N(0, 10² I)`.
#[derive(Debug, Clone)]
pub struct Logreg2d {
    layout: Arc<Layout>,
    prior_std: f64,
}

impl Logreg2d {
    pub fn new() -> Self {
        Self {
            layout: Layout::new([("w", vec![2])]).expect("valid layout"),
            prior_std: 10.0,
        }
    }
}

impl Default for Logreg2d {
    fn default() -> Self {
        Self::new()
    }
}

impl LogDensityModel for Logreg2d {
    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn log_likelihood_and_score(&self, theta: &[f64], obs: &Observation<'_>, score: &mut [f64]) -> f64 {
        let x = obs.get("x");
        let y = obs.scalar("y");
        let z = dot(x, theta);
        let resid = y - sigmoid(z);
        for i in 0..2 {
            score[i] += resid * x[i];
        }
        y * z - softplus(z)
    }

    fn log_prior_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.prior_std * self.prior_std;
        for i in 0..2 {
            grad[i] -= theta[i] / v;
        }
        -0.5 * dot(theta, theta) / v
    }

    fn check_data(&self, dataset: &Dataset) -> Result<()> {
        require_field(dataset, "x", 2)?;
        require_field(dataset, "y", 1)
    }
}

impl BuiltinModel for Logreg2d {
    fn name(&self) -> &'static str {
        "logreg_2d"
    }

    fn default_truth(&self) -> ParameterVector {
        ParameterVector::structure(Arc::clone(&self.layout), vec![1.0, -0.5]).expect("valid")
    }

    fn generate(&self, key: RandomKey, n: usize, truth: &ParameterVector) -> Result<Dataset> {
        check_generate(&self.layout, n, truth)?;
        let w = truth.flatten();
        let x = key.fold_in(0).normal_vec(2 * n, 1.0)?;
        let mut rng = key.fold_in(1).rng();
        let y = (0..n)
            .map(|i| {
                let p = sigmoid(dot(&x[2 * i..2 * i + 2], w));
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Dataset::from_arrays([("x", vec![n, 2], x), ("y", vec![n], y)])
    }

    fn reference(&self, _dataset: &Dataset) -> Result<Reference> {
        Ok(Reference::OracleOnly)
    }

    fn predict(&self, theta: &[f64], x: &[f64]) -> f64 {
        sigmoid(dot(x, theta))
    }
}

/// Bimodal surrogate posterior: observation `i` contributes
/// `(1/N) log(½ N(θ; y_i − c, s²) + ½ N(θ; y_i + c, s²))`, so the full potential is
/// the negative mean over observations and has modes near `±c`. The prior is flat.
///
/// Data generated by [`BuiltinModel::generate`] come in `±` pairs, which makes the
/// potential exactly symmetric and both modes equally heavy.
#[derive(Debug, Clone)]
pub struct Mixture1d {
    layout: Arc<Layout>,
    separation: f64,
    scale: f64,
    observations: usize,
    jitter: f64,
}

impl Mixture1d {
    pub const DEFAULT_SEPARATION: f64 = 3.0;
    pub const DEFAULT_SCALE: f64 = 0.6;
    pub const DEFAULT_JITTER: f64 = 0.1;

    /// `observations` must equal the length of the dataset the model is used with.
    pub fn new(separation: f64, scale: f64, observations: usize) -> Result<Self> {
        if !(scale > 0.0) || !separation.is_finite() || observations == 0 {
            return Err(Error::Argument(
                "mixture needs a positive scale and at least one observation".into(),
            ));
        }
        Ok(Self {
            layout: Layout::new([("theta", vec![])])?,
            separation,
            scale,
            observations,
            jitter: Self::DEFAULT_JITTER,
        })
    }

    pub fn with_defaults(observations: usize) -> Result<Self> {
        Self::new(Self::DEFAULT_SEPARATION, Self::DEFAULT_SCALE, observations)
    }

    pub fn separation(&self) -> f64 {
        self.separation
    }

    fn component(&self, z: f64) -> f64 {
        // log N(z; 0, s²)
        -HALF_LN_2PI - self.scale.ln() - 0.5 * z * z / (self.scale * self.scale)
    }
}

impl LogDensityModel for Mixture1d {
    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn log_likelihood_and_score(&self, theta: &[f64], obs: &Observation<'_>, score: &mut [f64]) -> f64 {
        let y = obs.scalar("y");
        let za = theta[0] - (y - self.separation);
        let zb = theta[0] - (y + self.separation);
        let (la, lb) = (self.component(za), self.component(zb));
        let hi = la.max(lb);
        let (wa, wb) = ((la - hi).exp(), (lb - hi).exp());
        let log_mix = hi + (0.5 * (wa + wb)).ln();
        let s2 = self.scale * self.scale;
        let dlog = -(wa * za + wb * zb) / ((wa + wb) * s2);
        let weight = 1.0 / self.observations as f64;
        score[0] += weight * dlog;
        weight * log_mix
    }

    fn log_prior_and_grad(&self, _theta: &[f64], _grad: &mut [f64]) -> f64 {
        0.0
    }

    fn check_data(&self, dataset: &Dataset) -> Result<()> {
        require_field(dataset, "y", 1)?;
        if dataset.len() != self.observations {
            return Err(Error::Shape(format!(
                "mixture model was built for {} observations, dataset has {}",
                self.observations,
                dataset.len()
            )));
        }
        Ok(())
    }
}

impl BuiltinModel for Mixture1d {
    fn name(&self) -> &'static str {
        "mixture_1d"
    }

    fn default_truth(&self) -> ParameterVector {
        ParameterVector::zeros(Arc::clone(&self.layout))
    }

    fn default_init(&self) -> ParameterVector {
        ParameterVector::structure(Arc::clone(&self.layout), vec![-self.separation]).expect("valid")
    }

    /// Offsets `±u_k` with `u_k ~ N(0, jitter²)`; an odd `n` gets one zero offset.
    fn generate(&self, key: RandomKey, n: usize, truth: &ParameterVector) -> Result<Dataset> {
        check_generate(&self.layout, n, truth)?;
        let half = key.normal_vec(n / 2, self.jitter)?;
        let mut y: Vec<f64> = half.iter().flat_map(|&u| [u, -u]).collect();
        if n % 2 == 1 {
            y.push(0.0);
        }
        Dataset::from_arrays([("y", vec![n], y)])
    }

    fn reference(&self, _dataset: &Dataset) -> Result<Reference> {
        Ok(Reference::OracleOnly)
    }

    fn predict(&self, theta: &[f64], _x: &[f64]) -> f64 {
        theta[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinKind {
    GaussianMean,
    LinregSigma,
    Logreg2d,
    Mixture1d,
}

impl BuiltinKind {
    pub const ALL: [BuiltinKind; 4] = [
        BuiltinKind::GaussianMean,
        BuiltinKind::LinregSigma,
        BuiltinKind::Logreg2d,
        BuiltinKind::Mixture1d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BuiltinKind::GaussianMean => "gaussian_mean",
            BuiltinKind::LinregSigma => "linreg_sigma",
            BuiltinKind::Logreg2d => "logreg_2d",
            BuiltinKind::Mixture1d => "mixture_1d",
        }
    }

    /// Instantiate with default hyperparameters. `dim` sets the regression width
    /// (default 4); `observations` is needed by the mixture.
    pub fn build(self, dim: Option<usize>, observations: usize) -> Result<Arc<dyn BuiltinModel>> {
        Ok(match self {
            BuiltinKind::GaussianMean => Arc::new(GaussianMean::new()),
            BuiltinKind::LinregSigma => Arc::new(LinregSigma::new(dim.unwrap_or(4))?),
            BuiltinKind::Logreg2d => Arc::new(Logreg2d::new()),
            BuiltinKind::Mixture1d => Arc::new(Mixture1d::with_defaults(observations)?),
        })
    }
}

impl std::fmt::Display for BuiltinKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BuiltinKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BuiltinKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            Error::config(
                "model",
                format!("unknown model `{s}`; expected one of gaussian_mean, linreg_sigma, logreg_2d, mixture_1d"),
            )
        })
    }
}

/// Reproducible synthetic data from a model's generative process.
pub fn synth_data_generate(
    model: &dyn BuiltinModel,
    key: RandomKey,
    n: usize,
    truth: &ParameterVector,
) -> Result<Dataset> {
    model.generate(key, n, truth)
}

/// Relative error `‖∇U − ∇U_fd‖ / max(‖∇U‖, ‖∇U_fd‖)` of the full potential's gradient
/// at `theta`, with central differences of width `h`.
pub fn gradient_check(model: &dyn LogDensityModel, dataset: &Dataset, theta: &[f64], h: f64) -> Result<f64> {
    let n = dataset.len();
    let (_, analytic) = exact_potential(model, theta, dataset, n)?;
    let numeric = fd_gradient(
        |t| exact_potential_value(model, t, dataset, n).unwrap_or(f64::NAN),
        theta,
        h,
    )?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    if !scale.is_finite() || diff.iter().any(|d| !d.is_finite()) {
        return Err(Error::numeric("gradient check produced non-finite values"));
    }
    Ok(if scale == 0.0 { 0.0 } else { norm(&diff) / scale })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSamples {
    /// Post-burn-in states, one per step.
    pub samples: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
}

impl OracleSamples {
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[i]).collect()
    }
}

/// Full-batch random-walk Metropolis targeting `exp(−U)`, with independent Gaussian
/// proposals of per-coordinate scale `scales`.
pub fn rwmh_oracle(
    model: &dyn LogDensityModel,
    dataset: &Dataset,
    theta0: &[f64],
    scales: &[f64],
    steps: usize,
    burn_in: usize,
    key: RandomKey,
) -> Result<OracleSamples> {
    if steps == 0 {
        return Err(Error::Argument("the oracle needs at least one step".into()));
    }
    if scales.len() != theta0.len() || model.layout().size() != theta0.len() {
        return Err(Error::Shape(
            "oracle start and scales must match the model layout".into(),
        ));
    }
    if scales.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Argument("proposal scales must be non-negative".into()));
    }
    let n = dataset.len();
    let potential = |t: &[f64]| exact_potential_value(model, t, dataset, n);
    let mut theta = theta0.to_vec();
    let mut u = potential(&theta)?;
    if !u.is_finite() {
        return Err(Error::numeric("oracle start has non-finite potential"));
    }
    let d = theta.len();
    let mut rng = key.rng();
    let normal = rand_distr::StandardNormal;
    let mut accepts = 0usize;
    let mut samples = Vec::with_capacity(steps.saturating_sub(burn_in));
    for step in 0..steps {
        let proposal: Vec<f64> = (0..d)
            .map(|i| theta[i] + scales[i] * rng.sample::<f64, _>(normal))
            .collect();
        let u_new = potential(&proposal)?;
        let log_ratio = u - u_new;
        if rng.random::<f64>().ln() < log_ratio {
            theta = proposal;
            u = u_new;
            accepts += 1;
        }
        if step >= burn_in {
            samples.push(theta.clone());
        }
    }
    Ok(OracleSamples {
        samples,
        acceptance_rate: accepts as f64 / steps as f64,
    })
}

/// Pilot-tuned oracle: a few short runs set per-coordinate scales to
/// `2.4/√d` times the marginal standard deviations, then the main run starts from the
/// last pilot state.
pub fn rwmh_reference(
    model: &dyn LogDensityModel,
    dataset: &Dataset,
    theta0: &[f64],
    steps: usize,
    burn_in: usize,
    key: RandomKey,
) -> Result<OracleSamples> {
    let d = theta0.len();
    let mut scales = vec![0.05; d];
    let mut start = theta0.to_vec();
    let pilot = 4000;
    for round in 0..4u64 {
        let run = rwmh_oracle(model, dataset, &start, &scales, pilot, pilot / 2, key.fold_in(round))?;
        start = run.samples.last().cloned().unwrap_or(start);
        if run.acceptance_rate < 0.02 {
            scales.iter_mut().for_each(|s| *s /= 5.0);
            continue;
        }
        for (i, s) in scales.iter_mut().enumerate() {
            let col = run.column(i);
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
            *s = (2.4 / (d as f64).sqrt() * sd).max(1e-8);
        }
    }
    rwmh_oracle(model, dataset, &start, &scales, steps, burn_in, key.fold_in(100))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// One output per posterior sample.
    pub outputs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Monte Carlo posterior predictive: the mean of the model outputs over samples, with
/// their spread (population standard deviation).
pub fn ensemble_predict<'a>(
    samples: impl IntoIterator<Item = &'a [f64]>,
    x: &[f64],
    model: &dyn BuiltinModel,
) -> Result<Prediction> {
    let outputs: Vec<f64> = samples.into_iter().map(|theta| model.predict(theta, x)).collect();
    if outputs.is_empty() {
        return Err(Error::Argument("ensemble prediction needs at least one sample".into()));
    }
    let n = outputs.len() as f64;
    let mean = outputs.iter().sum::<f64>() / n;
    let std = (outputs.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(Prediction { outputs, mean, std })
}

/// Normal log-density, exposed for tests and examples.
pub fn normal_log_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * (2.0 * PI).ln() - std.ln() - 0.5 * z * z
}
