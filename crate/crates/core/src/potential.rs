//! Exact and mini-batch potentials built from a per-observation log-likelihood.
//!
//! The potential is the negative unnormalized log posterior,
//! `U(θ) = −Σ_i log p(y_i | x_i, θ) − log p(θ)`. Its mini-batch estimate rescales the
//! likelihood sum by `N / n_eff`, where `n_eff` counts unmasked rows, so padded epoch
//! tails stay unbiased.

use std::sync::Arc;

use crate::data::{BatchStream, Dataset, MiniBatch, Observation};
use crate::error::{ensure_finite, Error, Result};
use crate::params::{Layout, ParameterVector};

/// A statistical model given by its per-observation log-likelihood and its log-prior,
/// each with an analytic gradient. All values are in log space.
pub trait LogDensityModel: Send + Sync {
    fn layout(&self) -> &Arc<Layout>;

    /// Returns `log p(y | x, θ)` for one observation and adds its score
    /// `∇_θ log p(y | x, θ)` into `score`.
    fn log_likelihood_and_score(&self, theta: &[f64], obs: &Observation<'_>, score: &mut [f64]) -> f64;

    fn log_likelihood(&self, theta: &[f64], obs: &Observation<'_>) -> f64 {
        let mut scratch = vec![0.0; theta.len()];
        self.log_likelihood_and_score(theta, obs, &mut scratch)
    }

    /// Returns `log p(θ)` (up to a constant) and adds its gradient into `grad`.
    fn log_prior_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let mut scratch = vec![0.0; theta.len()];
        self.log_prior_and_grad(theta, &mut scratch)
    }

    /// Verify that the dataset carries the fields this model reads.
    fn check_data(&self, _dataset: &Dataset) -> Result<()> {
        Ok(())
    }
}

/// `(log p, score)` for a single observation.
pub fn model_logdensity_and_grad(
    model: &dyn LogDensityModel,
    theta: &ParameterVector,
    obs: &Observation<'_>,
) -> Result<(f64, ParameterVector)> {
    check_layout(model, theta)?;
    let mut score = vec![0.0; theta.flatten().len()];
    let value = model.log_likelihood_and_score(theta.flatten(), obs, &mut score);
    Ok((value, ParameterVector::structure(Arc::clone(theta.layout()), score)?))
}

fn check_layout(model: &dyn LogDensityModel, theta: &ParameterVector) -> Result<()> {
    if **model.layout() != **theta.layout() {
        return Err(Error::Layout("parameter layout does not match the model".into()));
    }
    Ok(())
}

/// Mini-batch potential `Ũ` and its gradient on flat parameters.
pub fn stochastic_potential(model: &dyn LogDensityModel, theta: &[f64], batch: &MiniBatch) -> Result<(f64, Vec<f64>)> {
    let n_eff = batch.valid_count();
    if n_eff == 0 {
        return Err(Error::Argument("mini-batch has no unmasked rows".into()));
    }
    let scale = batch.full_size() as f64 / n_eff as f64;
    let mut score = vec![0.0; theta.len()];
    let mut log_lik = 0.0;
    for obs in batch.valid_observations() {
        log_lik += model.log_likelihood_and_score(theta, &obs, &mut score);
    }
    let mut prior_grad = vec![0.0; theta.len()];
    let log_prior = model.log_prior_and_grad(theta, &mut prior_grad);
    let value = -scale * log_lik - log_prior;
    let grad: Vec<f64> = score.iter().zip(&prior_grad).map(|(s, p)| -scale * s - p).collect();
    Ok((value, grad))
}

pub fn minibatch_potential_eval(
    model: &dyn LogDensityModel,
    theta: &ParameterVector,
    batch: &MiniBatch,
) -> Result<(f64, ParameterVector)> {
    check_layout(model, theta)?;
    let (value, grad) = stochastic_potential(model, theta.flatten(), batch)?;
    Ok((value, ParameterVector::structure(Arc::clone(theta.layout()), grad)?))
}

/// Full-data potential `U` and gradient.
///
/// `n` is the sweep batch size of the batched formulation; rows are read in place, so
/// the result does not depend on it beyond validation.
pub fn exact_potential(
    model: &dyn LogDensityModel,
    theta: &[f64],
    dataset: &Dataset,
    n: usize,
) -> Result<(f64, Vec<f64>)> {
    check_sweep(n)?;
    let dim = theta.len();
    let mut score = vec![0.0; dim];
    let log_lik: f64 = dataset
        .observations()
        .map(|obs| model.log_likelihood_and_score(theta, &obs, &mut score))
        .sum();
    let mut prior_grad = vec![0.0; dim];
    let log_prior = model.log_prior_and_grad(theta, &mut prior_grad);
    let grad = score.iter().zip(&prior_grad).map(|(s, p)| -s - p).collect();
    Ok((-log_lik - log_prior, grad))
}

/// Value-only version of [`exact_potential`]; bit-identical to its value.
pub fn exact_potential_value(model: &dyn LogDensityModel, theta: &[f64], dataset: &Dataset, n: usize) -> Result<f64> {
    check_sweep(n)?;
    let mut scratch = vec![0.0; theta.len()];
    let log_lik: f64 = dataset
        .observations()
        .map(|obs| model.log_likelihood_and_score(theta, &obs, &mut scratch))
        .sum();
    Ok(-log_lik - model.log_prior_and_grad(theta, &mut scratch))
}

fn check_sweep(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument("sweep batch size must be at least 1".into()));
    }
    Ok(())
}

pub fn full_potential_eval(
    model: &dyn LogDensityModel,
    theta: &ParameterVector,
    dataset: &Dataset,
    n: usize,
) -> Result<(f64, ParameterVector)> {
    check_layout(model, theta)?;
    let (value, grad) = exact_potential(model, theta.flatten(), dataset, n)?;
    Ok((value, ParameterVector::structure(Arc::clone(theta.layout()), grad)?))
}

/// Central finite differences, `(f(θ + h e_i) − f(θ − h e_i)) / 2h` per coordinate.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Argument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = f(&probe);
        probe[i] = theta[i] - h;
        let down = f(&probe);
        probe[i] = theta[i];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// A model bound to its dataset.
#[derive(Clone)]
pub struct Potential {
    model: Arc<dyn LogDensityModel>,
    dataset: Arc<Dataset>,
    sweep_size: usize,
}

impl std::fmt::Debug for Potential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Potential")
            .field("rows", &self.dataset.len())
            .field("sweep_size", &self.sweep_size)
            .finish()
    }
}

impl Potential {
    /// `sweep_size` is the batch size used for full-data passes.
    pub fn new(model: Arc<dyn LogDensityModel>, dataset: Arc<Dataset>, sweep_size: usize) -> Result<Self> {
        model.check_data(&dataset)?;
        if sweep_size == 0 {
            return Err(Error::Argument("sweep batch size must be at least 1".into()));
        }
        Ok(Self {
            model,
            dataset,
            sweep_size,
        })
    }

    pub fn model(&self) -> &Arc<dyn LogDensityModel> {
        &self.model
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn layout(&self) -> &Arc<Layout> {
        self.model.layout()
    }

    pub fn stochastic(&self, theta: &[f64], batch: &MiniBatch) -> Result<(f64, Vec<f64>)> {
        stochastic_potential(self.model.as_ref(), theta, batch)
    }

    pub fn exact(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        exact_potential(self.model.as_ref(), theta, &self.dataset, self.sweep_size)
    }

    pub fn exact_value(&self, theta: &[f64]) -> Result<f64> {
        exact_potential_value(self.model.as_ref(), theta, &self.dataset, self.sweep_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    Stochastic,
    Exact,
}

/// Gradient supply for a solver: mini-batches from a stream, or full-data sweeps.
#[derive(Debug, Clone)]
pub struct PotentialEvaluator {
    potential: Potential,
    batches: Option<BatchStream>,
    evaluations: u64,
}

impl PotentialEvaluator {
    pub fn stochastic(potential: Potential, batches: BatchStream) -> Result<Self> {
        if !Arc::ptr_eq(potential.dataset(), batches.dataset()) && **potential.dataset() != **batches.dataset() {
            return Err(Error::Argument(
                "batch stream and potential use different datasets".into(),
            ));
        }
        Ok(Self {
            potential,
            batches: Some(batches),
            evaluations: 0,
        })
    }

    pub fn exact(potential: Potential) -> Self {
        Self {
            potential,
            batches: None,
            evaluations: 0,
        }
    }

    pub fn kind(&self) -> PotentialKind {
        if self.batches.is_some() {
            PotentialKind::Stochastic
        } else {
            PotentialKind::Exact
        }
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    /// Gradient evaluations performed so far (one per batch or sweep).
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    /// Fetch the next batch, or `None` for exact evaluators.
    pub fn next_batch(&mut self) -> Result<Option<MiniBatch>> {
        self.batches.as_mut().map(BatchStream::next_batch).transpose()
    }

    /// Evaluate on a previously fetched batch (`None` means the full dataset).
    pub fn evaluate_on(&mut self, theta: &[f64], batch: Option<&MiniBatch>) -> Result<(f64, Vec<f64>)> {
        self.evaluations += 1;
        let (value, grad) = match batch {
            Some(b) => self.potential.stochastic(theta, b)?,
            None => self.potential.exact(theta)?,
        };
        if !value.is_finite() {
            return Err(Error::numeric("non-finite potential"));
        }
        ensure_finite(&grad, "potential gradient")?;
        Ok((value, grad))
    }

    /// Evaluate on a fresh batch.
    pub fn evaluate(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let batch = self.next_batch()?;
        self.evaluate_on(theta, batch.as_ref())
    }

    pub fn exact_value(&self, theta: &[f64]) -> Result<f64> {
        self.potential.exact_value(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{next_batch, BatchSpec, BatchState, BatchStrategy};
    use crate::random::RandomKey;

    /// y ~ N(θ, 1), flat prior.
    struct UnitGaussian {
        layout: Arc<Layout>,
    }

    impl UnitGaussian {
        fn new() -> Self {
            Self {
                layout: Layout::new([("theta", vec![])]).unwrap(),
            }
        }
    }

    const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_7;

    impl LogDensityModel for UnitGaussian {
        fn layout(&self) -> &Arc<Layout> {
            &self.layout
        }

        fn log_likelihood_and_score(&self, theta: &[f64], obs: &Observation<'_>, score: &mut [f64]) -> f64 {
            let r = obs.scalar("y") - theta[0];
            score[0] += r;
            -HALF_LOG_TWO_PI - 0.5 * r * r
        }

        fn log_prior_and_grad(&self, _theta: &[f64], _grad: &mut [f64]) -> f64 {
            0.0
        }
    }

    fn two_points() -> Dataset {
        Dataset::from_arrays([("y", vec![2], vec![1.0, 3.0])]).unwrap()
    }

    fn batch_of(ds: &Dataset, rows: &[Option<usize>]) -> MiniBatch {
        ds.gather(rows)
    }

    #[test]
    fn minibatch_value_matches_hand_evaluation() {
        let ds = two_points();
        let batch = batch_of(&ds, &[Some(0)]);
        let (u, g) = stochastic_potential(&UnitGaussian::new(), &[0.0], &batch).unwrap();
        assert!((u - 2.837_877_066_409_345).abs() < 1e-12, "{u}");
        // −(N/n) · (y − θ) = −2 · 1
        assert!((g[0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn full_value_matches_hand_evaluation() {
        let ds = two_points();
        let (u, _) = exact_potential(&UnitGaussian::new(), &[0.0], &ds, 1).unwrap();
        assert!((u - 6.837_877_066_409_345).abs() < 1e-12, "{u}");
    }

    #[test]
    fn masked_row_is_ignored() {
        let ds = two_points();
        let model = UnitGaussian::new();
        let mut padded = batch_of(&ds, &[Some(1), None]);
        let single = batch_of(&ds, &[Some(1)]);
        let a = stochastic_potential(&model, &[0.3], &padded).unwrap();
        let b = stochastic_potential(&model, &[0.3], &single).unwrap();
        assert_eq!(a, b);
        padded.array_mut("y").unwrap()[1] = 1e9;
        assert_eq!(stochastic_potential(&model, &[0.3], &padded).unwrap(), b);
    }

    #[test]
    fn all_masked_batch_is_an_error() {
        let ds = two_points();
        let batch = batch_of(&ds, &[None, None]);
        assert!(matches!(
            stochastic_potential(&UnitGaussian::new(), &[0.0], &batch),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn gradient_is_scaled_sum_of_scores() {
        let ds = Dataset::from_arrays([("y", vec![5], vec![0.5, -1.0, 2.0, 4.0, 0.0])]).unwrap();
        let batch = batch_of(&ds, &[Some(0), Some(3)]);
        let theta = 0.25;
        let (_, g) = stochastic_potential(&UnitGaussian::new(), &[theta], &batch).unwrap();
        let expected = -(5.0 / 2.0) * ((0.5 - theta) + (4.0 - theta));
        assert!((g[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn full_potential_is_batch_size_invariant() {
        let values: Vec<f64> = (0..17).map(|i| (i as f64).sin() * 3.0).collect();
        let ds = Dataset::from_arrays([("y", vec![17], values)]).unwrap();
        let model = UnitGaussian::new();
        let (reference, _) = exact_potential(&model, &[0.7], &ds, 17).unwrap();
        for n in [1, 2, 3, 5, 16] {
            let (u, _) = exact_potential(&model, &[0.7], &ds, n).unwrap();
            assert!((u - reference).abs() < 1e-12);
        }
    }

    #[test]
    fn full_size_batch_equals_exact_potential() {
        let values: Vec<f64> = (0..9).map(|i| i as f64 * 0.3).collect();
        let ds = Dataset::from_arrays([("y", vec![9], values)]).unwrap();
        let model = UnitGaussian::new();
        let spec = BatchSpec::new(9, BatchStrategy::ShuffleInEpochs, RandomKey::new(0));
        let (batch, _) = next_batch(&ds, &spec, BatchState::new()).unwrap();
        let (ut, gt) = stochastic_potential(&model, &[1.1], &batch).unwrap();
        let (u, g) = exact_potential(&model, &[1.1], &ds, 9).unwrap();
        assert!((ut - u).abs() <= 1e-12 * u.abs());
        assert!((gt[0] - g[0]).abs() <= 1e-12 * g[0].abs().max(1.0));
    }

    #[test]
    fn fd_of_quadratic_and_constant() {
        let g = fd_gradient(|t| 0.5 * (t[0] * t[0] + t[1] * t[1]), &[1.0, 2.0], 1e-4).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8 && (g[1] - 2.0).abs() < 1e-8);
        let z = fd_gradient(|_| 3.0, &[1.0, -5.0], 1e-3).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        assert!(fd_gradient(|_| 0.0, &[1.0], 0.0).is_err());
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let ds = Dataset::from_arrays([("y", vec![4], vec![0.1, 1.5, -0.3, 2.2])]).unwrap();
        let model = UnitGaussian::new();
        let batch = batch_of(&ds, &[Some(2), Some(0), Some(3)]);
        let theta = [0.4];
        let (_, g) = stochastic_potential(&model, &theta, &batch).unwrap();
        let fd = fd_gradient(|t| stochastic_potential(&model, t, &batch).unwrap().0, &theta, 1e-5).unwrap();
        assert!((g[0] - fd[0]).abs() <= 1e-5 * g[0].abs());
    }
}
