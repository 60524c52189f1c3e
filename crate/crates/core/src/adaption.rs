//! Quantities adapted online while a chain runs.

use crate::error::{Error, Result};

pub const DEFAULT_RMSPROP_DECAY: f64 = 0.99;
pub const DEFAULT_RMSPROP_REGULARIZER: f64 = 1e-5;

/// RMSProp second-moment estimate used as a diagonal preconditioner.
///
/// The pSGLD curvature correction term is not applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    second_moment: Vec<f64>,
    decay: f64,
    regularizer: f64,
}

impl RmsPropState {
    pub fn new(dim: usize, decay: f64, regularizer: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Argument(format!(
                "RMSProp decay must lie in (0, 1), got {decay}"
            )));
        }
        if !(regularizer > 0.0) || !regularizer.is_finite() {
            return Err(Error::Argument(format!(
                "RMSProp regularizer must be positive, got {regularizer}"
            )));
        }
        Ok(Self {
            second_moment: vec![0.0; dim],
            decay,
            regularizer,
        })
    }

    pub fn with_defaults(dim: usize) -> Self {
        Self::new(dim, DEFAULT_RMSPROP_DECAY, DEFAULT_RMSPROP_REGULARIZER).expect("defaults are valid")
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// `V ← αV + (1−α) g⊙g`, returning `P = 1 / (λ + √V)`.
    pub fn step(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        if grad.len() != self.second_moment.len() {
            return Err(Error::Shape(format!(
                "gradient has {} entries, preconditioner {}",
                grad.len(),
                self.second_moment.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric("non-finite gradient passed to RMSProp"));
        }
        let (a, lambda) = (self.decay, self.regularizer);
        Ok(self
            .second_moment
            .iter_mut()
            .zip(grad)
            .map(|(v, g)| {
                *v = a * *v + (1.0 - a) * g * g;
                1.0 / (lambda + v.sqrt())
            })
            .collect())
    }
}

/// Free-function form of [`RmsPropState::step`].
pub fn rmsprop_step(mut state: RmsPropState, grad: &[f64]) -> Result<(RmsPropState, Vec<f64>)> {
    let precond = state.step(grad)?;
    Ok((state, precond))
}

/// Streaming mean and (co)variance by Welford's recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineCovState {
    count: u64,
    mean: Vec<f64>,
    /// Row-major `d×d` co-moment matrix, or the `d` diagonal entries when `diagonal_only`.
    m2: Vec<f64>,
    diagonal_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// Unbiased covariance, row-major `d×d` (or its diagonal in diagonal mode).
    pub covariance: Vec<f64>,
}

impl OnlineCovState {
    pub fn new(dim: usize, diagonal_only: bool) -> Self {
        let m2_len = if diagonal_only { dim } else { dim * dim };
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; m2_len],
            diagonal_only,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        let d = self.mean.len();
        if x.len() != d {
            return Err(Error::Shape(format!("expected {d} components, got {}", x.len())));
        }
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(xi, m)| xi - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        if self.diagonal_only {
            for i in 0..d {
                self.m2[i] += delta[i] * (x[i] - self.mean[i]);
            }
        } else {
            for i in 0..d {
                for j in 0..d {
                    self.m2[i * d + j] += delta[i] * (x[j] - self.mean[j]);
                }
            }
        }
        Ok(())
    }

    /// Unbiased variance of a scalar stream (first component), if two or more points were seen.
    pub fn variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| self.m2[0] / (self.count - 1) as f64)
    }

    pub fn finalize(&self) -> Result<Moments> {
        if self.count < 2 {
            return Err(Error::State(format!(
                "covariance needs at least two observations, have {}",
                self.count
            )));
        }
        let denom = (self.count - 1) as f64;
        Ok(Moments {
            mean: self.mean.clone(),
            covariance: self.m2.iter().map(|m| m / denom).collect(),
        })
    }
}

pub fn welford_step(mut state: OnlineCovState, x: &[f64]) -> Result<OnlineCovState> {
    state.update(x)?;
    Ok(state)
}

/// Diagonal empirical Fisher information: running mean of squared per-observation scores.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherDiagState {
    count: u64,
    estimate: Vec<f64>,
}

impl FisherDiagState {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            estimate: vec![0.0; dim],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn estimate(&self) -> &[f64] {
        &self.estimate
    }

    pub fn update(&mut self, scores: &[Vec<f64>]) -> Result<()> {
        if scores.is_empty() {
            return Err(Error::Argument("score set must not be empty".into()));
        }
        for s in scores {
            if s.len() != self.estimate.len() {
                return Err(Error::Shape(format!(
                    "score has {} entries, expected {}",
                    s.len(),
                    self.estimate.len()
                )));
            }
            self.count += 1;
            let n = self.count as f64;
            for (e, v) in self.estimate.iter_mut().zip(s) {
                *e += (v * v - *e) / n;
            }
        }
        Ok(())
    }
}

pub fn fisher_diag_step(mut state: FisherDiagState, scores: &[Vec<f64>]) -> Result<FisherDiagState> {
    state.update(scores)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::RandomKey;
    use proptest::prelude::*;

    fn two_pass(stream: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = stream.len() as f64;
        let d = stream[0].len();
        let mean: Vec<f64> = (0..d).map(|j| stream.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let mut cov = vec![0.0; d * d];
        for x in stream {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= n - 1.0);
        (mean, cov)
    }

    #[test]
    fn rmsprop_arithmetic() {
        let mut s = RmsPropState::new(1, 0.9, 1e-5).unwrap();
        let p = s.step(&[2.0]).unwrap();
        assert!((s.second_moment()[0] - 0.4).abs() < 1e-15);
        let expected = 1.0 / (1e-5 + 0.4f64.sqrt());
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((p[0] - 1.5811).abs() < 1e-4);
    }

    #[test]
    fn rmsprop_decays_to_inverse_regularizer() {
        let mut s = RmsPropState::new(1, 0.9, 1e-3).unwrap();
        s.step(&[5.0]).unwrap();
        let mut last = 0.0;
        for _ in 0..2000 {
            last = s.step(&[0.0]).unwrap()[0];
        }
        assert!(s.second_moment()[0] < 1e-80);
        assert!((last - 1e3).abs() < 1e-6);
    }

    #[test]
    fn rmsprop_rejects_non_finite() {
        let mut s = RmsPropState::with_defaults(2);
        assert!(s.step(&[1.0, f64::NAN]).unwrap_err().is_numeric());
    }

    #[test]
    fn welford_textbook_case() {
        let mut s = OnlineCovState::new(1, false);
        for x in [1.0, 2.0, 3.0] {
            s.update(&[x]).unwrap();
        }
        let m = s.finalize().unwrap();
        assert_eq!(m.mean, vec![2.0]);
        assert!((m.covariance[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn welford_single_point_cannot_finalize() {
        let s = welford_step(OnlineCovState::new(2, true), &[1.0, 2.0]).unwrap();
        assert!(matches!(s.finalize(), Err(Error::State(_))));
    }

    #[test]
    fn welford_standard_normal_variance() {
        let draws = RandomKey::new(11).normal_vec(10_000, 1.0).unwrap();
        let mut s = OnlineCovState::new(1, true);
        for x in draws {
            s.update(&[x]).unwrap();
        }
        assert!((s.variance().unwrap() - 1.0).abs() < 0.05);
    }

    #[test]
    fn fisher_examples() {
        let s = fisher_diag_step(FisherDiagState::new(1), &[vec![1.0], vec![-1.0]]).unwrap();
        assert_eq!(s.estimate(), &[1.0]);
        let z = fisher_diag_step(FisherDiagState::new(2), &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(z.estimate(), &[0.0, 0.0]);
        assert!(FisherDiagState::new(1).update(&[]).is_err());
    }

    #[test]
    fn fisher_of_gaussian_location() {
        // score of N(y; θ, σ²) wrt θ is (y − θ)/σ², Fisher = 1/σ²
        let sigma = 2.0;
        let draws = RandomKey::new(12).normal_vec(10_000, sigma).unwrap();
        let scores: Vec<Vec<f64>> = draws.iter().map(|y| vec![y / (sigma * sigma)]).collect();
        let s = fisher_diag_step(FisherDiagState::new(1), &scores).unwrap();
        let truth = 1.0 / (sigma * sigma);
        assert!((s.estimate()[0] - truth).abs() < 0.05 * truth);
    }

    proptest! {
        #[test]
        fn preconditioner_is_positive_and_bounded(
            grads in proptest::collection::vec(proptest::collection::vec(-1e4f64..1e4, 3), 1..50),
        ) {
            let lambda = 1e-5;
            let mut s = RmsPropState::new(3, 0.99, lambda).unwrap();
            for g in grads {
                for p in s.step(&g).unwrap() {
                    prop_assert!(p > 0.0 && p <= 1.0 / lambda);
                }
                prop_assert!(s.second_moment().iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn welford_matches_two_pass(
            stream in proptest::collection::vec(proptest::collection::vec(-100f64..100.0, 2), 2..1000),
            seed in any::<u64>(),
        ) {
            let mut s = OnlineCovState::new(2, false);
            for x in &stream {
                s.update(x).unwrap();
            }
            let m = s.finalize().unwrap();
            let (mean, cov) = two_pass(&stream);
            for i in 0..2 {
                prop_assert!((m.mean[i] - mean[i]).abs() < 1e-10);
            }
            for i in 0..4 {
                prop_assert!((m.covariance[i] - cov[i]).abs() < 1e-10 * cov[i].abs().max(1.0));
            }

            // permuted stream
            use rand::seq::SliceRandom;
            let mut shuffled = stream.clone();
            shuffled.shuffle(&mut RandomKey::new(seed).rng());
            let mut p = OnlineCovState::new(2, false);
            for x in &shuffled {
                p.update(x).unwrap();
            }
            let mp = p.finalize().unwrap();
            for i in 0..2 {
                prop_assert!((mp.mean[i] - m.mean[i]).abs() < 1e-10);
            }
            for i in 0..4 {
                prop_assert!((mp.covariance[i] - m.covariance[i]).abs() < 1e-10 * m.covariance[i].abs().max(1.0));
            }
        }
    }
}
